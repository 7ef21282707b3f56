#pragma once

// Open-device state and the block indirection engine.
//
// A Device owns the image file, the advisory lock, the unlocked volume keys
// and position maps, the occupation bitfield, the shuffled free list, and the
// write-back IV cache. Exactly one logical operation may execute at a time;
// callers provide the mutual exclusion (the socket server serializes with a
// mutex). Two Devices can never be open on the same image: the lock file
// prevents it.

#include <array>
#include <bitset>
#include <cstdint>
#include <list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sflc/crypto.hpp"
#include "sflc/image.hpp"
#include "sflc/layout.hpp"

namespace sflc {

// Write-back LRU cache of slice IV blocks. Data blocks are written through;
// only their 16-byte IVs are coalesced here and persisted on flush/eviction.
class IvCache {
public:
    explicit IvCache(size_t capacity) : capacity_(capacity ? capacity : 1) {}

    Iv128 load(ImageFile& image, uint64_t iv_block, uint32_t slot);
    void store(ImageFile& image, uint64_t iv_block, uint32_t slot, const Iv128& iv);
    void flush(ImageFile& image);
    void drop(uint64_t iv_block);
    bool clean() const;
    size_t size() const { return entries_.size(); }

private:
    struct Entry {
        std::array<uint8_t, kBlockSize> data{};
        bool dirty = false;
        std::list<uint64_t>::iterator lru_it;
    };

    Entry& entry(ImageFile& image, uint64_t iv_block);

    size_t capacity_;
    std::list<uint64_t> lru_;  // front = most recently used
    std::unordered_map<uint64_t, Entry> entries_;
};

// Session-local per-slice bookkeeping for trim-triggered reclaim. Slices
// loaded from disk have no entry: they count as fully written, never trimmed.
struct SliceScratch {
    std::bitset<kLogicalSliceBlocks> trimmed;
    std::bitset<kLogicalSliceBlocks> written;
};

struct OpenVolume {
    uint32_t index = 0;
    Key256 vek;
    std::vector<uint32_t> pos_map;  // lsi -> psi, kUnmappedPsi where unmapped
    bool map_dirty = false;
    std::unordered_map<uint64_t, SliceScratch> scratch;
};

struct OpenOptions {
    KdfCost kdf = kKdfCostV1;
    size_t iv_cache_entries = 1024;
    Rng* rng = nullptr;  // defaults to the process CSPRNG
};

class Device {
public:
    using Options = OpenOptions;

    // Formats the image: optional whole-device random prefill, fresh DMB,
    // one chained header per password, random fill for the unused slots.
    static void initialize(const std::string& path, const std::vector<std::string>& passwords,
                           bool skip_randfill, const KdfCost& kdf, Rng& rng);

    // Probes which volume a password unlocks without opening anything.
    // Read-only: the image is untouched.
    static std::optional<uint32_t> test_password(const std::string& path,
                                                 std::string_view password, const KdfCost& kdf);

    // Re-wraps one volume's master key under a new password-derived key.
    // Exactly one 64-byte DMB cell changes on disk.
    static void change_password(const std::string& path, std::string_view old_password,
                                std::string_view new_password, const KdfCost& kdf, Rng& rng);

    // Unlocks the volume matching the password plus every volume below it.
    static Device open(const std::string& path, std::string_view password,
                       const Options& options = {});

    Device(Device&& other) noexcept;
    Device& operator=(Device&& other) noexcept;
    Device(const Device&) = delete;
    Device& operator=(const Device&) = delete;
    ~Device();

    void read_block(uint32_t volume, uint64_t block, std::span<uint8_t, kBlockSize> out);
    void write_block(uint32_t volume, uint64_t block,
                     std::span<const uint8_t, kBlockSize> data);
    // Marks a logical block as unused; reclaims the slice once every block in
    // it is trimmed or was never written since allocation.
    void trim_block(uint32_t volume, uint64_t block);
    // Same plaintext under a fresh IV; leaves trim bookkeeping untouched.
    void reencrypt_block(uint32_t volume, uint64_t block);

    uint32_t allocate_slice(uint32_t volume, uint64_t lsi);
    void reclaim_slice(uint32_t volume, uint64_t lsi);

    // Persists dirty IV blocks and dirty position maps; after a flush a copy
    // of the image decrypts to the same logical contents.
    void flush();
    // Flushes, rewrites every open position map under fresh IVs, wipes keys.
    void close();

    bool closed() const { return closed_; }
    const Geometry& geometry() const { return geom_; }
    size_t volume_count() const { return volumes_.size(); }
    uint64_t max_logical_blocks() const { return geom_.max_logical_blocks(); }
    std::optional<uint32_t> mapped_psi(uint32_t volume, uint64_t lsi) const;
    std::vector<std::pair<uint64_t, uint32_t>> mapped_slices(uint32_t volume) const;
    bool slice_occupied(uint64_t psi) const;
    uint64_t occupied_count() const { return occupied_; }
    const std::vector<uint32_t>& slice_permutation() const { return prmslices_; }
    size_t permutation_cursor() const { return octr_; }
    Rng& rng() { return *rng_; }
    ImageFile& image() { return image_; }

    // Harness hook: makes one volume claim the lowest free PSI instead of
    // drawing from the shuffled list. Used by the deniability test suite to
    // prove its occupancy check can catch a skewed allocator.
    void force_low_end_allocation(uint32_t volume) { low_end_volume_ = volume; }

private:
    Device() = default;

    void ensure_open() const;
    OpenVolume& need_volume(uint32_t volume);
    void check_address(uint32_t volume, uint64_t block) const;
    void claim(OpenVolume& vol, uint64_t lsi, uint64_t psi);
    void swap_permutation(size_t a, size_t b);
    void persist_pos_map(OpenVolume& vol);
    void load_pos_map(OpenVolume& vol);
    void wipe_keys();

    Geometry geom_;
    ImageFile image_;
    ImageLock lock_;
    std::vector<OpenVolume> volumes_;  // volumes_[i].index == i
    std::vector<uint8_t> bfld_;
    std::vector<uint32_t> prmslices_;
    std::vector<uint32_t> prm_inverse_;
    uint64_t octr_ = 0;
    uint64_t occupied_ = 0;
    IvCache iv_cache_{1024};
    Rng* rng_ = nullptr;
    bool closed_ = true;
    std::optional<uint32_t> low_end_volume_;
};

}  // namespace sflc
