// Device lifecycle: init, unlock walk, persist/close, testpwd, changepwd.

#include <algorithm>
#include <cstring>
#include <set>
#include <utility>

#include "sflc/device.hpp"

namespace sflc {

namespace {

constexpr size_t kVmbPlainVekOffset = 0;
constexpr size_t kVmbPlainPrevVmkOffset = kKeyLen;
constexpr size_t kVmbPlainNumSlicesOffset = 2 * kKeyLen;

size_t dmb_cell_offset(uint32_t cell) {
    return kDmbCellsOffset + static_cast<size_t>(cell) * kDmbCellSize;
}

void put_cell(std::span<uint8_t> dmb_block, uint32_t cell, const WrappedKey& wrapped) {
    uint8_t* p = dmb_block.data() + dmb_cell_offset(cell);
    std::memcpy(p, wrapped.iv.bytes.data(), kIvLen);
    std::memcpy(p + kIvLen, wrapped.ciphertext.data(), kKeyLen);
    std::memcpy(p + kIvLen + kKeyLen, wrapped.tag.data(), kTagLen);
}

WrappedKey get_cell(std::span<const uint8_t> dmb_block, uint32_t cell) {
    WrappedKey w;
    const uint8_t* p = dmb_block.data() + dmb_cell_offset(cell);
    std::memcpy(w.iv.bytes.data(), p, kIvLen);
    std::memcpy(w.ciphertext.data(), p + kIvLen, kKeyLen);
    std::memcpy(w.tag.data(), p + kIvLen + kKeyLen, kTagLen);
    return w;
}

std::array<uint8_t, kSaltLen> read_salt_checked(std::span<const uint8_t, kBlockSize> dmb) {
    if (dmb[kDmbVersionOffset] != kFormatVersion)
        throw Corrupt("unknown format version byte");
    std::array<uint8_t, kSaltLen> salt{};
    std::memcpy(salt.data(), dmb.data() + kDmbSaltOffset, kSaltLen);
    return salt;
}

// Tries cells from the top: the matching volume is found without touching
// the ones below it, which the unlock walk opens through the key chain.
std::optional<std::pair<uint32_t, Key256>> probe_cells(
    std::span<const uint8_t, kBlockSize> dmb, const Key256& kek) {
    for (int cell = kMaxVolumes - 1; cell >= 0; --cell) {
        if (auto vmk = unwrap_key(kek, get_cell(dmb, static_cast<uint32_t>(cell))))
            return std::make_pair(static_cast<uint32_t>(cell), *vmk);
    }
    return std::nullopt;
}

struct VmbContents {
    Key256 vek;
    Key256 prev_vmk;
    uint64_t num_slices = 0;
};

void write_vmb(ImageFile& image, const Geometry& geom, uint32_t volume, const Key256& vmk,
               const VmbContents& contents, Rng& rng) {
    std::vector<uint8_t> plain = random_fill(kVmbCiphertextLen, rng);
    std::memcpy(plain.data() + kVmbPlainVekOffset, contents.vek.bytes().data(), kKeyLen);
    std::memcpy(plain.data() + kVmbPlainPrevVmkOffset, contents.prev_vmk.bytes().data(),
                kKeyLen);
    std::memcpy(plain.data() + kVmbPlainNumSlicesOffset, &contents.num_slices, 8);

    std::array<uint8_t, kBlockSize> block{};
    Iv128 iv = rng.iv();
    std::memcpy(block.data(), iv.bytes.data(), kIvLen);
    ctr_crypt(vmk, iv, plain, std::span(block).subspan(kIvLen));
    image.write_block(geom.vmb_block(volume), block);
}

VmbContents read_vmb(const ImageFile& image, const Geometry& geom, uint32_t volume,
                     const Key256& vmk) {
    std::array<uint8_t, kBlockSize> block{};
    image.read_block(geom.vmb_block(volume), block);
    Iv128 iv;
    std::memcpy(iv.bytes.data(), block.data(), kIvLen);
    std::vector<uint8_t> plain(kVmbCiphertextLen);
    ctr_crypt(vmk, iv, std::span(block).subspan(kIvLen), plain);

    VmbContents out;
    std::memcpy(out.vek.mutable_bytes().data(), plain.data() + kVmbPlainVekOffset, kKeyLen);
    std::memcpy(out.prev_vmk.mutable_bytes().data(), plain.data() + kVmbPlainPrevVmkOffset,
                kKeyLen);
    std::memcpy(&out.num_slices, plain.data() + kVmbPlainNumSlicesOffset, 8);
    std::fill(plain.begin(), plain.end(), uint8_t{0});
    return out;
}

// Position map on disk: pm_iv_blocks of packed 16-byte IVs, then
// pm_payload_blocks of CTR ciphertext, one IV per payload block.
void write_pos_map_raw(ImageFile& image, const Geometry& geom, uint32_t volume,
                       const Key256& vek, std::span<const uint32_t> entries, Rng& rng) {
    const uint64_t payload_blocks = geom.pm_payload_blocks;
    std::vector<uint8_t> plain(payload_blocks * kBlockSize, 0xFF);
    std::memcpy(plain.data(), entries.data(), entries.size() * kPsiEntryLen);

    std::vector<uint8_t> iv_region = random_fill(geom.pm_iv_blocks * kBlockSize, rng);
    std::vector<uint8_t> cipher(payload_blocks * kBlockSize);
    for (uint64_t j = 0; j < payload_blocks; ++j) {
        Iv128 iv = rng.iv();
        std::memcpy(iv_region.data() + j * kIvLen, iv.bytes.data(), kIvLen);
        ctr_crypt(vek, iv, std::span(plain).subspan(j * kBlockSize, kBlockSize),
                  std::span(cipher).subspan(j * kBlockSize, kBlockSize));
    }
    image.write_at(geom.pm_iv_start(volume) * kBlockSize, iv_region);
    image.write_at(geom.pm_payload_start(volume) * kBlockSize, cipher);
}

std::vector<uint32_t> read_pos_map_raw(const ImageFile& image, const Geometry& geom,
                                       uint32_t volume, const Key256& vek) {
    const uint64_t payload_blocks = geom.pm_payload_blocks;
    std::vector<uint8_t> iv_region(geom.pm_iv_blocks * kBlockSize);
    std::vector<uint8_t> cipher(payload_blocks * kBlockSize);
    image.read_at(geom.pm_iv_start(volume) * kBlockSize, iv_region);
    image.read_at(geom.pm_payload_start(volume) * kBlockSize, cipher);

    std::vector<uint8_t> plain(payload_blocks * kBlockSize);
    for (uint64_t j = 0; j < payload_blocks; ++j) {
        Iv128 iv;
        std::memcpy(iv.bytes.data(), iv_region.data() + j * kIvLen, kIvLen);
        ctr_crypt(vek, iv, std::span(cipher).subspan(j * kBlockSize, kBlockSize),
                  std::span(plain).subspan(j * kBlockSize, kBlockSize));
    }
    std::vector<uint32_t> entries(geom.pm_capacity_entries());
    std::memcpy(entries.data(), plain.data(), entries.size() * kPsiEntryLen);
    return entries;
}

std::vector<uint32_t> sentinel_entries(const Geometry& geom) {
    return std::vector<uint32_t>(geom.pm_capacity_entries(), kUnmappedPsi);
}

}  // namespace

void Device::initialize(const std::string& path, const std::vector<std::string>& passwords,
                        bool skip_randfill, const KdfCost& kdf, Rng& rng) {
    // Zero passwords formats a volume-less device (the deniability harness
    // builds its comparison instance that way); the CLI insists on >= 1.
    const size_t count = passwords.size();
    if (count > kMaxVolumes)
        throw RangeError("at most " + std::to_string(kMaxVolumes) + " volumes per device");
    std::set<std::string_view> seen;
    for (const auto& pw : passwords) {
        if (pw.empty())
            throw EmptyPassword();
        if (!seen.insert(pw).second)
            throw DuplicatePassword();
    }

    ImageLock lock(path);
    ImageFile image(path, /*read_only=*/false);
    const Geometry geom = compute_geometry(image.total_blocks());

    if (!skip_randfill) {
        std::vector<uint8_t> chunk(256 * kBlockSize);
        for (uint64_t block = 0; block < geom.total_blocks; block += 256) {
            const uint64_t n = std::min<uint64_t>(256, geom.total_blocks - block);
            rng.fill(std::span(chunk).first(n * kBlockSize));
            image.write_at(block * kBlockSize, std::span(chunk).first(n * kBlockSize));
        }
    }

    std::vector<uint8_t> dmb = random_fill(kBlockSize, rng);
    dmb[kDmbVersionOffset] = kFormatVersion;
    std::array<uint8_t, kSaltLen> salt{};
    rng.fill(salt);
    std::memcpy(dmb.data() + kDmbSaltOffset, salt.data(), kSaltLen);

    Key256 prev_vmk = rng.key();  // volume 0 stores an unused random value
    for (size_t i = 0; i < count; ++i) {
        Key256 kek = kdf_derive(passwords[i], salt, kdf);
        Key256 vmk = rng.key();
        Key256 vek = rng.key();
        put_cell(dmb, static_cast<uint32_t>(i), wrap_key(kek, vmk, rng));

        VmbContents contents;
        contents.vek = vek;
        contents.prev_vmk = prev_vmk;
        contents.num_slices = geom.num_slices;
        write_vmb(image, geom, static_cast<uint32_t>(i), vmk, contents, rng);
        write_pos_map_raw(image, geom, static_cast<uint32_t>(i), vek, sentinel_entries(geom),
                          rng);
        prev_vmk = vmk;
    }

    // Unused header slots are indistinguishable from freshly wiped ones.
    std::vector<uint8_t> noise(geom.volume_header_blocks * kBlockSize);
    for (uint32_t i = static_cast<uint32_t>(count); i < kMaxVolumes; ++i) {
        rng.fill(noise);
        image.write_at(geom.volume_header_start(i) * kBlockSize, noise);
    }

    image.write_at(0, dmb);
    image.sync();
}

std::optional<uint32_t> Device::test_password(const std::string& path,
                                              std::string_view password, const KdfCost& kdf) {
    ImageFile image(path, /*read_only=*/true);
    compute_geometry(image.total_blocks());
    std::array<uint8_t, kBlockSize> dmb{};
    image.read_block(0, dmb);
    const auto salt = read_salt_checked(dmb);
    Key256 kek = kdf_derive(password, salt, kdf);
    if (auto hit = probe_cells(dmb, kek))
        return hit->first;
    return std::nullopt;
}

void Device::change_password(const std::string& path, std::string_view old_password,
                             std::string_view new_password, const KdfCost& kdf, Rng& rng) {
    if (new_password.empty())
        throw EmptyPassword();
    ImageLock lock(path);
    ImageFile image(path, /*read_only=*/false);
    compute_geometry(image.total_blocks());
    std::array<uint8_t, kBlockSize> dmb{};
    image.read_block(0, dmb);
    const auto salt = read_salt_checked(dmb);

    Key256 old_kek = kdf_derive(old_password, salt, kdf);
    auto hit = probe_cells(dmb, old_kek);
    if (!hit)
        throw NoMatch();

    Key256 new_kek = kdf_derive(new_password, salt, kdf);
    if (probe_cells(dmb, new_kek))
        throw SamePassword();

    const WrappedKey rewrapped = wrap_key(new_kek, hit->second, rng);
    std::array<uint8_t, kDmbCellSize> cell{};
    std::memcpy(cell.data(), rewrapped.iv.bytes.data(), kIvLen);
    std::memcpy(cell.data() + kIvLen, rewrapped.ciphertext.data(), kKeyLen);
    std::memcpy(cell.data() + kIvLen + kKeyLen, rewrapped.tag.data(), kTagLen);
    image.write_at(dmb_cell_offset(hit->first), cell);
    image.sync();
}

Device Device::open(const std::string& path, std::string_view password,
                    const Options& options) {
    Device dev;
    dev.rng_ = options.rng ? options.rng : &system_rng();
    dev.lock_ = ImageLock(path);
    dev.image_ = ImageFile(path, /*read_only=*/false);
    dev.geom_ = compute_geometry(dev.image_.total_blocks());
    dev.iv_cache_ = IvCache(options.iv_cache_entries);

    std::array<uint8_t, kBlockSize> dmb{};
    dev.image_.read_block(0, dmb);
    const auto salt = read_salt_checked(dmb);
    Key256 kek = kdf_derive(password, salt, options.kdf);
    auto hit = probe_cells(dmb, kek);
    if (!hit)
        throw NoMatch();

    // Walk the backwards chain from the matched volume down to volume 0.
    std::vector<std::pair<uint32_t, VmbContents>> chain;
    Key256 vmk = hit->second;
    for (int v = static_cast<int>(hit->first); v >= 0; --v) {
        VmbContents c = read_vmb(dev.image_, dev.geom_, static_cast<uint32_t>(v), vmk);
        if (c.num_slices != dev.geom_.num_slices)
            throw Corrupt("volume " + std::to_string(v) +
                          " header disagrees with the device geometry");
        vmk = c.prev_vmk;
        chain.emplace_back(static_cast<uint32_t>(v), c);
    }
    std::reverse(chain.begin(), chain.end());

    dev.bfld_.assign(dev.geom_.num_slices, 0);
    dev.volumes_.reserve(chain.size());
    for (auto& [index, contents] : chain) {
        OpenVolume vol;
        vol.index = index;
        vol.vek = contents.vek;
        dev.volumes_.push_back(std::move(vol));
        dev.load_pos_map(dev.volumes_.back());
    }

    dev.prmslices_.resize(dev.geom_.num_slices);
    for (uint64_t i = 0; i < dev.geom_.num_slices; ++i)
        dev.prmslices_[i] = static_cast<uint32_t>(i);
    for (uint64_t i = dev.geom_.num_slices; i > 1; --i) {
        const uint64_t j = dev.rng_->uniform(i);
        std::swap(dev.prmslices_[i - 1], dev.prmslices_[j]);
    }
    dev.prm_inverse_.resize(dev.geom_.num_slices);
    for (uint64_t i = 0; i < dev.geom_.num_slices; ++i)
        dev.prm_inverse_[dev.prmslices_[i]] = static_cast<uint32_t>(i);
    dev.octr_ = 0;
    dev.closed_ = false;
    return dev;
}

void Device::load_pos_map(OpenVolume& vol) {
    std::vector<uint32_t> entries = read_pos_map_raw(image_, geom_, vol.index, vol.vek);
    for (uint64_t lsi = geom_.num_slices; lsi < entries.size(); ++lsi) {
        if (entries[lsi] != kUnmappedPsi)
            throw Corrupt("position map of volume " + std::to_string(vol.index) +
                          " has entries beyond the device slice count");
    }
    entries.resize(geom_.num_slices);
    for (uint64_t lsi = 0; lsi < entries.size(); ++lsi) {
        const uint32_t psi = entries[lsi];
        if (psi == kUnmappedPsi)
            continue;
        if (psi >= geom_.num_slices)
            throw Corrupt("position map of volume " + std::to_string(vol.index) +
                          " points past the data section");
        if (bfld_[psi])
            throw Corrupt("physical slice " + std::to_string(psi) +
                          " is claimed by two volumes");
        bfld_[psi] = 1;
        ++occupied_;
    }
    vol.pos_map = std::move(entries);
}

void Device::persist_pos_map(OpenVolume& vol) {
    std::vector<uint32_t> entries = sentinel_entries(geom_);
    std::copy(vol.pos_map.begin(), vol.pos_map.end(), entries.begin());
    write_pos_map_raw(image_, geom_, vol.index, vol.vek, entries, *rng_);
    vol.map_dirty = false;
}

void Device::flush() {
    ensure_open();
    iv_cache_.flush(image_);
    for (auto& vol : volumes_) {
        if (vol.map_dirty)
            persist_pos_map(vol);
    }
}

void Device::close() {
    if (closed_)
        throw InstanceClosed();
    closed_ = true;
    try {
        iv_cache_.flush(image_);
        for (auto& vol : volumes_)
            persist_pos_map(vol);  // fresh IVs for every open map
        image_.sync();
    } catch (...) {
        wipe_keys();
        image_.close();
        lock_.release();
        throw;
    }
    wipe_keys();
    image_.close();
    lock_.release();
}

void Device::wipe_keys() {
    for (auto& vol : volumes_) {
        vol.vek.zeroize();
        vol.pos_map.clear();
        vol.scratch.clear();
    }
    volumes_.clear();
}

Device::Device(Device&& other) noexcept
    : geom_(other.geom_),
      image_(std::move(other.image_)),
      lock_(std::move(other.lock_)),
      volumes_(std::move(other.volumes_)),
      bfld_(std::move(other.bfld_)),
      prmslices_(std::move(other.prmslices_)),
      prm_inverse_(std::move(other.prm_inverse_)),
      octr_(other.octr_),
      occupied_(other.occupied_),
      iv_cache_(std::move(other.iv_cache_)),
      rng_(other.rng_),
      closed_(std::exchange(other.closed_, true)),
      low_end_volume_(other.low_end_volume_) {}

Device& Device::operator=(Device&& other) noexcept {
    if (this != &other) {
        if (!closed_) {
            try {
                close();
            } catch (...) {
            }
        }
        geom_ = other.geom_;
        image_ = std::move(other.image_);
        lock_ = std::move(other.lock_);
        volumes_ = std::move(other.volumes_);
        bfld_ = std::move(other.bfld_);
        prmslices_ = std::move(other.prmslices_);
        prm_inverse_ = std::move(other.prm_inverse_);
        octr_ = other.octr_;
        occupied_ = other.occupied_;
        iv_cache_ = std::move(other.iv_cache_);
        rng_ = other.rng_;
        closed_ = std::exchange(other.closed_, true);
        low_end_volume_ = other.low_end_volume_;
    }
    return *this;
}

Device::~Device() {
    if (!closed_) {
        try {
            close();
        } catch (...) {
        }
    }
}

}  // namespace sflc
