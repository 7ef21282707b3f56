// Block indirection engine: reads, writes, lazy allocation, trim-driven
// reclaim, and the write-back IV cache.

#include <cstring>

#include "sflc/device.hpp"

namespace sflc {

IvCache::Entry& IvCache::entry(ImageFile& image, uint64_t iv_block) {
    auto it = entries_.find(iv_block);
    if (it != entries_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second.lru_it);
        return it->second;
    }
    if (entries_.size() >= capacity_) {
        const uint64_t victim = lru_.back();
        auto& old = entries_.at(victim);
        if (old.dirty)
            image.write_block(victim, old.data);
        lru_.pop_back();
        entries_.erase(victim);
    }
    lru_.push_front(iv_block);
    Entry& e = entries_[iv_block];
    e.lru_it = lru_.begin();
    image.read_block(iv_block, e.data);
    return e;
}

Iv128 IvCache::load(ImageFile& image, uint64_t iv_block, uint32_t slot) {
    Entry& e = entry(image, iv_block);
    Iv128 iv;
    std::memcpy(iv.bytes.data(), e.data.data() + static_cast<size_t>(slot) * kIvLen, kIvLen);
    return iv;
}

void IvCache::store(ImageFile& image, uint64_t iv_block, uint32_t slot, const Iv128& iv) {
    Entry& e = entry(image, iv_block);
    std::memcpy(e.data.data() + static_cast<size_t>(slot) * kIvLen, iv.bytes.data(), kIvLen);
    e.dirty = true;
}

void IvCache::flush(ImageFile& image) {
    for (auto& [block, e] : entries_) {
        if (e.dirty) {
            image.write_block(block, e.data);
            e.dirty = false;
        }
    }
}

void IvCache::drop(uint64_t iv_block) {
    auto it = entries_.find(iv_block);
    if (it != entries_.end()) {
        lru_.erase(it->second.lru_it);
        entries_.erase(it);
    }
}

bool IvCache::clean() const {
    for (const auto& [block, e] : entries_) {
        if (e.dirty)
            return false;
    }
    return true;
}

void Device::ensure_open() const {
    if (closed_)
        throw InstanceClosed();
}

OpenVolume& Device::need_volume(uint32_t volume) {
    if (volume >= volumes_.size())
        throw VolumeNotOpen("volume " + std::to_string(volume) + " is not open");
    return volumes_[volume];
}

void Device::check_address(uint32_t volume, uint64_t block) const {
    if (volume >= volumes_.size())
        throw VolumeNotOpen("volume " + std::to_string(volume) + " is not open");
    if (block >= geom_.max_logical_blocks())
        throw RangeError("logical block " + std::to_string(block) + " out of range");
}

void Device::read_block(uint32_t volume, uint64_t block, std::span<uint8_t, kBlockSize> out) {
    ensure_open();
    check_address(volume, block);
    OpenVolume& vol = volumes_[volume];
    const uint64_t lsi = block / kLogicalSliceBlocks;
    const uint32_t offset = static_cast<uint32_t>(block % kLogicalSliceBlocks);
    const uint32_t psi = vol.pos_map[lsi];
    if (psi == kUnmappedPsi) {
        // Unallocated blocks logically exist and read as zero. No slice is
        // ever allocated here, so reads leave no trace on the image.
        std::memset(out.data(), 0, out.size());
        return;
    }
    const uint64_t phys = slice_block_address(geom_, psi, offset);
    const Iv128 iv = iv_cache_.load(image_, geom_.slice_iv_block(psi), offset);
    std::array<uint8_t, kBlockSize> cipher{};
    image_.read_block(phys, cipher);
    decrypt_block(vol.vek, iv, cipher, out);
}

void Device::write_block(uint32_t volume, uint64_t block,
                         std::span<const uint8_t, kBlockSize> data) {
    ensure_open();
    check_address(volume, block);
    OpenVolume& vol = volumes_[volume];
    const uint64_t lsi = block / kLogicalSliceBlocks;
    const uint32_t offset = static_cast<uint32_t>(block % kLogicalSliceBlocks);
    uint32_t psi = vol.pos_map[lsi];
    if (psi == kUnmappedPsi)
        psi = allocate_slice(volume, lsi);

    const Iv128 iv = rng_->iv();
    iv_cache_.store(image_, geom_.slice_iv_block(psi), offset, iv);
    std::array<uint8_t, kBlockSize> cipher{};
    encrypt_block(vol.vek, iv, data, cipher);
    image_.write_block(slice_block_address(geom_, psi, offset), cipher);

    auto it = vol.scratch.find(lsi);
    if (it != vol.scratch.end()) {
        it->second.written.set(offset);
        it->second.trimmed.reset(offset);
    }
}

void Device::reencrypt_block(uint32_t volume, uint64_t block) {
    ensure_open();
    check_address(volume, block);
    OpenVolume& vol = volumes_[volume];
    const uint64_t lsi = block / kLogicalSliceBlocks;
    const uint32_t offset = static_cast<uint32_t>(block % kLogicalSliceBlocks);
    const uint32_t psi = vol.pos_map[lsi];
    if (psi == kUnmappedPsi)
        return;
    const uint64_t phys = slice_block_address(geom_, psi, offset);
    const uint64_t iv_block = geom_.slice_iv_block(psi);

    std::array<uint8_t, kBlockSize> buf{};
    image_.read_block(phys, buf);
    decrypt_block(vol.vek, iv_cache_.load(image_, iv_block, offset), buf, buf);
    const Iv128 fresh = rng_->iv();
    iv_cache_.store(image_, iv_block, offset, fresh);
    encrypt_block(vol.vek, fresh, buf, buf);
    image_.write_block(phys, buf);
}

uint32_t Device::allocate_slice(uint32_t volume, uint64_t lsi) {
    ensure_open();
    OpenVolume& vol = need_volume(volume);
    if (lsi >= geom_.num_slices)
        throw RangeError("logical slice " + std::to_string(lsi) + " out of range");
    if (vol.pos_map[lsi] != kUnmappedPsi)
        throw Error("logical slice " + std::to_string(lsi) + " is already mapped");

    if (low_end_volume_ && *low_end_volume_ == volume) {
        // Skewed claim order; see force_low_end_allocation().
        for (uint64_t psi = 0; psi < geom_.num_slices; ++psi) {
            if (!bfld_[psi]) {
                claim(vol, lsi, psi);
                return static_cast<uint32_t>(psi);
            }
        }
        throw NoSpace();
    }

    while (octr_ < geom_.num_slices && bfld_[prmslices_[octr_]])
        ++octr_;
    if (octr_ >= geom_.num_slices)
        throw NoSpace();
    const uint32_t psi = prmslices_[octr_];
    ++octr_;  // prmslices_[0..octr_) is now fully occupied
    claim(vol, lsi, psi);
    return psi;
}

void Device::claim(OpenVolume& vol, uint64_t lsi, uint64_t psi) {
    bfld_[psi] = 1;
    ++occupied_;
    vol.pos_map[lsi] = static_cast<uint32_t>(psi);
    vol.map_dirty = true;
    vol.scratch[lsi] = SliceScratch{};  // nothing written to the new slice yet
}

void Device::swap_permutation(size_t a, size_t b) {
    if (a == b)
        return;
    std::swap(prmslices_[a], prmslices_[b]);
    prm_inverse_[prmslices_[a]] = static_cast<uint32_t>(a);
    prm_inverse_[prmslices_[b]] = static_cast<uint32_t>(b);
}

void Device::reclaim_slice(uint32_t volume, uint64_t lsi) {
    ensure_open();
    OpenVolume& vol = need_volume(volume);
    if (lsi >= geom_.num_slices)
        throw RangeError("logical slice " + std::to_string(lsi) + " out of range");
    const uint32_t psi = vol.pos_map[lsi];
    if (psi == kUnmappedPsi)
        throw NotMapped("logical slice " + std::to_string(lsi) + " is not mapped");

    bfld_[psi] = 0;
    --occupied_;
    vol.pos_map[lsi] = kUnmappedPsi;
    vol.map_dirty = true;
    vol.scratch.erase(lsi);
    // A stale cached IV block would otherwise be flushed into the freed slice.
    iv_cache_.drop(geom_.slice_iv_block(psi));

    const uint32_t k = prm_inverse_[psi];
    if (k >= octr_)
        return;  // already outside the consumed prefix; nothing to reshuffle
    // Move the freed PSI to the prefix boundary, then to a uniformly random
    // spot in the unconsumed region, shrinking the prefix if the boundary
    // element ends up free.
    const size_t boundary = octr_ - 1;
    swap_permutation(k, boundary);
    const uint64_t j = boundary + rng_->uniform(geom_.num_slices - boundary);
    swap_permutation(j, boundary);
    if (!bfld_[prmslices_[boundary]])
        --octr_;
}

void Device::trim_block(uint32_t volume, uint64_t block) {
    ensure_open();
    check_address(volume, block);
    OpenVolume& vol = volumes_[volume];
    const uint64_t lsi = block / kLogicalSliceBlocks;
    const uint32_t offset = static_cast<uint32_t>(block % kLogicalSliceBlocks);
    if (vol.pos_map[lsi] == kUnmappedPsi)
        return;

    auto [it, inserted] = vol.scratch.try_emplace(lsi);
    if (inserted)
        it->second.written.set();  // slice predates this session: assume all written
    it->second.trimmed.set(offset);
    if ((it->second.written & ~it->second.trimmed).none())
        reclaim_slice(volume, lsi);
}

std::optional<uint32_t> Device::mapped_psi(uint32_t volume, uint64_t lsi) const {
    if (volume >= volumes_.size() || lsi >= geom_.num_slices)
        return std::nullopt;
    const uint32_t psi = volumes_[volume].pos_map[lsi];
    if (psi == kUnmappedPsi)
        return std::nullopt;
    return psi;
}

std::vector<std::pair<uint64_t, uint32_t>> Device::mapped_slices(uint32_t volume) const {
    std::vector<std::pair<uint64_t, uint32_t>> out;
    if (volume >= volumes_.size())
        return out;
    const auto& map = volumes_[volume].pos_map;
    for (uint64_t lsi = 0; lsi < map.size(); ++lsi) {
        if (map[lsi] != kUnmappedPsi)
            out.emplace_back(lsi, map[lsi]);
    }
    return out;
}

bool Device::slice_occupied(uint64_t psi) const {
    return psi < bfld_.size() && bfld_[psi] != 0;
}

}  // namespace sflc
