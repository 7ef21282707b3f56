#pragma once

// On-disk format v1: constants and derived geometry.
//
// Block 0 is the device master block (DMB). It is followed by kMaxVolumes
// equal-sized volume headers (one VMB block, then packed position-map IV
// blocks, then position-map payload blocks), then the data section of
// num_slices physical slices, then a never-touched random tail.

#include <bit>
#include <cstddef>
#include <cstdint>

#include "sflc/errors.hpp"

namespace sflc {

static_assert(std::endian::native == std::endian::little,
              "on-disk format is little-endian and so is this implementation");

inline constexpr uint32_t kBlockSize = 4096;
inline constexpr uint32_t kLogicalSliceBlocks = 256;  // data blocks per slice
inline constexpr uint32_t kIvBlocksPerSlice = 1;
inline constexpr uint32_t kPhysicalSliceBlocks = kLogicalSliceBlocks + kIvBlocksPerSlice;
inline constexpr uint32_t kMaxVolumes = 15;
inline constexpr uint32_t kIvLen = 16;
inline constexpr uint32_t kKeyLen = 32;
inline constexpr uint32_t kTagLen = 16;
inline constexpr uint32_t kSaltLen = 32;
inline constexpr uint32_t kPsiEntryLen = 4;
inline constexpr uint8_t kFormatVersion = 0x01;

// All-ones marks an unmapped position-map entry; valid PSIs stay below it.
inline constexpr uint32_t kUnmappedPsi = 0xFFFFFFFFu;

static_assert(kIvBlocksPerSlice * kBlockSize >= kLogicalSliceBlocks * kIvLen,
              "one IV block must hold the IVs of a whole slice");

// DMB byte offsets within block 0.
inline constexpr size_t kDmbVersionOffset = 0;
inline constexpr size_t kDmbSaltOffset = 1;
inline constexpr size_t kDmbCellsOffset = kDmbSaltOffset + kSaltLen;
inline constexpr size_t kDmbCellSize = kIvLen + kKeyLen + kTagLen;  // 64

// VMB block: iv(16) || ctr-ciphertext(4080).
// VMB plaintext: vek(32) || prev_vmk(32) || num_slices(8 LE) || random fill.
inline constexpr size_t kVmbCiphertextLen = kBlockSize - kIvLen;

struct Geometry {
    uint64_t total_blocks = 0;
    uint64_t max_slices_bound = 0;    // floor(N / S_P); sizes the position maps
    uint64_t pm_payload_blocks = 0;   // per volume
    uint64_t pm_iv_blocks = 0;        // per volume
    uint64_t volume_header_blocks = 0;
    uint64_t header_blocks = 0;
    uint64_t num_slices = 0;
    uint64_t data_start_block = 0;

    uint64_t volume_header_start(uint32_t volume) const {
        return 1 + static_cast<uint64_t>(volume) * volume_header_blocks;
    }
    uint64_t vmb_block(uint32_t volume) const { return volume_header_start(volume); }
    uint64_t pm_iv_start(uint32_t volume) const { return volume_header_start(volume) + 1; }
    uint64_t pm_payload_start(uint32_t volume) const {
        return pm_iv_start(volume) + pm_iv_blocks;
    }
    // Position-map entries that physically fit in the payload region.
    uint64_t pm_capacity_entries() const {
        return pm_payload_blocks * (kBlockSize / kPsiEntryLen);
    }
    uint64_t slice_start_block(uint64_t psi) const {
        return data_start_block + psi * kPhysicalSliceBlocks;
    }
    uint64_t slice_iv_block(uint64_t psi) const { return slice_start_block(psi); }
    uint64_t tail_start_block() const {
        return data_start_block + num_slices * kPhysicalSliceBlocks;
    }
    uint64_t max_logical_blocks() const { return num_slices * kLogicalSliceBlocks; }

    bool operator==(const Geometry&) const = default;
};

// Derives the full layout from the device size. Throws DeviceTooSmall when
// no data slice fits behind the header section.
Geometry compute_geometry(uint64_t total_blocks);

// Absolute index of a data block, addressed by physical slice and offset.
// The slice's IV block sits immediately before its data blocks.
uint64_t slice_block_address(const Geometry& geometry, uint64_t psi, uint32_t offset_in_slice);

}  // namespace sflc
