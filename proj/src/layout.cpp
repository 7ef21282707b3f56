#include "sflc/layout.hpp"

namespace sflc {

namespace {
uint64_t ceil_div(uint64_t a, uint64_t b) { return (a + b - 1) / b; }
}  // namespace

Geometry compute_geometry(uint64_t total_blocks) {
    Geometry g;
    g.total_blocks = total_blocks;
    g.max_slices_bound = total_blocks / kPhysicalSliceBlocks;
    if (g.max_slices_bound >= kUnmappedPsi)
        throw RangeError("device too large: slice index would overflow the entry width");
    g.pm_payload_blocks = ceil_div(g.max_slices_bound * kPsiEntryLen, kBlockSize);
    g.pm_iv_blocks = ceil_div(g.pm_payload_blocks * kIvLen, kBlockSize);
    g.volume_header_blocks = 1 + g.pm_iv_blocks + g.pm_payload_blocks;
    g.header_blocks = 1 + kMaxVolumes * g.volume_header_blocks;
    if (total_blocks <= g.header_blocks ||
        (total_blocks - g.header_blocks) / kPhysicalSliceBlocks < 1) {
        throw DeviceTooSmall("device of " + std::to_string(total_blocks) +
                             " blocks cannot hold a single data slice");
    }
    g.num_slices = (total_blocks - g.header_blocks) / kPhysicalSliceBlocks;
    g.data_start_block = g.header_blocks;
    return g;
}

uint64_t slice_block_address(const Geometry& geometry, uint64_t psi, uint32_t offset_in_slice) {
    if (psi >= geometry.num_slices)
        throw RangeError("physical slice index " + std::to_string(psi) + " out of range");
    if (offset_in_slice >= kLogicalSliceBlocks)
        throw RangeError("offset " + std::to_string(offset_in_slice) + " exceeds slice size");
    return geometry.data_start_block + psi * kPhysicalSliceBlocks + kIvBlocksPerSlice +
           offset_in_slice;
}

}  // namespace sflc
