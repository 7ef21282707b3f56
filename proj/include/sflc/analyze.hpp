#pragma once

// Adversary-side analysis: per-slice snapshot diffs, the random-refresh
// obfuscator, and the structural single-snapshot deniability harness.

#include <bitset>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sflc/device.hpp"
#include "sflc/layout.hpp"

namespace sflc {

// Which of the S_P blocks of one physical slice differ between snapshots.
struct SliceDiff {
    uint32_t psi = 0;
    std::bitset<kPhysicalSliceBlocks> changed;
};

struct HeaderDiff {
    bool version_or_salt_changed = false;
    std::array<bool, kMaxVolumes> cell_changed{};
    bool dmb_padding_changed = false;
    std::array<uint64_t, kMaxVolumes> header_blocks_changed{};
    uint64_t tail_blocks_changed = 0;
};

struct SnapshotDiff {
    Geometry geometry;
    HeaderDiff header;
    std::vector<SliceDiff> slices;  // one entry per physical slice

    std::vector<uint32_t> nonzero_slices() const;
};

// Byte-compares two equal-sized images block by block.
SnapshotDiff snapshot_diff(const std::string& image_a, const std::string& image_b);

struct RefreshPolicy {
    double free_block_probability = 0.0;  // p: re-randomise free-slice blocks
    double data_block_probability = 0.0;  // q: re-encrypt mapped data blocks
};

// Re-randomises free-slice blocks and re-encrypts open volumes' data blocks,
// each independently per block. Logical volume contents are unchanged.
void random_refresh(Device& device, const RefreshPolicy& policy, Rng& rng);

struct PdAccess {
    enum class Op { none, read, write };
    Op op = Op::none;
    uint32_t volume = 0;
    uint64_t block = 0;
    std::vector<uint8_t> data;  // kBlockSize bytes for writes

    static PdAccess write_of(uint32_t volume, uint64_t block, std::vector<uint8_t> data) {
        return PdAccess{Op::write, volume, block, std::move(data)};
    }
    static PdAccess read_of(uint32_t volume, uint64_t block) {
        return PdAccess{Op::read, volume, block, {}};
    }
};

using PdTrace = std::vector<PdAccess>;

struct ConstraintViolation {
    std::string constraint;
    uint32_t volume = 0;
    uint64_t block = 0;
};

// Verifies the two game constraints on an access-pattern pair: equal final
// decoy contents, and equal per-decoy written-block sets. Pure.
std::optional<ConstraintViolation> check_pd_constraints(const PdTrace& trace0,
                                                        const PdTrace& trace1, uint32_t ell);

struct CheckRecord {
    std::string name;
    double statistic = 0;
    double threshold = 0;
    bool pass = false;
};

struct PdReport {
    std::vector<CheckRecord> records;

    bool all_passed() const;
    void write_text(std::ostream& out) const;
    void write_records(const std::string& path) const;  // one JSON object per line
};

struct PdTestConfig {
    uint64_t total_blocks = 0;
    uint32_t ell = 2;  // hidden volume is index ell-1; decoys are 0..ell-2
    PdTrace trace0;    // runs on the ell-volume instance
    PdTrace trace1;    // runs on the (ell-1)-volume instance
    uint32_t trials = 50;
    double alpha = 0.001;
    KdfCost kdf = kKdfCostFast;
    std::string workdir;
    bool low_end_hidden_allocator = false;  // exercise the mutation hook
    Rng* rng = nullptr;
};

// Builds trial pairs of instances per the single-snapshot game, reveals the
// decoy passwords, and runs the structural checks: (a) identical decoy
// contents, (b) identical region boundaries, (c) randomness battery over all
// unexplained bytes (Bonferroni-corrected across trials), (d) matching decoy
// PSI occupancy histograms.
PdReport pd_structural_test(const PdTestConfig& config);

}  // namespace sflc
