#include "sflc/analyze.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include <json.hpp>

#include "sflc/stats.hpp"

namespace sflc {

namespace {

bool blocks_differ(const uint8_t* a, const uint8_t* b) {
    return std::memcmp(a, b, kBlockSize) != 0;
}

// Bernoulli draw without floating-point bias at the extremes.
bool coin(Rng& rng, double p) {
    if (p <= 0.0)
        return false;
    if (p >= 1.0)
        return true;
    const uint64_t threshold =
        static_cast<uint64_t>(p * 18446744073709551616.0L);  // p * 2^64
    uint64_t draw = 0;
    std::array<uint8_t, 8> buf{};
    rng.fill(buf);
    std::memcpy(&draw, buf.data(), 8);
    return draw < threshold;
}

}  // namespace

std::vector<uint32_t> SnapshotDiff::nonzero_slices() const {
    std::vector<uint32_t> out;
    for (const auto& s : slices) {
        if (s.changed.any())
            out.push_back(s.psi);
    }
    return out;
}

SnapshotDiff snapshot_diff(const std::string& image_a, const std::string& image_b) {
    ImageFile a(image_a, /*read_only=*/true);
    ImageFile b(image_b, /*read_only=*/true);
    if (a.total_blocks() != b.total_blocks())
        throw SizeMismatch("snapshot sizes differ: " + std::to_string(a.total_blocks()) +
                           " vs " + std::to_string(b.total_blocks()) + " blocks");

    SnapshotDiff diff;
    diff.geometry = compute_geometry(a.total_blocks());
    const Geometry& g = diff.geometry;

    std::array<uint8_t, kBlockSize> block_a{};
    std::array<uint8_t, kBlockSize> block_b{};

    a.read_block(0, block_a);
    b.read_block(0, block_b);
    diff.header.version_or_salt_changed =
        std::memcmp(block_a.data(), block_b.data(), kDmbCellsOffset) != 0;
    for (uint32_t c = 0; c < kMaxVolumes; ++c) {
        const size_t off = kDmbCellsOffset + c * kDmbCellSize;
        diff.header.cell_changed[c] =
            std::memcmp(block_a.data() + off, block_b.data() + off, kDmbCellSize) != 0;
    }
    const size_t pad_off = kDmbCellsOffset + kMaxVolumes * kDmbCellSize;
    diff.header.dmb_padding_changed =
        std::memcmp(block_a.data() + pad_off, block_b.data() + pad_off,
                    kBlockSize - pad_off) != 0;

    for (uint32_t v = 0; v < kMaxVolumes; ++v) {
        uint64_t changed = 0;
        for (uint64_t blk = g.volume_header_start(v);
             blk < g.volume_header_start(v) + g.volume_header_blocks; ++blk) {
            a.read_block(blk, block_a);
            b.read_block(blk, block_b);
            if (blocks_differ(block_a.data(), block_b.data()))
                ++changed;
        }
        diff.header.header_blocks_changed[v] = changed;
    }

    diff.slices.resize(g.num_slices);
    for (uint64_t psi = 0; psi < g.num_slices; ++psi) {
        SliceDiff& s = diff.slices[psi];
        s.psi = static_cast<uint32_t>(psi);
        const uint64_t base = g.slice_start_block(psi);
        for (uint32_t m = 0; m < kPhysicalSliceBlocks; ++m) {
            a.read_block(base + m, block_a);
            b.read_block(base + m, block_b);
            if (blocks_differ(block_a.data(), block_b.data()))
                s.changed.set(m);
        }
    }

    for (uint64_t blk = g.tail_start_block(); blk < g.total_blocks; ++blk) {
        a.read_block(blk, block_a);
        b.read_block(blk, block_b);
        if (blocks_differ(block_a.data(), block_b.data()))
            ++diff.header.tail_blocks_changed;
    }
    return diff;
}

void random_refresh(Device& device, const RefreshPolicy& policy, Rng& rng) {
    const Geometry& g = device.geometry();

    // Free slices: overwrite each block (IV block included) with noise.
    std::array<uint8_t, kBlockSize> noise{};
    for (uint64_t psi = 0; psi < g.num_slices; ++psi) {
        if (device.slice_occupied(psi))
            continue;
        const uint64_t base = g.slice_start_block(psi);
        for (uint32_t m = 0; m < kPhysicalSliceBlocks; ++m) {
            if (!coin(rng, policy.free_block_probability))
                continue;
            rng.fill(noise);
            device.image().write_block(base + m, noise);
        }
    }

    // Mapped data blocks: same plaintext, fresh IV.
    for (uint32_t v = 0; v < device.volume_count(); ++v) {
        for (const auto& [lsi, psi] : device.mapped_slices(v)) {
            for (uint32_t off = 0; off < kLogicalSliceBlocks; ++off) {
                if (coin(rng, policy.data_block_probability))
                    device.reencrypt_block(v, lsi * kLogicalSliceBlocks + off);
            }
        }
    }
}

std::optional<ConstraintViolation> check_pd_constraints(const PdTrace& trace0,
                                                        const PdTrace& trace1, uint32_t ell) {
    if (ell < 1 || ell > kMaxVolumes)
        return ConstraintViolation{"volume count out of range", ell, 0};

    // trace1 runs on the instance without the hidden volume.
    for (const auto& acc : trace1) {
        if (acc.op != PdAccess::Op::none && acc.volume >= ell - 1)
            return ConstraintViolation{"trace1 touches a non-existent volume", acc.volume,
                                       acc.block};
    }
    for (const auto& acc : trace0) {
        if (acc.op != PdAccess::Op::none && acc.volume >= ell)
            return ConstraintViolation{"trace0 touches a non-existent volume", acc.volume,
                                       acc.block};
    }

    // Last write wins per (volume, block); only decoy volumes are constrained.
    using BlockKey = std::pair<uint32_t, uint64_t>;
    auto collect = [&](const PdTrace& trace) {
        std::map<BlockKey, const std::vector<uint8_t>*> final_content;
        std::set<BlockKey> touched;
        for (const auto& acc : trace) {
            if (acc.op != PdAccess::Op::write || acc.volume >= ell - 1)
                continue;
            const BlockKey key{acc.volume, acc.block};
            final_content[key] = &acc.data;
            touched.insert(key);
        }
        return std::make_pair(std::move(final_content), std::move(touched));
    };
    auto [content0, touched0] = collect(trace0);
    auto [content1, touched1] = collect(trace1);

    if (touched0 != touched1) {
        std::vector<BlockKey> delta;
        std::set_symmetric_difference(touched0.begin(), touched0.end(), touched1.begin(),
                                      touched1.end(), std::back_inserter(delta));
        return ConstraintViolation{"written-block sets differ", delta.front().first,
                                   delta.front().second};
    }
    for (const auto& [key, data0] : content0) {
        if (*data0 != *content1.at(key))
            return ConstraintViolation{"final decoy contents differ", key.first, key.second};
    }
    return std::nullopt;
}

bool PdReport::all_passed() const {
    return std::all_of(records.begin(), records.end(),
                       [](const CheckRecord& r) { return r.pass; });
}

void PdReport::write_text(std::ostream& out) const {
    for (const auto& r : records) {
        out << (r.pass ? "PASS " : "FAIL ") << r.name << " statistic=" << r.statistic
            << " threshold=" << r.threshold << "\n";
    }
}

void PdReport::write_records(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write report records to " + path);
    for (const auto& r : records) {
        nlohmann::json j{{"name", r.name},
                         {"statistic", r.statistic},
                         {"threshold", r.threshold},
                         {"pass", r.pass}};
        out << j.dump() << "\n";
    }
}

namespace {

struct TrialImages {
    std::string d0;
    std::string d1;
};

void run_trace(Device& dev, const PdTrace& trace) {
    std::array<uint8_t, kBlockSize> buf{};
    for (const auto& acc : trace) {
        switch (acc.op) {
            case PdAccess::Op::none:
                break;
            case PdAccess::Op::read:
                dev.read_block(acc.volume, acc.block, buf);
                break;
            case PdAccess::Op::write: {
                if (acc.data.size() != kBlockSize)
                    throw RangeError("trace write payload must be one block");
                std::span<const uint8_t, kBlockSize> data(acc.data.data(), kBlockSize);
                dev.write_block(acc.volume, acc.block, data);
                break;
            }
        }
    }
}

// Bytes the adversary cannot attribute to any revealed volume: DMB cells and
// header slots at or above the hidden index, DMB padding, every slice not
// mapped by a revealed volume, and the tail.
void battery_over_unexplained(const std::string& path, uint32_t revealed_volumes,
                              const std::set<uint32_t>& revealed_psis,
                              stats::ByteBattery& battery) {
    ImageFile image(path, /*read_only=*/true);
    const Geometry g = compute_geometry(image.total_blocks());
    std::array<uint8_t, kBlockSize> block{};

    image.read_block(0, block);
    battery.add(std::span(block).subspan(kDmbCellsOffset + revealed_volumes * kDmbCellSize,
                                         (kMaxVolumes - revealed_volumes) * kDmbCellSize));
    battery.add(std::span(block).subspan(kDmbCellsOffset + kMaxVolumes * kDmbCellSize));

    for (uint32_t v = revealed_volumes; v < kMaxVolumes; ++v) {
        for (uint64_t blk = g.volume_header_start(v);
             blk < g.volume_header_start(v) + g.volume_header_blocks; ++blk) {
            image.read_block(blk, block);
            battery.add(block);
        }
    }
    for (uint64_t psi = 0; psi < g.num_slices; ++psi) {
        if (revealed_psis.count(static_cast<uint32_t>(psi)))
            continue;
        const uint64_t base = g.slice_start_block(psi);
        for (uint32_t m = 0; m < kPhysicalSliceBlocks; ++m) {
            image.read_block(base + m, block);
            battery.add(block);
        }
    }
    for (uint64_t blk = g.tail_start_block(); blk < g.total_blocks; ++blk) {
        image.read_block(blk, block);
        battery.add(block);
    }
}

std::string random_hex_password(Rng& rng) {
    std::array<uint8_t, 16> raw{};
    rng.fill(raw);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (uint8_t b : raw) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

}  // namespace

PdReport pd_structural_test(const PdTestConfig& config) {
    Rng& rng = config.rng ? *config.rng : system_rng();
    if (auto violation = check_pd_constraints(config.trace0, config.trace1, config.ell))
        throw Error("trace pair violates the game constraints: " + violation->constraint +
                    " (volume " + std::to_string(violation->volume) + ", block " +
                    std::to_string(violation->block) + ")");

    const uint32_t decoys = config.ell - 1;
    std::vector<std::string> decoy_passwords;
    for (uint32_t i = 0; i < decoys; ++i)
        decoy_passwords.push_back("decoy-password-" + std::to_string(i));

    const TrialImages paths{config.workdir + "/pd_d0.img", config.workdir + "/pd_d1.img"};
    const size_t psi_bins = 16;
    std::vector<uint64_t> hist0(psi_bins, 0), hist1(psi_bins, 0);

    uint64_t content_mismatches = 0;
    uint64_t boundary_mismatches = 0;
    double worst_battery_p = 1.0;
    const double battery_threshold =
        config.alpha / (4.0 * std::max<uint32_t>(config.trials, 1));

    Device::Options open_opts;
    open_opts.kdf = config.kdf;
    open_opts.rng = &rng;

    for (uint32_t trial = 0; trial < config.trials; ++trial) {
        // Instance with the hidden volume, driven by trace0.
        {
            std::vector<std::string> passwords = decoy_passwords;
            passwords.push_back(random_hex_password(rng));
            ImageFile::create(paths.d0, config.total_blocks);
            Device::initialize(paths.d0, passwords, /*skip_randfill=*/false, config.kdf, rng);
            Device dev = Device::open(paths.d0, passwords.back(), open_opts);
            if (config.low_end_hidden_allocator)
                dev.force_low_end_allocation(config.ell - 1);
            run_trace(dev, config.trace0);
            dev.close();
        }
        // Instance without it, driven by trace1.
        {
            ImageFile::create(paths.d1, config.total_blocks);
            Device::initialize(paths.d1, decoy_passwords, /*skip_randfill=*/false, config.kdf,
                               rng);
            if (decoys > 0) {
                Device dev = Device::open(paths.d1, decoy_passwords.back(), open_opts);
                run_trace(dev, config.trace1);
                dev.close();
            } else if (!config.trace1.empty()) {
                throw Error("trace1 must be empty when no decoy volume exists");
            }
        }

        {
            ImageFile a(paths.d0, true), b(paths.d1, true);
            if (compute_geometry(a.total_blocks()) != compute_geometry(b.total_blocks()))
                ++boundary_mismatches;
        }

        std::set<uint32_t> revealed0, revealed1;
        if (decoys > 0) {
            Device dev0 = Device::open(paths.d0, decoy_passwords.back(), open_opts);
            Device dev1 = Device::open(paths.d1, decoy_passwords.back(), open_opts);
            if (dev0.volume_count() != decoys || dev1.volume_count() != decoys)
                ++boundary_mismatches;

            const uint64_t num_slices = dev0.geometry().num_slices;
            std::array<uint8_t, kBlockSize> buf0{}, buf1{};
            for (uint32_t v = 0; v < decoys; ++v) {
                auto mapped0 = dev0.mapped_slices(v);
                auto mapped1 = dev1.mapped_slices(v);
                std::set<uint64_t> lsis0, lsis1;
                for (auto& [lsi, psi] : mapped0) {
                    lsis0.insert(lsi);
                    revealed0.insert(psi);
                    ++hist0[psi * psi_bins / num_slices];
                }
                for (auto& [lsi, psi] : mapped1) {
                    lsis1.insert(lsi);
                    revealed1.insert(psi);
                    ++hist1[psi * psi_bins / num_slices];
                }
                if (lsis0 != lsis1)
                    ++content_mismatches;

                // Written decoy blocks must read back identically.
                std::set<uint64_t> written;
                for (const auto& acc : config.trace0) {
                    if (acc.op == PdAccess::Op::write && acc.volume == v)
                        written.insert(acc.block);
                }
                for (uint64_t blk : written) {
                    dev0.read_block(v, blk, buf0);
                    dev1.read_block(v, blk, buf1);
                    if (std::memcmp(buf0.data(), buf1.data(), kBlockSize) != 0)
                        ++content_mismatches;
                }
                // A slice no trace touched must read as zeros on both sides.
                const uint64_t probe_lsi = num_slices - 1;
                if (!lsis0.count(probe_lsi) && !lsis1.count(probe_lsi)) {
                    dev0.read_block(v, probe_lsi * kLogicalSliceBlocks, buf0);
                    dev1.read_block(v, probe_lsi * kLogicalSliceBlocks, buf1);
                    static const std::array<uint8_t, kBlockSize> zeros{};
                    if (std::memcmp(buf0.data(), zeros.data(), kBlockSize) != 0 ||
                        std::memcmp(buf1.data(), zeros.data(), kBlockSize) != 0)
                        ++content_mismatches;
                }
            }
            dev0.close();
            dev1.close();
        }

        stats::ByteBattery battery0, battery1;
        battery_over_unexplained(paths.d0, decoys, revealed0, battery0);
        battery_over_unexplained(paths.d1, decoys, revealed1, battery1);
        worst_battery_p = std::min({worst_battery_p, battery0.monobit_p(),
                                    battery0.byte_chi2_p(), battery1.monobit_p(),
                                    battery1.byte_chi2_p()});
    }

    PdReport report;
    report.records.push_back({"decoy-contents-identical", static_cast<double>(content_mismatches),
                              0.0, content_mismatches == 0});
    report.records.push_back({"region-boundaries-identical",
                              static_cast<double>(boundary_mismatches), 0.0,
                              boundary_mismatches == 0});
    report.records.push_back({"unexplained-bytes-random (min p, Bonferroni)", worst_battery_p,
                              battery_threshold, worst_battery_p >= battery_threshold});
    const double occupancy_p = stats::two_sample_chi2_p(hist0, hist1);
    report.records.push_back(
        {"decoy-occupancy-two-sample-chi2", occupancy_p, config.alpha,
         occupancy_p >= config.alpha});
    return report;
}

}  // namespace sflc
