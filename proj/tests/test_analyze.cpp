#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "sflc/analyze.hpp"
#include "sflc/device.hpp"

using namespace sflc;
using testutil::TempDir;

namespace {

constexpr uint64_t kSmallBlocks = 2000;  // 7 slices

std::string fresh_device(const TempDir& dir, const std::string& name, size_t volumes,
                         uint64_t blocks = kSmallBlocks) {
    const std::string path = testutil::make_image(dir, name, blocks);
    std::vector<std::string> pws;
    for (size_t i = 0; i < volumes; ++i)
        pws.push_back("pw-" + std::to_string(i));
    Device::initialize(path, pws, /*skip_randfill=*/false, kKdfCostFast, system_rng());
    return path;
}

bool diffs_equal(const SnapshotDiff& x, const SnapshotDiff& y) {
    if (x.slices.size() != y.slices.size())
        return false;
    for (size_t i = 0; i < x.slices.size(); ++i) {
        if (x.slices[i].changed != y.slices[i].changed)
            return false;
    }
    return x.header.version_or_salt_changed == y.header.version_or_salt_changed &&
           x.header.cell_changed == y.header.cell_changed &&
           x.header.header_blocks_changed == y.header.header_blocks_changed &&
           x.header.tail_blocks_changed == y.header.tail_blocks_changed;
}

}  // namespace

TEST_CASE("identical snapshots diff to nothing") {
    TempDir dir;
    const auto path = fresh_device(dir, "a.img", 1);
    const auto copy = dir.file("a-copy.img");
    std::filesystem::copy_file(path, copy);
    const auto d = snapshot_diff(path, copy);
    CHECK(d.nonzero_slices().empty());
    CHECK_FALSE(d.header.version_or_salt_changed);
    CHECK(d.header.tail_blocks_changed == 0);
    for (auto c : d.header.cell_changed)
        CHECK_FALSE(c);
}

TEST_CASE("size mismatch is rejected") {
    TempDir dir;
    const auto a = fresh_device(dir, "s1.img", 1, kSmallBlocks);
    const auto b = fresh_device(dir, "s2.img", 1, kSmallBlocks + 257);
    CHECK_THROWS_AS(snapshot_diff(a, b), SizeMismatch);
}

TEST_CASE("one logical write shows up as at most two changed blocks in one slice") {
    TempDir dir;
    const auto path = fresh_device(dir, "b.img", 1);
    const auto before = dir.file("b-before.img");
    std::filesystem::copy_file(path, before);

    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    dev.write_block(0, 42, testutil::pattern_block(1));
    dev.flush();
    dev.image().sync();

    const auto d = snapshot_diff(before, path);
    const auto changed = d.nonzero_slices();
    REQUIRE(changed.size() == 1);
    const auto& mask = d.slices[changed[0]].changed;
    CHECK(mask.count() <= 2);
    CHECK(mask.test(0));                              // the slice's IV block
    CHECK(mask.test(kIvBlocksPerSlice + 42));         // the data block itself
    dev.close();
}

TEST_CASE("snapshot diff is symmetric") {
    TempDir dir;
    const auto path = fresh_device(dir, "c.img", 1);
    const auto before = dir.file("c-before.img");
    std::filesystem::copy_file(path, before);
    {
        Device dev = Device::open(path, "pw-0", testutil::fast_options());
        dev.write_block(0, 0, testutil::pattern_block(3));
        dev.write_block(0, 999, testutil::pattern_block(4));
        dev.close();
    }
    CHECK(diffs_equal(snapshot_diff(before, path), snapshot_diff(path, before)));
}

TEST_CASE("refresh with zero probabilities changes nothing") {
    TempDir dir;
    const auto path = fresh_device(dir, "d.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    dev.write_block(0, 7, testutil::pattern_block(7));
    dev.flush();
    const auto digest = testutil::file_digest(path);
    random_refresh(dev, {0.0, 0.0}, system_rng());
    dev.flush();
    CHECK(testutil::file_digest(path) == digest);
    dev.close();
}

TEST_CASE("refresh with p=1 touches every free-slice block") {
    TempDir dir;
    const auto path = fresh_device(dir, "e.img", 1);
    const auto before = dir.file("e-before.img");
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    dev.write_block(0, 0, testutil::pattern_block(2));
    dev.flush();
    dev.image().sync();
    std::filesystem::copy_file(path, before);

    std::set<uint64_t> occupied;
    for (uint64_t p = 0; p < dev.geometry().num_slices; ++p) {
        if (dev.slice_occupied(p))
            occupied.insert(p);
    }
    random_refresh(dev, {1.0, 0.0}, system_rng());
    dev.flush();
    dev.image().sync();

    const auto d = snapshot_diff(before, path);
    for (const auto& s : d.slices) {
        if (occupied.count(s.psi))
            CHECK(s.changed.none());
        else
            CHECK(s.changed.all());
    }
    dev.close();
}

TEST_CASE("refresh fraction tracks p, and q preserves contents") {
    TempDir dir;
    const auto path = fresh_device(dir, "f.img", 2, 46 + 40 * kPhysicalSliceBlocks);
    const auto before = dir.file("f-before.img");
    testutil::SeededRng rng(4242);
    Device dev = Device::open(path, "pw-1", testutil::fast_options(&rng));
    const auto block = testutil::pattern_block(9);
    dev.write_block(0, 0, block);
    dev.write_block(1, 5 * kLogicalSliceBlocks + 3, block);
    dev.flush();
    dev.image().sync();
    std::filesystem::copy_file(path, before);

    // reads we will compare after the refresh, including never-written blocks
    std::vector<std::pair<uint32_t, uint64_t>> probes = {
        {0, 0}, {0, 1}, {0, 200}, {1, 5 * kLogicalSliceBlocks + 3}, {1, 5 * kLogicalSliceBlocks}};
    std::vector<std::array<uint8_t, kBlockSize>> expected;
    for (auto [v, b] : probes) {
        std::array<uint8_t, kBlockSize> buf{};
        dev.read_block(v, b, buf);
        expected.push_back(buf);
    }

    const double p = 0.3;
    random_refresh(dev, {p, 0.5}, rng);
    dev.flush();
    dev.image().sync();

    for (size_t i = 0; i < probes.size(); ++i) {
        std::array<uint8_t, kBlockSize> buf{};
        dev.read_block(probes[i].first, probes[i].second, buf);
        CHECK(std::memcmp(buf.data(), expected[i].data(), kBlockSize) == 0);
    }

    const auto d = snapshot_diff(before, path);
    uint64_t free_blocks = 0, free_changed = 0;
    for (const auto& s : d.slices) {
        if (dev.slice_occupied(s.psi))
            continue;
        free_blocks += kPhysicalSliceBlocks;
        free_changed += s.changed.count();
    }
    REQUIRE(free_blocks >= 9000);
    const double fraction = double(free_changed) / double(free_blocks);
    const double sigma = std::sqrt(p * (1 - p) / double(free_blocks));
    CHECK(fraction > p - 3 * sigma);
    CHECK(fraction < p + 3 * sigma);
    dev.close();
}

TEST_CASE("with no obfuscation, only occupied slices ever change") {
    TempDir dir;
    const auto path = fresh_device(dir, "g.img", 2);
    {
        Device dev = Device::open(path, "pw-1", testutil::fast_options());
        dev.write_block(0, 0, testutil::pattern_block(1));
        dev.close();
    }
    const auto before = dir.file("g-before.img");
    std::filesystem::copy_file(path, before);

    Device dev = Device::open(path, "pw-1", testutil::fast_options());
    // hidden-volume activity between the two snapshots
    dev.write_block(1, 0, testutil::pattern_block(2));
    dev.write_block(1, 300, testutil::pattern_block(3));
    std::set<uint64_t> occupied;
    for (uint64_t p = 0; p < dev.geometry().num_slices; ++p) {
        if (dev.slice_occupied(p))
            occupied.insert(p);
    }
    dev.close();

    const auto d = snapshot_diff(before, path);
    for (uint32_t psi : d.nonzero_slices())
        CHECK(occupied.count(psi));  // the multi-snapshot tell
    CHECK_FALSE(d.nonzero_slices().empty());
}

TEST_CASE("constraint checker accepts the canonical legal pair") {
    const auto data = testutil::pattern_block(1);
    std::vector<uint8_t> payload(data.begin(), data.end());
    PdTrace t0{PdAccess::write_of(0, 5, payload), PdAccess::write_of(1, 9, payload)};
    PdTrace t1{PdAccess::write_of(0, 5, payload)};
    CHECK_FALSE(check_pd_constraints(t0, t1, 2).has_value());
}

TEST_CASE("constraint checker flags diverging decoy contents") {
    std::vector<uint8_t> x(kBlockSize, 0x11), y(kBlockSize, 0x22);
    PdTrace t0{PdAccess::write_of(0, 5, x)};
    PdTrace t1{PdAccess::write_of(0, 5, y)};
    const auto v = check_pd_constraints(t0, t1, 2);
    REQUIRE(v.has_value());
    CHECK(v->constraint == "final decoy contents differ");
    CHECK(v->volume == 0);
    CHECK(v->block == 5);
}

TEST_CASE("constraint checker flags diverging write sets even for zero content") {
    std::vector<uint8_t> zeros(kBlockSize, 0x00);
    PdTrace t0{PdAccess::write_of(0, 7, zeros)};
    PdTrace t1{};
    const auto v = check_pd_constraints(t0, t1, 2);
    REQUIRE(v.has_value());
    CHECK(v->constraint == "written-block sets differ");
    CHECK(v->block == 7);
}

TEST_CASE("constraint checker rejects hidden-volume access in the short trace") {
    std::vector<uint8_t> zeros(kBlockSize, 0x00);
    PdTrace t0{};
    PdTrace t1{PdAccess::write_of(1, 0, zeros)};
    const auto v = check_pd_constraints(t0, t1, 2);
    REQUIRE(v.has_value());
    CHECK(v->constraint == "trace1 touches a non-existent volume");
}

TEST_CASE("structural test trivially passes for a single volume") {
    TempDir dir;
    PdTestConfig cfg;
    cfg.total_blocks = kSmallBlocks;
    cfg.ell = 1;
    cfg.trials = 2;
    cfg.workdir = dir.path().string();
    testutil::SeededRng rng(31337);
    cfg.rng = &rng;
    const PdReport report = pd_structural_test(cfg);
    CHECK(report.all_passed());
    CHECK(report.records.size() == 4);
}

TEST_CASE("structural test smoke run with a hidden volume") {
    TempDir dir;
    testutil::SeededRng rng(2024);
    PdTestConfig cfg;
    cfg.total_blocks = kSmallBlocks;
    cfg.ell = 2;
    cfg.trials = 3;
    cfg.workdir = dir.path().string();
    cfg.rng = &rng;
    std::vector<uint8_t> payload(kBlockSize, 0x5A);
    cfg.trace0.push_back(PdAccess::write_of(0, 0, payload));
    cfg.trace0.push_back(PdAccess::write_of(1, 0, payload));
    cfg.trace0.push_back(PdAccess::read_of(0, 0));
    cfg.trace1.push_back(PdAccess::write_of(0, 0, payload));
    const PdReport report = pd_structural_test(cfg);
    CHECK(report.all_passed());

    const auto records_path = dir.file("report.jsonl");
    report.write_records(records_path);
    const auto text = testutil::read_file(records_path);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
