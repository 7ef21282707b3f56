#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <map>
#include <set>

#include "helpers.hpp"
#include "sflc/device.hpp"
#include "sflc/stats.hpp"

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

bool permutation_ok(const Device& dev) {
    const auto& perm = dev.slice_permutation();
    std::set<uint32_t> seen(perm.begin(), perm.end());
    return perm.size() == dev.geometry().num_slices && seen.size() == perm.size() &&
           (perm.empty() || (*seen.begin() == 0 && *seen.rbegin() == perm.size() - 1));
}

}  // namespace

TEST_CASE("reads of a fresh volume are zero and traceless") {
    TempDir dir;
    const auto path = fresh_device(dir, "a.img", 1);
    const auto digest = testutil::file_digest(path);
    {
        Device dev = Device::open(path, "pw-0", testutil::fast_options());
        std::array<uint8_t, kBlockSize> out{};
        for (uint64_t b : {0ULL, 100ULL, 255ULL, 256ULL, 1500ULL}) {
            dev.read_block(0, b, out);
            CHECK(std::all_of(out.begin(), out.end(), [](uint8_t x) { return x == 0; }));
        }
        CHECK(dev.occupied_count() == 0);
        dev.close();
    }
    // closing rewrites position maps, so compare the pre-close snapshot by
    // reopening instead of hashing: nothing was allocated
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    CHECK(dev.mapped_slices(0).empty());
    dev.close();
}

TEST_CASE("read sequences do not change the image at all") {
    TempDir dir;
    const auto path = fresh_device(dir, "b.img", 1);
    {
        Device dev = Device::open(path, "pw-0", testutil::fast_options());
        dev.write_block(0, 0, testutil::pattern_block(1));
        dev.write_block(0, 999, testutil::pattern_block(2));
        dev.close();
    }
    const auto digest = testutil::file_digest(path);
    {
        testutil::SeededRng rng(3);
        Device dev = Device::open(path, "pw-0", testutil::fast_options());
        std::array<uint8_t, kBlockSize> out{};
        for (int i = 0; i < 500; ++i)
            dev.read_block(0, rng.uniform(dev.max_logical_blocks()), out);
        dev.flush();  // nothing dirty; must not write either
        dev.image().sync();
        CHECK(testutil::file_digest(path) == digest);
        // abandon instead of close(): close rewrites the maps by design
        dev.image().close();
    }
    CHECK(testutil::file_digest(path) == digest);
}

TEST_CASE("read-after-write, second write wins, IVs are refreshed") {
    TempDir dir;
    const auto path = fresh_device(dir, "c.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());

    const auto first = testutil::pattern_block(10);
    const auto second = testutil::pattern_block(20);
    dev.write_block(0, 42, first);
    CHECK(dev.occupied_count() == 1);  // exactly one slice allocated

    const uint32_t psi = *dev.mapped_psi(0, 0);
    dev.flush();
    std::array<uint8_t, kBlockSize> iv_before{};
    dev.image().read_block(dev.geometry().slice_iv_block(psi), iv_before);

    dev.write_block(0, 42, second);
    CHECK(dev.occupied_count() == 1);  // same slice reused
    dev.flush();
    std::array<uint8_t, kBlockSize> iv_after{};
    dev.image().read_block(dev.geometry().slice_iv_block(psi), iv_after);
    CHECK(std::memcmp(iv_before.data() + 42 * kIvLen, iv_after.data() + 42 * kIvLen,
                      kIvLen) != 0);

    std::array<uint8_t, kBlockSize> out{};
    dev.read_block(0, 42, out);
    CHECK(std::memcmp(out.data(), second.data(), kBlockSize) == 0);
    dev.close();
}

TEST_CASE("writes fail with NoSpace once every slice is claimed") {
    TempDir dir;
    const auto path = fresh_device(dir, "d.img", 2);
    Device dev = Device::open(path, "pw-1", testutil::fast_options());
    const uint64_t slices = dev.geometry().num_slices;
    const auto block = testutil::pattern_block(3);
    // overcommitment: volume 0 claims most, volume 1 the rest
    for (uint64_t s = 0; s < slices - 1; ++s)
        dev.write_block(0, s * kLogicalSliceBlocks, block);
    dev.write_block(1, 0, block);
    CHECK(dev.occupied_count() == slices);
    CHECK_THROWS_AS(dev.write_block(1, kLogicalSliceBlocks, block), NoSpace);
    // a write to an already-mapped slice still succeeds
    CHECK_NOTHROW(dev.write_block(0, 1, block));
    dev.close();
}

TEST_CASE("first allocation takes the head of the shuffled list") {
    TempDir dir;
    const auto path = fresh_device(dir, "e.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    const uint32_t expected = dev.slice_permutation()[0];
    const uint32_t got = dev.allocate_slice(0, 3);
    CHECK(got == expected);
    CHECK(dev.occupied_count() == 1);
    CHECK(dev.slice_occupied(got));
    CHECK(dev.mapped_psi(0, 3) == got);
    CHECK_THROWS_AS(dev.allocate_slice(0, 3), Error);  // already mapped
    dev.close();
}

TEST_CASE("allocation is uniform over the free slices") {
    TempDir dir;
    // 16 pre-occupied out of the whole device
    const uint64_t blocks = 46 + 48 * kPhysicalSliceBlocks + 16 * kPhysicalSliceBlocks;
    const auto path = fresh_device(dir, "f.img", 2, blocks);
    testutil::SeededRng rng(99);
    {
        Device dev = Device::open(path, "pw-0", testutil::fast_options(&rng));
        for (uint64_t s = 0; s < 16; ++s)
            dev.write_block(0, s * kLogicalSliceBlocks, testutil::pattern_block(1));
        dev.close();
    }
    Device probe = Device::open(path, "pw-0", testutil::fast_options(&rng));
    const uint64_t num_slices = probe.geometry().num_slices;
    std::vector<uint64_t> free_psis;
    for (uint64_t p = 0; p < num_slices; ++p) {
        if (!probe.slice_occupied(p))
            free_psis.push_back(p);
    }
    probe.close();
    REQUIRE(free_psis.size() == num_slices - 16);

    std::map<uint64_t, size_t> index_of;
    for (size_t i = 0; i < free_psis.size(); ++i)
        index_of[free_psis[i]] = i;
    std::vector<uint64_t> counts(free_psis.size(), 0);
    const int trials = 3000;
    for (int t = 0; t < trials; ++t) {
        Device dev = Device::open(path, "pw-1", testutil::fast_options(&rng));
        const uint32_t psi = dev.allocate_slice(1, 0);
        ++counts.at(index_of.at(psi));
        // abandon without close: the allocation must not persist
        dev.image().close();
    }
    CHECK(stats::uniform_chi2_p(counts) >= 0.001);
}

TEST_CASE("trim reclaims a slice only when nothing written survives") {
    TempDir dir;
    const auto path = fresh_device(dir, "g.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    const auto block = testutil::pattern_block(9);

    // fully written slice: all 256 trims needed
    for (uint32_t b = 0; b < kLogicalSliceBlocks; ++b)
        dev.write_block(0, b, block);
    for (uint32_t b = 0; b < kLogicalSliceBlocks - 1; ++b)
        dev.trim_block(0, b);
    CHECK(dev.mapped_psi(0, 0).has_value());  // 255 of 256: still mapped
    dev.trim_block(0, kLogicalSliceBlocks - 1);
    CHECK_FALSE(dev.mapped_psi(0, 0).has_value());
    CHECK(dev.occupied_count() == 0);

    // sparsely written slice: trimming the written block is enough
    dev.write_block(0, 256 + 7, block);
    CHECK(dev.mapped_psi(0, 1).has_value());
    dev.trim_block(0, 256 + 7);
    CHECK_FALSE(dev.mapped_psi(0, 1).has_value());

    // trim on an unmapped slice is a no-op
    dev.flush();
    const auto digest = testutil::file_digest(path);
    dev.trim_block(0, 5 * kLogicalSliceBlocks + 3);
    dev.flush();
    CHECK(testutil::file_digest(path) == digest);
    dev.close();
}

TEST_CASE("a write after trim clears the trim mark") {
    TempDir dir;
    const auto path = fresh_device(dir, "h.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    const auto block = testutil::pattern_block(4);
    dev.write_block(0, 0, block);
    dev.trim_block(0, 1);  // untouched block; slice still "written" at 0
    CHECK(dev.mapped_psi(0, 0).has_value());
    dev.write_block(0, 1, block);
    dev.trim_block(0, 0);
    CHECK(dev.mapped_psi(0, 0).has_value());  // block 1 is written again
    dev.trim_block(0, 1);
    CHECK_FALSE(dev.mapped_psi(0, 0).has_value());
    dev.close();
}

TEST_CASE("allocate then reclaim restores an all-free device") {
    TempDir dir;
    const auto path = fresh_device(dir, "i.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());

    const uint32_t psi = dev.allocate_slice(0, 0);
    CHECK(permutation_ok(dev));
    dev.reclaim_slice(0, 0);
    CHECK(permutation_ok(dev));
    CHECK(dev.occupied_count() == 0);
    CHECK_FALSE(dev.slice_occupied(psi));
    CHECK_FALSE(dev.mapped_psi(0, 0).has_value());
    CHECK_THROWS_AS(dev.reclaim_slice(0, 0), NotMapped);
    dev.close();
}

TEST_CASE("reclaiming a slice outside the consumed prefix leaves the shuffle alone") {
    TempDir dir;
    const auto path = fresh_device(dir, "i2.img", 1);
    {
        Device dev = Device::open(path, "pw-0", testutil::fast_options());
        dev.write_block(0, 0, testutil::pattern_block(1));
        dev.close();
    }
    // Fresh session: the cursor is at zero, so the preloaded slice's position
    // in the new shuffle is at or beyond it by construction.
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    CHECK(dev.occupied_count() == 1);
    const auto perm_before = dev.slice_permutation();
    dev.reclaim_slice(0, 0);
    CHECK(dev.slice_permutation() == perm_before);
    CHECK(dev.permutation_cursor() == 0);
    CHECK(dev.occupied_count() == 0);
    dev.close();
}

TEST_CASE("interleaved allocate and reclaim match a free-set oracle") {
    TempDir dir;
    const auto path = fresh_device(dir, "j.img", 2);
    testutil::SeededRng rng(12345);
    Device dev = Device::open(path, "pw-1", testutil::fast_options(&rng));
    const uint64_t num_slices = dev.geometry().num_slices;

    // oracle state
    std::set<uint32_t> free_psis;
    for (uint32_t p = 0; p < num_slices; ++p)
        free_psis.insert(p);
    std::map<std::pair<uint32_t, uint64_t>, uint32_t> mapping;

    std::mt19937_64 gen(7);
    for (int step = 0; step < 4000; ++step) {
        const uint32_t volume = gen() % 2;
        const uint64_t lsi = gen() % num_slices;
        const auto key = std::make_pair(volume, lsi);
        if (mapping.count(key)) {
            dev.reclaim_slice(volume, lsi);
            free_psis.insert(mapping.at(key));
            mapping.erase(key);
        } else if (!free_psis.empty()) {
            const uint32_t psi = dev.allocate_slice(volume, lsi);
            CHECK(free_psis.count(psi));
            free_psis.erase(psi);
            mapping[key] = psi;
        } else {
            CHECK_THROWS_AS(dev.allocate_slice(volume, lsi), NoSpace);
        }
        REQUIRE(permutation_ok(dev));
        REQUIRE(dev.occupied_count() == mapping.size());
    }
    for (const auto& [key, psi] : mapping)
        CHECK(dev.mapped_psi(key.first, key.second) == psi);
    dev.close();
}

TEST_CASE("free slices never change under reads, writes, or flushes") {
    TempDir dir;
    const auto path = fresh_device(dir, "k.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    const auto block = testutil::pattern_block(6);
    dev.write_block(0, 0, block);
    dev.flush();

    const Geometry& g = dev.geometry();
    std::vector<uint64_t> free_psis;
    for (uint64_t p = 0; p < g.num_slices; ++p) {
        if (!dev.slice_occupied(p))
            free_psis.push_back(p);
    }
    auto snapshot_free = [&] {
        std::vector<uint8_t> bytes;
        std::array<uint8_t, kBlockSize> b{};
        for (uint64_t p : free_psis) {
            for (uint32_t m = 0; m < kPhysicalSliceBlocks; ++m) {
                dev.image().read_block(g.slice_start_block(p) + m, b);
                bytes.insert(bytes.end(), b.begin(), b.end());
            }
        }
        return sha256(bytes);
    };
    const auto before = snapshot_free();
    std::array<uint8_t, kBlockSize> out{};
    for (uint32_t b = 0; b < kLogicalSliceBlocks; ++b) {
        dev.write_block(0, b, block);
        dev.read_block(0, b, out);
    }
    dev.flush();
    CHECK(snapshot_free() == before);
    dev.close();
}

TEST_CASE("a tiny IV cache stays coherent under eviction pressure") {
    TempDir dir;
    const auto path = fresh_device(dir, "l.img", 1, 4000);
    std::map<uint64_t, uint8_t> truth;
    {
        Device::Options opts = testutil::fast_options();
        opts.iv_cache_entries = 2;
        Device dev = Device::open(path, "pw-0", opts);
        std::mt19937_64 gen(11);
        for (int i = 0; i < 600; ++i) {
            const uint64_t block = gen() % (8 * kLogicalSliceBlocks);
            const uint8_t tagbyte = static_cast<uint8_t>(gen());
            dev.write_block(0, block, testutil::pattern_block(tagbyte));
            truth[block] = tagbyte;
        }
        dev.flush();
        dev.close();
    }
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    std::array<uint8_t, kBlockSize> out{};
    for (const auto& [block, tagbyte] : truth) {
        dev.read_block(0, block, out);
        const auto expected = testutil::pattern_block(tagbyte);
        CHECK(std::memcmp(out.data(), expected.data(), kBlockSize) == 0);
    }
    dev.close();
}

TEST_CASE("flush is idempotent on the image") {
    TempDir dir;
    const auto path = fresh_device(dir, "m.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    dev.write_block(0, 0, testutil::pattern_block(2));
    dev.flush();
    const auto digest = testutil::file_digest(path);
    dev.flush();  // nothing dirty anymore: byte-identical image
    CHECK(testutil::file_digest(path) == digest);
    dev.close();
}

TEST_CASE("flush makes a copied image fully readable") {
    TempDir dir;
    const auto path = fresh_device(dir, "n.img", 1);
    const auto copy = dir.file("n-copy.img");
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    dev.write_block(0, 123, testutil::pattern_block(8));
    dev.flush();
    std::filesystem::copy_file(path, copy);
    dev.close();

    Device dup = Device::open(copy, "pw-0", testutil::fast_options());
    std::array<uint8_t, kBlockSize> out{};
    dup.read_block(0, 123, out);
    const auto expected = testutil::pattern_block(8);
    CHECK(std::memcmp(out.data(), expected.data(), kBlockSize) == 0);
    dup.close();
}

TEST_CASE("address and volume validation") {
    TempDir dir;
    const auto path = fresh_device(dir, "o.img", 1);
    Device dev = Device::open(path, "pw-0", testutil::fast_options());
    std::array<uint8_t, kBlockSize> buf{};
    CHECK_THROWS_AS(dev.read_block(0, dev.max_logical_blocks(), buf), RangeError);
    CHECK_THROWS_AS(dev.write_block(0, dev.max_logical_blocks(), buf), RangeError);
    CHECK_THROWS_AS(dev.read_block(1, 0, buf), VolumeNotOpen);
    CHECK_THROWS_AS(dev.trim_block(3, 0), VolumeNotOpen);
    dev.close();
    CHECK_THROWS_AS(dev.read_block(0, 0, buf), InstanceClosed);
}
