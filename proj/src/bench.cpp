#include "sflc/bench.hpp"

#include <chrono>
#include <cstring>
#include <random>

#include "sflc/device.hpp"
#include "sflc/image.hpp"

namespace sflc::bench {

namespace {

using Clock = std::chrono::steady_clock;

constexpr uint64_t kBlocksPerMib = (1024 * 1024) / kBlockSize;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Throughput make_result(uint64_t bytes, double secs) {
    Throughput t;
    t.bytes = bytes;
    t.seconds = secs;
    t.mb_per_s = secs > 0 ? (static_cast<double>(bytes) / 1e6) / secs : 0;
    return t;
}

// Image large enough that io_mib of data fits with slack slices to spare.
uint64_t blocks_for_payload(uint64_t io_mib) {
    const uint64_t slices = io_mib + 4;
    // Header size is below 64 blocks for these device sizes.
    return 64 + slices * kPhysicalSliceBlocks + kPhysicalSliceBlocks;
}

void fill_payload(std::mt19937_64& rng, std::span<uint8_t> out) {
    for (size_t i = 0; i + 8 <= out.size(); i += 8) {
        const uint64_t v = rng();
        std::memcpy(out.data() + i, &v, 8);
    }
}

}  // namespace

Throughput run_engine(const std::string& image_path, Pattern pattern, uint64_t io_mib,
                      uint64_t seed, const KdfCost& kdf) {
    const uint64_t io_blocks = io_mib * kBlocksPerMib;
    ImageFile::create(image_path, blocks_for_payload(io_mib));
    Device::initialize(image_path, {"bench"}, /*skip_randfill=*/true, kdf, system_rng());
    Device::Options opts;
    opts.kdf = kdf;
    Device dev = Device::open(image_path, "bench", opts);

    std::mt19937_64 rng(seed);
    std::array<uint8_t, kBlockSize> buf{};
    fill_payload(rng, buf);

    const bool reads = pattern == Pattern::seqread || pattern == Pattern::randread;
    if (reads) {
        for (uint64_t b = 0; b < io_blocks; ++b)
            dev.write_block(0, b, buf);
        dev.flush();
    }

    std::uniform_int_distribution<uint64_t> pick(0, io_blocks - 1);
    const auto start = Clock::now();
    switch (pattern) {
        case Pattern::seqwrite:
            for (uint64_t b = 0; b < io_blocks; ++b)
                dev.write_block(0, b, buf);
            break;
        case Pattern::randwrite:
            for (uint64_t i = 0; i < io_blocks; ++i)
                dev.write_block(0, pick(rng), buf);
            break;
        case Pattern::seqread:
            for (uint64_t b = 0; b < io_blocks; ++b)
                dev.read_block(0, b, buf);
            break;
        case Pattern::randread:
            for (uint64_t i = 0; i < io_blocks; ++i)
                dev.read_block(0, pick(rng), buf);
            break;
    }
    if (!reads) {
        dev.flush();
        dev.image().sync();
    }
    const double secs = seconds_since(start);
    dev.close();
    return make_result(io_blocks * kBlockSize, secs);
}

Throughput run_baseline(const std::string& file_path, Pattern pattern, uint64_t io_mib,
                        uint64_t seed) {
    const uint64_t io_blocks = io_mib * kBlocksPerMib;
    ImageFile::create(file_path, io_blocks);
    ImageFile file(file_path, /*read_only=*/false);

    std::mt19937_64 rng(seed);
    Key256 key;
    {
        std::array<uint8_t, kKeyLen> kb{};
        fill_payload(rng, kb);
        key = Key256(kb);
    }
    std::array<uint8_t, kBlockSize> plain{};
    std::array<uint8_t, kBlockSize> cipher{};
    fill_payload(rng, plain);

    auto block_iv = [](uint64_t block) {
        Iv128 iv{};
        std::memcpy(iv.bytes.data(), &block, 8);
        return iv;
    };
    auto write_one = [&](uint64_t b) {
        encrypt_block(key, block_iv(b), plain, cipher);
        file.write_block(b, cipher);
    };
    auto read_one = [&](uint64_t b) {
        file.read_block(b, cipher);
        decrypt_block(key, block_iv(b), cipher, plain);
    };

    const bool reads = pattern == Pattern::seqread || pattern == Pattern::randread;
    if (reads) {
        for (uint64_t b = 0; b < io_blocks; ++b)
            write_one(b);
    }

    std::uniform_int_distribution<uint64_t> pick(0, io_blocks - 1);
    const auto start = Clock::now();
    switch (pattern) {
        case Pattern::seqwrite:
            for (uint64_t b = 0; b < io_blocks; ++b)
                write_one(b);
            break;
        case Pattern::randwrite:
            for (uint64_t i = 0; i < io_blocks; ++i)
                write_one(pick(rng));
            break;
        case Pattern::seqread:
            for (uint64_t b = 0; b < io_blocks; ++b)
                read_one(b);
            break;
        case Pattern::randread:
            for (uint64_t i = 0; i < io_blocks; ++i)
                read_one(pick(rng));
            break;
    }
    if (!reads)
        file.sync();
    return make_result(io_blocks * kBlockSize, seconds_since(start));
}

std::vector<FragPoint> run_frag(const std::string& image_path, uint64_t total_blocks,
                                bool sequential, uint64_t seed, const KdfCost& kdf,
                                double max_occupancy) {
    ImageFile::create(image_path, total_blocks);
    Device::initialize(image_path, {"bench"}, /*skip_randfill=*/true, kdf, system_rng());
    Device::Options opts;
    opts.kdf = kdf;
    Device dev = Device::open(image_path, "bench", opts);

    const uint64_t capacity = dev.max_logical_blocks();
    std::vector<uint8_t> used(capacity, 0);
    uint64_t used_blocks = 0;

    std::mt19937_64 rng(seed);
    std::array<uint8_t, kBlockSize> payload{};
    auto write_at = [&](uint64_t block) {
        fill_payload(rng, payload);
        dev.write_block(0, block, payload);
        if (!used[block]) {
            used[block] = 1;
            ++used_blocks;
        }
    };

    std::vector<FragPoint> points;
    points.push_back({0.0, 0.0});  // nothing written, nothing allocated

    double next_sample = 0.05;
    auto maybe_sample = [&] {
        const double occupancy = static_cast<double>(used_blocks) / capacity;
        while (occupancy + 1e-12 >= next_sample && next_sample <= max_occupancy + 1e-12) {
            const uint64_t allocated = dev.occupied_count();
            const double eff =
                allocated == 0
                    ? 0.0
                    : static_cast<double>(used_blocks) / (allocated * kLogicalSliceBlocks);
            points.push_back({next_sample, eff});
            next_sample += 0.05;
        }
    };

    if (sequential) {
        const uint64_t target = static_cast<uint64_t>(max_occupancy * capacity);
        for (uint64_t b = 0; b < target; ++b) {
            write_at(b);
            maybe_sample();
        }
    } else {
        // File-extent simulation: next-fit placement, rare jumps to a fresh
        // slice boundary, and a metadata region that keeps being rewritten.
        uint64_t ptr = 0;
        uint64_t files = 0;
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        auto advance = [&]() {
            while (used[ptr])
                ptr = (ptr + 1) % capacity;
        };
        while (static_cast<double>(used_blocks) / capacity < max_occupancy) {
            uint64_t size;
            const double kind = unit(rng);
            if (kind < 0.5)
                size = 1 + rng() % 8;
            else if (kind < 0.8)
                size = 8 + rng() % 57;
            else
                size = 64 + rng() % 449;
            if (unit(rng) < 0.015) {
                const uint64_t slice = rng() % (capacity / kLogicalSliceBlocks);
                ptr = slice * kLogicalSliceBlocks;
            }
            for (uint64_t i = 0; i < size; ++i) {
                advance();
                write_at(ptr);
                maybe_sample();
            }
            if (++files % 48 == 0)
                write_at((files * 7) % 32);  // journal-ish rewrites near the start
        }
    }
    dev.close();
    return points;
}

}  // namespace sflc::bench
