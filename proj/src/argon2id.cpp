// Argon2id (RFC 9106, version 0x13), single-threaded. BLAKE2b comes from
// libsodium; the memory-hard core is implemented here because no system
// library exposes Argon2 with free-form salt lengths.

#include <sodium.h>

#include <array>
#include <bit>
#include <cstring>
#include <vector>

#include "sflc/crypto.hpp"

namespace sflc {

namespace {

constexpr uint32_t kSyncPoints = 4;
constexpr size_t kBlockWords = 128;  // 1024-byte working blocks
constexpr uint32_t kArgon2idType = 2;
constexpr uint32_t kVersion13 = 0x13;

using Block = std::array<uint64_t, kBlockWords>;

void blake2b(std::span<uint8_t> out, std::span<const uint8_t> in) {
    crypto_generichash_blake2b(out.data(), out.size(), in.data(), in.size(), nullptr, 0);
}

// Variable-length hash H' from the spec: chained 64-byte BLAKE2b digests,
// each contributing its first 32 bytes.
void hash_variable(std::span<uint8_t> out, std::span<const uint8_t> in) {
    const uint32_t t = static_cast<uint32_t>(out.size());
    std::vector<uint8_t> prefixed(4 + in.size());
    std::memcpy(prefixed.data(), &t, 4);
    std::memcpy(prefixed.data() + 4, in.data(), in.size());
    if (t <= 64) {
        blake2b(out, prefixed);
        return;
    }
    const uint32_t r = (t + 31) / 32 - 2;
    std::array<uint8_t, 64> v{};
    blake2b(v, prefixed);
    size_t pos = 0;
    for (uint32_t i = 0; i < r; ++i) {
        std::memcpy(out.data() + pos, v.data(), 32);
        pos += 32;
        if (i + 1 < r) {
            blake2b(v, v);
        }
    }
    std::array<uint8_t, 64> last{};
    blake2b(std::span(last).first(t - 32 * r), v);
    std::memcpy(out.data() + pos, last.data(), t - 32 * r);
}

uint64_t mix(uint64_t x, uint64_t y) {
    // BLAKE2b addition augmented with the 32x32 multiplication.
    uint64_t m = static_cast<uint64_t>(static_cast<uint32_t>(x)) *
                 static_cast<uint64_t>(static_cast<uint32_t>(y));
    return x + y + 2 * m;
}

void quarter(uint64_t& a, uint64_t& b, uint64_t& c, uint64_t& d) {
    a = mix(a, b);
    d = std::rotr(d ^ a, 32);
    c = mix(c, d);
    b = std::rotr(b ^ c, 24);
    a = mix(a, b);
    d = std::rotr(d ^ a, 16);
    c = mix(c, d);
    b = std::rotr(b ^ c, 63);
}

void permutation_round(uint64_t& v0, uint64_t& v1, uint64_t& v2, uint64_t& v3, uint64_t& v4,
                       uint64_t& v5, uint64_t& v6, uint64_t& v7, uint64_t& v8, uint64_t& v9,
                       uint64_t& v10, uint64_t& v11, uint64_t& v12, uint64_t& v13, uint64_t& v14,
                       uint64_t& v15) {
    quarter(v0, v4, v8, v12);
    quarter(v1, v5, v9, v13);
    quarter(v2, v6, v10, v14);
    quarter(v3, v7, v11, v15);
    quarter(v0, v5, v10, v15);
    quarter(v1, v6, v11, v12);
    quarter(v2, v7, v8, v13);
    quarter(v3, v4, v9, v14);
}

void fill_block(const Block& prev, const Block& ref, Block& next, bool with_xor) {
    Block r;
    for (size_t i = 0; i < kBlockWords; ++i)
        r[i] = prev[i] ^ ref[i];
    Block tmp = r;
    if (with_xor) {
        for (size_t i = 0; i < kBlockWords; ++i)
            tmp[i] ^= next[i];
    }
    for (size_t i = 0; i < 8; ++i) {
        uint64_t* v = r.data() + 16 * i;
        permutation_round(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10],
                          v[11], v[12], v[13], v[14], v[15]);
    }
    for (size_t i = 0; i < 8; ++i) {
        uint64_t* v = r.data();
        permutation_round(v[2 * i], v[2 * i + 1], v[2 * i + 16], v[2 * i + 17], v[2 * i + 32],
                          v[2 * i + 33], v[2 * i + 48], v[2 * i + 49], v[2 * i + 64],
                          v[2 * i + 65], v[2 * i + 80], v[2 * i + 81], v[2 * i + 96],
                          v[2 * i + 97], v[2 * i + 112], v[2 * i + 113]);
    }
    for (size_t i = 0; i < kBlockWords; ++i)
        next[i] = tmp[i] ^ r[i];
}

struct AddressGenerator {
    Block input{};
    Block addresses{};

    void next() {
        static const Block zero{};
        input[6]++;
        fill_block(zero, input, addresses, false);
        fill_block(zero, addresses, addresses, false);
    }
};

void append_u32(std::vector<uint8_t>& buf, uint32_t v) {
    uint8_t b[4];
    std::memcpy(b, &v, 4);
    buf.insert(buf.end(), b, b + 4);
}

void append_field(std::vector<uint8_t>& buf, std::span<const uint8_t> data) {
    append_u32(buf, static_cast<uint32_t>(data.size()));
    buf.insert(buf.end(), data.begin(), data.end());
}

}  // namespace

void argon2id_hash(std::span<const uint8_t> password, std::span<const uint8_t> salt,
                   std::span<const uint8_t> secret, std::span<const uint8_t> associated_data,
                   uint32_t memory_kib, uint32_t iterations, uint32_t parallelism,
                   std::span<uint8_t> tag) {
    if (parallelism < 1 || iterations < 1 || memory_kib < 8 * parallelism)
        throw Error("invalid Argon2 cost parameters");
    if (tag.size() < 16 || salt.size() < 8)
        throw Error("invalid Argon2 output or salt length");

    const uint32_t lanes = parallelism;
    const uint32_t mem_blocks = kSyncPoints * lanes * (memory_kib / (kSyncPoints * lanes));
    const uint32_t lane_length = mem_blocks / lanes;   // q
    const uint32_t segment_length = lane_length / kSyncPoints;

    // H0 binds every parameter.
    std::vector<uint8_t> h0_input;
    append_u32(h0_input, lanes);
    append_u32(h0_input, static_cast<uint32_t>(tag.size()));
    append_u32(h0_input, memory_kib);
    append_u32(h0_input, iterations);
    append_u32(h0_input, kVersion13);
    append_u32(h0_input, kArgon2idType);
    append_field(h0_input, password);
    append_field(h0_input, salt);
    append_field(h0_input, secret);
    append_field(h0_input, associated_data);
    std::array<uint8_t, 64> h0{};
    blake2b(h0, h0_input);
    sodium_memzero(h0_input.data(), h0_input.size());

    std::vector<Block> memory(mem_blocks);
    auto block_at = [&](uint32_t lane, uint32_t col) -> Block& {
        return memory[static_cast<size_t>(lane) * lane_length + col];
    };

    // First two columns of every lane come straight from H0.
    std::array<uint8_t, 72> seed{};
    std::memcpy(seed.data(), h0.data(), 64);
    std::array<uint8_t, 1024> raw{};
    for (uint32_t lane = 0; lane < lanes; ++lane) {
        for (uint32_t col = 0; col < 2; ++col) {
            std::memcpy(seed.data() + 64, &col, 4);
            std::memcpy(seed.data() + 68, &lane, 4);
            hash_variable(raw, seed);
            std::memcpy(block_at(lane, col).data(), raw.data(), raw.size());
        }
    }

    for (uint32_t pass = 0; pass < iterations; ++pass) {
        for (uint32_t slice = 0; slice < kSyncPoints; ++slice) {
            for (uint32_t lane = 0; lane < lanes; ++lane) {
                const bool independent = pass == 0 && slice < 2;
                AddressGenerator gen;
                if (independent) {
                    gen.input[0] = pass;
                    gen.input[1] = lane;
                    gen.input[2] = slice;
                    gen.input[3] = mem_blocks;
                    gen.input[4] = iterations;
                    gen.input[5] = kArgon2idType;
                }
                uint32_t start = 0;
                if (pass == 0 && slice == 0) {
                    start = 2;
                    if (independent)
                        gen.next();
                }
                for (uint32_t idx = start; idx < segment_length; ++idx) {
                    const uint32_t col = slice * segment_length + idx;
                    const uint32_t prev_col = col == 0 ? lane_length - 1 : col - 1;
                    uint64_t rand;
                    if (independent) {
                        if (idx % kBlockWords == 0)
                            gen.next();
                        rand = gen.addresses[idx % kBlockWords];
                    } else {
                        rand = block_at(lane, prev_col)[0];
                    }
                    const uint32_t j1 = static_cast<uint32_t>(rand);
                    const uint32_t j2 = static_cast<uint32_t>(rand >> 32);
                    const uint32_t ref_lane =
                        (pass == 0 && slice == 0) ? lane : j2 % lanes;
                    const bool same_lane = ref_lane == lane;

                    uint64_t ref_area;
                    if (pass == 0) {
                        if (slice == 0)
                            ref_area = idx - 1;
                        else if (same_lane)
                            ref_area = static_cast<uint64_t>(slice) * segment_length + idx - 1;
                        else
                            ref_area = static_cast<uint64_t>(slice) * segment_length -
                                       (idx == 0 ? 1 : 0);
                    } else {
                        if (same_lane)
                            ref_area = static_cast<uint64_t>(lane_length) - segment_length +
                                       idx - 1;
                        else
                            ref_area = static_cast<uint64_t>(lane_length) - segment_length -
                                       (idx == 0 ? 1 : 0);
                    }

                    uint64_t x = (static_cast<uint64_t>(j1) * j1) >> 32;
                    uint64_t y = (ref_area * x) >> 32;
                    uint64_t rel = ref_area - 1 - y;
                    uint64_t zone_start =
                        (pass != 0 && slice != kSyncPoints - 1)
                            ? static_cast<uint64_t>(slice + 1) * segment_length
                            : 0;
                    const uint32_t ref_col =
                        static_cast<uint32_t>((zone_start + rel) % lane_length);

                    fill_block(block_at(lane, prev_col), block_at(ref_lane, ref_col),
                               block_at(lane, col), pass > 0);
                }
            }
        }
    }

    Block final_block = block_at(0, lane_length - 1);
    for (uint32_t lane = 1; lane < lanes; ++lane) {
        const Block& b = block_at(lane, lane_length - 1);
        for (size_t i = 0; i < kBlockWords; ++i)
            final_block[i] ^= b[i];
    }
    std::array<uint8_t, 1024> final_bytes{};
    std::memcpy(final_bytes.data(), final_block.data(), final_bytes.size());
    hash_variable(tag, final_bytes);

    sodium_memzero(final_bytes.data(), final_bytes.size());
    sodium_memzero(final_block.data(), sizeof final_block);
    sodium_memzero(memory.data(), memory.size() * sizeof(Block));
    sodium_memzero(h0.data(), h0.size());
    sodium_memzero(seed.data(), seed.size());
}

}  // namespace sflc
