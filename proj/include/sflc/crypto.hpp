#pragma once

// Cryptographic services: Argon2id key derivation, AES-GCM-256 key wrapping,
// AES-CTR-256 block encryption, and CSPRNG access.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sflc/errors.hpp"
#include "sflc/layout.hpp"

namespace sflc {

// 256-bit secret; wiped on destruction.
class Key256 {
public:
    Key256() = default;
    explicit Key256(const std::array<uint8_t, kKeyLen>& bytes) : bytes_(bytes) {}
    ~Key256() { zeroize(); }

    Key256(const Key256&) = default;
    Key256& operator=(const Key256& other) {
        if (this != &other) {
            zeroize();
            bytes_ = other.bytes_;
        }
        return *this;
    }

    std::span<const uint8_t, kKeyLen> bytes() const { return bytes_; }
    std::span<uint8_t, kKeyLen> mutable_bytes() { return bytes_; }
    bool operator==(const Key256&) const = default;
    void zeroize();

private:
    std::array<uint8_t, kKeyLen> bytes_{};
};

struct Iv128 {
    std::array<uint8_t, kIvLen> bytes{};
    bool operator==(const Iv128&) const = default;
};

// Source of randomness. Production code uses SystemRng; tests may substitute
// a seeded generator.
class Rng {
public:
    virtual ~Rng() = default;
    virtual void fill(std::span<uint8_t> out) = 0;

    // Uniform in [0, bound); bound > 0.
    uint64_t uniform(uint64_t bound);
    Iv128 iv() {
        Iv128 v;
        fill(v.bytes);
        return v;
    }
    Key256 key() {
        Key256 k;
        fill(k.mutable_bytes());
        return k;
    }
};

// CSPRNG-backed generator. Throws RngFailure if the system source fails.
class SystemRng final : public Rng {
public:
    void fill(std::span<uint8_t> out) override;
};

SystemRng& system_rng();

std::vector<uint8_t> random_fill(size_t length, Rng& rng);

struct KdfCost {
    uint32_t memory_kib = 0;
    uint32_t iterations = 0;
    uint32_t parallelism = 1;
    bool operator==(const KdfCost&) const = default;
};

// Format v1 cost, and the reduced cost selected by --kdf-fast for tests.
inline constexpr KdfCost kKdfCostV1{65536, 3, 1};
inline constexpr KdfCost kKdfCostFast{8, 1, 1};

Key256 kdf_derive(std::string_view password, std::span<const uint8_t, kSaltLen> salt,
                  const KdfCost& cost);

struct WrappedKey {
    Iv128 iv;
    std::array<uint8_t, kKeyLen> ciphertext{};
    std::array<uint8_t, kTagLen> tag{};
};

// AES-GCM-256; the GCM nonce is the first 12 bytes of the stored IV field.
WrappedKey wrap_key(const Key256& kek, const Key256& payload, Rng& rng);
std::optional<Key256> unwrap_key(const Key256& kek, const WrappedKey& wrapped);

// AES-CTR-256 keystream applied to an arbitrary-length buffer. Encryption
// and decryption are the same operation; both are length-preserving.
void ctr_crypt(const Key256& key, const Iv128& iv, std::span<const uint8_t> in,
               std::span<uint8_t> out);

void encrypt_block(const Key256& key, const Iv128& iv,
                   std::span<const uint8_t, kBlockSize> plaintext,
                   std::span<uint8_t, kBlockSize> ciphertext);
void decrypt_block(const Key256& key, const Iv128& iv,
                   std::span<const uint8_t, kBlockSize> ciphertext,
                   std::span<uint8_t, kBlockSize> plaintext);

std::array<uint8_t, 32> sha256(std::span<const uint8_t> data);

// Argon2id (version 0x13). Exposed with the full parameter set so known-answer
// vectors with secret and associated data can be checked; kdf_derive is the
// production entry point.
void argon2id_hash(std::span<const uint8_t> password, std::span<const uint8_t> salt,
                   std::span<const uint8_t> secret, std::span<const uint8_t> associated_data,
                   uint32_t memory_kib, uint32_t iterations, uint32_t parallelism,
                   std::span<uint8_t> tag);

}  // namespace sflc
