#include "sflc/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <cstring>
#include <memory>

namespace sflc {

namespace {

struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;

CipherCtx new_ctx() {
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx)
        throw Error("EVP_CIPHER_CTX_new failed");
    return ctx;
}

}  // namespace

void Key256::zeroize() {
    OPENSSL_cleanse(bytes_.data(), bytes_.size());
}

uint64_t Rng::uniform(uint64_t bound) {
    // Rejection sampling over 64-bit draws.
    uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    for (;;) {
        uint64_t v = 0;
        fill({reinterpret_cast<uint8_t*>(&v), sizeof v});
        if (v < limit)
            return v % bound;
    }
}

void SystemRng::fill(std::span<uint8_t> out) {
    if (out.empty())
        return;
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
        throw RngFailure();
}

SystemRng& system_rng() {
    static SystemRng rng;
    return rng;
}

std::vector<uint8_t> random_fill(size_t length, Rng& rng) {
    std::vector<uint8_t> out(length);
    rng.fill(out);
    return out;
}

Key256 kdf_derive(std::string_view password, std::span<const uint8_t, kSaltLen> salt,
                  const KdfCost& cost) {
    if (password.empty())
        throw EmptyPassword();
    Key256 key;
    argon2id_hash({reinterpret_cast<const uint8_t*>(password.data()), password.size()}, salt,
                  {}, {}, cost.memory_kib, cost.iterations, cost.parallelism,
                  key.mutable_bytes());
    return key;
}

WrappedKey wrap_key(const Key256& kek, const Key256& payload, Rng& rng) {
    WrappedKey out;
    out.iv = rng.iv();
    auto ctx = new_ctx();
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, kek.bytes().data(),
                           out.iv.bytes.data()) != 1)
        throw Error("AES-GCM init failed");
    int len = 0;
    if (EVP_EncryptUpdate(ctx.get(), out.ciphertext.data(), &len, payload.bytes().data(),
                          kKeyLen) != 1 ||
        len != static_cast<int>(kKeyLen))
        throw Error("AES-GCM encrypt failed");
    if (EVP_EncryptFinal_ex(ctx.get(), out.ciphertext.data() + len, &len) != 1)
        throw Error("AES-GCM finalize failed");
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen, out.tag.data()) != 1)
        throw Error("AES-GCM tag failed");
    return out;
}

std::optional<Key256> unwrap_key(const Key256& kek, const WrappedKey& wrapped) {
    auto ctx = new_ctx();
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, kek.bytes().data(),
                           wrapped.iv.bytes.data()) != 1)
        throw Error("AES-GCM init failed");
    Key256 payload;
    int len = 0;
    if (EVP_DecryptUpdate(ctx.get(), payload.mutable_bytes().data(), &len,
                          wrapped.ciphertext.data(), kKeyLen) != 1 ||
        len != static_cast<int>(kKeyLen))
        throw Error("AES-GCM decrypt failed");
    std::array<uint8_t, kTagLen> tag = wrapped.tag;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen, tag.data()) != 1)
        throw Error("AES-GCM tag set failed");
    if (EVP_DecryptFinal_ex(ctx.get(), payload.mutable_bytes().data() + len, &len) != 1)
        return std::nullopt;  // authentication failure: wrong key or tampered cell
    return payload;
}

void ctr_crypt(const Key256& key, const Iv128& iv, std::span<const uint8_t> in,
               std::span<uint8_t> out) {
    if (in.size() != out.size())
        throw Error("ctr_crypt buffer size mismatch");
    auto ctx = new_ctx();
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ctr(), nullptr, key.bytes().data(),
                           iv.bytes.data()) != 1)
        throw Error("AES-CTR init failed");
    int len = 0;
    if (!in.empty() &&
        EVP_EncryptUpdate(ctx.get(), out.data(), &len, in.data(), static_cast<int>(in.size())) !=
            1)
        throw Error("AES-CTR failed");
}

void encrypt_block(const Key256& key, const Iv128& iv,
                   std::span<const uint8_t, kBlockSize> plaintext,
                   std::span<uint8_t, kBlockSize> ciphertext) {
    ctr_crypt(key, iv, plaintext, ciphertext);
}

void decrypt_block(const Key256& key, const Iv128& iv,
                   std::span<const uint8_t, kBlockSize> ciphertext,
                   std::span<uint8_t, kBlockSize> plaintext) {
    ctr_crypt(key, iv, ciphertext, plaintext);
}

std::array<uint8_t, 32> sha256(std::span<const uint8_t> data) {
    std::array<uint8_t, 32> digest{};
    SHA256(data.data(), data.size(), digest.data());
    return digest;
}

}  // namespace sflc
