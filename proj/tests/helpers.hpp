#pragma once

// Shared test utilities: scratch directories, a seeded Rng, image helpers.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "sflc/crypto.hpp"
#include "sflc/device.hpp"
#include "sflc/image.hpp"

namespace testutil {

class TempDir {
public:
    TempDir() {
        auto base = std::filesystem::temp_directory_path() / "sflc-test-XXXXXX";
        std::string tmpl = base.string();
        if (!mkdtemp(tmpl.data()))
            throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// Seeded generator so statistical suites are reproducible.
class SeededRng final : public sflc::Rng {
public:
    explicit SeededRng(uint64_t seed) : gen_(seed) {}
    void fill(std::span<uint8_t> out) override {
        size_t i = 0;
        while (i + 8 <= out.size()) {
            const uint64_t v = gen_();
            std::memcpy(out.data() + i, &v, 8);
            i += 8;
        }
        if (i < out.size()) {
            const uint64_t v = gen_();
            std::memcpy(out.data() + i, &v, out.size() - i);
        }
    }

private:
    std::mt19937_64 gen_;
};

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

inline std::array<uint8_t, 32> file_digest(const std::string& path) {
    const auto bytes = read_file(path);
    return sflc::sha256(bytes);
}

inline std::array<uint8_t, sflc::kBlockSize> pattern_block(uint8_t seed) {
    std::array<uint8_t, sflc::kBlockSize> out{};
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<uint8_t>(seed + i * 31);
    return out;
}

inline sflc::Device::Options fast_options(sflc::Rng* rng = nullptr) {
    sflc::Device::Options opts;
    opts.kdf = sflc::kKdfCostFast;
    opts.rng = rng;
    return opts;
}

inline std::string make_image(const TempDir& dir, const std::string& name, uint64_t blocks) {
    const std::string path = dir.file(name);
    sflc::ImageFile::create(path, blocks);
    return path;
}

inline std::string hex(std::span<const uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

}  // namespace testutil
