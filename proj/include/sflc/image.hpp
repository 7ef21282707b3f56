#pragma once

// File-backed block device. The image length must be an exact multiple of
// the block size; geometry is recomputed from it, never stored.

#include <cstdint>
#include <span>
#include <string>

#include "sflc/layout.hpp"

namespace sflc {

class ImageFile {
public:
    ImageFile() = default;
    ImageFile(const std::string& path, bool read_only);
    ~ImageFile();

    ImageFile(ImageFile&& other) noexcept;
    ImageFile& operator=(ImageFile&& other) noexcept;
    ImageFile(const ImageFile&) = delete;
    ImageFile& operator=(const ImageFile&) = delete;

    static void create(const std::string& path, uint64_t total_blocks);

    uint64_t total_blocks() const { return total_blocks_; }
    const std::string& path() const { return path_; }
    bool is_open() const { return fd_ >= 0; }

    void read_block(uint64_t block, std::span<uint8_t, kBlockSize> out) const;
    void write_block(uint64_t block, std::span<const uint8_t, kBlockSize> data);
    void read_at(uint64_t offset, std::span<uint8_t> out) const;
    void write_at(uint64_t offset, std::span<const uint8_t> data);
    void sync();
    void close();

private:
    int fd_ = -1;
    uint64_t total_blocks_ = 0;
    std::string path_;
};

// flock-based advisory lock at `<image>.lock`, released on destruction.
// Guards against two instances opening the same image.
class ImageLock {
public:
    ImageLock() = default;
    explicit ImageLock(const std::string& image_path);
    ~ImageLock();

    ImageLock(ImageLock&& other) noexcept;
    ImageLock& operator=(ImageLock&& other) noexcept;
    ImageLock(const ImageLock&) = delete;
    ImageLock& operator=(const ImageLock&) = delete;

    void release();

private:
    int fd_ = -1;
    std::string lock_path_;
};

}  // namespace sflc
