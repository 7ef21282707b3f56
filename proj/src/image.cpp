#include "sflc/image.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

namespace sflc {

namespace {
std::string errno_text(const std::string& what) {
    return what + ": " + std::strerror(errno);
}
}  // namespace

ImageFile::ImageFile(const std::string& path, bool read_only) : path_(path) {
    fd_ = ::open(path.c_str(), read_only ? O_RDONLY : O_RDWR);
    if (fd_ < 0)
        throw IoError(errno_text("cannot open image " + path));
    struct stat st{};
    if (::fstat(fd_, &st) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw IoError(errno_text("cannot stat image " + path));
    }
    if (st.st_size <= 0 || st.st_size % kBlockSize != 0) {
        ::close(fd_);
        fd_ = -1;
        throw SizeMismatch("image length of " + path + " is not a multiple of " +
                           std::to_string(kBlockSize) + " bytes");
    }
    total_blocks_ = static_cast<uint64_t>(st.st_size) / kBlockSize;
}

ImageFile::~ImageFile() {
    if (fd_ >= 0)
        ::close(fd_);
}

ImageFile::ImageFile(ImageFile&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)),
      total_blocks_(std::exchange(other.total_blocks_, 0)),
      path_(std::move(other.path_)) {}

ImageFile& ImageFile::operator=(ImageFile&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0)
            ::close(fd_);
        fd_ = std::exchange(other.fd_, -1);
        total_blocks_ = std::exchange(other.total_blocks_, 0);
        path_ = std::move(other.path_);
    }
    return *this;
}

void ImageFile::create(const std::string& path, uint64_t total_blocks) {
    int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0600);
    if (fd < 0)
        throw IoError(errno_text("cannot create image " + path));
    if (::ftruncate(fd, static_cast<off_t>(total_blocks * kBlockSize)) != 0) {
        ::close(fd);
        throw IoError(errno_text("cannot size image " + path));
    }
    ::close(fd);
}

void ImageFile::read_at(uint64_t offset, std::span<uint8_t> out) const {
    size_t done = 0;
    while (done < out.size()) {
        ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                            static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw IoError(errno_text("read failed on " + path_));
        }
        if (n == 0)
            throw IoError("short read past the end of " + path_);
        done += static_cast<size_t>(n);
    }
}

void ImageFile::write_at(uint64_t offset, std::span<const uint8_t> data) {
    size_t done = 0;
    while (done < data.size()) {
        ssize_t n = ::pwrite(fd_, data.data() + done, data.size() - done,
                             static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw IoError(errno_text("write failed on " + path_));
        }
        done += static_cast<size_t>(n);
    }
}

void ImageFile::read_block(uint64_t block, std::span<uint8_t, kBlockSize> out) const {
    if (block >= total_blocks_)
        throw RangeError("block " + std::to_string(block) + " beyond image end");
    read_at(block * kBlockSize, out);
}

void ImageFile::write_block(uint64_t block, std::span<const uint8_t, kBlockSize> data) {
    if (block >= total_blocks_)
        throw RangeError("block " + std::to_string(block) + " beyond image end");
    write_at(block * kBlockSize, data);
}

void ImageFile::sync() {
    if (fd_ >= 0 && ::fdatasync(fd_) != 0)
        throw IoError(errno_text("fdatasync failed on " + path_));
}

void ImageFile::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

ImageLock::ImageLock(const std::string& image_path) : lock_path_(image_path + ".lock") {
    fd_ = ::open(lock_path_.c_str(), O_RDWR | O_CREAT, 0600);
    if (fd_ < 0)
        throw IoError(errno_text("cannot open lock file " + lock_path_));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw LockHeld("image is already open (lock held on " + lock_path_ + ")");
    }
}

ImageLock::~ImageLock() {
    release();
}

ImageLock::ImageLock(ImageLock&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), lock_path_(std::move(other.lock_path_)) {}

ImageLock& ImageLock::operator=(ImageLock&& other) noexcept {
    if (this != &other) {
        release();
        fd_ = std::exchange(other.fd_, -1);
        lock_path_ = std::move(other.lock_path_);
    }
    return *this;
}

void ImageLock::release() {
    if (fd_ >= 0) {
        ::unlink(lock_path_.c_str());
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
        fd_ = -1;
    }
}

}  // namespace sflc
