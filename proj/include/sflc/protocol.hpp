#pragma once

// Local block-serving protocol. Requests are fixed little-endian frames:
//   opcode(1) volume(1) block(8 LE)            -- 10 bytes
//   WRITE carries a 4096-byte payload          -- 4106 bytes
// Responses are a status byte; a successful READ appends 4096 payload bytes.

#include <cstdint>
#include <span>
#include <vector>

#include "sflc/layout.hpp"

namespace sflc::proto {

enum class Opcode : uint8_t {
    read = 0x01,
    write = 0x02,
    trim = 0x03,
    flush = 0x04,
    close = 0x05,
};

enum class Status : uint8_t {
    ok = 0x00,
    range = 0x01,
    nospace = 0x02,
    novol = 0x03,
    io = 0x04,
    proto = 0x05,
};

inline constexpr size_t kHeaderLen = 10;
inline constexpr size_t kWriteFrameLen = kHeaderLen + kBlockSize;

struct Request {
    Opcode opcode{};
    uint8_t volume = 0;
    uint64_t block = 0;
    std::vector<uint8_t> payload;  // kBlockSize for WRITE
};

std::vector<uint8_t> encode_request(const Request& request);

// Transport abstraction so the frame handling is testable without sockets.
class ByteStream {
public:
    virtual ~ByteStream() = default;
    // False on clean EOF before any byte; throws IoError on hard errors.
    virtual bool read_exact(std::span<uint8_t> out) = 0;
    virtual void write_all(std::span<const uint8_t> data) = 0;
};

class BlockService {
public:
    virtual ~BlockService() = default;
    virtual void read(uint8_t volume, uint64_t block, std::span<uint8_t, kBlockSize> out) = 0;
    virtual void write(uint8_t volume, uint64_t block,
                       std::span<const uint8_t, kBlockSize> data) = 0;
    virtual void trim(uint8_t volume, uint64_t block) = 0;
    virtual void flush() = 0;
};

enum class ServeResult {
    keep,             // frame handled, keep the connection
    close_requested,  // CLOSE acknowledged; shut the server down
    eof,              // peer is gone
};

// Reads one frame, executes it, writes the response. Unknown opcodes answer
// PROTO and leave the connection usable; truncated frames answer PROTO when
// the transport still accepts writes.
ServeResult serve_one(ByteStream& stream, BlockService& service);

}  // namespace sflc::proto
