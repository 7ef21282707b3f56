#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <deque>
#include <map>

#include "helpers.hpp"
#include "sflc/protocol.hpp"

using namespace sflc;
using namespace sflc::proto;
using testutil::hex;

namespace {

class MemoryStream final : public ByteStream {
public:
    void feed(std::span<const uint8_t> bytes) {
        input_.insert(input_.end(), bytes.begin(), bytes.end());
    }
    bool read_exact(std::span<uint8_t> out) override {
        if (input_.size() < out.size() && out.size() > 0 && input_.empty())
            return false;
        if (input_.size() < out.size()) {
            // partial data then EOF
            input_.clear();
            return false;
        }
        std::copy_n(input_.begin(), out.size(), out.begin());
        input_.erase(input_.begin(), input_.begin() + static_cast<long>(out.size()));
        return true;
    }
    void write_all(std::span<const uint8_t> data) override {
        output_.insert(output_.end(), data.begin(), data.end());
    }
    std::vector<uint8_t> take_output() {
        std::vector<uint8_t> out(output_.begin(), output_.end());
        output_.clear();
        return out;
    }

private:
    std::deque<uint8_t> input_;
    std::deque<uint8_t> output_;
};

// In-memory block store with the same error surface as the engine.
class StubService final : public BlockService {
public:
    uint64_t max_blocks = 1000;
    uint8_t volumes = 2;
    bool fail_io = false;
    bool full = false;
    int flushes = 0;

    void read(uint8_t volume, uint64_t block, std::span<uint8_t, kBlockSize> out) override {
        guard(volume, block);
        auto it = blocks_.find(key(volume, block));
        if (it == blocks_.end())
            std::memset(out.data(), 0, out.size());
        else
            std::memcpy(out.data(), it->second.data(), out.size());
    }
    void write(uint8_t volume, uint64_t block,
               std::span<const uint8_t, kBlockSize> data) override {
        guard(volume, block);
        if (full)
            throw NoSpace();
        auto& slot = blocks_[key(volume, block)];
        std::memcpy(slot.data(), data.data(), kBlockSize);
    }
    void trim(uint8_t volume, uint64_t block) override {
        guard(volume, block);
        blocks_.erase(key(volume, block));
    }
    void flush() override {
        if (fail_io)
            throw IoError("stub flush failure");
        ++flushes;
    }

private:
    void guard(uint8_t volume, uint64_t block) const {
        if (fail_io)
            throw IoError("stub io failure");
        if (volume >= volumes)
            throw VolumeNotOpen("not open");
        if (block >= max_blocks)
            throw RangeError("out of range");
    }
    static uint64_t key(uint8_t volume, uint64_t block) {
        return (static_cast<uint64_t>(volume) << 56) | block;
    }
    std::map<uint64_t, std::array<uint8_t, kBlockSize>> blocks_;
};

std::vector<uint8_t> frame(Opcode op, uint8_t volume, uint64_t block,
                           std::vector<uint8_t> payload = {}) {
    Request r;
    r.opcode = op;
    r.volume = volume;
    r.block = block;
    r.payload = std::move(payload);
    return encode_request(r);
}

}  // namespace

TEST_CASE("request framing is bit-exact") {
    CHECK(hex(frame(Opcode::read, 0, 5)) == "01000500000000000000");
    CHECK(hex(frame(Opcode::trim, 3, 0x0102030405060708ULL)) == "03030807060504030201");
    CHECK(hex(frame(Opcode::flush, 0, 0)) == "04000000000000000000");
    CHECK(hex(frame(Opcode::close, 0, 0)) == "05000000000000000000");
    const auto w = frame(Opcode::write, 1, 7, std::vector<uint8_t>(kBlockSize, 0xAB));
    CHECK(w.size() == kWriteFrameLen);
    CHECK(hex(std::span(w).first(10)) == "02010700000000000000");
    CHECK(w[10] == 0xAB);
    CHECK(w.back() == 0xAB);
    CHECK_THROWS_AS(frame(Opcode::write, 0, 0, std::vector<uint8_t>(5)), RangeError);
}

TEST_CASE("read of an unwritten block answers OK plus zeros") {
    MemoryStream stream;
    StubService service;
    stream.feed(frame(Opcode::read, 0, 5));
    CHECK(serve_one(stream, service) == ServeResult::keep);
    const auto out = stream.take_output();
    REQUIRE(out.size() == 1 + kBlockSize);
    CHECK(out[0] == 0x00);
    CHECK(std::all_of(out.begin() + 1, out.end(), [](uint8_t b) { return b == 0; }));
}

TEST_CASE("write then read round-trips through the wire") {
    MemoryStream stream;
    StubService service;
    std::vector<uint8_t> payload(kBlockSize);
    for (size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<uint8_t>(i * 7);

    stream.feed(frame(Opcode::write, 1, 9, payload));
    CHECK(serve_one(stream, service) == ServeResult::keep);
    CHECK(hex(stream.take_output()) == "00");

    stream.feed(frame(Opcode::read, 1, 9));
    CHECK(serve_one(stream, service) == ServeResult::keep);
    const auto out = stream.take_output();
    REQUIRE(out.size() == 1 + kBlockSize);
    CHECK(out[0] == 0x00);
    CHECK(std::memcmp(out.data() + 1, payload.data(), kBlockSize) == 0);
}

TEST_CASE("every error status has a golden transcript") {
    MemoryStream stream;
    StubService service;

    stream.feed(frame(Opcode::read, 0, 2000));  // beyond max_blocks
    serve_one(stream, service);
    CHECK(hex(stream.take_output()) == "01");  // RANGE

    service.full = true;
    stream.feed(frame(Opcode::write, 0, 1, std::vector<uint8_t>(kBlockSize, 1)));
    serve_one(stream, service);
    CHECK(hex(stream.take_output()) == "02");  // NOSPACE
    service.full = false;

    stream.feed(frame(Opcode::read, 9, 0));
    serve_one(stream, service);
    CHECK(hex(stream.take_output()) == "03");  // NOVOL

    service.fail_io = true;
    stream.feed(frame(Opcode::flush, 0, 0));
    serve_one(stream, service);
    CHECK(hex(stream.take_output()) == "04");  // IO
    service.fail_io = false;

    std::vector<uint8_t> unknown = frame(Opcode::read, 0, 0);
    unknown[0] = 0x7F;
    stream.feed(unknown);
    CHECK(serve_one(stream, service) == ServeResult::keep);
    CHECK(hex(stream.take_output()) == "05");  // PROTO

    // the connection stays usable after a protocol error
    stream.feed(frame(Opcode::trim, 0, 1));
    CHECK(serve_one(stream, service) == ServeResult::keep);
    CHECK(hex(stream.take_output()) == "00");

    stream.feed(frame(Opcode::close, 0, 0));
    CHECK(serve_one(stream, service) == ServeResult::close_requested);
    CHECK(hex(stream.take_output()) == "00");
}

TEST_CASE("truncated frames answer PROTO") {
    StubService service;
    {
        MemoryStream stream;
        const uint8_t partial[3] = {0x01, 0x00, 0x05};
        stream.feed(partial);
        CHECK(serve_one(stream, service) == ServeResult::eof);
        CHECK(hex(stream.take_output()) == "05");
    }
    {
        MemoryStream stream;
        auto w = frame(Opcode::write, 0, 1, std::vector<uint8_t>(kBlockSize, 2));
        w.resize(100);  // header complete, payload cut off
        stream.feed(w);
        CHECK(serve_one(stream, service) == ServeResult::eof);
        CHECK(hex(stream.take_output()) == "05");
    }
    {
        MemoryStream stream;  // clean EOF: no response at all
        CHECK(serve_one(stream, service) == ServeResult::eof);
        CHECK(stream.take_output().empty());
    }
}

TEST_CASE("flush frames reach the engine") {
    MemoryStream stream;
    StubService service;
    stream.feed(frame(Opcode::flush, 0, 0));
    serve_one(stream, service);
    CHECK(service.flushes == 1);
    CHECK(hex(stream.take_output()) == "00");
}
