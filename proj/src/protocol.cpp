#include "sflc/protocol.hpp"

#include <cstring>

#include "sflc/errors.hpp"

namespace sflc::proto {

std::vector<uint8_t> encode_request(const Request& request) {
    std::vector<uint8_t> frame(kHeaderLen);
    frame[0] = static_cast<uint8_t>(request.opcode);
    frame[1] = request.volume;
    std::memcpy(frame.data() + 2, &request.block, 8);
    if (request.opcode == Opcode::write) {
        if (request.payload.size() != kBlockSize)
            throw RangeError("WRITE payload must be exactly one block");
        frame.insert(frame.end(), request.payload.begin(), request.payload.end());
    }
    return frame;
}

namespace {

void respond(ByteStream& stream, Status status) {
    const uint8_t byte = static_cast<uint8_t>(status);
    stream.write_all({&byte, 1});
}

Status status_of_exception() {
    try {
        throw;
    } catch (const RangeError&) {
        return Status::range;
    } catch (const NoSpace&) {
        return Status::nospace;
    } catch (const VolumeNotOpen&) {
        return Status::novol;
    } catch (const Error&) {
        return Status::io;
    }
}

}  // namespace

ServeResult serve_one(ByteStream& stream, BlockService& service) {
    std::array<uint8_t, kHeaderLen> header{};
    if (!stream.read_exact({header.data(), 1}))
        return ServeResult::eof;
    if (!stream.read_exact({header.data() + 1, kHeaderLen - 1})) {
        respond(stream, Status::proto);
        return ServeResult::eof;
    }
    const uint8_t opcode = header[0];
    const uint8_t volume = header[1];
    uint64_t block = 0;
    std::memcpy(&block, header.data() + 2, 8);

    switch (static_cast<Opcode>(opcode)) {
        case Opcode::read: {
            std::array<uint8_t, kBlockSize> data{};
            try {
                service.read(volume, block, data);
            } catch (const Error&) {
                respond(stream, status_of_exception());
                return ServeResult::keep;
            }
            std::vector<uint8_t> out(1 + kBlockSize);
            out[0] = static_cast<uint8_t>(Status::ok);
            std::memcpy(out.data() + 1, data.data(), kBlockSize);
            stream.write_all(out);
            return ServeResult::keep;
        }
        case Opcode::write: {
            std::array<uint8_t, kBlockSize> data{};
            if (!stream.read_exact(data)) {
                respond(stream, Status::proto);
                return ServeResult::eof;
            }
            try {
                service.write(volume, block, data);
            } catch (const Error&) {
                respond(stream, status_of_exception());
                return ServeResult::keep;
            }
            respond(stream, Status::ok);
            return ServeResult::keep;
        }
        case Opcode::trim: {
            try {
                service.trim(volume, block);
            } catch (const Error&) {
                respond(stream, status_of_exception());
                return ServeResult::keep;
            }
            respond(stream, Status::ok);
            return ServeResult::keep;
        }
        case Opcode::flush: {
            try {
                service.flush();
            } catch (const Error&) {
                respond(stream, status_of_exception());
                return ServeResult::keep;
            }
            respond(stream, Status::ok);
            return ServeResult::keep;
        }
        case Opcode::close:
            respond(stream, Status::ok);
            return ServeResult::close_requested;
        default:
            respond(stream, Status::proto);
            return ServeResult::keep;
    }
}

}  // namespace sflc::proto
