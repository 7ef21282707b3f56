#pragma once

// Unix-socket server exposing an open device. Connections are accepted
// concurrently; every block request is serialized through one mutex, so
// interleaved clients observe sequentially consistent block semantics.

#include <string>

#include "sflc/device.hpp"

namespace sflc {

struct ServeOptions {
    bool handle_signals = true;  // SIGINT/SIGTERM trigger a graceful close
};

// Binds `<image>.sock`, serves until a CLOSE frame (or signal) arrives, then
// flushes and closes the device and removes the socket. Returns 0 on a clean
// shutdown.
int serve_device(Device& device, const std::string& socket_path,
                 const ServeOptions& options = {});

}  // namespace sflc
