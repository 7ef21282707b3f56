#include "sflc/server.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <mutex>
#include <thread>
#include <vector>

#include "sflc/protocol.hpp"

namespace sflc {

namespace {

int g_stop_pipe_write = -1;

void stop_signal_handler(int) {
    const char byte = 1;
    if (g_stop_pipe_write >= 0)
        [[maybe_unused]] ssize_t n = ::write(g_stop_pipe_write, &byte, 1);
}

class FdStream final : public proto::ByteStream {
public:
    explicit FdStream(int fd) : fd_(fd) {}

    bool read_exact(std::span<uint8_t> out) override {
        size_t done = 0;
        while (done < out.size()) {
            ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                throw IoError("socket read failed");
            }
            if (n == 0)
                return false;
            done += static_cast<size_t>(n);
        }
        return true;
    }

    void write_all(std::span<const uint8_t> data) override {
        size_t done = 0;
        while (done < data.size()) {
            ssize_t n = ::send(fd_, data.data() + done, data.size() - done, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR)
                    continue;
                throw IoError("socket write failed");
            }
            done += static_cast<size_t>(n);
        }
    }

private:
    int fd_;
};

// Engine access shared by all connections; one operation at a time.
class DeviceService final : public proto::BlockService {
public:
    explicit DeviceService(Device& device) : device_(device) {}

    void read(uint8_t volume, uint64_t block, std::span<uint8_t, kBlockSize> out) override {
        std::lock_guard lock(mutex_);
        device_.read_block(volume, block, out);
    }
    void write(uint8_t volume, uint64_t block,
               std::span<const uint8_t, kBlockSize> data) override {
        std::lock_guard lock(mutex_);
        device_.write_block(volume, block, data);
    }
    void trim(uint8_t volume, uint64_t block) override {
        std::lock_guard lock(mutex_);
        device_.trim_block(volume, block);
    }
    void flush() override {
        std::lock_guard lock(mutex_);
        device_.flush();
    }

    void close_device() {
        std::lock_guard lock(mutex_);
        if (!device_.closed())
            device_.close();
    }

private:
    Device& device_;
    std::mutex mutex_;
};

}  // namespace

int serve_device(Device& device, const std::string& socket_path, const ServeOptions& options) {
    ::unlink(socket_path.c_str());
    int listen_fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd < 0)
        throw IoError("cannot create socket");

    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (socket_path.size() >= sizeof(addr.sun_path)) {
        ::close(listen_fd);
        throw IoError("socket path too long: " + socket_path);
    }
    std::strncpy(addr.sun_path, socket_path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd, 8) != 0) {
        ::close(listen_fd);
        throw IoError("cannot bind/listen on " + socket_path);
    }

    int stop_pipe[2] = {-1, -1};
    if (::pipe(stop_pipe) != 0) {
        ::close(listen_fd);
        throw IoError("cannot create stop pipe");
    }

    struct sigaction old_int{}, old_term{};
    if (options.handle_signals) {
        g_stop_pipe_write = stop_pipe[1];
        struct sigaction sa{};
        sa.sa_handler = stop_signal_handler;
        ::sigaction(SIGINT, &sa, &old_int);
        ::sigaction(SIGTERM, &sa, &old_term);
    }

    DeviceService service(device);
    std::atomic<bool> stopping{false};
    std::mutex conn_mutex;
    std::vector<int> conn_fds;
    std::vector<std::thread> workers;

    auto request_stop = [&] {
        bool expected = false;
        if (stopping.compare_exchange_strong(expected, true)) {
            const char byte = 1;
            [[maybe_unused]] ssize_t n = ::write(stop_pipe[1], &byte, 1);
        }
    };

    for (;;) {
        pollfd fds[2] = {{listen_fd, POLLIN, 0}, {stop_pipe[0], POLLIN, 0}};
        if (::poll(fds, 2, -1) < 0) {
            if (errno == EINTR)
                continue;
            break;
        }
        if (fds[1].revents & POLLIN)
            break;
        if (!(fds[0].revents & POLLIN))
            continue;
        int conn = ::accept(listen_fd, nullptr, nullptr);
        if (conn < 0)
            continue;
        {
            std::lock_guard lock(conn_mutex);
            conn_fds.push_back(conn);
        }
        workers.emplace_back([conn, &service, &request_stop, &conn_mutex, &conn_fds] {
            FdStream stream(conn);
            try {
                for (;;) {
                    const auto result = proto::serve_one(stream, service);
                    if (result == proto::ServeResult::eof)
                        break;
                    if (result == proto::ServeResult::close_requested) {
                        request_stop();
                        break;
                    }
                }
            } catch (const Error&) {
                // connection dies, server stays up
            }
            {
                std::lock_guard lock(conn_mutex);
                std::erase(conn_fds, conn);
            }
            ::close(conn);
        });
    }

    {
        std::lock_guard lock(conn_mutex);
        for (int fd : conn_fds)
            ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers)
        t.join();

    service.close_device();
    ::close(listen_fd);
    ::unlink(socket_path.c_str());
    ::close(stop_pipe[0]);
    ::close(stop_pipe[1]);
    if (options.handle_signals) {
        ::sigaction(SIGINT, &old_int, nullptr);
        ::sigaction(SIGTERM, &old_term, nullptr);
        g_stop_pipe_write = -1;
    }
    return 0;
}

}  // namespace sflc
