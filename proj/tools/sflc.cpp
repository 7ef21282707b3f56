// sflc: userspace Shufflecake volumes on file-backed images.

#include <sys/socket.h>
#include <sys/un.h>
#include <termios.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sflc/analyze.hpp"
#include "sflc/bench.hpp"
#include "sflc/device.hpp"
#include "sflc/protocol.hpp"
#include "sflc/server.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGeneric = 1;
constexpr int kExitNoMatch = 2;
constexpr int kExitLock = 3;
constexpr int kExitNotOpen = 4;
constexpr int kExitUsage = 64;

bool kdf_fast_env() {
    const char* v = std::getenv("SFLC_KDF_FAST");
    return v && std::string_view(v) == "1";
}

sflc::KdfCost pick_kdf(bool fast_flag) {
    return (fast_flag || kdf_fast_env()) ? sflc::kKdfCostFast : sflc::kKdfCostV1;
}

std::vector<std::string> read_fd_passwords(int fd, size_t count) {
    std::string all;
    char buf[256];
    for (;;) {
        ssize_t n = ::read(fd, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw sflc::IoError("cannot read passwords from fd " + std::to_string(fd));
        }
        if (n == 0)
            break;
        all.append(buf, static_cast<size_t>(n));
    }
    std::vector<std::string> out;
    size_t pos = 0;
    while (out.size() < count) {
        const size_t nl = all.find('\n', pos);
        if (nl == std::string::npos) {
            if (pos < all.size())
                out.push_back(all.substr(pos));
            break;
        }
        out.push_back(all.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (out.size() < count)
        throw sflc::Error("expected " + std::to_string(count) + " passwords on fd " +
                          std::to_string(fd));
    return out;
}

std::string prompt_password(const std::string& prompt) {
    FILE* tty = std::fopen("/dev/tty", "r+");
    if (!tty)
        throw sflc::IoError("no terminal available; use --password-fd");
    std::fprintf(tty, "%s", prompt.c_str());
    std::fflush(tty);

    termios before{};
    tcgetattr(fileno(tty), &before);
    termios hidden = before;
    hidden.c_lflag &= ~static_cast<tcflag_t>(ECHO);
    tcsetattr(fileno(tty), TCSAFLUSH, &hidden);

    std::string line;
    int c;
    while ((c = std::fgetc(tty)) != EOF && c != '\n')
        line.push_back(static_cast<char>(c));

    tcsetattr(fileno(tty), TCSAFLUSH, &before);
    std::fprintf(tty, "\n");
    std::fclose(tty);
    return line;
}

std::vector<std::string> gather_passwords(std::optional<int> password_fd, size_t count,
                                          const std::string& what) {
    if (password_fd)
        return read_fd_passwords(*password_fd, count);
    std::vector<std::string> out;
    for (size_t i = 0; i < count; ++i)
        out.push_back(prompt_password(what + " password" +
                                      (count > 1 ? " " + std::to_string(i + 1) : "") + ": "));
    return out;
}

int connect_socket(const std::string& socket_path) {
    int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0)
        return -1;
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, socket_path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        return -1;
    }
    return fd;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const sflc::NoMatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNoMatch;
    } catch (const sflc::LockHeld& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitLock;
    } catch (const sflc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeneric;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Userspace Shufflecake: hidden-volume images, served over a local socket"};
    app.require_subcommand(1);

    std::string image;
    std::optional<int> password_fd;
    bool kdf_fast = false;

    auto add_common = [&](CLI::App* cmd, bool with_password) {
        cmd->add_option("image", image, "image file")->required();
        if (with_password)
            cmd->add_option("--password-fd", password_fd,
                            "read passwords (one per line) from this descriptor");
        cmd->add_flag("--kdf-fast", kdf_fast, "reduced Argon2id cost (testing only)");
    };

    // init
    auto* init = app.add_subcommand("init", "format an image with 1..15 volumes");
    int volumes = 0;
    uint64_t size_mib = 0;
    bool skip_randfill = false;
    add_common(init, true);
    init->add_option("--volumes", volumes, "number of volumes")->required();
    init->add_option("--size-mib", size_mib, "create/resize the image first (MiB)");
    init->add_flag("--skip-randfill", skip_randfill,
                   "skip the whole-device random prefill (weakens deniability)");

    // open
    auto* open = app.add_subcommand("open", "unlock volumes and serve them on <image>.sock");
    size_t iv_cache = 1024;
    add_common(open, true);
    open->add_option("--iv-cache", iv_cache, "IV cache entries");

    // close
    auto* close = app.add_subcommand("close", "flush and stop the server for an image");
    close->add_option("image", image, "image file")->required();

    // testpwd
    auto* testpwd = app.add_subcommand("testpwd", "check which volume a password unlocks");
    add_common(testpwd, true);

    // changepwd
    auto* changepwd = app.add_subcommand("changepwd", "change one volume's password");
    add_common(changepwd, true);

    // refresh
    auto* refresh = app.add_subcommand("refresh", "re-randomise free slices, re-encrypt data");
    double ref_p = 0.0, ref_q = 0.0;
    add_common(refresh, true);
    refresh->add_option("--p", ref_p, "per-block probability for free slices")->required();
    refresh->add_option("--q", ref_q, "per-block probability for data blocks");

    // bench
    auto* bench = app.add_subcommand("bench", "benchmarks (reformats the image!)");
    std::string mode = "seqwrite";
    std::string fill = "mixed";
    uint64_t io_mib = 32;
    uint64_t seed = 42;
    bench->add_option("image", image, "image file (overwritten)")->required();
    bench->add_option("--mode", mode, "seqwrite|seqread|randwrite|randread|frag|baseline")
        ->check(CLI::IsMember({"seqwrite", "seqread", "randwrite", "randread", "frag",
                               "baseline"}));
    bench->add_option("--size", io_mib, "I/O volume in MiB (throughput modes)");
    bench->add_option("--seed", seed, "workload seed");
    bench->add_option("--fill", fill, "frag fill pattern: seq|mixed")
        ->check(CLI::IsMember({"seq", "mixed"}));
    bench->add_flag("--kdf-fast", kdf_fast, "reduced Argon2id cost (testing only)");

    // diff
    auto* diff = app.add_subcommand("diff", "per-slice change masks between two snapshots");
    std::string image_b;
    diff->add_option("image", image, "first snapshot")->required();
    diff->add_option("image_b", image_b, "second snapshot")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    if (init->parsed()) {
        if (volumes < 1 || volumes > static_cast<int>(sflc::kMaxVolumes)) {
            std::cerr << "error: --volumes must be between 1 and " << sflc::kMaxVolumes << "\n";
            return kExitUsage;
        }
        return run_guarded([&] {
            if (size_mib > 0)
                sflc::ImageFile::create(image, size_mib * 256);
            auto passwords =
                gather_passwords(password_fd, static_cast<size_t>(volumes), "volume");
            sflc::Device::initialize(image, passwords, skip_randfill, pick_kdf(kdf_fast),
                                     sflc::system_rng());
            std::cout << "initialized " << image << " with " << volumes << " volume(s)\n";
            return kExitOk;
        });
    }

    if (open->parsed()) {
        return run_guarded([&] {
            auto passwords = gather_passwords(password_fd, 1, "volume");
            sflc::Device::Options opts;
            opts.kdf = pick_kdf(kdf_fast);
            opts.iv_cache_entries = iv_cache;
            sflc::Device dev = sflc::Device::open(image, passwords[0], opts);
            std::cout << "opened volumes:";
            for (size_t v = 0; v < dev.volume_count(); ++v)
                std::cout << " " << v;
            std::cout << "\nmax logical blocks per volume: " << dev.max_logical_blocks()
                      << "\nserving on " << image << ".sock\n";
            std::cout.flush();
            return sflc::serve_device(dev, image + ".sock");
        });
    }

    if (close->parsed()) {
        int fd = connect_socket(image + ".sock");
        if (fd < 0) {
            std::cerr << "error: no server is open on " << image << "\n";
            return kExitNotOpen;
        }
        sflc::proto::Request req;
        req.opcode = sflc::proto::Opcode::close;
        const auto frame = sflc::proto::encode_request(req);
        if (::send(fd, frame.data(), frame.size(), MSG_NOSIGNAL) !=
            static_cast<ssize_t>(frame.size())) {
            ::close(fd);
            std::cerr << "error: cannot talk to the server\n";
            return kExitGeneric;
        }
        uint8_t status = 0xFF;
        ssize_t n = ::recv(fd, &status, 1, 0);
        ::close(fd);
        if (n != 1 || status != 0) {
            std::cerr << "error: close not acknowledged\n";
            return kExitGeneric;
        }
        std::cout << "closed " << image << "\n";
        return kExitOk;
    }

    if (testpwd->parsed()) {
        return run_guarded([&] {
            auto passwords = gather_passwords(password_fd, 1, "volume");
            auto hit = sflc::Device::test_password(image, passwords[0], pick_kdf(kdf_fast));
            if (!hit) {
                std::cerr << "no volume matches this password\n";
                return kExitNoMatch;
            }
            std::cout << "password unlocks volume " << *hit << "\n";
            return kExitOk;
        });
    }

    if (changepwd->parsed()) {
        return run_guarded([&] {
            std::vector<std::string> passwords;
            if (password_fd) {
                passwords = read_fd_passwords(*password_fd, 2);
            } else {
                passwords.push_back(prompt_password("current password: "));
                passwords.push_back(prompt_password("new password: "));
            }
            sflc::Device::change_password(image, passwords[0], passwords[1],
                                          pick_kdf(kdf_fast), sflc::system_rng());
            std::cout << "password changed\n";
            return kExitOk;
        });
    }

    if (refresh->parsed()) {
        return run_guarded([&] {
            auto passwords = gather_passwords(password_fd, 1, "volume");
            sflc::Device::Options opts;
            opts.kdf = pick_kdf(kdf_fast);
            sflc::Device dev = sflc::Device::open(image, passwords[0], opts);
            sflc::random_refresh(dev, {ref_p, ref_q}, sflc::system_rng());
            dev.close();
            std::cout << "refreshed with p=" << ref_p << " q=" << ref_q << "\n";
            return kExitOk;
        });
    }

    if (bench->parsed()) {
        return run_guarded([&] {
            const auto kdf = pick_kdf(kdf_fast);
            if (mode == "frag") {
                const uint64_t blocks = 16384;  // 64 MiB
                auto points =
                    sflc::bench::run_frag(image, blocks, fill == "seq", seed, kdf);
                std::cout << "occupancy efficiency\n";
                for (const auto& p : points)
                    std::printf("%.2f %.4f\n", p.occupancy, p.efficiency);
                return kExitOk;
            }
            if (mode == "baseline") {
                for (auto [name, pat] :
                     {std::pair{"seqwrite", sflc::bench::Pattern::seqwrite},
                      std::pair{"seqread", sflc::bench::Pattern::seqread},
                      std::pair{"randwrite", sflc::bench::Pattern::randwrite},
                      std::pair{"randread", sflc::bench::Pattern::randread}}) {
                    auto t = sflc::bench::run_baseline(image, pat, io_mib, seed);
                    std::printf("baseline %s: %.2f MB/s (%.3f s)\n", name, t.mb_per_s,
                                t.seconds);
                }
                return kExitOk;
            }
            sflc::bench::Pattern pat = sflc::bench::Pattern::seqwrite;
            if (mode == "seqread")
                pat = sflc::bench::Pattern::seqread;
            else if (mode == "randwrite")
                pat = sflc::bench::Pattern::randwrite;
            else if (mode == "randread")
                pat = sflc::bench::Pattern::randread;
            auto t = sflc::bench::run_engine(image, pat, io_mib, seed, kdf);
            std::printf("%s: %.2f MB/s (%.3f s, %llu bytes)\n", mode.c_str(), t.mb_per_s,
                        t.seconds, static_cast<unsigned long long>(t.bytes));
            return kExitOk;
        });
    }

    if (diff->parsed()) {
        return run_guarded([&] {
            const auto d = sflc::snapshot_diff(image, image_b);
            std::cout << "header: version/salt " << (d.header.version_or_salt_changed ? "changed" : "same");
            std::cout << ", cells changed:";
            bool any_cell = false;
            for (uint32_t c = 0; c < sflc::kMaxVolumes; ++c) {
                if (d.header.cell_changed[c]) {
                    std::cout << " " << c;
                    any_cell = true;
                }
            }
            if (!any_cell)
                std::cout << " none";
            std::cout << "\n";
            for (uint32_t v = 0; v < sflc::kMaxVolumes; ++v) {
                if (d.header.header_blocks_changed[v])
                    std::cout << "volume header " << v << ": "
                              << d.header.header_blocks_changed[v] << " block(s) changed\n";
            }
            size_t shown = 0;
            for (const auto& s : d.slices) {
                if (!s.changed.any())
                    continue;
                std::cout << "slice " << s.psi << " [" << s.changed.count() << "/"
                          << sflc::kPhysicalSliceBlocks << "]: ";
                for (size_t m = 0; m < sflc::kPhysicalSliceBlocks; ++m)
                    std::cout << (s.changed.test(m) ? '1' : '0');
                std::cout << "\n";
                ++shown;
            }
            std::cout << shown << " slice(s) with changes, tail blocks changed: "
                      << d.header.tail_blocks_changed << "\n";
            return kExitOk;
        });
    }

    return kExitUsage;
}
