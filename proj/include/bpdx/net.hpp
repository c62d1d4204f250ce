#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>

namespace bpdx::net {

/// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) noexcept : fd_(fd) {}
    Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
    Fd& operator=(Fd&& other) noexcept {
        if (this != &other) reset(std::exchange(other.fd_, -1));
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd() { reset(); }

    int get() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void reset(int fd = -1) noexcept;

private:
    int fd_ = -1;
};

/// "host:port" for TCP or "unix:<path>" for a local socket.
struct Address {
    bool unix_socket = false;
    std::string host;
    std::uint16_t port = 0;
    std::string path;

    std::string str() const;
};

/// Throws Error("bad-address").
Address parse_address(std::string_view text);

/// Bound, listening, non-blocking socket. `bound` receives the actual address
/// (resolves port 0). Throws Error("port-in-use") or Error("bad-address").
Fd listen_on(const Address& address, Address& bound);

/// Starts a non-blocking connect; completion is signalled by writability.
/// Throws Error("connect-refused") on immediate failure.
Fd connect_async(const Address& address);

/// Blocking connect with timeout in milliseconds. Throws Error("connect-refused").
Fd connect_blocking(const Address& address, int timeout_ms = 2000);

/// Returns 0 on success or the pending socket error.
int socket_error(int fd) noexcept;

void set_nonblocking(int fd, bool on = true);

/// Writes everything, blocking. Returns false when the peer is gone.
bool write_all(int fd, std::string_view bytes);

}  // namespace bpdx::net
