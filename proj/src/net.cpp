#include "bpdx/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "bpdx/bundle.hpp"

namespace bpdx::net {

void Fd::reset(int fd) noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
}

std::string Address::str() const {
    if (unix_socket) return "unix:" + path;
    return host + ":" + std::to_string(port);
}

Address parse_address(std::string_view text) {
    Address address;
    if (text.starts_with("unix:")) {
        address.unix_socket = true;
        address.path = std::string(text.substr(5));
        if (address.path.empty() || address.path.size() >= sizeof(sockaddr_un::sun_path))
            throw Error("bad-address", "bad socket path: " + std::string(text));
        return address;
    }
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon == 0)
        throw Error("bad-address", "expected host:port, got " + std::string(text));
    address.host = std::string(text.substr(0, colon));
    const auto port = text.substr(colon + 1);
    unsigned long value = 0;
    if (port.empty() || port.size() > 5) throw Error("bad-address", "bad port in " + std::string(text));
    for (char c : port) {
        if (c < '0' || c > '9') throw Error("bad-address", "bad port in " + std::string(text));
        value = value * 10 + static_cast<unsigned long>(c - '0');
    }
    if (value > 65535) throw Error("bad-address", "port out of range in " + std::string(text));
    address.port = static_cast<std::uint16_t>(value);
    return address;
}

void set_nonblocking(int fd, bool on) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

int socket_error(int fd) noexcept {
    int err = 0;
    socklen_t len = sizeof(err);
    if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0) return errno;
    return err;
}

namespace {

sockaddr_in resolve_v4(const Address& address) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(address.port);
    const std::string host = address.host == "localhost" ? "127.0.0.1" : address.host;
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) return sa;

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &result) != 0 || !result)
        throw Error("bad-address", "cannot resolve " + address.host);
    sa.sin_addr = reinterpret_cast<sockaddr_in*>(result->ai_addr)->sin_addr;
    ::freeaddrinfo(result);
    return sa;
}

sockaddr_un unix_addr(const Address& address) {
    sockaddr_un sa{};
    sa.sun_family = AF_UNIX;
    std::memcpy(sa.sun_path, address.path.c_str(), address.path.size() + 1);
    return sa;
}

Fd make_socket(const Address& address) {
    Fd fd{::socket(address.unix_socket ? AF_UNIX : AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0)};
    if (!fd) throw Error("socket-error", std::strerror(errno));
    if (!address.unix_socket) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    }
    return fd;
}

int do_connect(int fd, const Address& address) {
    if (address.unix_socket) {
        const auto sa = unix_addr(address);
        return ::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa));
    }
    const auto sa = resolve_v4(address);
    return ::connect(fd, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa));
}

}  // namespace

Fd listen_on(const Address& address, Address& bound) {
    auto fd = make_socket(address);
    int rc = 0;
    if (address.unix_socket) {
        ::unlink(address.path.c_str());
        const auto sa = unix_addr(address);
        rc = ::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa));
    } else {
        int one = 1;
        ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        const auto sa = resolve_v4(address);
        rc = ::bind(fd.get(), reinterpret_cast<const sockaddr*>(&sa), sizeof(sa));
    }
    if (rc != 0) {
        const int err = errno;
        throw Error(err == EADDRINUSE ? "port-in-use" : "bad-address",
                    "cannot bind " + address.str() + ": " + std::strerror(err));
    }
    if (::listen(fd.get(), 64) != 0) throw Error("socket-error", std::strerror(errno));
    set_nonblocking(fd.get());

    bound = address;
    if (!address.unix_socket) {
        sockaddr_in sa{};
        socklen_t len = sizeof(sa);
        ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&sa), &len);
        bound.port = ntohs(sa.sin_port);
    }
    return fd;
}

Fd connect_async(const Address& address) {
    auto fd = make_socket(address);
    set_nonblocking(fd.get());
    if (do_connect(fd.get(), address) != 0 && errno != EINPROGRESS)
        throw Error("connect-refused", "cannot connect to " + address.str() + ": " + std::strerror(errno));
    return fd;
}

Fd connect_blocking(const Address& address, int timeout_ms) {
    auto fd = connect_async(address);
    pollfd pfd{fd.get(), POLLOUT, 0};
    const int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc <= 0) throw Error("connect-refused", "timeout connecting to " + address.str());
    if (const int err = socket_error(fd.get()); err != 0)
        throw Error("connect-refused", "cannot connect to " + address.str() + ": " + std::strerror(err));
    set_nonblocking(fd.get(), false);
    return fd;
}

bool write_all(int fd, std::string_view bytes) {
    while (!bytes.empty()) {
        const auto n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) {
                pollfd pfd{fd, POLLOUT, 0};
                ::poll(&pfd, 1, 1000);
                continue;
            }
            return false;
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

}  // namespace bpdx::net
