#include "bpdx/client.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>

namespace bpdx {

using nlohmann::json;

Connection::Connection(const std::string& address, Hello hello, std::size_t max_line, int timeout_ms)
    : split_(max_line), decoder_(max_line), encoder_(max_line) {
    try {
        fd_ = net::connect_blocking(net::parse_address(address), timeout_ms);
    } catch (const Error& e) {
        throw Error("connection-refused", e.what());
    }
    send(Kind::hello, hello_body(hello));
    const auto reply = read(timeout_ms);
    if (!reply) throw Error("connection-refused", "no hello from " + address);
    if (reply->kind != Kind::hello) throw Error("protocol-error", "expected hello from server");
    server_hello_ = parse_hello(reply->body);
    if (server_hello_.protocol_version != kProtocolVersion)
        throw Error("version-mismatch", "server speaks protocol version " +
                                            std::to_string(server_hello_.protocol_version));
}

void Connection::send(Kind kind, json body) {
    std::lock_guard lock(write_mutex_);
    const auto line = encoder_.encode(kind, std::move(body));
    if (!net::write_all(fd_.get(), line)) throw Error("connection-closed", "write failed");
}

std::optional<Envelope> Connection::read(int timeout_ms) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::milliseconds(timeout_ms < 0 ? 0 : timeout_ms);
    for (;;) {
        if (auto line = split_.next()) return decoder_.decode(*line);

        int wait = -1;
        if (timeout_ms >= 0) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
            if (left <= 0) return std::nullopt;
            wait = static_cast<int>(left);
        }
        pollfd pfd{fd_.get(), POLLIN, 0};
        const int rc = ::poll(&pfd, 1, wait);
        if (rc < 0 && errno == EINTR) continue;
        if (rc == 0) return std::nullopt;

        char buf[65536];
        const auto n = ::recv(fd_.get(), buf, sizeof(buf), 0);
        if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
        if (n <= 0) throw Error("connection-closed", "peer closed the connection");
        split_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
}

json Connection::next_request_id() {
    std::lock_guard lock(write_mutex_);
    return json(next_id_++);
}

void Connection::shutdown() noexcept { ::shutdown(fd_.get(), SHUT_RDWR); }

// ---------------------------------------------------------------------------

Session::Session(const std::string& address, const std::string& role, std::string node, std::size_t max_line)
    : conn_(address, Hello{kProtocolVersion, role, std::move(node)}, max_line) {
    thread_ = std::thread([this] { reader(); });
}

Session::~Session() { close(); }

void Session::close() {
    conn_.shutdown();
    if (thread_.joinable()) thread_.join();
}

bool Session::closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
}

void Session::reader() {
    try {
        for (;;) {
            auto envelope = conn_.read(-1);
            if (!envelope) continue;
            if (envelope->kind == Kind::rpc_response) {
                auto response = parse_response(envelope->body);
                if (!response.id.is_null()) {
                    std::lock_guard lock(mutex_);
                    responses_[response.id.dump()] = std::move(response);
                    cv_.notify_all();
                    continue;
                }
            }
            std::function<void(const Envelope&)> callback;
            {
                std::lock_guard lock(mutex_);
                callback = callback_;
                if (!callback) {
                    messages_.push_back(*envelope);
                    cv_.notify_all();
                }
            }
            if (callback) callback(*envelope);
        }
    } catch (const std::exception&) {
        std::lock_guard lock(mutex_);
        closed_ = true;
        cv_.notify_all();
    }
}

RpcResponse Session::call(const std::string& method, json params, int timeout_ms) {
    const auto id = conn_.next_request_id();
    conn_.send(Kind::rpc_request, request_body(RpcRequest{id, method, std::move(params)}));
    const auto key = id.dump();
    std::unique_lock lock(mutex_);
    const bool got = cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                                  [&] { return responses_.contains(key) || closed_; });
    const auto it = responses_.find(key);
    if (it == responses_.end()) {
        if (!got) throw Error("timeout", "no response to " + method);
        throw Error("connection-closed", "connection closed during " + method);
    }
    auto response = std::move(it->second);
    responses_.erase(it);
    return response;
}

json Session::call_ok(const std::string& method, json params, int timeout_ms) {
    auto response = call(method, std::move(params), timeout_ms);
    if (response.error) throw Error(response.error->code, response.error->message);
    return response.result;
}

void Session::subscribe(const std::set<Topic>& topics) { conn_.send(Kind::subscribe, subscribe_body(topics)); }

std::optional<Envelope> Session::next_message(int timeout_ms) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return !messages_.empty() || closed_; });
    if (messages_.empty()) return std::nullopt;
    auto envelope = std::move(messages_.front());
    messages_.pop_front();
    return envelope;
}

void Session::on_message(std::function<void(const Envelope&)> callback) {
    std::deque<Envelope> backlog;
    {
        std::lock_guard lock(mutex_);
        callback_ = callback;
        backlog.swap(messages_);
    }
    for (const auto& envelope : backlog) callback(envelope);
}

std::optional<Event> Session::next_event(int timeout_ms) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
        if (left <= 0) return std::nullopt;
        auto envelope = next_message(static_cast<int>(left));
        if (!envelope) return std::nullopt;
        if (envelope->kind == Kind::event && envelope->body.contains("topic")) return envelope->body.get<Event>();
    }
}

}  // namespace bpdx
