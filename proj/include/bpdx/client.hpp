#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include "bpdx/net.hpp"
#include "bpdx/protocol.hpp"

namespace bpdx {

/// Blocking line-protocol connection: connects, exchanges hello envelopes and
/// then reads/writes envelopes. Suitable for single-threaded loops (BDMs).
class Connection {
public:
    /// Throws Error("connection-refused") or Error("version-mismatch").
    Connection(const std::string& address, Hello hello, std::size_t max_line = kMaxLineBytes,
               int timeout_ms = 2000);

    const Hello& server_hello() const noexcept { return server_hello_; }
    int fd() const noexcept { return fd_.get(); }

    /// Thread-safe. Throws Error("connection-closed").
    void send(Kind kind, nlohmann::json body);

    /// Next envelope, or nothing on timeout (timeout_ms < 0 waits forever).
    /// Throws Error("connection-closed") at end of stream.
    std::optional<Envelope> read(int timeout_ms);

    /// Fresh correlation id, unique on this connection.
    nlohmann::json next_request_id();

    /// Shuts the socket down; unblocks a concurrent reader.
    void shutdown() noexcept;

private:
    net::Fd fd_;
    Hello server_hello_;
    LineSplitter split_;
    MessageDecoder decoder_;
    MessageEncoder encoder_;
    std::mutex write_mutex_;
    std::uint64_t next_id_ = 1;
};

/// Connection with a background reader: RPCs block for their response while
/// events are queued (or handed to a callback on the reader thread).
class Session {
public:
    Session(const std::string& address, const std::string& role, std::string node = "client",
            std::size_t max_line = kMaxLineBytes);
    ~Session();
    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    const Hello& server_hello() const noexcept { return conn_.server_hello(); }

    RpcResponse call(const std::string& method, nlohmann::json params = nlohmann::json::object(),
                     int timeout_ms = 5000);
    /// Like call() but throws Error(code) for error responses.
    nlohmann::json call_ok(const std::string& method, nlohmann::json params = nlohmann::json::object(),
                           int timeout_ms = 5000);

    void subscribe(const std::set<Topic>& topics);

    /// Every non-response envelope received (events, close notices). When a
    /// callback is installed it runs on the reader thread instead of queueing.
    std::optional<Envelope> next_message(int timeout_ms);
    void on_message(std::function<void(const Envelope&)> callback);

    /// Convenience: next envelope that carries an Event (dispatch channel).
    std::optional<Event> next_event(int timeout_ms);

    bool closed() const;
    void close();

    /// Low-level send; the caller picks the request id (conformance tests).
    void send_raw(Kind kind, nlohmann::json body) { conn_.send(kind, std::move(body)); }
    nlohmann::json next_request_id() { return conn_.next_request_id(); }

private:
    void reader();

    Connection conn_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<std::string, RpcResponse> responses_;
    std::deque<Envelope> messages_;
    std::function<void(const Envelope&)> callback_;
    bool closed_ = false;
    std::thread thread_;
};

}  // namespace bpdx
