#pragma once

// Frames over TCP (Boost.Asio). A connection has one read loop and one
// write queue; whole frames are written in order.

#include "mtask/wire.hpp"

#include <boost/asio.hpp>

#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <string>

namespace mtask::net {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

class FrameConnection : public std::enable_shared_from_this<FrameConnection> {
public:
    using MessageHandler = std::function<void(const wire::Message&)>;
    using CloseHandler = std::function<void(const std::string& reason)>;
    // outbound is true for frames written by this side
    using FrameLog = std::function<void(bool outbound, const wire::Message&)>;

    explicit FrameConnection(tcp::socket socket);

    void start(MessageHandler on_message, CloseHandler on_close);
    void set_handler(MessageHandler on_message);
    void set_close_handler(CloseHandler on_close);
    void set_log(FrameLog log) { log_ = std::move(log); }

    // Both may be called from any thread; the work runs on the socket's
    // executor in call order.
    void send(const wire::Message& m);
    void close(const std::string& reason = "closed locally");

    bool is_open() const { return open_; }
    std::string peer() const { return peer_; }

private:
    void read_more();
    void write_next();
    void shutdown(const std::string& reason);

    tcp::socket socket_;
    std::string peer_;
    wire::FrameReader reader_;
    std::array<std::uint8_t, 4096> buf_{};
    std::deque<std::vector<std::uint8_t>> queue_;
    MessageHandler on_message_;
    CloseHandler on_close_;
    FrameLog log_;
    bool open_ = true;
    bool writing_ = false;
    bool closing_ = false;
    std::string close_reason_;
};

class ConnectFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::chrono::milliseconds kHandshakeTimeout{5000};

using HandshakeResult = std::function<void(std::exception_ptr error, std::shared_ptr<FrameConnection>, wire::DeviceSpec)>;

// Connects to a listening device and waits for its Hello. Errors are
// ConnectFailed, wire::VersionMismatch or wire::HandshakeTimeout.
void async_connect_device(asio::io_context& io, const std::string& host, std::uint16_t port, HandshakeResult done,
                          std::chrono::milliseconds timeout = kHandshakeTimeout);

// Blocking variant: runs `io` until the handshake settles, so `io` must not
// be running elsewhere. The connection keeps reading once `io` runs again;
// set its handler before that.
struct Connected {
    std::shared_ptr<FrameConnection> conn;
    wire::DeviceSpec spec;
};
Connected connect_device(asio::io_context& io, const std::string& host, std::uint16_t port,
                         std::chrono::milliseconds timeout = kHandshakeTimeout);

} // namespace mtask::net
