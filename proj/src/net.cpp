#include "mtask/net.hpp"

namespace mtask::net {

FrameConnection::FrameConnection(tcp::socket socket) : socket_(std::move(socket))
{
    boost::system::error_code ec;
    auto ep = socket_.remote_endpoint(ec);
    if (!ec) peer_ = ep.address().to_string() + ":" + std::to_string(ep.port());
    socket_.set_option(tcp::no_delay(true), ec);
}

void FrameConnection::start(MessageHandler on_message, CloseHandler on_close)
{
    on_message_ = std::move(on_message);
    on_close_ = std::move(on_close);
    asio::post(socket_.get_executor(), [self = shared_from_this()] { self->read_more(); });
}

void FrameConnection::set_handler(MessageHandler on_message) { on_message_ = std::move(on_message); }

void FrameConnection::read_more()
{
    if (!open_) return;
    socket_.async_read_some(asio::buffer(buf_), [self = shared_from_this()](boost::system::error_code ec, std::size_t n) {
        if (ec) {
            self->shutdown(ec == asio::error::eof ? "peer closed" : ec.message());
            return;
        }
        self->reader_.feed(self->buf_.data(), n);
        while (self->open_) {
            auto m = self->reader_.next();
            if (!m) break;
            if (self->log_) self->log_(false, *m);
            // the handler may replace itself
            if (auto h = self->on_message_) h(*m);
        }
        if (self->reader_.failed()) {
            self->shutdown(std::string("framing error: ") + wire::to_string(self->reader_.error()));
            return;
        }
        self->read_more();
    });
}

void FrameConnection::set_close_handler(CloseHandler on_close) { on_close_ = std::move(on_close); }

void FrameConnection::send(const wire::Message& m)
{
    auto bytes = wire::frame_encode(m);
    asio::post(socket_.get_executor(), [self = shared_from_this(), m, bytes = std::move(bytes)]() mutable {
        if (!self->open_) return;
        if (self->log_) self->log_(true, m);
        self->queue_.push_back(std::move(bytes));
        if (!self->writing_) self->write_next();
    });
}

void FrameConnection::write_next()
{
    if (queue_.empty() || !open_) {
        writing_ = false;
        if (closing_) shutdown(close_reason_);
        return;
    }
    writing_ = true;
    asio::async_write(socket_, asio::buffer(queue_.front()), [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
        if (ec || !self->open_) {
            self->writing_ = false;
            self->queue_.clear();
            if (ec) self->shutdown(ec.message());
            return;
        }
        self->queue_.pop_front();
        self->write_next();
    });
}

void FrameConnection::close(const std::string& reason)
{
    asio::post(socket_.get_executor(), [self = shared_from_this(), reason] {
        // queued frames go out first
        self->close_reason_ = reason;
        self->closing_ = true;
        if (!self->writing_) self->shutdown(reason);
    });
}

void FrameConnection::shutdown(const std::string& reason)
{
    if (!open_) return;
    open_ = false;
    boost::system::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
    // an in-flight write still points into the front buffer
    if (!writing_) queue_.clear();
    if (on_close_) {
        auto cb = std::move(on_close_);
        cb(reason);
    }
    on_message_ = nullptr;
}

namespace {

struct Handshake : std::enable_shared_from_this<Handshake> {
    Handshake(asio::io_context& io, HandshakeResult done) : resolver(io), socket(io), timer(io), done(std::move(done)) {}

    tcp::resolver resolver;
    tcp::socket socket;
    asio::steady_timer timer;
    HandshakeResult done;
    std::shared_ptr<FrameConnection> conn;
    bool finished = false;

    void finish(std::exception_ptr err, wire::DeviceSpec spec = {})
    {
        if (finished) return;
        finished = true;
        timer.cancel();
        if (err) {
            boost::system::error_code ec;
            socket.close(ec);
            if (conn) conn->close("handshake failed");
            done(err, nullptr, {});
        } else {
            done(nullptr, conn, spec);
        }
    }
};

} // namespace

void async_connect_device(asio::io_context& io, const std::string& host, std::uint16_t port, HandshakeResult done,
                          std::chrono::milliseconds timeout)
{
    auto hs = std::make_shared<Handshake>(io, std::move(done));
    std::string where = host + ":" + std::to_string(port);
    hs->timer.expires_after(timeout);
    hs->timer.async_wait([hs, where, timeout](boost::system::error_code ec) {
        if (ec) return;
        hs->finish(std::make_exception_ptr(
            wire::HandshakeTimeout("no Hello from " + where + " within " + std::to_string(timeout.count()) + " ms")));
    });
    hs->resolver.async_resolve(host, std::to_string(port), [hs, where](boost::system::error_code ec, tcp::resolver::results_type r) {
        if (hs->finished) return;
        if (ec) {
            hs->finish(std::make_exception_ptr(ConnectFailed("resolve " + where + ": " + ec.message())));
            return;
        }
        asio::async_connect(hs->socket, r, [hs, where](boost::system::error_code ec, const tcp::endpoint&) {
            if (hs->finished) return;
            if (ec) {
                hs->finish(std::make_exception_ptr(ConnectFailed("connect " + where + ": " + ec.message())));
                return;
            }
            hs->conn = std::make_shared<FrameConnection>(std::move(hs->socket));
            hs->conn->start(
                [hs](const wire::Message& first) {
                    hs->conn->set_handler(nullptr);
                    try {
                        auto spec = wire::accept_hello(first);
                        hs->finish(nullptr, spec);
                    } catch (...) {
                        hs->finish(std::current_exception());
                    }
                },
                [hs, where](const std::string& reason) {
                    hs->finish(std::make_exception_ptr(ConnectFailed(where + " closed during handshake: " + reason)));
                });
        });
    });
}

Connected connect_device(asio::io_context& io, const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout)
{
    std::exception_ptr err;
    Connected out;
    bool settled = false;
    async_connect_device(
        io, host, port,
        [&](std::exception_ptr e, std::shared_ptr<FrameConnection> c, wire::DeviceSpec spec) {
            err = e;
            out.conn = std::move(c);
            out.spec = spec;
            settled = true;
        },
        timeout);
    io.restart();
    while (!settled && io.run_one() > 0) {
    }
    if (err) std::rethrow_exception(err);
    if (!settled) throw ConnectFailed("event loop stopped during handshake");
    return out;
}

} // namespace mtask::net
