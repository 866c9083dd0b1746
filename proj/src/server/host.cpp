#include "mtask/server/host.hpp"

#include "mtask/net.hpp"
#include "mtask/server/apps.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/spdlog.h>

#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <sstream>
#include <thread>

namespace mtask::server {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace pt = boost::property_tree;
using tcp = asio::ip::tcp;
using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;
using Reply = std::function<void(Response)>;

// ---- config

namespace {

template <class T>
T read_number(const pt::ptree& sec, const std::string& section, const std::string& key, T lo, T hi)
{
    std::string raw = sec.get<std::string>(key);
    try {
        std::size_t used = 0;
        long long v = std::stoll(raw, &used);
        if (used != raw.size() || v < static_cast<long long>(lo) || v > static_cast<long long>(hi)) throw std::out_of_range(raw);
        return static_cast<T>(v);
    } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": expected a number in " + std::to_string(lo) + ".." +
                          std::to_string(hi) + ", got '" + raw + "'");
    }
}

bool read_bool(const pt::ptree& sec, const std::string& section, const std::string& key)
{
    std::string raw = sec.get<std::string>(key);
    if (raw == "true" || raw == "yes" || raw == "1" || raw == "on") return true;
    if (raw == "false" || raw == "no" || raw == "0" || raw == "off") return false;
    throw ConfigError("[" + section + "] " + key + ": expected true or false, got '" + raw + "'");
}

void only_keys(const pt::ptree& sec, const std::string& section, const std::set<std::string>& allowed)
{
    for (const auto& [key, v] : sec)
        if (!allowed.count(key)) throw ConfigError("[" + section + "] unknown key '" + key + "'");
}

} // namespace

HostConfig parse_config(const std::string& text)
{
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    HostConfig cfg;
    for (const auto& [name, sec] : tree) {
        if (sec.empty() && !sec.data().empty()) throw ConfigError("config: key '" + name + "' outside a section");
        if (name == "server") {
            only_keys(sec, name, {"bind", "port", "static_dir", "handshake_timeout_ms", "keepalive_ms", "state_poll_ms"});
            cfg.bind = sec.get("bind", cfg.bind);
            if (sec.count("port")) cfg.port = read_number<std::uint16_t>(sec, name, "port", 0, 65535);
            cfg.static_dir = sec.get("static_dir", cfg.static_dir);
            if (sec.count("handshake_timeout_ms"))
                cfg.handshake_timeout = std::chrono::milliseconds(read_number<int>(sec, name, "handshake_timeout_ms", 1, 600000));
            if (sec.count("keepalive_ms")) cfg.keepalive = std::chrono::milliseconds(read_number<int>(sec, name, "keepalive_ms", 1, 3600000));
            if (sec.count("state_poll_ms")) cfg.state_poll = std::chrono::milliseconds(read_number<int>(sec, name, "state_poll_ms", 0, 60000));
        } else if (name == "simulator") {
            only_keys(sec, name, {"autostart", "port", "control_port", "arena", "clock", "cycle_ms"});
            auto& s = cfg.simulator;
            if (sec.count("autostart")) s.autostart = read_bool(sec, name, "autostart");
            if (sec.count("port")) s.port = read_number<std::uint16_t>(sec, name, "port", 0, 65535);
            if (sec.count("control_port")) s.control_port = read_number<std::uint16_t>(sec, name, "control_port", 0, 65535);
            if (sec.count("arena")) s.arena = read_number<std::size_t>(sec, name, "arena", 16, 1 << 20);
            if (sec.count("cycle_ms")) s.cycle = std::chrono::milliseconds(read_number<int>(sec, name, "cycle_ms", 1, 10000));
            if (sec.count("clock")) {
                std::string c = sec.get<std::string>("clock");
                if (c == "real" || c == "realtime")
                    s.clock = device::ClockMode::Realtime;
                else if (c == "virtual")
                    s.clock = device::ClockMode::Virtual;
                else
                    throw ConfigError("[simulator] clock: expected real or virtual, got '" + c + "'");
            }
        } else if (name.rfind("device:", 0) == 0 && name.size() > 7) {
            only_keys(sec, name, {"host", "port", "control_port"});
            DevicePreset p;
            p.name = name.substr(7);
            p.host = sec.get("host", p.host);
            if (!sec.count("port")) throw ConfigError("[" + name + "] port is required");
            p.port = read_number<std::uint16_t>(sec, name, "port", 1, 65535);
            if (sec.count("control_port")) p.control_port = read_number<std::uint16_t>(sec, name, "control_port", 1, 65535);
            cfg.presets.push_back(p);
        } else {
            throw ConfigError("config: unknown section [" + name + "]");
        }
    }
    return cfg;
}

HostConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---- helpers

namespace {

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;
};

// one line-delimited JSON command on a simulator control port
void control_request(asio::io_context& io, const Endpoint& ep, const Json& cmd,
                     std::function<void(std::optional<Json>, std::string)> done)
{
    struct Op {
        Op(asio::io_context& io) : resolver(io), socket(io), timer(io) {}
        tcp::resolver resolver;
        tcp::socket socket;
        asio::steady_timer timer;
        asio::streambuf buf;
        std::string out;
        std::function<void(std::optional<Json>, std::string)> done;
        bool finished = false;

        void finish(std::optional<Json> j, std::string err)
        {
            if (finished) return;
            finished = true;
            timer.cancel();
            boost::system::error_code ec;
            socket.close(ec);
            done(std::move(j), std::move(err));
        }
    };
    auto op = std::make_shared<Op>(io);
    op->out = cmd.dump() + "\n";
    op->done = std::move(done);
    op->timer.expires_after(std::chrono::seconds(2));
    op->timer.async_wait([op](boost::system::error_code ec) {
        if (!ec) op->finish(std::nullopt, "control port timed out");
    });
    op->resolver.async_resolve(ep.host, std::to_string(ep.port), [op](boost::system::error_code ec, tcp::resolver::results_type r) {
        if (ec) return op->finish(std::nullopt, ec.message());
        asio::async_connect(op->socket, r, [op](boost::system::error_code ec, const tcp::endpoint&) {
            if (ec) return op->finish(std::nullopt, ec.message());
            asio::async_write(op->socket, asio::buffer(op->out), [op](boost::system::error_code ec, std::size_t) {
                if (ec) return op->finish(std::nullopt, ec.message());
                asio::async_read_until(op->socket, op->buf, '\n', [op](boost::system::error_code ec, std::size_t n) {
                    if (ec) return op->finish(std::nullopt, ec.message());
                    std::string line(asio::buffers_begin(op->buf.data()), asio::buffers_begin(op->buf.data()) + static_cast<std::ptrdiff_t>(n));
                    try {
                        op->finish(Json::parse(line), "");
                    } catch (const Json::exception& e) {
                        op->finish(std::nullopt, e.what());
                    }
                });
            });
        });
    });
}

Response json_response(const Request& req, http::status st, const Json& body)
{
    Response res{st, req.version()};
    res.set(http::field::content_type, "application/json");
    res.keep_alive(req.keep_alive());
    res.body() = body.dump();
    res.prepare_payload();
    return res;
}

Response error_response(const Request& req, http::status st, const std::string& kind, const std::string& message)
{
    return json_response(req, st, {{"error", kind}, {"message", message}});
}

std::string percent_decode(const std::string& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
            std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out.push_back(static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16)));
            i += 2;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

bool empty_delta(const Json& d)
{
    return d["taskValues"].empty() && d["removed"].empty() && d["sdsValues"].empty() && !d.contains("devices") &&
           d["matrixFrame"].empty() && d["pinStates"].empty();
}

const char* mime_of(const std::filesystem::path& p)
{
    auto ext = p.extension().string();
    if (ext == ".html") return "text/html";
    if (ext == ".js") return "application/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    return "application/octet-stream";
}

class BadRequest : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

Json body_of(const Request& req)
{
    try {
        Json j = Json::parse(req.body());
        if (!j.is_object()) throw BadRequest("request body must be a JSON object");
        return j;
    } catch (const Json::exception& e) {
        throw BadRequest(std::string("bad JSON: ") + e.what());
    }
}

template <class T>
T field(const Json& j, const char* name)
{
    if (!j.contains(name)) throw BadRequest(std::string("missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const Json::exception&) {
        throw BadRequest(std::string("field '") + name + "' has the wrong type");
    }
}

} // namespace

// ---- host

class WsSession;

struct Host::Impl {
    explicit Impl(HostConfig c) : cfg(std::move(c)), acceptor(io) {}

    HostConfig cfg;
    asio::io_context io;
    tcp::acceptor acceptor;
    Engine eng;
    std::unique_ptr<device::Simulator> sim;
    std::thread thread;
    std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
    std::vector<std::weak_ptr<WsSession>> sockets;
    std::map<int, Endpoint> controls;
    std::uint16_t bound_port = 0;
    bool running = false;

    void accept();
    void pump();
    void broadcast(const std::string& text);
    void route(const Request& req, const Reply& reply);
    void route_api(const Request& req, const std::string& path, const Reply& reply);
    void serve_static(const Request& req, const std::string& path, const Reply& reply);
    void connect(const std::string& host, std::uint16_t port, std::optional<Endpoint> control, std::string name,
                 std::function<void(std::exception_ptr, int)> done);
    void connect_for_engine(std::uint64_t request, const ConnectSpec& where);
};

namespace {

struct LinkState {
    Host::Impl* host = nullptr;
    std::shared_ptr<net::FrameConnection> conn;
    asio::steady_timer keepalive;
    asio::steady_timer poll;
    int device = -1;
    std::deque<wire::Message> early;
    std::chrono::steady_clock::time_point last_rx = std::chrono::steady_clock::now();
    std::optional<Endpoint> control;
    bool closed = false;
    bool polling = false;

    LinkState(asio::io_context& io) : keepalive(io), poll(io) {}
};

void deliver(const std::shared_ptr<LinkState>& st, const wire::Message& m);

void arm_keepalive(const std::shared_ptr<LinkState>& st)
{
    auto period = st->host->cfg.keepalive;
    st->keepalive.expires_after(period);
    st->keepalive.async_wait([st, period](boost::system::error_code ec) {
        if (ec || st->closed) return;
        auto silent = std::chrono::steady_clock::now() - st->last_rx;
        if (silent >= 3 * period) {
            st->conn->close("keepalive timeout");
            return;
        }
        if (silent >= period) st->conn->send(wire::Ping{});
        arm_keepalive(st);
    });
}

void arm_poll(const std::shared_ptr<LinkState>& st)
{
    auto period = st->host->cfg.state_poll;
    if (!st->control || period.count() == 0) return;
    st->poll.expires_after(period);
    st->poll.async_wait([st](boost::system::error_code ec) {
        if (ec || st->closed) return;
        if (!st->polling) {
            st->polling = true;
            control_request(st->host->io, *st->control, {{"cmd", "snapshot"}}, [st](std::optional<Json> r, std::string) {
                st->polling = false;
                if (st->closed || !r || !r->value("ok", false)) return;
                const Json& s = (*r)["snapshot"];
                Json state = {{"analog", s["analog"]},
                              {"digital", s["digital"]},
                              {"temperature", s["temperature"]},
                              {"humidity", s["humidity"]},
                              {"matrix", s["matrix"]}};
                st->host->eng.submit(DeviceState{st->device, state});
                st->host->pump();
            });
        }
        arm_poll(st);
    });
}

class TcpLink : public DeviceLink {
public:
    explicit TcpLink(std::shared_ptr<LinkState> st) : st_(std::move(st)) {}

    void send(const wire::Message& m) override
    {
        if (!st_->closed) st_->conn->send(m);
    }

    void close() override
    {
        if (st_->closed) return;
        st_->closed = true;
        st_->keepalive.cancel();
        st_->poll.cancel();
        st_->conn->close("session ended");
    }

    void attached(int device) override
    {
        st_->device = device;
        if (st_->control) st_->host->controls[device] = *st_->control;
        auto early = std::move(st_->early);
        for (const auto& m : early) deliver(st_, m);
        arm_keepalive(st_);
        arm_poll(st_);
    }

private:
    std::shared_ptr<LinkState> st_;
};

void deliver(const std::shared_ptr<LinkState>& st, const wire::Message& m)
{
    st->host->eng.submit(DeviceMessage{st->device, m});
    st->host->pump();
}

std::unique_ptr<TcpLink> make_link(Host::Impl* host, std::shared_ptr<net::FrameConnection> conn, std::optional<Endpoint> control)
{
    auto st = std::make_shared<LinkState>(host->io);
    st->host = host;
    st->conn = conn;
    st->control = std::move(control);
    conn->set_handler([st](const wire::Message& m) {
        st->last_rx = std::chrono::steady_clock::now();
        if (st->device < 0)
            st->early.push_back(m);
        else
            deliver(st, m);
    });
    conn->set_close_handler([st](const std::string& reason) {
        st->keepalive.cancel();
        st->poll.cancel();
        bool local = st->closed;
        st->closed = true;
        if (st->device < 0 || local) return;
        st->host->eng.submit(DeviceClosed{st->device, reason});
        st->host->pump();
    });
    return std::make_unique<TcpLink>(st);
}

std::pair<http::status, std::string> classify(std::exception_ptr e, std::string& message)
{
    try {
        std::rethrow_exception(e);
    } catch (const wire::VersionMismatch& x) {
        message = x.what();
        return {http::status::bad_gateway, "VersionMismatch"};
    } catch (const wire::HandshakeTimeout& x) {
        message = x.what();
        return {http::status::gateway_timeout, "HandshakeTimeout"};
    } catch (const std::exception& x) {
        message = x.what();
        return {http::status::bad_gateway, "ConnectFailed"};
    }
}

} // namespace

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket s, Host::Impl& host) : ws_(std::move(s)), host_(host) {}

    void run(Request req)
    {
        ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
            if (ec) return;
            Json full = self->host_.eng.full_state();
            full["type"] = "full";
            self->send(full.dump());
            self->host_.sockets.push_back(self);
            self->read();
        });
    }

    void send(std::string text)
    {
        out_.push_back(std::move(text));
        if (out_.size() == 1) write_next();
    }

    void close()
    {
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

private:
    void read()
    {
        ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return;
            self->in_.consume(self->in_.size());
            self->read();
        });
    }

    void write_next()
    {
        ws_.text(true);
        ws_.async_write(asio::buffer(out_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                self->out_.clear();
                return;
            }
            self->out_.pop_front();
            if (!self->out_.empty()) self->write_next();
        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    Host::Impl& host_;
    beast::flat_buffer in_;
    std::deque<std::string> out_;
};

namespace {

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket s, Host::Impl& host) : stream_(std::move(s)), host_(host) {}

    void read()
    {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(60));
        http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) {
                beast::error_code ignored;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                return;
            }
            self->dispatch();
        });
    }

private:
    void dispatch()
    {
        if (websocket::is_upgrade(req_)) {
            if (std::string(req_.target()) == "/ws") {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), host_)->run(std::move(req_));
                return;
            }
        }
        host_.route(req_, [self = shared_from_this()](Response res) { self->write(std::move(res)); });
    }

    void write(Response res)
    {
        auto sp = std::make_shared<Response>(std::move(res));
        http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (sp->need_eof()) {
                beast::error_code ignored;
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                return;
            }
            self->read();
        });
    }

    beast::tcp_stream stream_;
    Host::Impl& host_;
    beast::flat_buffer buf_;
    Request req_;
};

} // namespace

void Host::Impl::accept()
{
    acceptor.async_accept([this](boost::system::error_code ec, tcp::socket s) {
        if (ec) return;
        std::make_shared<HttpSession>(std::move(s), *this)->read();
        accept();
    });
}

void Host::Impl::broadcast(const std::string& text)
{
    std::vector<std::weak_ptr<WsSession>> alive;
    for (auto& w : sockets)
        if (auto s = w.lock()) {
            s->send(text);
            alive.push_back(w);
        }
    sockets = std::move(alive);
}

void Host::Impl::pump()
{
    auto push = [&] {
        Json d = eng.take_delta();
        if (empty_delta(d)) return;
        d["type"] = "delta";
        broadcast(d.dump());
    };
    push();
    while (eng.tick()) push();
}

void Host::Impl::connect(const std::string& host, std::uint16_t port, std::optional<Endpoint> control, std::string name,
                         std::function<void(std::exception_ptr, int)> done)
{
    net::async_connect_device(
        io, host, port,
        [this, control, name, done](std::exception_ptr err, std::shared_ptr<net::FrameConnection> conn, wire::DeviceSpec spec) {
            if (err) return done(err, -1);
            int id = eng.add_device(make_link(this, conn, control), spec, name);
            spdlog::info("host: device {} connected ({})", id, name);
            pump();
            done(nullptr, id);
        },
        cfg.handshake_timeout);
}

void Host::Impl::connect_for_engine(std::uint64_t request, const ConnectSpec& where)
{
    std::optional<Endpoint> control;
    for (const auto& p : cfg.presets)
        if (p.host == where.host && p.port == where.port && p.control_port) control = Endpoint{p.host, *p.control_port};
    net::async_connect_device(
        io, where.host, where.port,
        [this, request, control](std::exception_ptr err, std::shared_ptr<net::FrameConnection> conn, wire::DeviceSpec spec) {
            auto r = std::make_shared<ConnectResult>();
            r->request = request;
            if (err) {
                auto [status, kind] = classify(err, r->error);
                r->error_kind = kind;
            } else {
                r->link = make_link(this, conn, control);
                r->spec = spec;
            }
            eng.submit(r);
            pump();
        },
        cfg.handshake_timeout);
}

void Host::Impl::route(const Request& req, const Reply& reply)
{
    std::string target(req.target());
    std::string path = target.substr(0, target.find('?'));
    try {
        if (path.rfind("/api/", 0) == 0) {
            route_api(req, path, reply);
        } else if (req.method() == http::verb::get) {
            serve_static(req, path, reply);
        } else {
            reply(error_response(req, http::status::not_found, "NotFound", "no route " + path));
        }
    } catch (const BadRequest& e) {
        reply(error_response(req, http::status::bad_request, "BadRequest", e.what()));
    } catch (const UnknownPath& e) {
        reply(error_response(req, http::status::not_found, "UnknownPath", e.what()));
    } catch (const UnknownKey& e) {
        reply(error_response(req, http::status::not_found, "UnknownKey", e.what()));
    } catch (const UnknownDevice& e) {
        reply(error_response(req, http::status::not_found, "UnknownDevice", e.what()));
    } catch (const apps::UnknownApp& e) {
        reply(error_response(req, http::status::not_found, "UnknownApp", e.what()));
    } catch (const SchemaViolation& e) {
        reply(error_response(req, http::status::unprocessable_entity, "SchemaViolation", e.what()));
    } catch (const ActionDisabled& e) {
        reply(error_response(req, http::status::conflict, "ActionDisabled", e.what()));
    } catch (const std::exception& e) {
        spdlog::error("host: {} {} failed: {}", std::string(req.method_string()), path, e.what());
        reply(error_response(req, http::status::internal_server_error, "Internal", e.what()));
    }
}

void Host::Impl::route_api(const Request& req, const std::string& path, const Reply& reply)
{
    auto method = req.method();
    auto ok = [&](const Json& j, http::status st = http::status::ok) { reply(json_response(req, st, j)); };
    auto rest = [&](const std::string& prefix) { return percent_decode(path.substr(prefix.size())); };
    auto device_id = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            int id = std::stoi(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return id;
        } catch (const std::exception&) {
            throw UnknownDevice("no device '" + s + "'");
        }
    };

    if (path == "/api/devices" && method == http::verb::get) return ok(eng.devices_json());
    if (path == "/api/presets" && method == http::verb::get) {
        Json out = Json::array();
        for (const auto& p : cfg.presets) {
            Json j = {{"name", p.name}, {"host", p.host}, {"port", p.port}};
            if (p.control_port) j["controlPort"] = *p.control_port;
            out.push_back(j);
        }
        return ok(out);
    }
    if (path == "/api/devices" && method == http::verb::post) {
        Json b = body_of(req);
        std::string host;
        std::uint16_t port = 0;
        std::optional<Endpoint> control;
        std::string name;
        if (b.contains("preset")) {
            auto want = field<std::string>(b, "preset");
            auto it = std::find_if(cfg.presets.begin(), cfg.presets.end(), [&](const DevicePreset& p) { return p.name == want; });
            if (it == cfg.presets.end()) throw UnknownDevice("no preset '" + want + "'");
            host = it->host;
            port = it->port;
            if (it->control_port) control = Endpoint{host, *it->control_port};
            name = it->name;
        } else {
            host = field<std::string>(b, "host");
            port = field<std::uint16_t>(b, "port");
            if (b.contains("controlPort")) control = Endpoint{host, field<std::uint16_t>(b, "controlPort")};
            name = b.value("name", host + ":" + std::to_string(port));
        }
        connect(host, port, control, name, [this, req, reply](std::exception_ptr err, int id) {
            if (err) {
                std::string msg;
                auto [status, kind] = classify(err, msg);
                return reply(error_response(req, status, kind, msg));
            }
            for (const auto& d : eng.devices_json())
                if (d["id"] == id) return reply(json_response(req, http::status::created, d));
        });
        return;
    }
    if (path.rfind("/api/devices/", 0) == 0) {
        std::string tail = rest("/api/devices/");
        auto slash = tail.find('/');
        int id = device_id(tail.substr(0, slash));
        if (!eng.session(id)) throw UnknownDevice("no device " + std::to_string(id));
        if (slash == std::string::npos && method == http::verb::delete_) {
            eng.end_session(id);
            pump();
            return ok({{"ok", true}});
        }
        if (tail.substr(slash == std::string::npos ? tail.size() : slash) == "/input" && method == http::verb::post) {
            Json b = body_of(req);
            auto it = controls.find(id);
            if (it == controls.end()) throw BadRequest("device " + std::to_string(id) + " has no control port");
            Json cmd = {{"cmd", "set_input"}, {"input", field<std::string>(b, "input")}, {"pin", b.value("pin", 0)}, {"value", b.at("value")}};
            control_request(io, it->second, cmd, [req, reply](std::optional<Json> r, std::string err) {
                if (!r) return reply(error_response(req, http::status::bad_gateway, "ControlFailed", err));
                if (!r->value("ok", false))
                    return reply(error_response(req, http::status::unprocessable_entity, r->value("error", "ControlFailed"),
                                                r->value("message", "")));
                reply(json_response(req, http::status::ok, *r));
            });
            return;
        }
        return reply(error_response(req, http::status::not_found, "NotFound", "no route " + path));
    }
    if (path == "/api/apps" && method == http::verb::get) return ok(apps::names());
    if (path == "/api/tasks" && method == http::verb::get) return ok(eng.forest());
    if (path == "/api/tasks" && method == http::verb::post) {
        Json b = body_of(req);
        auto app = field<std::string>(b, "app");
        int dev = field<int>(b, "device");
        apps::make(app, DeviceRef{dev});
        if (!eng.session(dev)) throw UnknownDevice("no device " + std::to_string(dev));
        int id = eng.spawn(with_device(DeviceRef{dev}, [app](DeviceRef d) { return apps::make(app, d); }), app);
        pump();
        Json out = {{"id", id}, {"path", "/" + std::to_string(id)}};
        if (auto e = eng.error(id)) out["error"] = *e;
        return ok(out, http::status::created);
    }
    if (path.rfind("/api/tasks/", 0) == 0 && method == http::verb::delete_) {
        std::string s = rest("/api/tasks/");
        int id = -1;
        try {
            id = std::stoi(s);
        } catch (const std::exception&) {
            throw UnknownPath("no task '" + s + "'");
        }
        eng.remove(id);
        pump();
        return ok({{"ok", true}});
    }
    if (path.rfind("/api/editor/", 0) == 0 && method == http::verb::post) {
        Json b = body_of(req);
        if (!b.contains("value")) throw BadRequest("missing field 'value'");
        eng.edit("/" + rest("/api/editor/"), b["value"]);
        pump();
        return ok({{"ok", true}});
    }
    if (path.rfind("/api/action/", 0) == 0 && method == http::verb::post) {
        Json b = body_of(req);
        eng.action("/" + rest("/api/action/"), field<std::string>(b, "action"));
        pump();
        return ok({{"ok", true}});
    }
    if (path == "/api/sds" && method == http::verb::get) return ok(eng.sds_all());
    if (path.rfind("/api/sds/", 0) == 0 && method == http::verb::post) {
        Json b = body_of(req);
        if (!b.contains("value")) throw BadRequest("missing field 'value'");
        std::string key = rest("/api/sds/");
        eng.write(key, b["value"]);
        pump();
        return ok({{"key", key}, {"value", eng.sds_get(key)}});
    }
    if (path == "/api/state" && method == http::verb::get) return ok(eng.full_state());
    reply(error_response(req, http::status::not_found, "NotFound", "no route " + std::string(req.method_string()) + " " + path));
}

void Host::Impl::serve_static(const Request& req, const std::string& path, const Reply& reply)
{
    if (cfg.static_dir.empty() || path.find("..") != std::string::npos)
        return reply(error_response(req, http::status::not_found, "NotFound", "no route " + path));
    std::filesystem::path file = std::filesystem::path(cfg.static_dir) / (path == "/" ? "index.html" : path.substr(1));
    std::ifstream in(file, std::ios::binary);
    if (!in) return reply(error_response(req, http::status::not_found, "NotFound", "no file " + path));
    std::stringstream ss;
    ss << in.rdbuf();
    Response res{http::status::ok, req.version()};
    res.set(http::field::content_type, mime_of(file));
    res.keep_alive(req.keep_alive());
    res.body() = ss.str();
    res.prepare_payload();
    reply(std::move(res));
}

Host::Host(HostConfig cfg) : impl_(std::make_shared<Impl>(std::move(cfg)))
{
    impl_->eng.set_connector([impl = impl_.get()](std::uint64_t req, const ConnectSpec& where) { impl->connect_for_engine(req, where); });
}

Host::~Host() { stop(); }

void Host::start()
{
    auto& im = *impl_;
    if (im.running) return;
    tcp::endpoint ep(asio::ip::make_address(im.cfg.bind), im.cfg.port);
    im.acceptor.open(ep.protocol());
    im.acceptor.set_option(asio::socket_base::reuse_address(true));
    boost::system::error_code ec;
    im.acceptor.bind(ep, ec);
    if (ec) {
        im.acceptor.close();
        throw device::PortInUse("cannot bind " + im.cfg.bind + ":" + std::to_string(im.cfg.port) + ": " + ec.message());
    }
    im.acceptor.listen();
    im.bound_port = im.acceptor.local_endpoint().port();
    im.accept();

    if (im.cfg.simulator.autostart) {
        device::SimConfig sc;
        sc.port = im.cfg.simulator.port;
        sc.control_port = im.cfg.simulator.control_port;
        sc.arena = im.cfg.simulator.arena;
        sc.clock = im.cfg.simulator.clock;
        sc.cycle = im.cfg.simulator.cycle;
        im.sim = std::make_unique<device::Simulator>(sc);
        im.sim->start();
    }

    im.work.emplace(asio::make_work_guard(im.io));
    im.thread = std::thread([&im] { im.io.run(); });
    im.running = true;
    spdlog::info("host: listening on {}:{}", im.cfg.bind, im.bound_port);

    if (im.sim) {
        std::promise<void> done;
        asio::post(im.io, [&] {
            im.connect("127.0.0.1", im.sim->port(), Endpoint{"127.0.0.1", *im.sim->control_port()}, "simulator",
                       [&](std::exception_ptr err, int) {
                           if (err)
                               done.set_exception(err);
                           else
                               done.set_value();
                       });
        });
        try {
            done.get_future().get();
        } catch (...) {
            stop();
            throw;
        }
    }
}

void Host::stop()
{
    auto& im = *impl_;
    if (!im.running) return;
    im.running = false;
    std::promise<void> done;
    asio::post(im.io, [&] {
        boost::system::error_code ec;
        im.acceptor.close(ec);
        // DelTask for everything still on a device before the links go down
        for (int t : im.eng.tops()) im.eng.remove(t);
        for (const auto& d : im.eng.devices())
            if (d.connected) im.eng.end_session(d.id);
        for (auto& w : im.sockets)
            if (auto s = w.lock()) s->close();
        im.sockets.clear();
        done.set_value();
    });
    done.get_future().get();
    // let the queued DelTask frames drain
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(500);
    im.work.reset();
    while (std::chrono::steady_clock::now() < deadline && !im.io.stopped()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    im.io.stop();
    if (im.thread.joinable()) im.thread.join();
    if (im.sim) im.sim->stop();
}

std::uint16_t Host::port() const { return impl_->bound_port; }

device::Simulator* Host::simulator() { return impl_->sim.get(); }

void Host::with_engine(const std::function<void(Engine&)>& f)
{
    auto& im = *impl_;
    if (!im.running) {
        f(im.eng);
        return;
    }
    std::promise<void> done;
    asio::post(im.io, [&] {
        try {
            f(im.eng);
            im.pump();
            done.set_value();
        } catch (...) {
            done.set_exception(std::current_exception());
        }
    });
    done.get_future().get();
}

} // namespace mtask::server
