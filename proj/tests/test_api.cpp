#include "mtask/server/host.hpp"

#include "mtask/net.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

#include <thread>

using namespace mtask;
using namespace mtask::server;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

struct Result {
    int status = 0;
    Json body;
};

Result call(std::uint16_t port, http::verb verb, const std::string& target, const std::optional<Json>& body = std::nullopt)
{
    asio::io_context io;
    beast::tcp_stream stream(io);
    stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    http::request<http::string_body> req{verb, target, 11};
    req.set(http::field::host, "127.0.0.1");
    if (body) {
        req.set(http::field::content_type, "application/json");
        req.body() = body->dump();
    }
    req.prepare_payload();
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_both, ec);
    Result r{static_cast<int>(res.result_int()), Json()};
    if (!res.body().empty()) r.body = Json::parse(res.body(), nullptr, false);
    return r;
}

Result get(std::uint16_t port, const std::string& target) { return call(port, http::verb::get, target); }
Result post(std::uint16_t port, const std::string& target, const Json& body)
{
    return call(port, http::verb::post, target, std::optional<Json>(std::in_place, body));
}

bool eventually(const std::function<bool()>& pred, std::chrono::milliseconds limit = std::chrono::milliseconds(3000))
{
    auto end = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < end) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

std::optional<Json> find_node(const Json& n, const std::function<bool(const Json&)>& pred)
{
    if (pred(n)) return std::optional<Json>(std::in_place, n);
    for (const auto& c : n.value("children", Json::array()))
        if (auto r = find_node(c, pred)) return r;
    return std::nullopt;
}

Json find_in_forest(std::uint16_t port, const std::function<bool(const Json&)>& pred)
{
    for (const auto& t : get(port, "/api/tasks").body)
        if (auto r = find_node(t, pred)) return *r;
    ADD_FAILURE() << "node not found";
    return {};
}

Json editor(std::uint16_t port, const std::string& prompt)
{
    return find_in_forest(port, [&](const Json& n) { return n["kind"] == "editor" && n["prompt"] == prompt; });
}

HostConfig sim_config()
{
    HostConfig cfg;
    cfg.port = 0;
    cfg.state_poll = std::chrono::milliseconds(20);
    cfg.simulator.autostart = true;
    cfg.simulator.clock = device::ClockMode::Virtual;
    return cfg;
}

std::vector<PinWrite> pin_writes(Host& host, Pin p)
{
    std::vector<PinWrite> out;
    host.simulator()->run_in_loop([&](device::DeviceRuntime& rt) {
        for (const auto& w : rt.pin_writes())
            if (w.pin == p) out.push_back(w);
    });
    return out;
}

std::size_t device_tasks(Host& host)
{
    std::size_t n = 0;
    host.simulator()->run_in_loop([&](device::DeviceRuntime& rt) { n = rt.vm().task_ids().size(); });
    return n;
}

class WsClient {
public:
    explicit WsClient(std::uint16_t port) : ws_(io_)
    {
        beast::get_lowest_layer(ws_).connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
        ws_.handshake("127.0.0.1", "/ws");
    }

    std::optional<Json> next(std::chrono::milliseconds limit = std::chrono::milliseconds(3000))
    {
        std::optional<Json> out;
        buf_.consume(buf_.size());
        ws_.async_read(buf_, [&](beast::error_code ec, std::size_t) {
            if (!ec) out = Json::parse(beast::buffers_to_string(buf_.data()));
        });
        io_.restart();
        io_.run_for(limit);
        if (!out) {
            beast::get_lowest_layer(ws_).cancel();
            io_.restart();
            io_.run_for(std::chrono::milliseconds(100));
        }
        return out;
    }

    std::optional<Json> until(const std::function<bool(const Json&)>& pred)
    {
        for (int i = 0; i < 100; ++i) {
            auto m = next();
            if (!m) return std::nullopt;
            if (pred(*m)) return m;
        }
        return std::nullopt;
    }

private:
    asio::io_context io_;
    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buf_;
};

} // namespace

// ---- config

TEST(Config, ParsesAllSections)
{
    auto cfg = parse_config(R"(
[server]
bind = 0.0.0.0
port = 9000
static_dir = dashboard/dist
keepalive_ms = 500

[simulator]
autostart = true
port = 8123
control_port = 8124
arena = 2048
clock = virtual

[device:lab]
host = 10.0.0.7
port = 8123
control_port = 8124
)");
    EXPECT_EQ(cfg.bind, "0.0.0.0");
    EXPECT_EQ(cfg.port, 9000);
    EXPECT_EQ(cfg.static_dir, "dashboard/dist");
    EXPECT_EQ(cfg.keepalive.count(), 500);
    EXPECT_TRUE(cfg.simulator.autostart);
    EXPECT_EQ(cfg.simulator.arena, 2048u);
    EXPECT_EQ(cfg.simulator.clock, device::ClockMode::Virtual);
    ASSERT_EQ(cfg.presets.size(), 1u);
    EXPECT_EQ(cfg.presets[0].name, "lab");
    EXPECT_EQ(cfg.presets[0].host, "10.0.0.7");
    EXPECT_EQ(cfg.presets[0].control_port, 8124);
}

TEST(Config, RejectsBadInput)
{
    EXPECT_THROW(parse_config("[server]\nport = 70000\n"), ConfigError);
    EXPECT_THROW(parse_config("[server]\nport = eighty\n"), ConfigError);
    EXPECT_THROW(parse_config("[server]\ncolour = blue\n"), ConfigError);
    EXPECT_THROW(parse_config("[gadgets]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[simulator]\nclock = sundial\n"), ConfigError);
    EXPECT_THROW(parse_config("[simulator]\nautostart = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("[device:x]\nhost = a\n"), ConfigError);
    EXPECT_THROW(parse_config("[server\n"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/topiot.ini"), ConfigError);
    EXPECT_NO_THROW(parse_config(""));
}

// ---- host without devices

TEST(Api, EmptyHost)
{
    HostConfig cfg;
    cfg.port = 0;
    Host host(cfg);
    host.start();
    auto p = host.port();
    auto d = get(p, "/api/devices");
    EXPECT_EQ(d.status, 200);
    EXPECT_EQ(d.body, Json::array());
    EXPECT_EQ(get(p, "/api/tasks").body, Json::array());
    EXPECT_EQ(get(p, "/api/sds").body, Json::object());
    EXPECT_EQ(get(p, "/api/apps").body.size(), 8u);
    EXPECT_EQ(get(p, "/api/nope").status, 404);
    EXPECT_EQ(get(p, "/").status, 404);
    EXPECT_EQ(post(p, "/api/tasks", {{"app", "blink"}, {"device", 3}}).body["error"], "UnknownDevice");
    EXPECT_EQ(post(p, "/api/tasks", {{"app", "nope"}, {"device", 0}}).body["error"], "UnknownApp");
    EXPECT_EQ(post(p, "/api/tasks", {{"device", 0}}).status, 400);
    EXPECT_EQ(call(p, http::verb::post, "/api/editor/0", std::nullopt).status, 400);
    EXPECT_EQ(post(p, "/api/editor/0", {{"value", 1}}).body["error"], "UnknownPath");
    EXPECT_EQ(post(p, "/api/sds/missing", {{"value", 1}}).body["error"], "UnknownKey");
    host.stop();
}

TEST(Api, ConnectErrors)
{
    HostConfig cfg;
    cfg.port = 0;
    cfg.handshake_timeout = std::chrono::milliseconds(300);
    Host host(cfg);
    host.start();
    auto p = host.port();

    std::uint16_t closed = 0;
    {
        asio::io_context io;
        tcp::acceptor a(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
        closed = a.local_endpoint().port();
    }
    auto r = post(p, "/api/devices", {{"host", "127.0.0.1"}, {"port", closed}});
    EXPECT_EQ(r.status, 502);
    EXPECT_EQ(r.body["error"], "ConnectFailed");

    asio::io_context io;
    tcp::acceptor silent(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
    std::thread t([&] {
        tcp::socket s(io);
        silent.accept(s);
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
    });
    r = post(p, "/api/devices", {{"host", "127.0.0.1"}, {"port", silent.local_endpoint().port()}});
    t.join();
    EXPECT_EQ(r.status, 504);
    EXPECT_EQ(r.body["error"], "HandshakeTimeout");

    tcp::acceptor old(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
    std::thread t2([&] {
        tcp::socket s(io);
        old.accept(s);
        wire::DeviceSpec spec;
        spec.version = 2;
        asio::write(s, asio::buffer(wire::frame_encode(wire::Hello{spec})));
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    });
    r = post(p, "/api/devices", {{"host", "127.0.0.1"}, {"port", old.local_endpoint().port()}});
    t2.join();
    EXPECT_EQ(r.status, 502);
    EXPECT_EQ(r.body["error"], "VersionMismatch");

    EXPECT_EQ(get(p, "/api/devices").body, Json::array());
    EXPECT_EQ(post(p, "/api/devices", {{"preset", "nope"}}).status, 404);
    EXPECT_EQ(post(p, "/api/devices", {{"host", "127.0.0.1"}}).status, 400);
    host.stop();
}

// ---- with a simulator

TEST(Api, AutostartListsSimulator)
{
    Host host(sim_config());
    host.start();
    auto d = get(host.port(), "/api/devices").body;
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0]["name"], "simulator");
    EXPECT_TRUE(d[0]["connected"].get<bool>());
    EXPECT_EQ(d[0]["spec"]["arena"], 4096);
    EXPECT_TRUE(d[0]["spec"]["matrix"].get<bool>());
    EXPECT_EQ(get(host.port(), "/api/sds").body["device/0"]["name"], "simulator");
    EXPECT_EQ(post(host.port(), "/api/sds/device/0", {{"value", 1}}).body["error"], "ActionDisabled");
    host.stop();
}

TEST(Api, BlinkInteractiveFlow)
{
    Host host(sim_config());
    host.start();
    auto p = host.port();
    auto sim = host.simulator();

    auto r = post(p, "/api/tasks", {{"app", "blinkInteractive"}, {"device", 0}});
    ASSERT_EQ(r.status, 201) << r.body;
    ASSERT_TRUE(eventually([&] { return device_tasks(host) == 1; }));
    sim->advance(2000);
    auto before = pin_writes(host, dpin(2));
    ASSERT_GE(before.size(), 4u);
    EXPECT_EQ(before[1].time - before[0].time, 500);

    Json ed = editor(p, "Interval");
    std::string key = ed["sds"];
    EXPECT_EQ(ed["editable"], Json());
    EXPECT_EQ(post(p, "/api/editor" + ed["path"].get<std::string>(), {{"value", "fast"}}).body["error"], "SchemaViolation");
    auto ok = post(p, "/api/editor" + ed["path"].get<std::string>(), {{"value", 100}});
    ASSERT_EQ(ok.status, 200) << ok.body;
    EXPECT_EQ(get(p, "/api/sds").body[key], 100);

    // the SdsDown travels over TCP; the device picks it up before its next cycles
    ASSERT_TRUE(eventually([&] {
        bool seen = false;
        sim->run_in_loop([&](device::DeviceRuntime& rt) {
            for (auto id : rt.vm().task_ids())
                if (rt.vm().sds_value(id, 0) == DynValue::integer(100)) seen = true;
        });
        return seen;
    }));
    sim->advance(2000);
    auto after = pin_writes(host, dpin(2));
    ASSERT_GT(after.size(), before.size() + 10);
    EXPECT_EQ(after.back().time - after[after.size() - 2].time, 100);

    auto w = post(p, "/api/sds/" + key, {{"value", 300}});
    EXPECT_EQ(w.status, 200);
    EXPECT_EQ(w.body["value"], 300);
    EXPECT_EQ(post(p, "/api/sds/" + key, {{"value", true}}).body["error"], "SchemaViolation");

    EXPECT_EQ(call(p, http::verb::delete_, "/api/tasks/" + std::to_string(r.body["id"].get<int>())).status, 200);
    EXPECT_TRUE(eventually([&] { return device_tasks(host) == 0; }));
    EXPECT_EQ(get(p, "/api/tasks").body, Json::array());
    host.stop();
}

TEST(Api, ThermostatTargetFlipsHeater)
{
    Host host(sim_config());
    host.start();
    auto p = host.port();
    auto sim = host.simulator();
    ASSERT_EQ(post(p, "/api/tasks", {{"app", "thermostat"}, {"device", 0}}).status, 201);
    ASSERT_TRUE(eventually([&] { return device_tasks(host) == 1; }));

    auto in = post(p, "/api/devices/0/input", {{"input", "temperature"}, {"pin", 0}, {"value", 240}});
    ASSERT_EQ(in.status, 200) << in.body;
    EXPECT_EQ(post(p, "/api/devices/0/input", {{"input", "temperature"}, {"value", 99999}}).body["error"], "RangeError");
    EXPECT_EQ(post(p, "/api/devices/0/input", {{"input", "wind"}, {"value", 1}}).status, 422);

    Json target = editor(p, "Target");
    EXPECT_DOUBLE_EQ(target["display"].get<double>(), 25.0);
    EXPECT_EQ(target["schema"]["type"], "real");
    sim->advance(50);
    auto heater = [&] { return sim->snapshot().digital[4]; };
    ASSERT_TRUE(eventually([&] {
        sim->advance(5);
        return heater();
    }));

    ASSERT_EQ(post(p, "/api/editor" + target["path"].get<std::string>(), {{"value", 23.0}}).status, 200);
    EXPECT_EQ(get(p, "/api/sds").body[target["sds"].get<std::string>()], 230);
    ASSERT_TRUE(eventually([&] {
        sim->advance(5);
        return !heater();
    }));

    Json temp = editor(p, "Temperature");
    ASSERT_TRUE(eventually([&] { return editor(p, "Temperature")["display"] == 24.0; })) << temp;
    host.stop();
}

TEST(Api, MatrixActions)
{
    Host host(sim_config());
    host.start();
    auto p = host.port();
    auto sim = host.simulator();
    ASSERT_EQ(post(p, "/api/tasks", {{"app", "matrix"}, {"device", 0}}).status, 201);
    Json side = find_in_forest(p, [](const Json& n) { return n["kind"] == ">^*"; });
    std::string path = side["path"];
    EXPECT_EQ(side["actions"].size(), 4u);
    ASSERT_EQ(post(p, "/api/action" + path, {{"action", "42mtask"}}).status, 200);
    EXPECT_EQ(post(p, "/api/action" + path, {{"action", "42mtask"}}).body["error"], "ActionDisabled");
    EXPECT_EQ(post(p, "/api/action" + path, {{"action", "43"}}).body["error"], "UnknownPath");
    ASSERT_TRUE(eventually([&] {
        sim->advance(2);
        return sim->snapshot().displayed[5] != 0;
    }));
    ASSERT_TRUE(eventually([&] {
        auto s = find_in_forest(p, [](const Json& n) { return n["kind"] == ">^*"; });
        return s["actions"][3]["enabled"].get<bool>();
    }));
    host.stop();
}

TEST(Api, WebSocketStreamsDeltas)
{
    Host host(sim_config());
    host.start();
    auto p = host.port();
    WsClient ws(p);
    auto full = ws.next();
    ASSERT_TRUE(full);
    EXPECT_EQ((*full)["type"], "full");
    EXPECT_EQ((*full)["devices"].size(), 1u);
    for (const char* k : {"taskValues", "sdsValues", "matrixFrame", "pinStates", "tasks"}) EXPECT_TRUE(full->contains(k)) << k;

    ASSERT_EQ(post(p, "/api/tasks", {{"app", "blinkInteractive"}, {"device", 0}}).status, 201);
    std::string key = editor(p, "Interval")["sds"];
    ASSERT_EQ(post(p, "/api/sds/" + key, {{"value", 250}}).status, 200);
    auto d = ws.until([&](const Json& m) { return m["sdsValues"].contains(key) && m["sdsValues"][key] == 250; });
    ASSERT_TRUE(d);
    EXPECT_EQ((*d)["type"], "delta");

    // pin states arrive from snapshot polling
    host.simulator()->advance(600);
    auto pins = ws.until([](const Json& m) { return !m["pinStates"].empty(); });
    ASSERT_TRUE(pins);
    EXPECT_TRUE((*pins)["pinStates"]["0"].contains("digital"));
    host.stop();
}

TEST(Api, StopDeletesDeviceTasks)
{
    HostConfig cfg = sim_config();
    Host host(cfg);
    host.start();
    ASSERT_EQ(post(host.port(), "/api/tasks", {{"app", "blink"}, {"device", 0}}).status, 201);
    ASSERT_TRUE(eventually([&] { return device_tasks(host) == 1; }));
    std::vector<std::uint16_t> log;
    auto sim = host.simulator();
    host.stop();
    sim->run_in_loop([&](device::DeviceRuntime& rt) { log = rt.unload_log(); });
    EXPECT_EQ(log, (std::vector<std::uint16_t>{1}));
}

TEST(Api, DeviceClosedMarksOffline)
{
    device::SimConfig sc;
    sc.clock = device::ClockMode::Virtual;
    sc.control_port = 0;
    device::Simulator sim(sc);
    sim.start();

    HostConfig cfg;
    cfg.port = 0;
    Host host(cfg);
    host.start();
    auto p = host.port();
    auto r = post(p, "/api/devices", {{"host", "127.0.0.1"}, {"port", sim.port()}, {"controlPort", *sim.control_port()}});
    ASSERT_EQ(r.status, 201) << r.body;
    EXPECT_EQ(r.body["id"], 0);
    ASSERT_EQ(post(p, "/api/tasks", {{"app", "blink"}, {"device", 0}}).status, 201);
    sim.stop();
    ASSERT_TRUE(eventually([&] { return !get(p, "/api/devices").body[0]["connected"].get<bool>(); }));
    auto t = get(p, "/api/tasks").body[0];
    EXPECT_TRUE(t.contains("error"));
    host.stop();
}

TEST(Api, KeepaliveDetectsSilentDevice)
{
    HostConfig cfg;
    cfg.port = 0;
    cfg.keepalive = std::chrono::milliseconds(50);
    Host host(cfg);
    host.start();

    // answers the handshake, then never says anything again
    asio::io_context io;
    tcp::acceptor a(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), 0));
    std::vector<wire::Tag> received;
    std::thread t([&] {
        tcp::socket s(io);
        a.accept(s);
        wire::DeviceSpec spec;
        asio::write(s, asio::buffer(wire::frame_encode(wire::Hello{spec})));
        wire::FrameReader reader;
        std::array<std::uint8_t, 256> buf{};
        boost::system::error_code ec;
        while (true) {
            auto n = s.read_some(asio::buffer(buf), ec);
            if (ec) break;
            reader.feed(buf.data(), n);
            while (auto m = reader.next()) received.push_back(wire::tag_of(*m));
        }
    });
    ASSERT_EQ(post(host.port(), "/api/devices", {{"host", "127.0.0.1"}, {"port", a.local_endpoint().port()}}).status, 201);
    EXPECT_TRUE(eventually([&] { return !get(host.port(), "/api/devices").body[0]["connected"].get<bool>(); }));
    t.join();
    EXPECT_GE(std::count(received.begin(), received.end(), wire::Tag::Ping), 1);
    host.stop();
}
