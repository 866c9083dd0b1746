#include "mtask/device.hpp"
#include "mtask/examples.hpp"
#include "mtask/net.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace mtask;
using namespace mtask::device;
using namespace std::chrono_literals;

namespace {

wire::AddTask add(std::uint16_t id, const Program& p) { return {id, encode(compile(p))}; }

template <class T>
std::vector<T> only(const std::vector<wire::Message>& ms)
{
    std::vector<T> out;
    for (const auto& m : ms)
        if (const auto* x = std::get_if<T>(&m)) out.push_back(*x);
    return out;
}

std::size_t writes_on(const DeviceRuntime& rt, Pin p)
{
    std::size_t n = 0;
    for (const auto& w : rt.pin_writes()) n += w.pin == p;
    return n;
}

} // namespace

TEST(Runtime, HelloListsCapabilities)
{
    DeviceRuntime rt({}, {});
    auto spec = rt.hello().spec;
    EXPECT_EQ(spec.version, wire::kProtocolVersion);
    EXPECT_TRUE(spec.dht);
    EXPECT_TRUE(spec.matrix);
    EXPECT_EQ(spec.arena_capacity, 4096u);
    EXPECT_EQ(spec.analog_pins, 8);
    EXPECT_EQ(spec.digital_pins, 16);
}

TEST(Runtime, AddTaskAckAndReject)
{
    BoardConfig board;
    board.has_matrix = false;
    DeviceRuntime rt(board, {});
    auto r = rt.handle(add(1, examples::blink()), 0);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_TRUE(r[0] == wire::Message(wire::AckTask{1}));

    r = rt.handle(add(1, examples::blink()), 0);
    ASSERT_EQ(only<wire::RejectTask>(r).size(), 1u);
    EXPECT_EQ(only<wire::RejectTask>(r)[0].reason, "duplicate task");

    r = rt.handle(wire::AddTask{2, {1, 2, 3}}, 0);
    ASSERT_EQ(only<wire::RejectTask>(r).size(), 1u);
    EXPECT_EQ(only<wire::RejectTask>(r)[0].reason.rfind("malformed image", 0), 0u);

    r = rt.handle(add(3, examples::matrix42()), 0);
    ASSERT_EQ(only<wire::RejectTask>(r).size(), 1u);
    EXPECT_EQ(only<wire::RejectTask>(r)[0].reason, "unsupported peripheral");

    VmConfig tiny;
    tiny.arena_capacity = 2;
    DeviceRuntime small({}, tiny);
    r = small.handle(add(1, examples::blink_thread()), 0);
    EXPECT_EQ(only<wire::RejectTask>(r).at(0).reason, "out of arena");
}

TEST(Runtime, CycleReportsValuesAndFailures)
{
    DeviceRuntime rt({}, {});
    rt.handle(add(1, examples::read_pin_bin()), 0);
    rt.handle(add(2, examples::factorial(100)), 0);
    rt.bus().set_analog(2, 100);
    auto out = rt.cycle(0);
    auto values = only<wire::TaskValueMsg>(out);
    ASSERT_EQ(values.size(), 1u);
    EXPECT_EQ(values[0].task, 1);
    EXPECT_EQ(values[0].value, DynTaskValue::stable(DynValue::integer(1)));
    auto fails = only<wire::TaskFail>(out);
    ASSERT_EQ(fails.size(), 1u);
    EXPECT_EQ(fails[0].reason, TrapKind::CallDepth);
    EXPECT_TRUE(rt.cycle(1).empty());
}

TEST(Runtime, SdsDownIsNotEchoed)
{
    DeviceRuntime rt({}, {});
    rt.handle(add(1, examples::blink_interactive()), 0);
    rt.cycle(0);
    rt.handle(wire::SdsDown{1, 0, DynValue::integer(100)}, 1);
    for (int t = 1; t < 2000; ++t) EXPECT_TRUE(only<wire::SdsUp>(rt.cycle(t)).empty());
    EXPECT_EQ(*rt.vm().sds_value(1, 0), DynValue::integer(100));
    // unknown targets are ignored
    EXPECT_TRUE(rt.handle(wire::SdsDown{9, 0, DynValue::integer(1)}, 2).empty());
}

TEST(Runtime, LiftedWritesGoUp)
{
    DeviceRuntime rt({}, {});
    rt.handle(add(4, examples::temp_sds()), 0);
    rt.bus().temperature = 215;
    std::vector<wire::SdsUp> ups;
    for (int t = 0; t < 10; ++t)
        for (auto& u : only<wire::SdsUp>(rt.cycle(t))) ups.push_back(u);
    ASSERT_EQ(ups.size(), 1u);
    EXPECT_EQ(ups[0].task, 4);
    EXPECT_EQ(ups[0].value, DynValue::integer(215));
}

TEST(Runtime, DelTaskAndReset)
{
    DeviceRuntime rt({}, {});
    rt.handle(add(1, examples::blink()), 0);
    rt.handle(add(2, examples::blink_thread()), 0);
    rt.handle(add(3, examples::read_pin_bin()), 0);
    EXPECT_TRUE(rt.handle(wire::DelTask{2}, 5).empty());
    EXPECT_TRUE(rt.handle(wire::DelTask{42}, 5).empty());
    rt.reset();
    EXPECT_EQ(rt.unload_log(), (std::vector<std::uint16_t>{2, 1, 3}));
    EXPECT_EQ(rt.vm().live_nodes(), 0u);
    auto pong = rt.handle(wire::Ping{}, 0);
    ASSERT_EQ(pong.size(), 1u);
    EXPECT_TRUE(std::holds_alternative<wire::Pong>(pong[0]));
}

TEST(Sim, AdvanceBlink)
{
    Simulator sim({});
    sim.run_in_loop([](DeviceRuntime& rt) { rt.handle(add(1, examples::blink()), 0); });
    sim.advance(1000);
    std::size_t n = 0;
    sim.run_in_loop([&](DeviceRuntime& rt) { n = writes_on(rt, dpin(2)); });
    EXPECT_EQ(n, 3u);  // the initial write plus two toggles
    EXPECT_EQ(sim.now(), 1000);
    sim.advance(0);
    EXPECT_EQ(sim.now(), 1000);
    sim.run_in_loop([&](DeviceRuntime& rt) { n = writes_on(rt, dpin(2)); });
    EXPECT_EQ(n, 3u);
}

TEST(Sim, AdvanceNeedsVirtualClock)
{
    SimConfig cfg;
    cfg.clock = ClockMode::Realtime;
    Simulator sim(cfg);
    EXPECT_THROW(sim.advance(10), WrongClockMode);
}

TEST(Sim, Inputs)
{
    Simulator sim({});
    EXPECT_THROW(sim.set_input(Input::Analog, 0, 2000), RangeError);
    EXPECT_THROW(sim.set_input(Input::Analog, 8, 5), RangeError);
    EXPECT_THROW(sim.set_input(Input::Digital, 0, 2), RangeError);
    EXPECT_THROW(sim.set_input(Input::Humidity, 0, 1001), RangeError);
    sim.set_input(Input::ButtonA, 0, 1);
    EXPECT_TRUE(sim.snapshot().digital[4]);
    sim.set_input(Input::ButtonB, 0, 1);
    EXPECT_TRUE(sim.snapshot().digital[6]);

    sim.run_in_loop([](DeviceRuntime& rt) { rt.handle(add(1, examples::temp_simple()), 0); });
    sim.set_input(Input::Temperature, 0, 215);
    sim.advance(0);
    DynTaskValue v;
    sim.run_in_loop([&](DeviceRuntime& rt) { v = rt.vm().task_value(1); });
    EXPECT_EQ(v.value().first(), DynValue::integer(215));
}

TEST(Sim, Snapshots)
{
    Simulator sim({});
    Snapshot fresh = sim.snapshot();
    for (auto a : fresh.analog) EXPECT_EQ(a, 0);
    for (bool d : fresh.digital) EXPECT_FALSE(d);
    for (auto row : fresh.displayed) EXPECT_EQ(row, 0);
    EXPECT_TRUE(fresh.tasks.empty());
    EXPECT_EQ(fresh, sim.snapshot());

    sim.run_in_loop([](DeviceRuntime& rt) { rt.handle(add(1, examples::matrix42()), 0); });
    sim.advance(30);
    Snapshot s = sim.snapshot();
    int lit = 0;
    for (auto row : s.displayed) lit += __builtin_popcount(row);
    EXPECT_EQ(lit, 18);
    for (auto [x, y] : examples::fourtytwo()) EXPECT_TRUE((s.displayed[y] >> x) & 1);
    EXPECT_EQ(s.tasks, (std::vector<std::uint32_t>{1}));
    EXPECT_GT(s.arena_used, 0u);
    EXPECT_EQ(s.to_json()["matrix"].size(), 8u);
}

TEST(Sim, Deterministic)
{
    auto run = [] {
        Simulator sim({});
        std::vector<Snapshot> out;
        sim.run_in_loop([](DeviceRuntime& rt) {
            rt.handle(add(1, examples::thermostat()), 0);
            rt.handle(add(2, examples::blink_thread()), 0);
        });
        for (int i = 0; i < 40; ++i) {
            sim.set_input(Input::Temperature, 0, 230 + i);
            sim.advance(37);
            out.push_back(sim.snapshot());
        }
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Sim, ControlCommands)
{
    Simulator sim({});
    auto r = sim.control({{"cmd", "set_input"}, {"input", "analog"}, {"pin", 1}, {"value", 2000}});
    EXPECT_FALSE(r["ok"]);
    EXPECT_EQ(r["error"], "RangeError");
    r = sim.control({{"cmd", "set_input"}, {"input", "buttonA"}, {"value", true}});
    EXPECT_TRUE(r["ok"]);
    r = sim.control({{"cmd", "advance"}, {"ms", 5}});
    EXPECT_EQ(r["now"], 5);
    r = sim.control({{"cmd", "snapshot"}});
    EXPECT_TRUE(r["snapshot"]["digital"][4]);
    EXPECT_EQ(sim.control({{"cmd", "fly"}})["error"], "BadCommand");
}

TEST(SimTcp, HandshakeAndTasks)
{
    SimConfig cfg;
    Simulator sim(cfg);
    sim.start();
    net::asio::io_context io;
    auto c = net::connect_device(io, "127.0.0.1", sim.port());
    EXPECT_TRUE(c.spec.dht);
    EXPECT_TRUE(c.spec.matrix);

    std::vector<wire::Message> got;
    c.conn->set_handler([&](const wire::Message& m) { got.push_back(m); });
    c.conn->send(add(1, examples::blink()));
    c.conn->send(wire::Ping{});
    auto pump = [&](std::size_t want) {
        auto deadline = std::chrono::steady_clock::now() + 3s;
        while (got.size() < want && std::chrono::steady_clock::now() < deadline) io.run_for(10ms);
    };
    pump(2);
    ASSERT_GE(got.size(), 2u);
    EXPECT_TRUE(got[0] == wire::Message(wire::AckTask{1}));
    EXPECT_TRUE(std::holds_alternative<wire::Pong>(got[1]));

    sim.advance(0);
    pump(3);
    ASSERT_EQ(got.size(), 3u);
    EXPECT_TRUE(got[2] == wire::Message(wire::TaskValueMsg{1, DynTaskValue::no_value()}));
    EXPECT_TRUE(sim.snapshot().connected);
    EXPECT_EQ(sim.snapshot().tasks.size(), 1u);

    // closing the connection drops every task on the device
    c.conn->close();
    io.run_for(50ms);
    auto deadline = std::chrono::steady_clock::now() + 2s;
    while (sim.snapshot().connected && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(5ms);
    EXPECT_FALSE(sim.snapshot().connected);
    EXPECT_TRUE(sim.snapshot().tasks.empty());

    // a fresh session works
    net::asio::io_context io2;
    auto again = net::connect_device(io2, "127.0.0.1", sim.port());
    EXPECT_EQ(again.spec, c.spec);
    sim.stop();
}

TEST(SimTcp, PortInUseAndTwoSimulators)
{
    Simulator a({});
    a.start();
    SimConfig clash;
    clash.port = a.port();
    Simulator b(clash);
    EXPECT_THROW(b.start(), PortInUse);
    Simulator c({});
    c.start();
    EXPECT_NE(a.port(), c.port());
    net::asio::io_context io;
    EXPECT_NO_THROW(net::connect_device(io, "127.0.0.1", a.port()));
    EXPECT_NO_THROW(net::connect_device(io, "127.0.0.1", c.port()));
}

TEST(SimTcp, CorruptFrameClosesConnection)
{
    Simulator sim({});
    sim.start();
    net::asio::io_context io;
    net::tcp::socket s(io);
    s.connect({net::asio::ip::make_address("127.0.0.1"), sim.port()});
    std::array<std::uint8_t, 64> buf{};
    std::size_t n = s.read_some(net::asio::buffer(buf));
    ASSERT_GE(n, 3u);
    EXPECT_EQ(buf[2], 0x01);  // Hello
    std::vector<std::uint8_t> bad = {0x00, 0x01, 0x03};  // AckTask without its id
    net::asio::write(s, net::asio::buffer(bad));
    boost::system::error_code ec;
    s.read_some(net::asio::buffer(buf), ec);
    EXPECT_TRUE(ec == net::asio::error::eof || ec == net::asio::error::connection_reset) << ec.message();
}

TEST(SimTcp, ControlPort)
{
    SimConfig cfg;
    cfg.control_port = 0;
    Simulator sim(cfg);
    sim.start();
    ASSERT_TRUE(sim.control_port());
    net::asio::io_context io;
    net::tcp::socket s(io);
    s.connect({net::asio::ip::make_address("127.0.0.1"), *sim.control_port()});
    auto ask = [&](const std::string& line) {
        net::asio::write(s, net::asio::buffer(line + "\n"));
        net::asio::streambuf b;
        net::asio::read_until(s, b, '\n');
        std::string reply(net::asio::buffers_begin(b.data()), net::asio::buffers_end(b.data()));
        return nlohmann::json::parse(reply);
    };
    EXPECT_TRUE(ask(R"({"cmd":"set_input","input":"temperature","value":215})")["ok"]);
    EXPECT_EQ(ask(R"({"cmd":"advance","ms":10})")["now"], 10);
    EXPECT_EQ(ask(R"({"cmd":"snapshot"})")["snapshot"]["temperature"], 215);
    EXPECT_EQ(ask(R"({"cmd":"set_input","input":"analog","pin":0,"value":5000})")["error"], "RangeError");
    EXPECT_FALSE(ask("not json")["ok"]);
}

TEST(Handshake, TimeoutOnSilentPeer)
{
    net::asio::io_context io;
    net::tcp::acceptor silent(io, {net::asio::ip::make_address("127.0.0.1"), 0});
    net::tcp::socket held(io);
    silent.async_accept(held, [](auto) {});
    auto start = std::chrono::steady_clock::now();
    EXPECT_THROW(net::connect_device(io, "127.0.0.1", silent.local_endpoint().port(), 300ms), wire::HandshakeTimeout);
    EXPECT_GE(std::chrono::steady_clock::now() - start, 300ms);
    EXPECT_EQ(net::kHandshakeTimeout, 5000ms);
}

TEST(Handshake, VersionMismatch)
{
    net::asio::io_context io;
    net::tcp::acceptor fake(io, {net::asio::ip::make_address("127.0.0.1"), 0});
    net::tcp::socket peer(io);
    wire::DeviceSpec spec;
    spec.version = 2;
    auto hello = wire::frame_encode(wire::Hello{spec});
    fake.async_accept(peer, [&](boost::system::error_code ec) {
        if (!ec) net::asio::async_write(peer, net::asio::buffer(hello), [](auto, auto) {});
    });
    EXPECT_THROW(net::connect_device(io, "127.0.0.1", fake.local_endpoint().port()), wire::VersionMismatch);
}

TEST(Handshake, ConnectFailed)
{
    net::asio::io_context io;
    std::uint16_t port;
    {
        net::tcp::acceptor a(io, {net::asio::ip::make_address("127.0.0.1"), 0});
        port = a.local_endpoint().port();
    }
    EXPECT_THROW(net::connect_device(io, "127.0.0.1", port), net::ConnectFailed);
}
