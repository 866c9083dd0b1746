#include "mtask/device.hpp"

#include "mtask/net.hpp"

#include <spdlog/spdlog.h>

#include <future>
#include <thread>

namespace mtask::device {

DeviceRuntime::DeviceRuntime(const BoardConfig& board, const VmConfig& vm)
    : board_(board), vm_cfg_(vm), bus_(board), vm_(bus_, vm)
{
    bus_.on_write = [this](const PinWrite& w) {
        if (writes_.size() >= 100000) writes_.erase(writes_.begin(), writes_.begin() + 50000);
        writes_.push_back(w);
    };
}

wire::DeviceSpec DeviceRuntime::spec() const
{
    wire::DeviceSpec s;
    s.arena_capacity = static_cast<std::uint32_t>(vm_cfg_.arena_capacity);
    s.analog_pins = board_.analog_pins;
    s.digital_pins = board_.digital_pins;
    s.dht = board_.has_dht;
    s.matrix = board_.has_matrix;
    return s;
}

std::vector<wire::Message> DeviceRuntime::handle(const wire::Message& m, std::int64_t now)
{
    using namespace wire;
    std::vector<Message> out;
    if (const auto* add = std::get_if<AddTask>(&m)) {
        if (vm_.has_task(add->task)) {
            out.push_back(RejectTask{add->task, "duplicate task"});
            return out;
        }
        try {
            vm_.load_task(add->task, decode(add->image), now);
            spdlog::info("device: task {} loaded", add->task);
            out.push_back(AckTask{add->task});
        } catch (const MalformedImage& e) {
            out.push_back(RejectTask{add->task, std::string("malformed image: ") + e.what()});
        } catch (const VmError& e) {
            out.push_back(RejectTask{add->task, e.what()});
        }
    } else if (const auto* del = std::get_if<DelTask>(&m)) {
        if (vm_.has_task(del->task)) {
            vm_.unload_task(del->task);
            unloaded_.push_back(del->task);
            spdlog::info("device: task {} deleted", del->task);
        }
    } else if (const auto* down = std::get_if<SdsDown>(&m)) {
        try {
            vm_.sds_write_from_server(down->task, down->sds, down->value);
        } catch (const std::exception& e) {
            spdlog::warn("device: ignoring SdsDown for task {} sds {}: {}", down->task, down->sds, e.what());
        }
    } else if (std::holds_alternative<Ping>(m)) {
        out.push_back(Pong{});
    } else if (!std::holds_alternative<Pong>(m)) {
        spdlog::warn("device: unexpected {}", describe(m));
    }
    return out;
}

std::vector<wire::Message> DeviceRuntime::cycle(std::int64_t now)
{
    std::vector<wire::Message> out;
    for (const auto& n : vm_.eval_cycle(now)) {
        auto id = static_cast<std::uint16_t>(n.task);
        switch (n.kind) {
        case Notification::Kind::TaskValueChanged: out.push_back(wire::TaskValueMsg{id, n.value}); break;
        case Notification::Kind::SdsWritten: out.push_back(wire::SdsUp{id, n.sds, n.sds_value}); break;
        case Notification::Kind::TaskFailed: out.push_back(wire::TaskFail{id, n.reason}); break;
        }
    }
    return out;
}

void DeviceRuntime::reset()
{
    for (auto id : vm_.task_ids()) {
        vm_.unload_task(id);
        unloaded_.push_back(static_cast<std::uint16_t>(id));
    }
}

std::optional<Input> parse_input(const std::string& name)
{
    for (Input i : {Input::Analog, Input::Digital, Input::Temperature, Input::Humidity, Input::ButtonA, Input::ButtonB})
        if (name == to_string(i)) return i;
    return std::nullopt;
}

const char* to_string(Input i)
{
    switch (i) {
    case Input::Analog: return "analog";
    case Input::Digital: return "digital";
    case Input::Temperature: return "temperature";
    case Input::Humidity: return "humidity";
    case Input::ButtonA: return "buttonA";
    case Input::ButtonB: return "buttonB";
    }
    return "?";
}

void apply_input(PeripheralBus& bus, Input input, int index, std::int32_t value)
{
    auto check = [](bool ok, const std::string& what) {
        if (!ok) throw RangeError(what);
    };
    const BoardConfig& b = bus.config();
    switch (input) {
    case Input::Analog:
        check(index >= 0 && index < b.analog_pins, "no analog pin " + std::to_string(index));
        check(value >= 0 && value <= 1023, "analog level " + std::to_string(value) + " outside 0..1023");
        bus.set_analog(static_cast<std::uint8_t>(index), value);
        break;
    case Input::Digital:
        check(index >= 0 && index < b.digital_pins, "no digital pin " + std::to_string(index));
        check(value == 0 || value == 1, "digital level must be 0 or 1");
        bus.set_digital(static_cast<std::uint8_t>(index), value == 1);
        break;
    case Input::ButtonA:
    case Input::ButtonB:
        check(value == 0 || value == 1, "button state must be 0 or 1");
        bus.set_digital(input == Input::ButtonA ? b.button_a : b.button_b, value == 1);
        break;
    case Input::Temperature:
        check(b.has_dht, "board has no DHT");
        check(value >= -400 && value <= 1250, "temperature " + std::to_string(value) + " outside -400..1250");
        bus.temperature = value;
        break;
    case Input::Humidity:
        check(b.has_dht, "board has no DHT");
        check(value >= 0 && value <= 1000, "humidity " + std::to_string(value) + " outside 0..1000");
        bus.humidity = value;
        break;
    }
}

nlohmann::json Snapshot::to_json() const
{
    nlohmann::json j;
    j["now"] = now;
    j["analog"] = analog;
    j["digital"] = digital;
    j["temperature"] = temperature;
    j["humidity"] = humidity;
    j["matrix"] = displayed;
    j["intensity"] = intensity;
    j["tasks"] = tasks;
    j["arena"] = {{"used", arena_used}, {"capacity", arena_capacity}};
    j["connected"] = connected;
    return j;
}

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

struct Simulator::Impl {
    explicit Impl(SimConfig c)
        : cfg(std::move(c)), rt(cfg.board, vm_config(cfg)), device_acc(io), control_acc(io), ticker(io)
    {
    }

    static VmConfig vm_config(const SimConfig& c)
    {
        VmConfig v;
        v.arena_capacity = c.arena;
        return v;
    }

    SimConfig cfg;
    asio::io_context io;
    DeviceRuntime rt;
    tcp::acceptor device_acc;
    tcp::acceptor control_acc;
    asio::steady_timer ticker;
    std::optional<asio::executor_work_guard<asio::io_context::executor_type>> guard;
    std::thread thread;
    std::thread::id loop_id;
    std::shared_ptr<net::FrameConnection> conn;
    std::uint16_t port = 0;
    std::optional<std::uint16_t> ctl_port;

    std::int64_t vnow = 0;
    bool ran_at_now = false;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    std::int64_t now() const
    {
        if (cfg.clock == ClockMode::Virtual) return vnow;
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    }

    void send_all(const std::vector<wire::Message>& ms)
    {
        if (!conn || !conn->is_open()) return;
        for (const auto& m : ms) conn->send(m);
    }

    void cycle_at(std::int64_t t) { send_all(rt.cycle(t)); }

    void bind(tcp::acceptor& acc, std::uint16_t p, const char* what)
    {
        boost::system::error_code ec;
        tcp::endpoint ep(asio::ip::make_address(cfg.bind, ec), p);
        if (ec) throw std::invalid_argument("bad bind address " + cfg.bind);
        acc.open(ep.protocol(), ec);
        if (!ec) acc.bind(ep, ec);
        if (ec == asio::error::address_in_use) throw PortInUse(std::string(what) + " port " + std::to_string(p) + " is in use");
        if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
        if (ec) throw std::runtime_error(std::string("cannot listen on ") + what + " port: " + ec.message());
    }

    void accept_device()
    {
        device_acc.async_accept([this](boost::system::error_code ec, tcp::socket s) {
            if (ec) return;
            if (conn && conn->is_open()) {
                spdlog::warn("device: refusing second connection");
                boost::system::error_code ignore;
                s.close(ignore);
            } else {
                conn = std::make_shared<net::FrameConnection>(std::move(s));
                auto self = conn;
                spdlog::info("device: server connected from {}", self->peer());
                self->start(
                    [this](const wire::Message& m) { send_all(rt.handle(m, now())); },
                    [this, self](const std::string& reason) {
                        spdlog::info("device: connection closed ({})", reason);
                        rt.reset();
                        if (conn == self) conn.reset();
                    });
                self->send(rt.hello());
            }
            accept_device();
        });
    }

    void accept_control()
    {
        control_acc.async_accept([this](boost::system::error_code ec, tcp::socket s) {
            if (ec) return;
            serve_control(std::make_shared<tcp::socket>(std::move(s)), std::make_shared<asio::streambuf>());
            accept_control();
        });
    }

    Simulator* owner = nullptr;

    void serve_control(std::shared_ptr<tcp::socket> s, std::shared_ptr<asio::streambuf> buf)
    {
        asio::async_read_until(*s, *buf, '\n', [this, s, buf](boost::system::error_code ec, std::size_t n) {
            if (ec) return;
            std::string line(asio::buffers_begin(buf->data()), asio::buffers_begin(buf->data()) + static_cast<std::ptrdiff_t>(n));
            buf->consume(n);
            nlohmann::json reply;
            try {
                reply = owner->control(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                reply = {{"ok", false}, {"error", std::string("bad json: ") + e.what()}};
            }
            auto out = std::make_shared<std::string>(reply.dump() + "\n");
            asio::async_write(*s, asio::buffer(*out), [this, s, buf, out](boost::system::error_code ec, std::size_t) {
                if (!ec) serve_control(s, buf);
            });
        });
    }

    void tick()
    {
        ticker.expires_after(cfg.cycle);
        ticker.async_wait([this](boost::system::error_code ec) {
            if (ec) return;
            cycle_at(now());
            tick();
        });
    }
};

Simulator::Simulator(SimConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) { impl_->owner = this; }

Simulator::~Simulator() { stop(); }

void Simulator::start()
{
    if (impl_->thread.joinable()) return;
    auto& im = *impl_;
    im.bind(im.device_acc, im.cfg.port, "device");
    im.port = im.device_acc.local_endpoint().port();
    if (im.cfg.control_port) {
        try {
            im.bind(im.control_acc, *im.cfg.control_port, "control");
        } catch (...) {
            im.device_acc.close();
            throw;
        }
        im.ctl_port = im.control_acc.local_endpoint().port();
        im.accept_control();
    }
    im.accept_device();
    im.t0 = std::chrono::steady_clock::now();
    if (im.cfg.clock == ClockMode::Realtime) im.tick();
    im.guard.emplace(im.io.get_executor());
    std::promise<void> ready;
    auto started = ready.get_future();
    im.thread = std::thread([&im, &ready] {
        im.loop_id = std::this_thread::get_id();
        ready.set_value();
        im.io.run();
    });
    started.wait();
    spdlog::info("device: listening on {}:{} ({} clock)", im.cfg.bind, im.port,
                 im.cfg.clock == ClockMode::Virtual ? "virtual" : "realtime");
}

void Simulator::stop()
{
    auto& im = *impl_;
    if (!im.thread.joinable()) return;
    asio::post(im.io, [&im] {
        boost::system::error_code ec;
        im.device_acc.close(ec);
        im.control_acc.close(ec);
        im.ticker.cancel();
        if (im.conn) im.conn->close("simulator stopped");
    });
    im.guard.reset();
    // give the close a moment to flush, then stop hard
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(200);
    while (std::chrono::steady_clock::now() < deadline && im.conn && im.conn->is_open())
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    im.io.stop();
    im.thread.join();
    im.loop_id = {};
}

std::uint16_t Simulator::port() const { return impl_->port; }
std::optional<std::uint16_t> Simulator::control_port() const { return impl_->ctl_port; }
const SimConfig& Simulator::config() const { return impl_->cfg; }

void Simulator::run_in_loop(std::function<void(DeviceRuntime&)> f)
{
    auto& im = *impl_;
    if (!im.thread.joinable() || std::this_thread::get_id() == im.loop_id) {
        f(im.rt);
        return;
    }
    std::promise<void> done;
    auto fut = done.get_future();
    asio::post(im.io, [&] {
        try {
            f(im.rt);
            done.set_value();
        } catch (...) {
            done.set_exception(std::current_exception());
        }
    });
    fut.get();
}

void Simulator::set_input(Input input, int index, std::int32_t value)
{
    run_in_loop([&](DeviceRuntime& rt) { apply_input(rt.bus(), input, index, value); });
}

void Simulator::advance(std::int64_t dt)
{
    if (impl_->cfg.clock != ClockMode::Virtual) throw WrongClockMode("advance needs the virtual clock");
    if (dt < 0) throw RangeError("negative advance");
    run_in_loop([&](DeviceRuntime&) {
        auto& im = *impl_;
        if (dt == 0 || !im.ran_at_now) im.cycle_at(im.vnow);
        for (std::int64_t k = 0; k < dt; ++k) im.cycle_at(++im.vnow);
        im.ran_at_now = true;
    });
}

std::int64_t Simulator::now()
{
    std::int64_t t = 0;
    run_in_loop([&](DeviceRuntime&) { t = impl_->now(); });
    return t;
}

Snapshot Simulator::snapshot()
{
    Snapshot s;
    run_in_loop([&](DeviceRuntime& rt) {
        const auto& bus = rt.bus();
        s.now = impl_->now();
        s.analog = bus.analog();
        s.digital = bus.digital();
        s.temperature = bus.temperature;
        s.humidity = bus.humidity;
        s.displayed = bus.matrix.displayed;
        s.intensity = bus.matrix.intensity;
        s.tasks = rt.vm().task_ids();
        s.arena_used = rt.vm().live_nodes();
        s.arena_capacity = rt.vm().capacity();
        s.connected = impl_->conn && impl_->conn->is_open();
    });
    return s;
}

nlohmann::json Simulator::control(const nlohmann::json& cmd)
{
    using nlohmann::json;
    auto fail = [](const std::string& kind, const std::string& msg) { return json{{"ok", false}, {"error", kind}, {"message", msg}}; };
    try {
        std::string c = cmd.value("cmd", "");
        if (c == "set_input") {
            auto input = parse_input(cmd.value("input", ""));
            if (!input) return fail("RangeError", "unknown input " + cmd.value("input", ""));
            int index = cmd.value("pin", 0);
            json v = cmd.at("value");
            std::int32_t value = v.is_boolean() ? (v.get<bool>() ? 1 : 0) : v.get<std::int32_t>();
            set_input(*input, index, value);
            return {{"ok", true}};
        }
        if (c == "advance") {
            advance(cmd.value("ms", 0));
            return {{"ok", true}, {"now", now()}};
        }
        if (c == "snapshot") return {{"ok", true}, {"snapshot", snapshot().to_json()}};
        return fail("BadCommand", "unknown command '" + c + "'");
    } catch (const RangeError& e) {
        return fail("RangeError", e.what());
    } catch (const WrongClockMode& e) {
        return fail("WrongClockMode", e.what());
    } catch (const json::exception& e) {
        return fail("BadCommand", e.what());
    }
}

} // namespace mtask::device
