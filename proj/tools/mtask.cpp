// mtask: compile, print, serve, simulate and run examples.
//
// Exit codes: 0 ok, 1 user error, 2 internal error.

#include "mtask/bytecode.hpp"
#include "mtask/device.hpp"
#include "mtask/examples.hpp"
#include "mtask/lang.hpp"
#include "mtask/server/apps.hpp"
#include "mtask/server/host.hpp"

#include "CLI11.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/sinks/base_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

namespace {

namespace ex = mtask::examples;
namespace fs = std::filesystem;

class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal(std::int64_t duration_ms = 0)
{
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    auto end = std::chrono::steady_clock::now() + std::chrono::milliseconds(duration_ms);
    while (!g_stop && (duration_ms <= 0 || std::chrono::steady_clock::now() < end))
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
}

// one JSON object per line on stderr
class JsonSink : public spdlog::sinks::base_sink<std::mutex> {
protected:
    void sink_it_(const spdlog::details::log_msg& msg) override
    {
        auto t = std::chrono::duration_cast<std::chrono::milliseconds>(msg.time.time_since_epoch()).count();
        nlohmann::json j = {{"ts", t},
                            {"level", spdlog::level::to_string_view(msg.level).data()},
                            {"msg", std::string(msg.payload.begin(), msg.payload.end())}};
        std::cerr << j.dump() << '\n';
    }
    void flush_() override { std::cerr.flush(); }
};

void setup_logging(bool json, const std::string& level)
{
    std::shared_ptr<spdlog::logger> logger;
    if (json)
        logger = std::make_shared<spdlog::logger>("mtask", std::make_shared<JsonSink>());
    else
        logger = spdlog::stderr_color_mt("mtask");
    logger->set_level(spdlog::level::from_str(level));
    spdlog::set_default_logger(logger);
}

const std::map<std::string, std::function<mtask::Program()>>& programs()
{
    static const std::map<std::string, std::function<mtask::Program()>> table = {
        {"blink", [] { return ex::blink(); }},
        {"recursiveBlink", [] { return ex::recursive_blink(); }},
        {"functionalBlink", [] { return ex::functional_blink(); }},
        {"blinkThread", [] { return ex::blink_thread(); }},
        {"readPinBin", [] { return ex::read_pin_bin(); }},
        {"blinkInteractive", [] { return ex::blink_interactive(); }},
        {"lightSwitch", [] { return ex::light_switch(); }},
        {"tempSimple", [] { return ex::temp_simple(); }},
        {"tempSds", [] { return ex::temp_sds(); }},
        {"thermostat", [] { return ex::thermostat(); }},
        {"matrixClear", [] { return ex::matrix_clear(); }},
        {"matrix42", [] { return ex::matrix42(); }},
        {"plotter", [] { return ex::plotter(); }},
        {"factorial", [] { return ex::factorial(5); }},
        {"factorialAcc", [] { return ex::factorial_acc(5); }},
    };
    return table;
}

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

mtask::Program load_program(const std::string& path)
{
    try {
        return mtask::deserialize(read_file(path));
    } catch (const mtask::FormatError& e) {
        throw UserError(path + ": " + e.what());
    }
}

int cmd_emit(const std::string& name, std::string out)
{
    auto it = programs().find(name);
    if (it == programs().end()) throw UserError("unknown program '" + name + "'");
    if (out.empty()) out = name + ".mtp";
    write_file(out, mtask::serialize(it->second()));
    std::cout << out << '\n';
    return 0;
}

int cmd_compile(const std::string& in, std::string out, bool disasm)
{
    auto p = load_program(in);
    auto report = mtask::validate(p);
    if (!report.ok()) {
        std::cerr << in << ": invalid program\n" << report.to_string() << '\n';
        return 1;
    }
    mtask::BytecodeImage img;
    try {
        img = mtask::compile(p);
    } catch (const mtask::CapacityExceeded& e) {
        throw UserError(in + ": " + e.what());
    }
    auto bytes = mtask::encode(img);
    if (out.empty()) out = fs::path(in).replace_extension(".mtb").string();
    write_file(out, bytes);
    if (disasm) std::cout << mtask::disassemble(img);
    spdlog::info("wrote {} ({} bytes)", out, bytes.size());
    return 0;
}

int cmd_pp(const std::string& in)
{
    for (const auto& line : mtask::pretty_print(load_program(in))) std::cout << line << '\n';
    return 0;
}

mtask::server::HostConfig load_host_config(const std::string& flag_path)
{
    std::string path = flag_path;
    if (const char* env = std::getenv("TOPIOT_CONFIG"); env && *env) path = env;
    if (path.empty()) return {};
    try {
        return mtask::server::load_config(path);
    } catch (const mtask::server::ConfigError& e) {
        throw UserError(e.what());
    }
}

struct ServeFlags {
    std::string config;
    std::optional<std::uint16_t> port;
    std::optional<std::string> bind;
    std::optional<std::string> static_dir;
    bool simulator = false;
};

int cmd_serve(const ServeFlags& f)
{
    auto cfg = load_host_config(f.config);
    if (f.port) cfg.port = *f.port;
    if (f.bind) cfg.bind = *f.bind;
    if (f.static_dir) cfg.static_dir = *f.static_dir;
    if (f.simulator) cfg.simulator.autostart = true;
    mtask::server::Host host(cfg);
    host.start();
    spdlog::info("serving on http://{}:{}", cfg.bind, host.port());
    wait_for_signal();
    spdlog::info("shutting down");
    host.stop();
    return 0;
}

struct DeviceFlags {
    std::uint16_t port = 8123;
    std::optional<std::uint16_t> control_port;
    std::size_t arena = 4096;
    std::string clock = "real";
    int cycle_ms = 1;
    std::string bind = "127.0.0.1";
};

int cmd_device(const DeviceFlags& f)
{
    mtask::device::SimConfig cfg;
    cfg.bind = f.bind;
    cfg.port = f.port;
    cfg.control_port = f.control_port;
    cfg.arena = f.arena;
    cfg.clock = f.clock == "virtual" ? mtask::device::ClockMode::Virtual : mtask::device::ClockMode::Realtime;
    cfg.cycle = std::chrono::milliseconds(f.cycle_ms);
    mtask::device::Simulator sim(cfg);
    sim.start();
    wait_for_signal();
    sim.stop();
    return 0;
}

std::string matrix_rows(const std::array<std::uint8_t, 8>& rows)
{
    std::string out;
    for (int y = 7; y >= 0; --y) {
        out += '\n';
        for (int x = 0; x < 8; ++x) out += (rows[static_cast<std::size_t>(y)] >> x) & 1 ? '#' : '.';
    }
    return out;
}

int cmd_example(const std::string& name, std::uint16_t port, std::int64_t duration_ms)
{
    const auto& names = mtask::server::apps::names();
    if (std::find(names.begin(), names.end(), name) == names.end()) throw UserError("unknown example '" + name + "'");

    mtask::server::HostConfig cfg;
    cfg.port = port;
    cfg.simulator.autostart = true;
    cfg.simulator.clock = mtask::device::ClockMode::Realtime;
    mtask::server::Host host(cfg);
    host.start();
    spdlog::info("dashboard API on http://{}:{}", cfg.bind, host.port());

    int top = -1;
    host.with_engine([&](mtask::server::Engine& eng) {
        top = eng.spawn(mtask::server::with_device(mtask::server::DeviceRef{0},
                                                   [name](mtask::server::DeviceRef d) { return mtask::server::apps::make(name, d); }),
                        name);
    });
    spdlog::info("{} running as task {}", name, top);

    auto* sim = host.simulator();
    std::size_t seen = 0;
    std::array<std::uint8_t, 8> shown{};
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    auto end = std::chrono::steady_clock::now() + std::chrono::milliseconds(duration_ms);
    while (!g_stop && (duration_ms <= 0 || std::chrono::steady_clock::now() < end)) {
        std::vector<mtask::PinWrite> fresh;
        sim->run_in_loop([&](mtask::device::DeviceRuntime& rt) {
            const auto& w = rt.pin_writes();
            if (w.size() < seen) seen = 0;
            fresh.assign(w.begin() + static_cast<std::ptrdiff_t>(seen), w.end());
            seen = w.size();
        });
        for (const auto& w : fresh) spdlog::info("t={} {} := {}", w.time, w.pin.name(), w.level);
        auto snap = sim->snapshot();
        if (snap.displayed != shown) {
            shown = snap.displayed;
            spdlog::info("matrix:{}", matrix_rows(shown));
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    spdlog::info("stopping {}", name);
    host.stop();
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"mtask: task-oriented IoT programs for small devices"};
    app.require_subcommand(1);
    bool log_json = false;
    std::string log_level = "info";
    app.add_flag("--log-json", log_json, "log line-delimited JSON to stderr");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    std::string file, out, name;
    bool disasm = false;

    auto* emit = app.add_subcommand("emit", "write a built-in device program as a program file");
    emit->add_option("name", name, "program name")->required();
    emit->add_option("-o,--output", out, "output path (default <name>.mtp)");

    auto* compile = app.add_subcommand("compile", "compile a program file to a bytecode image (.mtb)");
    compile->add_option("file", file, "program file")->required();
    compile->add_option("-o,--output", out, "output path (default: input with .mtb)");
    compile->add_flag("--disasm", disasm, "print the disassembly");

    auto* pp = app.add_subcommand("pp", "pretty-print a program file");
    pp->add_option("file", file, "program file")->required();

    ServeFlags serve_flags;
    auto* serve = app.add_subcommand("serve", "run the server engine with its HTTP/WebSocket API");
    serve->add_option("-c,--config", serve_flags.config, "INI config (TOPIOT_CONFIG overrides)");
    serve->add_option("--port", serve_flags.port, "API port")->check(CLI::Range(0, 65535));
    serve->add_option("--bind", serve_flags.bind, "API address");
    serve->add_option("--static-dir", serve_flags.static_dir, "dashboard files");
    serve->add_flag("--simulator", serve_flags.simulator, "start a simulator and connect to it");

    DeviceFlags dev_flags;
    auto* device = app.add_subcommand("device", "run the device simulator");
    device->add_option("--port", dev_flags.port, "device port")->check(CLI::Range(0, 65535));
    device->add_option("--control-port", dev_flags.control_port, "line-JSON control port")->check(CLI::Range(0, 65535));
    device->add_option("--arena", dev_flags.arena, "arena bytes")->check(CLI::Range(64, 1 << 20));
    device->add_option("--clock", dev_flags.clock, "real or virtual")->check(CLI::IsMember({"real", "virtual"}));
    device->add_option("--cycle-ms", dev_flags.cycle_ms, "realtime cycle period")->check(CLI::Range(1, 1000));
    device->add_option("--bind", dev_flags.bind, "listen address");

    std::uint16_t ex_port = 0;
    std::int64_t duration = 0;
    auto* example = app.add_subcommand("example", "run an example app against a fresh simulator");
    example->add_option("name", name, "blink, blinkThread, blinkInteractive, tempSimple, tempSds, thermostat, matrix, plotter")
        ->required();
    example->add_option("--port", ex_port, "API port (0 picks one)")->check(CLI::Range(0, 65535));
    example->add_option("--duration-ms", duration, "stop after this long (0 runs until interrupted)")
        ->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    setup_logging(log_json, log_level);
    try {
        if (*emit) return cmd_emit(name, out);
        if (*compile) return cmd_compile(file, out, disasm);
        if (*pp) return cmd_pp(file);
        if (*serve) return cmd_serve(serve_flags);
        if (*device) return cmd_device(dev_flags);
        if (*example) return cmd_example(name, ex_port, duration);
    } catch (const UserError& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const mtask::device::PortInUse& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const mtask::server::ConfigError& e) {
        spdlog::error("{}", e.what());
        return 1;
    } catch (const std::exception& e) {
        spdlog::critical("internal error: {}", e.what());
        return 2;
    }
    return 2;
}
