#pragma once

// The device side: a VM behind the wire protocol, and a simulator that
// serves it over TCP with virtual peripherals and a controllable clock.

#include "mtask/periph.hpp"
#include "mtask/vm.hpp"
#include "mtask/wire.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtask::device {

// Transport-agnostic device: messages in, messages out.
class DeviceRuntime {
public:
    DeviceRuntime(const BoardConfig& board, const VmConfig& vm);

    wire::DeviceSpec spec() const;
    wire::Hello hello() const { return {spec()}; }

    std::vector<wire::Message> handle(const wire::Message& m, std::int64_t now);
    std::vector<wire::Message> cycle(std::int64_t now);

    // connection lost: drop every task, the next session starts clean
    void reset();

    PeripheralBus& bus() { return bus_; }
    const PeripheralBus& bus() const { return bus_; }
    VM& vm() { return vm_; }
    const VM& vm() const { return vm_; }

    // task ids in the order they were unloaded by DelTask or reset
    const std::vector<std::uint16_t>& unload_log() const { return unloaded_; }
    const std::vector<PinWrite>& pin_writes() const { return writes_; }

private:
    BoardConfig board_;
    VmConfig vm_cfg_;
    PeripheralBus bus_;
    VM vm_;
    std::vector<std::uint16_t> unloaded_;
    std::vector<PinWrite> writes_;
};

enum class ClockMode { Realtime, Virtual };

enum class Input { Analog, Digital, Temperature, Humidity, ButtonA, ButtonB };

std::optional<Input> parse_input(const std::string& name);
const char* to_string(Input i);

class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class WrongClockMode : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class PortInUse : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimConfig {
    std::string bind = "127.0.0.1";
    std::uint16_t port = 0;  // 0 picks a free port
    std::optional<std::uint16_t> control_port;
    BoardConfig board;
    std::size_t arena = 4096;
    ClockMode clock = ClockMode::Virtual;
    std::chrono::milliseconds cycle{1};  // realtime mode
};

struct Snapshot {
    std::int64_t now = 0;
    std::vector<std::int32_t> analog;
    std::vector<bool> digital;
    std::int32_t temperature = 0;
    std::int32_t humidity = 0;
    std::array<std::uint8_t, 8> displayed{};
    std::int32_t intensity = 0;
    std::vector<std::uint32_t> tasks;
    std::size_t arena_used = 0;
    std::size_t arena_capacity = 0;
    bool connected = false;

    bool operator==(const Snapshot&) const = default;
    nlohmann::json to_json() const;
};

// Validates and applies one input to a bus. Analog 0..1023, digital and
// buttons 0/1, temperature -400..1250, humidity 0..1000.
void apply_input(PeripheralBus& bus, Input input, int index, std::int32_t value);

class Simulator {
public:
    explicit Simulator(SimConfig cfg);
    ~Simulator();

    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    // Binds the device and control ports and starts the event loop thread.
    void start();
    void stop();

    std::uint16_t port() const;
    std::optional<std::uint16_t> control_port() const;
    const SimConfig& config() const;

    void set_input(Input input, int index, std::int32_t value);
    // virtual clock only: runs one cycle at the current time if none ran
    // there yet, then one per millisecond up to now + dt
    void advance(std::int64_t dt);
    Snapshot snapshot();
    std::int64_t now();

    // Runs f on the event loop and waits for it. Direct call when stopped.
    void run_in_loop(std::function<void(DeviceRuntime&)> f);

    // Handles one control command (the JSON object of a control line).
    nlohmann::json control(const nlohmann::json& cmd);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace mtask::device
