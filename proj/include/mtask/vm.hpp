#pragma once

// Device runtime: task trees materialized from bytecode into a bounded arena,
// one rewrite pass per loaded task per cycle.

#include "mtask/bytecode.hpp"
#include "mtask/ops.hpp"
#include "mtask/periph.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mtask {

struct VmConfig {
    std::size_t arena_capacity = 4096;
    int max_depth = 64;
    std::size_t max_stack = 1024;
    // instructions per task per cycle before the watchdog fails the task
    std::uint64_t max_instructions = 10'000'000;
    int max_build_nesting = 256;
};

enum class VmErrorKind { DuplicateTask, UnknownTask, UnknownSds, OutOfArena, UnsupportedPeripheral, UnknownPeripheral };

const char* to_string(VmErrorKind k);

class VmError : public std::runtime_error {
public:
    explicit VmError(VmErrorKind k) : std::runtime_error(to_string(k)), kind(k) {}
    VmErrorKind kind;
};

struct Notification {
    enum class Kind { TaskValueChanged, SdsWritten, TaskFailed };
    Kind kind = Kind::TaskValueChanged;
    std::uint32_t task = 0;
    DynTaskValue value;       // TaskValueChanged
    std::uint8_t sds = 0;     // SdsWritten
    DynValue sds_value;       // SdsWritten
    TrapKind reason = TrapKind::TypeError;  // TaskFailed
};

class VM {
public:
    explicit VM(PeripheralBus& bus, const VmConfig& cfg = {});
    ~VM();

    VM(const VM&) = delete;
    VM& operator=(const VM&) = delete;

    // Materializes the entry segment at time `now`. A trap while building the
    // tree (other than running out of arena) leaves the task loaded but
    // failed; the failure is reported by the next cycle.
    void load_task(std::uint32_t id, const BytecodeImage& img, std::int64_t now);
    void unload_task(std::uint32_t id);

    std::vector<Notification> eval_cycle(std::int64_t now);

    void sds_write_from_server(std::uint32_t task, std::uint8_t sds, const DynValue& v);

    bool has_task(std::uint32_t id) const;
    std::vector<std::uint32_t> task_ids() const;
    DynTaskValue task_value(std::uint32_t id) const;
    std::optional<TrapKind> task_failure(std::uint32_t id) const;
    std::uint64_t passes(std::uint32_t id) const;
    std::optional<DynValue> sds_value(std::uint32_t task, std::uint8_t sds) const;

    std::size_t live_nodes() const;
    std::size_t free_nodes() const;
    std::size_t capacity() const { return cfg_.arena_capacity; }
    std::size_t peak_nodes() const { return peak_nodes_; }
    std::size_t peak_stack() const { return peak_stack_; }
    std::size_t peak_frames() const { return peak_frames_; }
    void reset_peaks();

    PeripheralBus& bus() { return bus_; }

    // every node value computed during a pass, keyed by node serial
    std::function<void(std::uint32_t task, std::uint64_t serial, const DynTaskValue&)> trace;

private:
    struct Impl;
    PeripheralBus& bus_;
    VmConfig cfg_;
    std::unique_ptr<Impl> impl_;
    std::size_t peak_nodes_ = 0;
    std::size_t peak_stack_ = 0;
    std::size_t peak_frames_ = 0;

    friend struct Machine;
};

} // namespace mtask
