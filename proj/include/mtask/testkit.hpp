#pragma once

// Random program corpus, scripted worlds and side-by-side runs of the
// reference interpreter and the VM. Shared by the test suite and the
// acceptance runner.

#include "mtask/lang.hpp"
#include "mtask/ops.hpp"
#include "mtask/vm.hpp"
#include "mtask/wire.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mtask::testkit {

struct CorpusOptions {
    int max_depth = 4;
    int max_funs = 2;
    int max_sds = 2;
};

// A validated random program. Reals stay exactly representable in single
// precision so that both evaluators agree bit for bit.
Program random_program(std::mt19937_64& rng, const CorpusOptions& opt = {});

struct InputEvent {
    enum class Kind { Analog, Digital, Temperature, Humidity, ServerSds };
    Kind kind = Kind::Analog;
    std::uint8_t index = 0;
    DynValue value;
};

struct Script {
    // cycle i runs at times[i] after applying inputs[i]
    std::vector<std::int64_t> times;
    std::vector<std::vector<InputEvent>> inputs;
};

Script random_script(std::mt19937_64& rng, const Program& p, int cycles);

// Checks successive observations of each node against the task-value
// transition relation: NoValue->Unstable, Unstable->NoValue,
// Unstable->Stable, NoValue->Stable and self-loops.
class LegalityMonitor {
public:
    static bool allowed(const DynTaskValue& from, const DynTaskValue& to);

    void observe(std::uint64_t node, const DynTaskValue& v);

    std::size_t observations() const { return observations_; }
    std::size_t illegal() const { return illegal_; }
    const std::string& first_violation() const { return first_; }

private:
    std::map<std::uint64_t, DynTaskValue> last_;
    std::size_t observations_ = 0;
    std::size_t illegal_ = 0;
    std::string first_;
};

struct DualRun {
    std::vector<DynTaskValue> ref_trace;
    std::vector<DynTaskValue> vm_trace;
    std::optional<TrapKind> ref_failure;
    std::optional<TrapKind> vm_failure;
    int ref_fail_cycle = -1;
    int vm_fail_cycle = -1;
    std::vector<PinWrite> ref_writes;
    std::vector<PinWrite> vm_writes;
    std::vector<std::pair<std::uint8_t, DynValue>> ref_lifted;
    std::vector<std::pair<std::uint8_t, DynValue>> vm_lifted;
    LegalityMonitor ref_monitor;
    LegalityMonitor vm_monitor;

    bool equivalent() const;
    std::string mismatch() const;
};

// Runs the program on both evaluators (the VM through encode/decode) over
// the same scripted world.
DualRun run_dual(const Program& p, const Script& s, const VmConfig& cfg = {});

// Random value of random shape; Reals are finite.
DynValue random_value(std::mt19937_64& rng, int depth = 0);

// Random message of any variant with randomized payloads.
wire::Message random_message(std::mt19937_64& rng);

} // namespace mtask::testkit
