#pragma once

// Tree-walking reference semantics, used as the oracle for the bytecode VM.

#include "mtask/lang.hpp"
#include "mtask/ops.hpp"
#include "mtask/periph.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace mtask {

using Env = std::vector<DynValue>;

struct Limits {
    int max_depth = 64;
};

// Evaluates a closed (call-free) expression against argument values.
DynValue eval_expr(const Expr& e, const Env& args);
DynValue eval_expr(const Program& p, const Expr& e, const Env& env, int depth = 1, const Limits& lim = {});

// Binds the left value into env (when the continuation has a binder) and
// returns the index of the first continuation whose guard accepts it.
std::optional<std::size_t> match_continuation(const Program& p, const std::vector<StepCont>& conts,
                                              const DynTaskValue& v, Env& env, const Limits& lim = {});

struct World {
    PeripheralBus bus;
    std::map<std::uint8_t, DynValue> sds;
    std::vector<std::pair<std::uint8_t, DynValue>> lifted_writes;

    explicit World(const BoardConfig& cfg = {}) : bus(cfg) {}
};

struct RNode;

class ReferenceTask {
public:
    ReferenceTask(const Program& p, World& w, std::int64_t now, const Limits& lim = {});
    ~ReferenceTask();

    ReferenceTask(const ReferenceTask&) = delete;
    ReferenceTask& operator=(const ReferenceTask&) = delete;

    // One rewrite pass over the whole tree.
    DynTaskValue step(std::int64_t now);

    bool failed() const { return failure_.has_value(); }
    std::optional<TrapKind> failure() const { return failure_; }
    const DynTaskValue& value() const { return value_; }
    std::size_t live_nodes() const { return *live_; }
    std::uint64_t passes() const { return pass_; }

    std::function<void(std::uint64_t serial, const DynTaskValue&)> on_node_value;

private:
    friend struct RefStepper;

    const Program& prog_;
    World& world_;
    Limits lim_;
    std::shared_ptr<std::size_t> live_;
    std::unique_ptr<RNode> root_;
    std::uint64_t pass_ = 0;
    std::uint64_t serial_ = 0;
    std::optional<TrapKind> failure_;
    DynTaskValue value_;
};

} // namespace mtask
