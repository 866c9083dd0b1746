#include "mtask/testkit.hpp"
#include "mtask/builder.hpp"
#include "mtask/bytecode.hpp"
#include "mtask/reference.hpp"

#include <sstream>

namespace mtask::testkit {

using namespace mtask::dsl;

namespace {

enum class G { Int, Bool, Real, Unit, PairIB };

Type to_type(G g)
{
    switch (g) {
    case G::Int: return Type::integer();
    case G::Bool: return Type::boolean();
    case G::Real: return Type::real();
    case G::Unit: return Type::unit();
    case G::PairIB: return Type::pair(Type::integer(), Type::boolean());
    }
    return Type::unit();
}

struct Var {
    E e;
    G type;
};

struct FunInfo {
    Fun f;
    std::vector<G> params;
    G result;
};

struct SdsInfo {
    Sds s;
    G type;
};

class Gen {
public:
    Gen(std::mt19937_64& rng, const CorpusOptions& opt) : rng_(rng), opt_(opt) {}

    Program run()
    {
        int nsds = pick(0, opt_.max_sds);
        for (int i = 0; i < nsds; ++i) {
            G t = coin(0.5) ? G::Int : G::Bool;
            DynValue init = t == G::Int ? DynValue::integer(pick(0, 20)) : DynValue::boolean(coin(0.5));
            Sds s = coin(0.5) ? b_.lift_sds("k" + std::to_string(i), init) : b_.sds(init);
            sds_.push_back({s, t});
        }
        if (coin(0.3)) dht_ = b_.dht(dpin(static_cast<std::uint8_t>(pick(8, 9))));
        if (coin(0.3)) matrix_ = b_.ledmatrix(dpin(10), dpin(11));

        if (coin(0.4)) {
            Fun g = b_.expr_fun("g", {Type::integer()}, Type::integer());
            b_.define_expr(g, [&](Scope& s) { return expr(G::Int, 2, {{s.arg(0), G::Int}}); });
            expr_fun_ = g;
        }

        int nfuns = pick(0, opt_.max_funs);
        for (int i = 0; i < nfuns; ++i) {
            FunInfo fi;
            int np = pick(0, 2);
            std::vector<Type> pt;
            for (int k = 0; k < np; ++k) {
                fi.params.push_back(coin(0.5) ? G::Int : G::Bool);
                pt.push_back(to_type(fi.params.back()));
            }
            fi.result = coin(0.5) ? G::Int : G::Bool;
            fi.f = b_.task_fun("t" + std::to_string(i), pt, to_type(fi.result));
            funs_.push_back(fi);
        }
        for (std::size_t i = 0; i < funs_.size(); ++i) {
            current_fun_ = static_cast<int>(i);
            b_.define(funs_[i].f, [&](Scope& s) {
                std::vector<Var> vars;
                for (std::size_t k = 0; k < funs_[i].params.size(); ++k)
                    vars.push_back({s.arg(static_cast<std::uint8_t>(k)), funs_[i].params[k]});
                return task(funs_[i].result, opt_.max_depth - 1, s, vars, false);
            });
        }
        current_fun_ = -1;
        G top = any_type();
        return b_.main([&](Scope& s) { return task(top, opt_.max_depth, s, {}, true); });
    }

private:
    int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }

    G any_type()
    {
        static const G all[] = {G::Int, G::Int, G::Bool, G::Bool, G::Real, G::Unit, G::PairIB};
        return all[pick(0, 6)];
    }

    E literal(G t)
    {
        switch (t) {
        case G::Int: return lit(pick(-5, 40));
        case G::Bool: return lit(coin(0.5));
        case G::Real: return lit(pick(-20, 20) / 4.0);
        case G::Unit: return unit();
        case G::PairIB: return tupl(lit(pick(-5, 40)), lit(coin(0.5)));
        }
        return unit();
    }

    std::optional<E> variable(G t, const std::vector<Var>& vars)
    {
        std::vector<E> c;
        for (const auto& v : vars) {
            if (v.type == t) c.push_back(v.e);
            if (v.type == G::PairIB && t == G::Int) c.push_back(first(v.e));
            if (v.type == G::PairIB && t == G::Bool) c.push_back(second(v.e));
        }
        if (c.empty()) return std::nullopt;
        return c[static_cast<std::size_t>(pick(0, static_cast<int>(c.size()) - 1))];
    }

    E expr(G t, int depth, const std::vector<Var>& vars)
    {
        if (depth <= 0 || coin(0.3)) {
            if (coin(0.6))
                if (auto v = variable(t, vars)) return *v;
            return literal(t);
        }
        int d = depth - 1;
        switch (t) {
        case G::Int:
            switch (pick(0, 5)) {
            case 0: return expr(t, d, vars) + expr(t, d, vars);
            case 1: return expr(t, d, vars) - expr(t, d, vars);
            case 2: return expr(t, d, vars) * expr(t, d, vars);
            case 3: return expr(t, d, vars) / (coin(0.8) ? lit(pick(1, 4)) : expr(t, d, vars));
            case 4: return if_(expr(G::Bool, d, vars), expr(t, d, vars), expr(t, d, vars));
            default:
                if (expr_fun_) return call_expr(*expr_fun_, {expr(G::Int, d, vars)});
                return first(expr(G::PairIB, d, vars));
            }
        case G::Bool:
            switch (pick(0, 6)) {
            case 0: return lt(expr(G::Int, d, vars), expr(G::Int, d, vars));
            case 1: return ge(expr(G::Int, d, vars), expr(G::Int, d, vars));
            case 2: return eq(expr(G::Int, d, vars), expr(G::Int, d, vars));
            case 3: return land(expr(t, d, vars), expr(t, d, vars));
            case 4: return lor(expr(t, d, vars), expr(t, d, vars));
            case 5: return lnot(expr(t, d, vars));
            default: return gt(expr(G::Real, d, vars), expr(G::Real, d, vars));
            }
        case G::Real:
            switch (pick(0, 3)) {
            case 0: return expr(t, d, vars) + expr(t, d, vars);
            case 1: return expr(t, d, vars) - expr(t, d, vars);
            case 2: return expr(t, d, vars) * literal(G::Real);
            default: return expr(t, d, vars) / lit(coin(0.5) ? 2.0 : 0.5);
            }
        case G::Unit: return unit();
        case G::PairIB: return tupl(expr(G::Int, d, vars), expr(G::Bool, d, vars));
        }
        return literal(t);
    }

    // `guarded`: a call placed here cannot recurse without passing a step
    T task(G t, int depth, Scope& s, const std::vector<Var>& vars, bool guarded)
    {
        if (depth <= 0 || coin(0.25)) return leaf(t, s, vars, guarded);
        int d = depth - 1;
        switch (pick(0, 5)) {
        case 0: return par_or(task(t, d, s, vars, guarded), task(t, d, s, vars, guarded));
        case 1:
            if (t == G::Unit) return rpeat(task(any_type(), d, s, vars, guarded));
            if (t == G::PairIB) return par_and(task(G::Int, d, s, vars, guarded), task(G::Bool, d, s, vars, guarded));
            return if_task(expr(G::Bool, 2, vars), task(t, d, s, vars, guarded), task(t, d, s, vars, guarded));
        default: return step_task(t, d, s, vars, guarded);
        }
    }

    T step_task(G t, int d, Scope& s, const std::vector<Var>& vars, bool guarded)
    {
        G u = any_type();
        T left = task(u, d, s, vars, guarded);
        int n = pick(1, 3);
        std::vector<StepCont> conts;
        for (int i = 0; i < n; ++i) {
            auto body = [&, t, d](E x) {
                std::vector<Var> inner = vars;
                inner.push_back({x, u});
                return task(t, d, s, inner, true);
            };
            auto pred = [&](E x) {
                std::vector<Var> inner = vars;
                inner.push_back({x, u});
                return expr(G::Bool, 2, inner);
            };
            switch (pick(0, 5)) {
            case 0: conts.push_back(s.if_value(pred, body)); break;
            case 1: conts.push_back(s.if_stable(pred, body)); break;
            case 2: conts.push_back(s.if_unstable(pred, body)); break;
            case 3: conts.push_back(if_no_value(task(t, d, s, vars, true))); break;
            case 4: conts.push_back(always(task(t, d, s, vars, true))); break;
            default: conts.push_back(s.if_stable([](E) { return lit(true); }, body)); break;
            }
        }
        return step(left, conts);
    }

    T leaf(G t, Scope& s, const std::vector<Var>& vars, bool guarded)
    {
        std::vector<std::function<T()>> opts;
        opts.push_back([&] { return rtrn(expr(t, 2, vars)); });
        for (std::size_t i = 0; i < funs_.size(); ++i) {
            const FunInfo& fi = funs_[i];
            if (fi.result != t) continue;
            bool ok = guarded || current_fun_ < 0 || static_cast<int>(i) < current_fun_;
            if (!ok) continue;
            opts.push_back([&, i] {
                std::vector<E> args;
                for (G p : funs_[i].params) args.push_back(expr(p, 2, vars));
                return call(funs_[i].f, args);
            });
        }
        auto apin_ = [&] { return apin(static_cast<std::uint8_t>(pick(0, 3))); };
        auto dpin_ = [&] { return dpin(static_cast<std::uint8_t>(pick(0, 3))); };
        switch (t) {
        case G::Int:
            opts.push_back([&] { return delay(coin(0.7) ? lit(pick(0, 30)) : expr(G::Int, 1, vars)); });
            opts.push_back([&] { return read_a(apin_()); });
            opts.push_back([&] { return write_a(apin_(), expr(G::Int, 2, vars)); });
            if (dht_) {
                opts.push_back([&] { return temperature(*dht_); });
                opts.push_back([&] { return humidity(*dht_); });
            }
            break;
        case G::Bool:
            opts.push_back([&] { return read_d(coin(0.8) ? dpin_() : apin_()); });
            opts.push_back([&] { return write_d(dpin_(), expr(G::Bool, 2, vars)); });
            break;
        case G::Unit:
            if (matrix_) {
                opts.push_back([&] {
                    return lm_dot(*matrix_, lit(pick(0, 7)), expr(G::Int, 1, vars), expr(G::Bool, 1, vars));
                });
                opts.push_back([&] { return lm_display(*matrix_); });
                opts.push_back([&] { return lm_clear(*matrix_); });
                opts.push_back([&] { return lm_intensity(*matrix_, expr(G::Int, 1, vars)); });
            }
            break;
        default:
            break;
        }
        for (const auto& si : sds_) {
            if (si.type != t) continue;
            Sds sd = si.s;
            opts.push_back([&, sd] { return get_sds(sd); });
            opts.push_back([&, sd] { return set_sds(sd, expr(t, 2, vars)); });
        }
        (void)s;
        return opts[static_cast<std::size_t>(pick(0, static_cast<int>(opts.size()) - 1))]();
    }

    std::mt19937_64& rng_;
    CorpusOptions opt_;
    ProgramBuilder b_;
    std::vector<FunInfo> funs_;
    std::vector<SdsInfo> sds_;
    std::optional<Dht> dht_;
    std::optional<Matrix> matrix_;
    std::optional<Fun> expr_fun_;
    int current_fun_ = -1;
};

bool same_writes(const std::vector<PinWrite>& a, const std::vector<PinWrite>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].time != b[i].time || !(a[i].pin == b[i].pin) || a[i].level != b[i].level) return false;
    return true;
}

} // namespace

Program random_program(std::mt19937_64& rng, const CorpusOptions& opt)
{
    for (;;) {
        Program p = Gen(rng, opt).run();
        if (validate(p).ok()) return p;
    }
}

Script random_script(std::mt19937_64& rng, const Program& p, int cycles)
{
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto coin = [&](double q) { return std::bernoulli_distribution(q)(rng); };
    std::vector<const SdsDecl*> lifted;
    for (const auto& d : p.sds)
        if (d.lifted) lifted.push_back(&d);

    Script s;
    std::int64_t now = 0;
    for (int i = 0; i < cycles; ++i) {
        std::vector<InputEvent> in;
        if (coin(0.08)) in.push_back({InputEvent::Kind::Analog, static_cast<std::uint8_t>(pick(0, 3)), DynValue::integer(pick(0, 1023))});
        if (coin(0.08)) in.push_back({InputEvent::Kind::Digital, static_cast<std::uint8_t>(pick(0, 3)), DynValue::boolean(coin(0.5))});
        if (coin(0.03)) in.push_back({InputEvent::Kind::Temperature, 0, DynValue::integer(pick(150, 300))});
        if (coin(0.03)) in.push_back({InputEvent::Kind::Humidity, 0, DynValue::integer(pick(200, 900))});
        if (!lifted.empty() && coin(0.05)) {
            const SdsDecl* d = lifted[static_cast<std::size_t>(pick(0, static_cast<int>(lifted.size()) - 1))];
            DynValue v = d->type.kind() == TypeKind::Int ? DynValue::integer(pick(-3, 30)) : DynValue::boolean(coin(0.5));
            in.push_back({InputEvent::Kind::ServerSds, d->id, v});
        }
        s.inputs.push_back(std::move(in));
        s.times.push_back(now);
        now += coin(0.1) ? pick(2, 40) : 1;
    }
    return s;
}

bool LegalityMonitor::allowed(const DynTaskValue& from, const DynTaskValue& to)
{
    TaskState a = from.state(), b = to.state();
    if (a == TaskState::Stable) return b == TaskState::Stable && from.value() == to.value();
    return true;
}

void LegalityMonitor::observe(std::uint64_t node, const DynTaskValue& v)
{
    ++observations_;
    auto it = last_.find(node);
    if (it != last_.end()) {
        if (!allowed(it->second, v)) {
            if (illegal_ == 0) first_ = "node " + std::to_string(node) + ": " + to_string(it->second) + " -> " + to_string(v);
            ++illegal_;
        }
        it->second = v;
    } else {
        last_.emplace(node, v);
    }
}

DualRun run_dual(const Program& p, const Script& s, const VmConfig& cfg)
{
    DualRun r;
    World world;
    world.bus.on_write = [&](const PinWrite& w) { r.ref_writes.push_back(w); };
    PeripheralBus bus;
    bus.on_write = [&](const PinWrite& w) { r.vm_writes.push_back(w); };
    VM vm(bus, cfg);
    vm.trace = [&](std::uint32_t, std::uint64_t serial, const DynTaskValue& v) { r.vm_monitor.observe(serial, v); };

    auto apply = [&](const InputEvent& e) {
        switch (e.kind) {
        case InputEvent::Kind::Analog:
            world.bus.set_analog(e.index, e.value.as_int());
            bus.set_analog(e.index, e.value.as_int());
            break;
        case InputEvent::Kind::Digital:
            world.bus.set_digital(e.index, e.value.as_bool());
            bus.set_digital(e.index, e.value.as_bool());
            break;
        case InputEvent::Kind::Temperature:
            world.bus.temperature = bus.temperature = e.value.as_int();
            break;
        case InputEvent::Kind::Humidity:
            world.bus.humidity = bus.humidity = e.value.as_int();
            break;
        case InputEvent::Kind::ServerSds:
            world.sds[e.index] = e.value;
            if (!r.vm_failure) vm.sds_write_from_server(1, e.index, e.value);
            break;
        }
    };

    if (s.times.empty()) return r;
    ReferenceTask ref(p, world, s.times[0]);
    ref.on_node_value = [&](std::uint64_t serial, const DynTaskValue& v) { r.ref_monitor.observe(serial, v); };
    vm.load_task(1, decode(encode(compile(p))), s.times[0]);

    for (std::size_t i = 0; i < s.times.size(); ++i) {
        for (const auto& e : s.inputs[i]) apply(e);
        std::int64_t now = s.times[i];

        DynTaskValue rv = ref.step(now);
        if (ref.failed() && !r.ref_failure) {
            r.ref_failure = ref.failure();
            r.ref_fail_cycle = static_cast<int>(i);
        }
        r.ref_trace.push_back(r.ref_failure ? DynTaskValue{} : rv);

        for (const auto& n : vm.eval_cycle(now)) {
            if (n.kind == Notification::Kind::SdsWritten) r.vm_lifted.emplace_back(n.sds, n.sds_value);
            if (n.kind == Notification::Kind::TaskFailed && !r.vm_failure) {
                r.vm_failure = n.reason;
                r.vm_fail_cycle = static_cast<int>(i);
            }
        }
        r.vm_trace.push_back(r.vm_failure ? DynTaskValue{} : vm.task_value(1));
    }
    r.ref_lifted = world.lifted_writes;
    return r;
}

bool DualRun::equivalent() const
{
    return mismatch().empty();
}

std::string DualRun::mismatch() const
{
    std::ostringstream os;
    if (ref_failure != vm_failure || ref_fail_cycle != vm_fail_cycle) {
        os << "failure: ref " << (ref_failure ? to_string(*ref_failure) : "none") << "@" << ref_fail_cycle << ", vm "
           << (vm_failure ? to_string(*vm_failure) : "none") << "@" << vm_fail_cycle;
        return os.str();
    }
    for (std::size_t i = 0; i < ref_trace.size() && i < vm_trace.size(); ++i)
        if (!(ref_trace[i] == vm_trace[i])) {
            os << "cycle " << i << ": ref " << to_string(ref_trace[i]) << ", vm " << to_string(vm_trace[i]);
            return os.str();
        }
    if (ref_trace.size() != vm_trace.size()) return "trace lengths differ";
    if (!same_writes(ref_writes, vm_writes))
        return "pin writes differ: ref " + std::to_string(ref_writes.size()) + ", vm " + std::to_string(vm_writes.size());
    if (ref_lifted != vm_lifted) return "lifted sds writes differ";
    return {};
}

} // namespace mtask::testkit

namespace mtask::testkit {

DynValue random_value(std::mt19937_64& rng, int depth)
{
    switch (std::uniform_int_distribution<int>(0, depth < 3 ? 4 : 3)(rng)) {
    case 0: return DynValue::integer(static_cast<std::int32_t>(rng()));
    case 1: return DynValue::boolean(rng() & 1);
    case 2: return DynValue::real(std::uniform_real_distribution<double>(-1e6, 1e6)(rng));
    case 3: return DynValue::unit();
    default: return DynValue::pair(random_value(rng, depth + 1), random_value(rng, depth + 1));
    }
}

wire::Message random_message(std::mt19937_64& rng)
{
    using namespace wire;
    auto u16 = [&] { return static_cast<std::uint16_t>(rng()); };
    auto bytes = [&](std::size_t max) {
        std::vector<std::uint8_t> b(std::uniform_int_distribution<std::size_t>(0, max)(rng));
        for (auto& x : b) x = static_cast<std::uint8_t>(rng());
        return b;
    };
    auto tv = [&] {
        switch (rng() % 3) {
        case 0: return DynTaskValue::no_value();
        case 1: return DynTaskValue::unstable(random_value(rng));
        default: return DynTaskValue::stable(random_value(rng));
        }
    };
    switch (rng() % 11) {
    case 0: {
        DeviceSpec s;
        s.version = u16();
        s.arena_capacity = static_cast<std::uint32_t>(rng());
        s.analog_pins = static_cast<std::uint8_t>(rng());
        s.digital_pins = static_cast<std::uint8_t>(rng());
        s.dht = rng() & 1;
        s.matrix = rng() & 1;
        return Hello{s};
    }
    case 1: return AddTask{u16(), bytes(300)};
    case 2: return AckTask{u16()};
    case 3: {
        auto b = bytes(40);
        return RejectTask{u16(), std::string(b.begin(), b.end())};
    }
    case 4: return DelTask{u16()};
    case 5: return TaskValueMsg{u16(), tv()};
    case 6: return SdsUp{u16(), static_cast<std::uint8_t>(rng()), random_value(rng)};
    case 7: return SdsDown{u16(), static_cast<std::uint8_t>(rng()), random_value(rng)};
    case 8: return Ping{};
    case 9: return Pong{};
    default: return TaskFail{u16(), static_cast<TrapKind>(rng() % 6)};
    }
}

} // namespace mtask::testkit
