#include "mtask/reference.hpp"

namespace mtask {

namespace {

using K = TaskExpr::Kind;

struct ExprEval {
    const Program* prog;
    Limits lim;

    DynValue eval(const Expr& e, const Env& env, int depth) const
    {
        switch (e.kind) {
        case Expr::Kind::Lit: return e.lit;
        case Expr::Kind::Arith: return apply_arith(e.arith, eval(*e.kids[0], env, depth), eval(*e.kids[1], env, depth), RealWidth::F64);
        case Expr::Kind::Cmp: return DynValue::boolean(apply_cmp(e.cmp, eval(*e.kids[0], env, depth), eval(*e.kids[1], env, depth)));
        case Expr::Kind::Logic: {
            // both operands are evaluated: expressions are pure, so this only
            // matters for traps, and the VM does the same
            bool a = as_bool(eval(*e.kids[0], env, depth));
            bool b = as_bool(eval(*e.kids[1], env, depth));
            return DynValue::boolean(e.logic == LogicOp::And ? (a && b) : (a || b));
        }
        case Expr::Kind::Not: return DynValue::boolean(!as_bool(eval(*e.kids[0], env, depth)));
        case Expr::Kind::If:
            return as_bool(eval(*e.kids[0], env, depth)) ? eval(*e.kids[1], env, depth) : eval(*e.kids[2], env, depth);
        case Expr::Kind::First: return pair_part(eval(*e.kids[0], env, depth), true);
        case Expr::Kind::Second: return pair_part(eval(*e.kids[0], env, depth), false);
        case Expr::Kind::MkPair: return DynValue::pair(eval(*e.kids[0], env, depth), eval(*e.kids[1], env, depth));
        case Expr::Kind::Arg:
            if (e.slot >= env.size()) throw Trap(TrapKind::TypeError);
            return env[e.slot];
        case Expr::Kind::Call: {
            Env args;
            for (auto& k : e.kids) args.push_back(eval(*k, env, depth));
            if (depth + 1 > lim.max_depth) throw Trap(TrapKind::CallDepth);
            return call(e.fun, std::move(args), depth + 1);
        }
        }
        throw Trap(TrapKind::TypeError);
    }

    DynValue call(std::uint8_t fun, Env args, int depth) const
    {
        if (!prog || fun >= prog->funs.size()) throw Trap(TrapKind::TypeError);
        for (;;) {
            const FunDef& f = prog->funs[fun];
            Env env = std::move(args);
            env.resize(f.frame_size);
            const Expr* e = f.expr_body.get();
            // walk the tail positions; a marked call rebinds the frame
            for (;;) {
                if (e->kind == Expr::Kind::If) {
                    e = as_bool(eval(*e->kids[0], env, depth)) ? e->kids[1].get() : e->kids[2].get();
                    continue;
                }
                break;
            }
            if (e->kind == Expr::Kind::Call && e->tail) {
                args.clear();
                for (auto& k : e->kids) args.push_back(eval(*k, env, depth));
                fun = e->fun;
                continue;
            }
            return eval(*e, env, depth);
        }
    }

    static bool as_bool(const DynValue& v)
    {
        if (v.kind() != TypeKind::Bool) throw Trap(TrapKind::TypeError);
        return v.as_bool();
    }

    static DynValue pair_part(const DynValue& v, bool fst)
    {
        if (v.kind() != TypeKind::Pair) throw Trap(TrapKind::TypeError);
        return fst ? v.first() : v.second();
    }
};

bool guard_accepts(StepCont::Kind k, const DynTaskValue& v)
{
    switch (k) {
    case StepCont::Kind::IfValue: return v.has_value();
    case StepCont::Kind::IfStable: return v.is_stable();
    case StepCont::Kind::IfUnstable: return v.is_unstable();
    case StepCont::Kind::IfNoValue: return !v.has_value();
    case StepCont::Kind::Always: return true;
    }
    return false;
}

} // namespace

DynValue eval_expr(const Expr& e, const Env& args)
{
    return ExprEval{nullptr, {}}.eval(e, args, 1);
}

DynValue eval_expr(const Program& p, const Expr& e, const Env& env, int depth, const Limits& lim)
{
    return ExprEval{&p, lim}.eval(e, env, depth);
}

std::optional<std::size_t> match_continuation(const Program& p, const std::vector<StepCont>& conts,
                                              const DynTaskValue& v, Env& env, const Limits& lim)
{
    ExprEval ev{&p, lim};
    for (std::size_t i = 0; i < conts.size(); ++i) {
        const StepCont& c = conts[i];
        if (!guard_accepts(c.kind, v)) continue;
        if (c.binder != kNoBinder && v.has_value()) {
            if (static_cast<std::size_t>(c.binder) >= env.size()) env.resize(c.binder + 1);
            env[c.binder] = v.value();
        }
        if (c.pred && !ExprEval::as_bool(ev.eval(*c.pred, env, 1))) continue;
        return i;
    }
    return std::nullopt;
}

struct RNode {
    K kind = K::Rtrn;
    std::uint64_t serial = 0;
    std::uint64_t stamp = 0;
    std::vector<DynValue> vals;
    std::unique_ptr<RNode> kids[2];
    const TaskExpr* tmpl = nullptr;
    std::shared_ptr<const Env> env;
    std::int64_t deadline = 0;
    bool done = false;
    DynTaskValue latched;
    std::uint8_t ref = 0;
    Pin pin;
    std::shared_ptr<std::size_t> live;

    explicit RNode(std::shared_ptr<std::size_t> counter) : live(std::move(counter)) { ++*live; }
    ~RNode() { --*live; }
};

struct RefStepper {
    ReferenceTask& t;
    std::int64_t now;
    std::uint64_t pass;
    int fire_depth = 0;

    ExprEval ev() const { return {&t.prog_, t.lim_}; }

    std::unique_ptr<RNode> node(K k)
    {
        auto n = std::make_unique<RNode>(t.live_);
        n->kind = k;
        n->serial = ++t.serial_;
        return n;
    }

    std::unique_ptr<RNode> instantiate(const TaskExpr& x, const std::shared_ptr<const Env>& env, int depth)
    {
        auto evalarg = [&](std::size_t i) { return ev().eval(*x.args[i], *env, depth); };
        switch (x.kind) {
        case K::Call: {
            const FunDef& f = t.prog_.funs.at(x.ref);
            auto callee = std::make_shared<Env>();
            for (std::size_t i = 0; i < x.args.size(); ++i) callee->push_back(evalarg(i));
            callee->resize(f.frame_size);
            int d = depth;
            if (!x.tail) {
                if (depth + 1 > t.lim_.max_depth) throw Trap(TrapKind::CallDepth);
                d = depth + 1;
            }
            return instantiate(*f.task_body, callee, d);
        }
        case K::If: {
            bool c = ExprEval::as_bool(evalarg(0));
            return instantiate(*x.kids[c ? 0 : 1], env, depth);
        }
        default:
            break;
        }
        auto n = node(x.kind);
        n->ref = x.ref;
        n->pin = x.pin;
        for (std::size_t i = 0; i < x.args.size(); ++i) n->vals.push_back(evalarg(i));
        switch (x.kind) {
        case K::Delay:
            n->deadline = now + n->vals[0].as_int();
            break;
        case K::And:
        case K::Or:
            n->kids[0] = instantiate(*x.kids[0], env, depth);
            n->kids[1] = instantiate(*x.kids[1], env, depth);
            break;
        case K::Step:
            n->kids[0] = instantiate(*x.kids[0], env, depth);
            n->tmpl = &x;
            n->env = env;
            break;
        case K::Rpeat:
            n->kids[0] = instantiate(*x.kids[0], env, depth);
            n->kids[0]->stamp = pass;
            n->tmpl = x.kids[0].get();
            n->env = env;
            break;
        default:
            break;
        }
        return n;
    }

    DynTaskValue step(std::unique_ptr<RNode>& slot)
    {
        DynTaskValue v = step_inner(slot);
        if (t.on_node_value) t.on_node_value(slot->serial, v);
        return v;
    }

    DynTaskValue step_inner(std::unique_ptr<RNode>& slot)
    {
        RNode& n = *slot;
        World& w = t.world_;
        switch (n.kind) {
        case K::Rtrn:
            return DynTaskValue::stable(n.vals[0]);
        case K::Delay:
            if (!n.done && now >= n.deadline) {
                n.done = true;
                n.latched = DynTaskValue::stable(DynValue::integer(static_cast<std::int32_t>(now - n.deadline)));
            }
            return n.latched;
        case K::ReadA:
            return DynTaskValue::unstable(DynValue::integer(w.bus.read_analog(n.pin)));
        case K::ReadD:
            return DynTaskValue::unstable(DynValue::boolean(w.bus.read_digital(n.pin)));
        case K::WriteA:
            if (!n.done) {
                w.bus.write_analog(n.pin, n.vals[0].as_int(), now);
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::WriteD:
            if (!n.done) {
                w.bus.write_digital(n.pin, n.vals[0].as_bool(), now);
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::GetSds:
            return DynTaskValue::unstable(w.sds.at(n.ref));
        case K::SetSds:
            if (!n.done) {
                w.sds[n.ref] = n.vals[0];
                const SdsDecl* d = t.prog_.find_sds(n.ref);
                if (d && d->lifted) w.lifted_writes.emplace_back(n.ref, n.vals[0]);
                n.done = true;
            }
            return DynTaskValue::stable(n.vals[0]);
        case K::DhtTemp:
            return DynTaskValue::unstable(DynValue::integer(w.bus.temperature));
        case K::DhtHum:
            return DynTaskValue::unstable(DynValue::integer(w.bus.humidity));
        case K::LmDot:
        case K::LmIntensity:
        case K::LmClear:
        case K::LmDisplay:
            if (!n.done) {
                if (n.kind == K::LmDot)
                    w.bus.lm_dot(n.vals[0].as_int(), n.vals[1].as_int(), n.vals[2].as_bool());
                else if (n.kind == K::LmIntensity)
                    w.bus.lm_intensity(n.vals[0].as_int());
                else if (n.kind == K::LmClear)
                    w.bus.lm_clear();
                else
                    w.bus.lm_display();
                n.done = true;
            }
            return DynTaskValue::stable(DynValue::unit());
        case K::And: {
            auto l = step(n.kids[0]);
            auto r = step(n.kids[1]);
            return combine_and(l, r);
        }
        case K::Or: {
            auto l = step(n.kids[0]);
            auto r = step(n.kids[1]);
            if (n.latched.is_stable()) return n.latched;
            auto v = combine_or(l, r);
            if (v.is_stable()) n.latched = v;
            return v;
        }
        case K::Rpeat: {
            auto v = step(n.kids[0]);
            if (v.is_stable() && n.kids[0]->stamp != pass) {
                auto fresh = instantiate(*n.tmpl, n.env, 1);
                fresh->stamp = pass;
                n.kids[0] = std::move(fresh);
                step(n.kids[0]);
            }
            return DynTaskValue::no_value();
        }
        case K::Step: {
            auto v = step(n.kids[0]);
            if (n.stamp == pass) return DynTaskValue::no_value();
            auto env = std::make_shared<Env>(*n.env);
            auto hit = match_continuation(t.prog_, n.tmpl->conts, v, *env, t.lim_);
            if (!hit) return DynTaskValue::no_value();
            auto body = instantiate(*n.tmpl->conts[*hit].body, env, 1);
            body->stamp = pass;
            slot = std::move(body);  // prunes the left-hand side
            if (++fire_depth > t.lim_.max_depth) throw Trap(TrapKind::CallDepth);
            auto r = step(slot);
            --fire_depth;
            return r;
        }
        case K::Call:
        case K::If:
            break;
        }
        throw Trap(TrapKind::TypeError);
    }
};

ReferenceTask::ReferenceTask(const Program& p, World& w, std::int64_t now, const Limits& lim)
    : prog_(p), world_(w), lim_(lim), live_(std::make_shared<std::size_t>(0))
{
    for (const auto& d : p.sds)
        if (!world_.sds.count(d.id)) world_.sds[d.id] = d.initial;
    RefStepper s{*this, now, pass_ + 1};
    try {
        auto env = std::make_shared<Env>(p.main_frame_size);
        root_ = s.instantiate(*p.main, env, 1);
    } catch (const Trap& e) {
        failure_ = e.kind;
    } catch (const TypeError&) {
        failure_ = TrapKind::TypeError;
    }
}

ReferenceTask::~ReferenceTask() = default;

DynTaskValue ReferenceTask::step(std::int64_t now)
{
    if (failure_) return value_;
    ++pass_;
    RefStepper s{*this, now, pass_};
    try {
        value_ = s.step(root_);
    } catch (const Trap& e) {
        failure_ = e.kind;
    } catch (const TypeError&) {
        failure_ = TrapKind::TypeError;
    }
    return value_;
}

} // namespace mtask
