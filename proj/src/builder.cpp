#include "mtask/builder.hpp"

#include <stdexcept>

namespace mtask::dsl {

namespace {

E mk(Expr::Kind k, std::vector<ExprPtr> kids = {})
{
    auto e = std::make_shared<Expr>();
    e->kind = k;
    e->kids = std::move(kids);
    return {e};
}

E arith(ArithOp op, E a, E b)
{
    E r = mk(Expr::Kind::Arith, {a.p, b.p});
    r.p->arith = op;
    return r;
}

E cmp(CmpOp op, E a, E b)
{
    E r = mk(Expr::Kind::Cmp, {a.p, b.p});
    r.p->cmp = op;
    return r;
}

E logic(LogicOp op, E a, E b)
{
    E r = mk(Expr::Kind::Logic, {a.p, b.p});
    r.p->logic = op;
    return r;
}

T mkt(TaskExpr::Kind k, std::vector<ExprPtr> args = {}, std::vector<TaskPtr> kids = {})
{
    auto t = std::make_shared<TaskExpr>();
    t->kind = k;
    t->args = std::move(args);
    t->kids = std::move(kids);
    return {t};
}

T pin_task(TaskExpr::Kind k, Pin p, std::vector<ExprPtr> args = {})
{
    T t = mkt(k, std::move(args));
    t.p->pin = p;
    return t;
}

T ref_task(TaskExpr::Kind k, std::uint8_t ref, std::vector<ExprPtr> args = {})
{
    T t = mkt(k, std::move(args));
    t.p->ref = ref;
    return t;
}

std::vector<ExprPtr> unwrap(const std::vector<E>& es)
{
    std::vector<ExprPtr> out;
    out.reserve(es.size());
    for (const auto& e : es) out.push_back(e.p);
    return out;
}

} // namespace

E lit(std::int32_t i) { return lit(DynValue::integer(i)); }
E lit(bool b) { return lit(DynValue::boolean(b)); }
E lit(double r) { return lit(DynValue::real(r)); }
E unit() { return lit(DynValue::unit()); }

E lit(const DynValue& v)
{
    E e = mk(Expr::Kind::Lit);
    e.p->lit = v;
    return e;
}

E operator+(E a, E b) { return arith(ArithOp::Add, a, b); }
E operator-(E a, E b) { return arith(ArithOp::Sub, a, b); }
E operator*(E a, E b) { return arith(ArithOp::Mul, a, b); }
E operator/(E a, E b) { return arith(ArithOp::Div, a, b); }

E eq(E a, E b) { return cmp(CmpOp::Eq, a, b); }
E ne(E a, E b) { return cmp(CmpOp::Ne, a, b); }
E lt(E a, E b) { return cmp(CmpOp::Lt, a, b); }
E gt(E a, E b) { return cmp(CmpOp::Gt, a, b); }
E le(E a, E b) { return cmp(CmpOp::Le, a, b); }
E ge(E a, E b) { return cmp(CmpOp::Ge, a, b); }
E land(E a, E b) { return logic(LogicOp::And, a, b); }
E lor(E a, E b) { return logic(LogicOp::Or, a, b); }
E lnot(E a) { return mk(Expr::Kind::Not, {a.p}); }
E if_(E c, E t, E e) { return mk(Expr::Kind::If, {c.p, t.p, e.p}); }
E first(E a) { return mk(Expr::Kind::First, {a.p}); }
E second(E a) { return mk(Expr::Kind::Second, {a.p}); }
E tupl(E a, E b) { return mk(Expr::Kind::MkPair, {a.p, b.p}); }

E call_expr(Fun f, std::vector<E> args)
{
    if (f.is_task) throw std::invalid_argument("call_expr on a task function");
    E e = mk(Expr::Kind::Call, unwrap(args));
    e.p->fun = f.id;
    return e;
}

T rtrn(E e) { return mkt(TaskExpr::Kind::Rtrn, {e.p}); }
T rpeat(T t) { return mkt(TaskExpr::Kind::Rpeat, {}, {t.p}); }
T delay(E ms) { return mkt(TaskExpr::Kind::Delay, {ms.p}); }
T par_and(T a, T b) { return mkt(TaskExpr::Kind::And, {}, {a.p, b.p}); }
T par_or(T a, T b) { return mkt(TaskExpr::Kind::Or, {}, {a.p, b.p}); }
T if_task(E c, T t, T e) { return mkt(TaskExpr::Kind::If, {c.p}, {t.p, e.p}); }

T call(Fun f, std::vector<E> args)
{
    if (!f.is_task) throw std::invalid_argument("call on an expression function");
    return ref_task(TaskExpr::Kind::Call, f.id, unwrap(args));
}

T get_sds(Sds s) { return ref_task(TaskExpr::Kind::GetSds, s.id); }
T set_sds(Sds s, E v) { return ref_task(TaskExpr::Kind::SetSds, s.id, {v.p}); }
T read_a(Pin p) { return pin_task(TaskExpr::Kind::ReadA, p); }
T write_a(Pin p, E v) { return pin_task(TaskExpr::Kind::WriteA, p, {v.p}); }
T read_d(Pin p) { return pin_task(TaskExpr::Kind::ReadD, p); }
T write_d(Pin p, E v) { return pin_task(TaskExpr::Kind::WriteD, p, {v.p}); }
T temperature(Dht d) { return ref_task(TaskExpr::Kind::DhtTemp, d.id); }
T humidity(Dht d) { return ref_task(TaskExpr::Kind::DhtHum, d.id); }
T lm_dot(Matrix m, E x, E y, E on) { return ref_task(TaskExpr::Kind::LmDot, m.id, {x.p, y.p, on.p}); }
T lm_intensity(Matrix m, E level) { return ref_task(TaskExpr::Kind::LmIntensity, m.id, {level.p}); }
T lm_clear(Matrix m) { return ref_task(TaskExpr::Kind::LmClear, m.id); }
T lm_display(Matrix m) { return ref_task(TaskExpr::Kind::LmDisplay, m.id); }

T step(T left, std::vector<StepCont> conts)
{
    T t = mkt(TaskExpr::Kind::Step, {}, {left.p});
    t.p->conts = std::move(conts);
    return t;
}

StepCont if_no_value(T body)
{
    StepCont c;
    c.kind = StepCont::Kind::IfNoValue;
    c.body = body.p;
    return c;
}

StepCont always(T body)
{
    StepCont c;
    c.kind = StepCont::Kind::Always;
    c.body = body.p;
    return c;
}

E Scope::arg(std::uint8_t i) const
{
    E e = mk(Expr::Kind::Arg);
    e.p->slot = i;
    return e;
}

E Scope::fresh()
{
    if (next_ == 255) throw std::length_error("too many binders in one function");
    return arg(next_++);
}

StepCont Scope::guarded(StepCont::Kind k, const std::function<E(E)>& pred, const std::function<T(E)>& body)
{
    E x = fresh();
    StepCont c;
    c.kind = k;
    c.binder = x.p->slot;
    c.pred = pred(x).p;
    c.body = body(x).p;
    return c;
}

StepCont Scope::if_value(const std::function<E(E)>& pred, const std::function<T(E)>& body)
{
    return guarded(StepCont::Kind::IfValue, pred, body);
}

StepCont Scope::if_stable(const std::function<E(E)>& pred, const std::function<T(E)>& body)
{
    return guarded(StepCont::Kind::IfStable, pred, body);
}

StepCont Scope::if_unstable(const std::function<E(E)>& pred, const std::function<T(E)>& body)
{
    return guarded(StepCont::Kind::IfUnstable, pred, body);
}

T Scope::bind(T left, const std::function<T(E)>& body)
{
    return step(left, {if_stable([](E) { return lit(true); }, body)});
}

T Scope::bind_any(T left, const std::function<T(E)>& body)
{
    return step(left, {if_value([](E) { return lit(true); }, body)});
}

T Scope::then(T left, T right)
{
    StepCont c;
    c.kind = StepCont::Kind::IfStable;
    c.pred = lit(true).p;
    c.body = right.p;
    return step(left, {c});
}

T Scope::then_any(T left, T right)
{
    StepCont c;
    c.kind = StepCont::Kind::IfValue;
    c.pred = lit(true).p;
    c.body = right.p;
    return step(left, {c});
}

Sds ProgramBuilder::sds(const DynValue& init)
{
    SdsDecl d;
    d.id = static_cast<std::uint8_t>(prog_.sds.size());
    d.type = init.type();
    d.initial = init;
    prog_.sds.push_back(d);
    return {d.id};
}

Sds ProgramBuilder::lift_sds(const std::string& key, const DynValue& init)
{
    Sds s = sds(init);
    prog_.sds.back().lifted = true;
    prog_.sds.back().key = key;
    return s;
}

Dht ProgramBuilder::dht(Pin pin, DhtVariant variant)
{
    PeriphDecl d;
    d.id = static_cast<std::uint8_t>(prog_.periphs.size());
    d.kind = PeriphDecl::Kind::Dht;
    d.pin_a = pin;
    d.variant = variant;
    prog_.periphs.push_back(d);
    return {d.id};
}

Matrix ProgramBuilder::ledmatrix(Pin data, Pin clock)
{
    PeriphDecl d;
    d.id = static_cast<std::uint8_t>(prog_.periphs.size());
    d.kind = PeriphDecl::Kind::LedMatrix;
    d.pin_a = data;
    d.pin_b = clock;
    prog_.periphs.push_back(d);
    return {d.id};
}

Fun ProgramBuilder::task_fun(const std::string& name, std::vector<Type> params, Type result)
{
    FunDef f;
    f.name = name;
    f.params = std::move(params);
    f.result = std::move(result);
    f.is_task = true;
    prog_.funs.push_back(std::move(f));
    return {static_cast<std::uint8_t>(prog_.funs.size() - 1), true};
}

Fun ProgramBuilder::expr_fun(const std::string& name, std::vector<Type> params, Type result)
{
    Fun f = task_fun(name, std::move(params), std::move(result));
    prog_.funs.back().is_task = false;
    f.is_task = false;
    return f;
}

void ProgramBuilder::define(Fun f, const std::function<T(Scope&)>& body)
{
    FunDef& d = prog_.funs.at(f.id);
    Scope s(static_cast<std::uint8_t>(d.params.size()));
    d.task_body = body(s).p;
    d.frame_size = s.frame_size();
}

void ProgramBuilder::define_expr(Fun f, const std::function<E(Scope&)>& body)
{
    FunDef& d = prog_.funs.at(f.id);
    Scope s(static_cast<std::uint8_t>(d.params.size()));
    d.expr_body = body(s).p;
    d.frame_size = s.frame_size();
}

Program ProgramBuilder::main(const std::function<T(Scope&)>& body)
{
    Scope s(0);
    prog_.main = body(s).p;
    prog_.main_frame_size = s.frame_size();
    return prog_;
}

Program ProgramBuilder::main_expr(const std::function<E(Scope&)>& body)
{
    Scope s(0);
    T t = rtrn(body(s));
    t.p->implicit = true;
    prog_.main = t.p;
    prog_.main_frame_size = s.frame_size();
    return prog_;
}

} // namespace mtask::dsl
