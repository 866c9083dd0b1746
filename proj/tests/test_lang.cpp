#include "mtask/builder.hpp"
#include "mtask/examples.hpp"
#include "mtask/reference.hpp"
#include "mtask/testkit.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mtask;
using namespace mtask::dsl;

namespace {

DynTaskValue nv() { return DynTaskValue::no_value(); }
DynTaskValue us(int i) { return DynTaskValue::unstable(DynValue::integer(i)); }
DynTaskValue st(int i) { return DynTaskValue::stable(DynValue::integer(i)); }

DynValue I(int i) { return DynValue::integer(i); }

DynTaskValue random_tv(std::mt19937_64& rng, TaskState s)
{
    int v = std::uniform_int_distribution<int>(-1000, 1000)(rng);
    switch (s) {
    case TaskState::NoValue: return nv();
    case TaskState::Unstable: return us(v);
    case TaskState::Stable: return st(v);
    }
    return nv();
}

bool has_diag(const ValidationReport& r, const std::string& needle)
{
    for (const auto& d : r.diagnostics)
        if (d.reason.find(needle) != std::string::npos) return true;
    return false;
}

} // namespace

TEST(Value, IntsWrapAt32Bits)
{
    DynValue r = apply_arith(ArithOp::Add, I(2147483647), I(1), RealWidth::F64);
    EXPECT_EQ(r.as_int(), -2147483647 - 1);
    EXPECT_EQ(apply_arith(ArithOp::Mul, I(65536), I(65536), RealWidth::F64).as_int(), 0);
}

TEST(Value, DivisionByZeroTraps)
{
    try {
        apply_arith(ArithOp::Div, I(1), I(0), RealWidth::F64);
        FAIL();
    } catch (const Trap& t) {
        EXPECT_EQ(t.kind, TrapKind::DivByZero);
    }
}

TEST(Value, PairsAndTypes)
{
    DynValue p = DynValue::pair(I(7), DynValue::boolean(false));
    EXPECT_TRUE(p.has_type(Type::pair(Type::integer(), Type::boolean())));
    EXPECT_FALSE(p.has_type(Type::pair(Type::integer(), Type::integer())));
    EXPECT_EQ(p.first().as_int(), 7);
    EXPECT_EQ(DynValue::zero(Type::pair(Type::real(), Type::unit())), DynValue::pair(DynValue::real(0), DynValue::unit()));
    EXPECT_THROW(I(1).as_bool(), TypeError);
}

TEST(Value, RealsRoundToSinglePrecision)
{
    DynValue r = round_real(DynValue::pair(DynValue::real(0.1), I(3)), RealWidth::F32);
    EXPECT_EQ(r.first().as_real(), static_cast<double>(0.1f));
    EXPECT_EQ(r.second().as_int(), 3);
}

// Each clause of the conjunction and disjunction written out as a table,
// independent of the library implementation.
TEST(Combine, NineCaseTablesWithRandomPayloads)
{
    std::mt19937_64 rng(7);
    const TaskState states[] = {TaskState::NoValue, TaskState::Unstable, TaskState::Stable};
    for (int round = 0; round < 1000; ++round) {
        TaskState ls = states[round % 3], rs = states[(round / 3) % 3];
        DynTaskValue l = random_tv(rng, ls), r = random_tv(rng, rs);

        DynTaskValue want_and;
        if (l.has_value() && r.has_value())
            want_and = DynTaskValue::of(DynValue::pair(l.value(), r.value()), ls == TaskState::Stable && rs == TaskState::Stable);
        EXPECT_EQ(combine_and(l, r), want_and);

        DynTaskValue want_or;
        if (ls == TaskState::Stable)
            want_or = l;
        else if (ls == TaskState::Unstable && rs == TaskState::Stable)
            want_or = r;
        else if (ls == TaskState::NoValue)
            want_or = r;
        else
            want_or = l;
        EXPECT_EQ(combine_or(l, r), want_or);
    }
}

TEST(Combine, WorkedExamples)
{
    EXPECT_EQ(combine_and(st(1), st(2)), DynTaskValue::stable(DynValue::pair(I(1), I(2))));
    EXPECT_EQ(combine_and(nv(), st(2)), nv());
    EXPECT_EQ(combine_and(us(1), st(2)), DynTaskValue::unstable(DynValue::pair(I(1), I(2))));
    EXPECT_EQ(combine_or(st(1), us(2)), st(1));
    EXPECT_EQ(combine_or(nv(), us(2)), us(2));
    EXPECT_EQ(combine_or(us(1), us(2)), us(1));
    EXPECT_EQ(combine_or(us(1), st(2)), st(2));
}

TEST(Legality, TransitionRelation)
{
    using testkit::LegalityMonitor;
    EXPECT_TRUE(LegalityMonitor::allowed(nv(), us(1)));
    EXPECT_TRUE(LegalityMonitor::allowed(us(1), nv()));
    EXPECT_TRUE(LegalityMonitor::allowed(us(1), st(1)));
    EXPECT_TRUE(LegalityMonitor::allowed(nv(), st(1)));
    EXPECT_TRUE(LegalityMonitor::allowed(us(1), us(2)));
    EXPECT_TRUE(LegalityMonitor::allowed(st(1), st(1)));
    EXPECT_FALSE(LegalityMonitor::allowed(st(1), us(1)));
    EXPECT_FALSE(LegalityMonitor::allowed(st(1), nv()));
    EXPECT_FALSE(LegalityMonitor::allowed(st(1), st(2)));
    for (auto a : {nv(), us(1), st(1)})
        for (auto b : {nv(), us(1), us(2), st(1), st(2)}) EXPECT_EQ(LegalityMonitor::allowed(a, b), legal_transition(a, b));
}

TEST(Validate, BlinkIsAccepted)
{
    ProgramBuilder b;
    Program p = b.main([](Scope& s) {
        return rpeat(s.then(s.then(s.then(write_d(dpin(2), lit(true)), delay(lit(500))), write_d(dpin(2), lit(false))), delay(lit(500))));
    });
    EXPECT_TRUE(validate(p).ok());
    EXPECT_TRUE(p.validated);
}

TEST(Validate, ArityMismatch)
{
    ProgramBuilder b;
    Fun f = b.task_fun("f", {Type::integer()}, Type::integer());
    b.define(f, [](Scope& s) { return rtrn(s.arg(0)); });
    Program p = b.main([&](Scope&) { return call(f, {lit(1), lit(2)}); });
    ValidationReport r = validate(p);
    EXPECT_FALSE(r.ok());
    EXPECT_TRUE(has_diag(r, "arity mismatch")) << r.to_string();
    EXPECT_EQ(r.diagnostics[0].path.substr(0, 4), "main");
}

TEST(Validate, NonBoolConditionIsTypeMismatch)
{
    ProgramBuilder b;
    Program p = b.main([](Scope&) { return rtrn(if_(lit(1), lit(1), lit(2))); });
    ValidationReport r = validate(p);
    EXPECT_TRUE(has_diag(r, "type mismatch")) << r.to_string();
}

TEST(Validate, OtherDiagnostics)
{
    {
        ProgramBuilder b;
        Program p = b.main([](Scope&) { return rtrn(if_(lit(true), lit(1), lit(false))); });
        EXPECT_TRUE(has_diag(validate(p), "If branches"));
    }
    {
        ProgramBuilder b;
        Program p = b.main([](Scope&) { return get_sds(Sds{9}); });
        EXPECT_TRUE(has_diag(validate(p), "unknown sds"));
    }
    {
        ProgramBuilder b;
        Program p = b.main([](Scope&) { return temperature(Dht{3}); });
        EXPECT_TRUE(has_diag(validate(p), "unknown peripheral"));
    }
    {
        ProgramBuilder b;
        Program p = b.main([](Scope&) { return par_or(rtrn(lit(1)), rtrn(lit(true))); });
        EXPECT_TRUE(has_diag(validate(p), "type mismatch"));
    }
    {
        ProgramBuilder b;
        Program p = b.main([](Scope&) { return read_a(dpin(3)); });
        EXPECT_TRUE(has_diag(validate(p), "analog access"));
    }
    {
        ProgramBuilder b;
        Fun f = b.task_fun("loop", {}, Type::integer());
        b.define(f, [&](Scope&) { return par_or(call(f, {}), rtrn(lit(1))); });
        Program p = b.main([&](Scope&) { return call(f, {}); });
        EXPECT_TRUE(has_diag(validate(p), "unguarded recursion"));
    }
}

TEST(Validate, MarksTailCalls)
{
    Program p = examples::factorial_acc(3);
    const Expr& body = *p.funs[0].expr_body;
    ASSERT_EQ(body.kind, Expr::Kind::If);
    EXPECT_TRUE(body.kids[2]->tail);
    Program q = examples::factorial(3);
    const Expr& mul = *q.funs[0].expr_body->kids[2];
    EXPECT_FALSE(mul.kids[1]->tail);
}

TEST(EvalExpr, Examples)
{
    EXPECT_EQ(eval_expr(*(lit(4) + lit(2)).p, {}), I(6));
    EXPECT_EQ(eval_expr(*if_(lit(true), lit(1), lit(2)).p, {}), I(1));
    EXPECT_EQ(eval_expr(*first(tupl(lit(7), lit(false))).p, {}), I(7));
    EXPECT_EQ(eval_expr(*second(tupl(lit(7), lit(false))).p, {}), DynValue::boolean(false));
    EXPECT_EQ(eval_expr(*lnot(lt(lit(2.5), lit(1.0))).p, {}), DynValue::boolean(true));
}

TEST(EvalExpr, FunctionsBothForms)
{
    for (const Program& p : {examples::factorial(5), examples::factorial_acc(5)}) {
        Env env(p.main_frame_size);
        EXPECT_EQ(eval_expr(p, *p.main->args[0], env), I(120));
    }
    Program s = examples::sum(1, 2);
    Env env(s.main_frame_size);
    EXPECT_EQ(eval_expr(s, *s.main->args[0], env), I(3));
}

TEST(EvalExpr, DeepNonTailRecursionTraps)
{
    Program p = examples::factorial(100);
    Env env(p.main_frame_size);
    try {
        eval_expr(p, *p.main->args[0], env);
        FAIL();
    } catch (const Trap& t) {
        EXPECT_EQ(t.kind, TrapKind::CallDepth);
    }
    Program q = examples::factorial_acc(100000);
    Env env2(q.main_frame_size);
    EXPECT_NO_THROW(eval_expr(q, *q.main->args[0], env2));
}

TEST(MatchContinuation, ReadPinBinFirstMatchWins)
{
    Program p = examples::read_pin_bin();
    const auto& conts = p.main->conts;
    Env env(p.main_frame_size);
    auto hit = match_continuation(p, conts, us(63), env);
    ASSERT_TRUE(hit);
    EXPECT_EQ(*hit, 0u);
    hit = match_continuation(p, conts, us(100), env);
    ASSERT_TRUE(hit);
    EXPECT_EQ(*hit, 1u);
    EXPECT_FALSE(match_continuation(p, conts, us(300), env));
    EXPECT_FALSE(match_continuation(p, conts, nv(), env));
}

TEST(MatchContinuation, GuardKinds)
{
    ProgramBuilder b;
    Program p = b.main([](Scope& s) {
        return step(read_a(apin(0)), {s.if_stable([](E) { return lit(true); }, [](E x) { return rtrn(x); }),
                                      s.if_unstable([](E x) { return gt(x, lit(10)); }, [](E x) { return rtrn(x); }),
                                      if_no_value(rtrn(lit(-1))), always(rtrn(lit(-2)))});
    });
    ASSERT_TRUE(validate(p).ok());
    Env env(p.main_frame_size);
    auto m = [&](const DynTaskValue& v) { return match_continuation(p, p.main->conts, v, env); };
    EXPECT_EQ(*m(st(5)), 0u);
    EXPECT_EQ(*m(us(11)), 1u);
    EXPECT_EQ(*m(us(5)), 3u);
    EXPECT_EQ(*m(nv()), 2u);
}

TEST(MatchContinuation, PrependingProperties)
{
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        int lim = std::uniform_int_distribution<int>(0, 50)(rng);
        int kind = i % 3;
        DynTaskValue v = kind == 0 ? nv() : (kind == 1 ? us(lim + 1) : st(lim - 1));
        ProgramBuilder b;
        Program base = b.main([&](Scope& s) {
            return step(read_a(apin(0)), {s.if_value([&](E x) { return lt(x, lit(lim)); }, [](E x) { return rtrn(x); }),
                                          if_no_value(rtrn(lit(0)))});
        });
        ProgramBuilder b2;
        Program never = b2.main([&](Scope& s) {
            return step(read_a(apin(0)), {s.if_value([](E) { return lit(false); }, [](E x) { return rtrn(x); }),
                                          s.if_value([&](E x) { return lt(x, lit(lim)); }, [](E x) { return rtrn(x); }),
                                          if_no_value(rtrn(lit(0)))});
        });
        ProgramBuilder b3;
        Program first_always = b3.main([&](Scope& s) {
            return step(read_a(apin(0)), {always(rtrn(lit(9))),
                                          s.if_value([&](E x) { return lt(x, lit(lim)); }, [](E x) { return rtrn(x); })});
        });
        ASSERT_TRUE(validate(base).ok() && validate(never).ok() && validate(first_always).ok());
        Env e1(base.main_frame_size), e2(never.main_frame_size), e3(first_always.main_frame_size);
        auto a = match_continuation(base, base.main->conts, v, e1);
        auto c = match_continuation(never, never.main->conts, v, e2);
        EXPECT_EQ(a.has_value(), c.has_value());
        if (a && c) EXPECT_EQ(*a + 1, *c);
        auto d = match_continuation(first_always, first_always.main->conts, v, e3);
        ASSERT_TRUE(d);
        EXPECT_EQ(*d, 0u);
    }
}

TEST(Reference, DelayOvershoot)
{
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return delay(lit(500)); }));
    World w;
    ReferenceTask t(p, w, 0);
    EXPECT_EQ(t.step(499), nv());
    EXPECT_EQ(t.step(503), st(3));
    EXPECT_EQ(t.step(900), st(3));
}

TEST(Reference, RpeatWritesEveryPassWithoutValue)
{
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return rpeat(write_d(dpin(2), lit(true))); }));
    World w;
    int writes = 0;
    w.bus.on_write = [&](const PinWrite&) { ++writes; };
    ReferenceTask t(p, w, 0);
    EXPECT_EQ(t.step(0), nv());
    EXPECT_EQ(t.step(1), nv());
    EXPECT_EQ(writes, 2);
    EXPECT_TRUE(w.bus.read_digital(dpin(2)));
}

TEST(Reference, BasicTaskValues)
{
    ProgramBuilder b;
    Sds s0{0};
    s0 = b.sds(DynValue::integer(4));
    Program p = examples::validated(b.main([&](Scope& s) {
        return par_and(par_and(read_a(apin(1)), s.then(set_sds(s0, lit(9)), get_sds(s0))), write_a(apin(2), lit(77)));
    }));
    World w;
    w.bus.set_analog(1, 300);
    ReferenceTask t(p, w, 0);
    DynTaskValue v = t.step(0);
    ASSERT_TRUE(v.has_value());
    EXPECT_FALSE(v.is_stable());
    EXPECT_EQ(v.value().first().first(), I(300));
    EXPECT_EQ(v.value().first().second(), I(9));
    EXPECT_EQ(v.value().second(), I(77));
    EXPECT_EQ(w.bus.read_analog(apin(2)), 77);
}

TEST(Reference, TrapIsSeparateChannel)
{
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope& s) {
        return s.bind(rtrn(lit(0)), [](E x) { return rtrn(lit(10) / x); });
    }));
    World w;
    ReferenceTask t(p, w, 0);
    EXPECT_EQ(t.step(0), nv());
    ASSERT_TRUE(t.failed());
    EXPECT_EQ(*t.failure(), TrapKind::DivByZero);
}

TEST(Reference, Deterministic)
{
    std::mt19937_64 rng(99);
    for (int i = 0; i < 30; ++i) {
        Program p = testkit::random_program(rng);
        testkit::Script s = testkit::random_script(rng, p, 100);
        testkit::DualRun a = testkit::run_dual(p, s);
        testkit::DualRun b = testkit::run_dual(p, s);
        EXPECT_EQ(a.ref_trace, b.ref_trace);
        EXPECT_EQ(a.ref_writes.size(), b.ref_writes.size());
    }
}

TEST(Pretty, Golden)
{
    auto lines = pretty_print(examples::recursive_blink());
    ASSERT_EQ(lines.size(), 1u);
    EXPECT_EQ(lines[0], "let f0 a1 = writeD(D13, a1) >>= \\a2.(delay 1000) >>| (f0 (Not a1)) in (f0 True)");
}

TEST(Pretty, SmallestProgram)
{
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return rtrn(lit(1)); }));
    EXPECT_EQ(pretty_print(p)[0], "(rtrn 1)");
}

TEST(Pretty, Sum)
{
    EXPECT_EQ(pretty_print(examples::sum(1, 2))[0], "let f0 (a1, a2) = a1 + a2 in (f0 (1, 2))");
}

TEST(Serialize, RoundTripAndStableBytes)
{
    std::mt19937_64 rng(5);
    std::vector<Program> progs = {examples::blink(), examples::thermostat(), examples::plotter(), examples::matrix42(),
                                  examples::factorial_acc(10)};
    for (int i = 0; i < 50; ++i) progs.push_back(testkit::random_program(rng));
    for (const Program& p : progs) {
        auto bytes = serialize(p);
        EXPECT_EQ(bytes, serialize(p));
        Program q = deserialize(bytes);
        EXPECT_EQ(serialize(q), bytes);
        ASSERT_TRUE(validate(q).ok());
        EXPECT_EQ(pretty_print(q), pretty_print(p));
    }
}

TEST(Serialize, RejectsGarbage)
{
    EXPECT_THROW(deserialize({}), FormatError);
    auto bytes = serialize(examples::blink());
    bytes.resize(bytes.size() - 3);
    EXPECT_THROW(deserialize(bytes), FormatError);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        auto b = serialize(examples::blink());
        b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng)] ^= 0x5A;
        try {
            deserialize(b);
        } catch (const FormatError&) {
        }
    }
}
