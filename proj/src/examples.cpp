#include "mtask/examples.hpp"
#include "mtask/builder.hpp"

#include <stdexcept>

namespace mtask::examples {

using namespace mtask::dsl;

Program validated(Program p)
{
    ValidationReport r = validate(p);
    if (!r.ok()) throw std::logic_error("example program does not validate: " + r.to_string());
    return p;
}

Program blink(Pin led, int half_period)
{
    ProgramBuilder b;
    return validated(b.main([&](Scope& s) {
        return rpeat(s.then(s.then(s.then(write_d(led, lit(true)), delay(lit(half_period))), write_d(led, lit(false))),
                            delay(lit(half_period))));
    }));
}

Program recursive_blink(int ms)
{
    ProgramBuilder b;
    Fun f = b.task_fun("blink", {Type::boolean()}, Type::boolean());
    b.define(f, [&](Scope& s) {
        E state = s.arg(0);
        return s.then(s.bind(write_d(dpin(13), state), [&](E) { return delay(lit(ms)); }), call(f, {lnot(state)}));
    });
    return validated(b.main([&](Scope&) { return call(f, {lit(true)}); }));
}

Program functional_blink(Pin led, int ms)
{
    ProgramBuilder b;
    Fun f = b.task_fun("blink", {Type::boolean()}, Type::boolean());
    b.define(f, [&](Scope& s) {
        return s.bind(s.then(delay(lit(ms)), write_d(led, s.arg(0))), [&](E x) { return call(f, {lnot(x)}); });
    });
    return validated(b.main([&](Scope&) { return call(f, {lit(true)}); }));
}

Program blink_thread(const std::vector<Blinker>& blinkers)
{
    if (blinkers.empty()) throw std::invalid_argument("blink_thread needs at least one pin");
    ProgramBuilder b;
    std::vector<Fun> funs;
    for (const auto& bl : blinkers) {
        Fun f = b.task_fun("blink" + bl.pin.name(), {Type::boolean(), Type::integer()}, Type::boolean());
        b.define(f, [&](Scope& s) {
            E x = s.arg(0);
            E y = s.arg(1);
            return s.bind(s.then(delay(y), write_d(bl.pin, x)), [&](E v) { return call(f, {lnot(v), y}); });
        });
        funs.push_back(f);
    }
    return validated(b.main([&](Scope&) {
        T t = call(funs[0], {lit(true), lit(blinkers[0].period)});
        for (std::size_t i = 1; i < funs.size(); ++i) t = par_or(t, call(funs[i], {lit(true), lit(blinkers[i].period)}));
        return t;
    }));
}

Program read_pin_bin(Pin pin)
{
    ProgramBuilder b;
    return validated(b.main([&](Scope& s) {
        std::vector<StepCont> conts;
        int bin = 0;
        for (int limit : {64, 128, 192, 256}) {
            conts.push_back(s.if_value([&](E x) { return lt(x, lit(limit)); }, [&](E) { return rtrn(lit(bin)); }));
            ++bin;
        }
        return step(read_a(pin), conts);
    }));
}

Program blink_interactive(const std::string& key, int initial, Pin led)
{
    ProgramBuilder b;
    Sds interval = b.lift_sds(key, DynValue::integer(initial));
    Fun f = b.task_fun("blink", {Type::boolean()}, Type::boolean());
    b.define(f, [&](Scope& s) {
        E x = s.arg(0);
        T waited = s.bind_any(s.then(write_d(led, x), get_sds(interval)), [](E d) { return delay(d); });
        return s.then(waited, call(f, {lnot(x)}));
    });
    return validated(b.main([&](Scope&) { return call(f, {lit(true)}); }));
}

Program light_switch(const std::string& key, Pin led)
{
    ProgramBuilder b;
    Sds x = b.lift_sds(key, DynValue::boolean(false));
    return validated(b.main([&](Scope& s) { return rpeat(s.bind_any(get_sds(x), [&](E v) { return write_d(led, v); })); }));
}

Program temp_simple()
{
    ProgramBuilder b;
    Dht dht = b.dht(dpin(4), DhtVariant::DHT22);
    return validated(b.main([&](Scope&) { return par_and(temperature(dht), humidity(dht)); }));
}

namespace {

// monitor x = temperature >>* [IfValue (!= x) (setSds s)] >>= monitor
Fun define_monitor(ProgramBuilder& b, Dht dht, Sds target, Type result)
{
    Fun f = b.task_fun("monitor", {Type::integer()}, result);
    b.define(f, [&](Scope& s) {
        E old = s.arg(0);
        T changed = step(temperature(dht), {s.if_value([&](E t) { return ne(old, t); }, [&](E t) { return set_sds(target, t); })});
        return s.bind(changed, [&](E t) { return call(f, {t}); });
    });
    return f;
}

} // namespace

Program temp_sds(const std::string& temp_key)
{
    ProgramBuilder b;
    Dht dht = b.dht(dpin(4), DhtVariant::DHT22);
    Sds temp = b.lift_sds(temp_key, DynValue::integer(0));
    Fun monitor = define_monitor(b, dht, temp, Type::unit());
    return validated(b.main([&](Scope&) { return call(monitor, {lit(0)}); }));
}

Program thermostat(const std::string& temp_key, const std::string& target_key, Pin heater_pin)
{
    ProgramBuilder b;
    Dht dht = b.dht(dpin(4), DhtVariant::DHT22);
    Sds temp = b.lift_sds(temp_key, DynValue::integer(0));
    Sds target = b.lift_sds(target_key, DynValue::integer(250));
    Fun monitor = define_monitor(b, dht, temp, Type::boolean());
    Fun heater = b.task_fun("heater", {Type::boolean()}, Type::boolean());
    b.define(heater, [&](Scope& s) {
        E st = s.arg(0);
        T both = par_and(get_sds(temp), get_sds(target));
        T decided = step(both, {
            s.if_value([&](E v) { return land(lt(first(v), second(v)), lnot(st)); }, [&](E) { return write_d(heater_pin, lit(true)); }),
            s.if_value([&](E v) { return land(gt(first(v), second(v)), st); }, [&](E) { return write_d(heater_pin, lit(false)); }),
        });
        return s.bind(decided, [&](E w) { return call(heater, {w}); });
    });
    return validated(b.main([&](Scope&) { return par_or(call(monitor, {lit(0)}), call(heater, {lit(false)})); }));
}

const std::vector<std::pair<int, int>>& fourtytwo()
{
    static const std::vector<std::pair<int, int>> dots = {
        {0, 5}, {0, 4}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}, {2, 1}, {2, 0},
        {4, 5}, {5, 5}, {6, 4}, {6, 3}, {5, 2}, {4, 1}, {4, 0}, {5, 0}, {6, 0},
    };
    return dots;
}

Program matrix_toggle(int x, int y, bool on)
{
    ProgramBuilder b;
    Matrix lm = b.ledmatrix(dpin(5), dpin(7));
    return validated(b.main([&](Scope& s) { return s.then(lm_dot(lm, lit(x), lit(y), lit(on)), lm_display(lm)); }));
}

Program matrix_clear()
{
    ProgramBuilder b;
    Matrix lm = b.ledmatrix(dpin(5), dpin(7));
    return validated(b.main([&](Scope& s) { return s.then(lm_clear(lm), lm_display(lm)); }));
}

Program matrix42()
{
    ProgramBuilder b;
    Matrix lm = b.ledmatrix(dpin(5), dpin(7));
    return validated(b.main([&](Scope& s) {
        T rest = lm_display(lm);
        const auto& dots = fourtytwo();
        for (auto it = dots.rbegin(); it != dots.rend(); ++it)
            rest = s.then(lm_dot(lm, lit(it->first), lit(it->second), lit(true)), rest);
        return s.then(lm_clear(lm), rest);
    }));
}

Program plotter(const PlotterKeys& keys, Pin led, Pin button)
{
    ProgramBuilder b;
    Dht dht = b.dht(dpin(4), DhtVariant::DHT22);
    Matrix lm = b.ledmatrix(dpin(5), dpin(7));
    Sds limits = b.lift_sds(keys.limits, DynValue::pair(DynValue::integer(220), DynValue::integer(250)));
    Sds wait = b.lift_sds(keys.delay, DynValue::integer(1000));
    Sds temp = b.lift_sds(keys.temp, DynValue::integer(0));
    Sds alarm = b.lift_sds(keys.alarm, DynValue::integer(250));

    const Type I = Type::integer();

    // print (targety, x, y): one column, top to bottom
    Fun print = b.task_fun("print", {I, I, I}, Type::unit());
    b.define(print, [&](Scope& s) {
        E ty = s.arg(0), x = s.arg(1), y = s.arg(2);
        return if_task(eq(y, lit(8)), lm_display(lm),
                       s.then(lm_dot(lm, x, y, eq(ty, y)), call(print, {ty, x, y + lit(1)})));
    });
    Fun min = b.expr_fun("min", {I, I}, I);
    b.define_expr(min, [&](Scope& s) { return if_(lt(s.arg(0), s.arg(1)), s.arg(0), s.arg(1)); });
    Fun max = b.expr_fun("max", {I, I}, I);
    b.define_expr(max, [&](Scope& s) { return if_(gt(s.arg(0), s.arg(1)), s.arg(0), s.arg(1)); });
    Fun calcy = b.expr_fun("calcy", {I, I, I}, I);
    b.define_expr(calcy, [&](Scope& s) {
        E down = s.arg(0), up = s.arg(1), val = s.arg(2);
        E scaled = (val - down) / ((up - down) / lit(7));
        return call_expr(min, {lit(7), call_expr(max, {lit(0), scaled})});
    });

    Fun plot = b.task_fun("plot", {I}, Type::unit());
    b.define(plot, [&](Scope& s) {
        E x = s.arg(0);
        return s.bind_any(get_sds(limits), [&](E lim) {
            return s.bind_any(temperature(dht), [&](E y) {
                T drawn = call(print, {call_expr(calcy, {first(lim), second(lim), y}), x, lit(0)});
                T reported = s.then(drawn, set_sds(temp, y));
                T waited = s.bind_any(s.then(reported, get_sds(wait)), [](E d) { return delay(d); });
                return s.then(waited, call(plot, {if_(eq(x, lit(7)), lit(0), x + lit(1))}));
            });
        });
    });

    return validated(b.main([&](Scope& s) {
        T set_alarm = rpeat(step(par_and(get_sds(alarm), get_sds(temp)),
                                 {s.if_value([](E v) { return gt(second(v), first(v)); }, [&](E) { return write_d(led, lit(true)); })}));
        T unset_alarm = rpeat(step(read_d(button), {s.if_value([](E pressed) { return pressed; }, [&](E) { return write_d(led, lit(false)); })}));
        return par_or(par_or(call(plot, {lit(0)}), unset_alarm), set_alarm);
    }));
}

Program sum(int x, int y)
{
    ProgramBuilder b;
    Fun f = b.expr_fun("sum", {Type::integer(), Type::integer()}, Type::integer());
    b.define_expr(f, [](Scope& s) { return s.arg(0) + s.arg(1); });
    return validated(b.main_expr([&](Scope&) { return call_expr(f, {lit(x), lit(y)}); }));
}

Program factorial(int n)
{
    ProgramBuilder b;
    Fun f = b.expr_fun("fac", {Type::integer()}, Type::integer());
    b.define_expr(f, [&](Scope& s) {
        E i = s.arg(0);
        return if_(eq(i, lit(0)), lit(1), i * call_expr(f, {i - lit(1)}));
    });
    return validated(b.main_expr([&](Scope&) { return call_expr(f, {lit(n)}); }));
}

Program factorial_acc(int n)
{
    ProgramBuilder b;
    Fun acc = b.expr_fun("facacc", {Type::integer(), Type::integer()}, Type::integer());
    b.define_expr(acc, [&](Scope& s) {
        E i = s.arg(0), a = s.arg(1);
        return if_(eq(i, lit(0)), a, call_expr(acc, {i - lit(1), i * a}));
    });
    Fun fac = b.expr_fun("fac", {Type::integer()}, Type::integer());
    b.define_expr(fac, [&](Scope& s) { return call_expr(acc, {s.arg(0), lit(1)}); });
    return validated(b.main_expr([&](Scope&) { return call_expr(fac, {lit(n)}); }));
}

} // namespace mtask::examples
