#pragma once

// Host-side combinator library for writing programs. C++ plays the role of
// the macro language: loops and helper functions generate program text.

#include "mtask/lang.hpp"

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace mtask::dsl {

struct E {
    ExprPtr p;
};

struct T {
    TaskPtr p;
};

struct Sds {
    std::uint8_t id;
};

struct Dht {
    std::uint8_t id;
};

struct Matrix {
    std::uint8_t id;
};

struct Fun {
    std::uint8_t id;
    bool is_task;
};

E lit(std::int32_t i);
E lit(bool b);
E lit(double r);
E lit(const DynValue& v);
E unit();

E operator+(E a, E b);
E operator-(E a, E b);
E operator*(E a, E b);
E operator/(E a, E b);

E eq(E a, E b);
E ne(E a, E b);
E lt(E a, E b);
E gt(E a, E b);
E le(E a, E b);
E ge(E a, E b);
E land(E a, E b);
E lor(E a, E b);
E lnot(E a);
E if_(E c, E t, E e);
E first(E a);
E second(E a);
E tupl(E a, E b);
E call_expr(Fun f, std::vector<E> args);

T rtrn(E e);
T rpeat(T t);
T delay(E ms);
T par_and(T a, T b);
T par_or(T a, T b);
T if_task(E c, T t, T e);
T call(Fun f, std::vector<E> args);
T get_sds(Sds s);
T set_sds(Sds s, E v);
T read_a(Pin p);
T write_a(Pin p, E v);
T read_d(Pin p);
T write_d(Pin p, E v);
T temperature(Dht d);
T humidity(Dht d);
T lm_dot(Matrix m, E x, E y, E on);
T lm_intensity(Matrix m, E level);
T lm_clear(Matrix m);
T lm_display(Matrix m);

T step(T left, std::vector<StepCont> conts);
StepCont if_no_value(T body);
StepCont always(T body);

// A function body (or main) under construction: owns the frame layout, so
// every binder introduced here gets a fresh slot after the parameters.
class Scope {
public:
    explicit Scope(std::uint8_t params) : next_(params) {}

    E arg(std::uint8_t i) const;

    T bind(T left, const std::function<T(E)>& body);      // >>=.
    T then(T left, T right);                             // >>|.
    T bind_any(T left, const std::function<T(E)>& body);  // >>~.
    T then_any(T left, T right);                         // >>..

    StepCont if_value(const std::function<E(E)>& pred, const std::function<T(E)>& body);
    StepCont if_stable(const std::function<E(E)>& pred, const std::function<T(E)>& body);
    StepCont if_unstable(const std::function<E(E)>& pred, const std::function<T(E)>& body);

    std::uint8_t frame_size() const { return next_; }

private:
    StepCont guarded(StepCont::Kind k, const std::function<E(E)>& pred, const std::function<T(E)>& body);
    E fresh();

    std::uint8_t next_;
};

class ProgramBuilder {
public:
    Sds sds(const DynValue& init);
    Sds lift_sds(const std::string& key, const DynValue& init);
    Dht dht(Pin pin, DhtVariant variant = DhtVariant::DHT22);
    Matrix ledmatrix(Pin data, Pin clock);

    Fun task_fun(const std::string& name, std::vector<Type> params, Type result);
    Fun expr_fun(const std::string& name, std::vector<Type> params, Type result);
    void define(Fun f, const std::function<T(Scope&)>& body);
    void define_expr(Fun f, const std::function<E(Scope&)>& body);

    Program main(const std::function<T(Scope&)>& body);
    Program main_expr(const std::function<E(Scope&)>& body);

private:
    Program prog_;
};

} // namespace mtask::dsl
