#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace mtask {

enum class TypeKind : std::uint8_t { Int = 0, Bool = 1, Real = 2, Unit = 3, Pair = 4 };

/// Static type of a value that has a stack representation on the device:
/// the scalars plus arbitrarily nested pairs.
class Type {
public:
    Type() = default;

    static Type integer() { return Type(TypeKind::Int); }
    static Type boolean() { return Type(TypeKind::Bool); }
    static Type real() { return Type(TypeKind::Real); }
    static Type unit() { return Type(TypeKind::Unit); }
    static Type pair(Type a, Type b);

    TypeKind kind() const { return kind_; }
    bool is_pair() const { return kind_ == TypeKind::Pair; }
    const Type& first() const;
    const Type& second() const;

    std::string to_string() const;

    friend bool operator==(const Type& a, const Type& b);

private:
    explicit Type(TypeKind k) : kind_(k) {}

    TypeKind kind_ = TypeKind::Unit;
    std::shared_ptr<const std::pair<Type, Type>> parts_;
};

class DynValue;

struct Unit {
    friend bool operator==(Unit, Unit) { return true; }
};

/// A runtime value: Int (32 bit, wrapping), Bool, Real, Unit or a pair.
class DynValue {
public:
    DynValue() : v_(Unit{}) {}
    static DynValue integer(std::int32_t i) { return DynValue(i); }
    static DynValue boolean(bool b) { return DynValue(b); }
    static DynValue real(double r) { return DynValue(r); }
    static DynValue unit() { return DynValue(); }
    static DynValue pair(DynValue a, DynValue b);

    /// Zero value of a type (0, False, 0.0, (), pairs of zeros).
    static DynValue zero(const Type& t);

    TypeKind kind() const { return static_cast<TypeKind>(v_.index()); }
    Type type() const;

    std::int32_t as_int() const;
    bool as_bool() const;
    double as_real() const;
    const DynValue& first() const;
    const DynValue& second() const;

    bool has_type(const Type& t) const;
    std::string to_string() const;

    friend bool operator==(const DynValue& a, const DynValue& b);

private:
    using PairPtr = std::shared_ptr<const std::pair<DynValue, DynValue>>;
    explicit DynValue(std::int32_t i) : v_(i) {}
    explicit DynValue(bool b) : v_(b) {}
    explicit DynValue(double r) : v_(r) {}

    std::variant<std::int32_t, bool, double, Unit, PairPtr> v_;
};

class TypeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TaskState : std::uint8_t { NoValue = 0, Unstable = 1, Stable = 2 };

/// Observable result of a task: no value, or a value flagged stable/unstable.
template <class T>
class TaskValue {
public:
    TaskValue() = default;

    static TaskValue no_value() { return {}; }
    static TaskValue unstable(T v) { return TaskValue(std::move(v), false); }
    static TaskValue stable(T v) { return TaskValue(std::move(v), true); }
    static TaskValue of(T v, bool stable) { return TaskValue(std::move(v), stable); }

    bool has_value() const { return value_.has_value(); }
    bool is_stable() const { return value_.has_value() && stable_; }
    bool is_unstable() const { return value_.has_value() && !stable_; }
    const T& value() const { return *value_; }

    TaskState state() const
    {
        if (!value_) return TaskState::NoValue;
        return stable_ ? TaskState::Stable : TaskState::Unstable;
    }

    template <class F>
    auto map(F&& f) const -> TaskValue<decltype(f(std::declval<const T&>()))>
    {
        using R = decltype(f(std::declval<const T&>()));
        if (!value_) return TaskValue<R>::no_value();
        return TaskValue<R>::of(f(*value_), stable_);
    }

    friend bool operator==(const TaskValue& a, const TaskValue& b)
    {
        if (a.has_value() != b.has_value()) return false;
        if (!a.has_value()) return true;
        return a.stable_ == b.stable_ && *a.value_ == *b.value_;
    }

private:
    TaskValue(T v, bool s) : value_(std::move(v)), stable_(s) {}

    std::optional<T> value_;
    bool stable_ = false;
};

/// Whether `to` may follow `from` on successive polls of the same task node.
/// Everything is allowed except leaving (or changing) a stable value.
template <class T>
bool legal_transition(const TaskValue<T>& from, const TaskValue<T>& to)
{
    if (from.is_stable()) return from == to;
    return true;
}

/// Conjunction: a pair when both sides have a value, stable only if both are.
template <class A, class B, class P>
TaskValue<P> combine_and(const TaskValue<A>& l, const TaskValue<B>& r, P (*make_pair)(const A&, const B&))
{
    if (l.has_value() && r.has_value())
        return TaskValue<P>::of(make_pair(l.value(), r.value()), l.is_stable() && r.is_stable());
    return TaskValue<P>::no_value();
}

/// Disjunction, preferring the most stable side (left wins ties).
template <class T>
TaskValue<T> combine_or(const TaskValue<T>& l, const TaskValue<T>& r)
{
    if (l.is_stable()) return l;
    if (l.has_value() && r.is_stable()) return r;
    if (!l.has_value()) return r;
    return l;
}

using DynTaskValue = TaskValue<DynValue>;

inline DynValue pair_of(const DynValue& a, const DynValue& b) { return DynValue::pair(a, b); }

inline DynTaskValue combine_and(const DynTaskValue& l, const DynTaskValue& r)
{
    return combine_and<DynValue, DynValue, DynValue>(l, r, &pair_of);
}

std::string to_string(const DynTaskValue& tv);
const char* to_string(TaskState s);

} // namespace mtask
