#include "mtask/value.hpp"

#include <array>
#include <charconv>

namespace mtask {

Type Type::pair(Type a, Type b)
{
    Type t(TypeKind::Pair);
    t.parts_ = std::make_shared<const std::pair<Type, Type>>(std::move(a), std::move(b));
    return t;
}

const Type& Type::first() const
{
    if (!parts_) throw TypeError("first of non-pair type " + to_string());
    return parts_->first;
}

const Type& Type::second() const
{
    if (!parts_) throw TypeError("second of non-pair type " + to_string());
    return parts_->second;
}

std::string Type::to_string() const
{
    switch (kind_) {
    case TypeKind::Int: return "Int";
    case TypeKind::Bool: return "Bool";
    case TypeKind::Real: return "Real";
    case TypeKind::Unit: return "()";
    case TypeKind::Pair: return "(" + parts_->first.to_string() + ", " + parts_->second.to_string() + ")";
    }
    return "?";
}

bool operator==(const Type& a, const Type& b)
{
    if (a.kind_ != b.kind_) return false;
    if (a.kind_ != TypeKind::Pair) return true;
    return a.parts_->first == b.parts_->first && a.parts_->second == b.parts_->second;
}

DynValue DynValue::pair(DynValue a, DynValue b)
{
    DynValue v;
    v.v_ = std::make_shared<const std::pair<DynValue, DynValue>>(std::move(a), std::move(b));
    return v;
}

DynValue DynValue::zero(const Type& t)
{
    switch (t.kind()) {
    case TypeKind::Int: return integer(0);
    case TypeKind::Bool: return boolean(false);
    case TypeKind::Real: return real(0.0);
    case TypeKind::Unit: return unit();
    case TypeKind::Pair: return pair(zero(t.first()), zero(t.second()));
    }
    return unit();
}

Type DynValue::type() const
{
    switch (kind()) {
    case TypeKind::Int: return Type::integer();
    case TypeKind::Bool: return Type::boolean();
    case TypeKind::Real: return Type::real();
    case TypeKind::Unit: return Type::unit();
    case TypeKind::Pair: return Type::pair(first().type(), second().type());
    }
    return Type::unit();
}

std::int32_t DynValue::as_int() const
{
    if (auto* p = std::get_if<std::int32_t>(&v_)) return *p;
    throw TypeError("expected Int, got " + to_string());
}

bool DynValue::as_bool() const
{
    if (auto* p = std::get_if<bool>(&v_)) return *p;
    throw TypeError("expected Bool, got " + to_string());
}

double DynValue::as_real() const
{
    if (auto* p = std::get_if<double>(&v_)) return *p;
    throw TypeError("expected Real, got " + to_string());
}

const DynValue& DynValue::first() const
{
    if (auto* p = std::get_if<PairPtr>(&v_)) return (*p)->first;
    throw TypeError("expected pair, got " + to_string());
}

const DynValue& DynValue::second() const
{
    if (auto* p = std::get_if<PairPtr>(&v_)) return (*p)->second;
    throw TypeError("expected pair, got " + to_string());
}

bool DynValue::has_type(const Type& t) const
{
    if (kind() != t.kind()) return false;
    if (kind() != TypeKind::Pair) return true;
    return first().has_type(t.first()) && second().has_type(t.second());
}

namespace {

std::string real_to_string(double r)
{
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), r);
    std::string s(buf.data(), res.ptr);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

} // namespace

std::string DynValue::to_string() const
{
    switch (kind()) {
    case TypeKind::Int: return std::to_string(std::get<std::int32_t>(v_));
    case TypeKind::Bool: return std::get<bool>(v_) ? "True" : "False";
    case TypeKind::Real: return real_to_string(std::get<double>(v_));
    case TypeKind::Unit: return "()";
    case TypeKind::Pair: return "(" + first().to_string() + ", " + second().to_string() + ")";
    }
    return "?";
}

bool operator==(const DynValue& a, const DynValue& b)
{
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
    case TypeKind::Int: return std::get<std::int32_t>(a.v_) == std::get<std::int32_t>(b.v_);
    case TypeKind::Bool: return std::get<bool>(a.v_) == std::get<bool>(b.v_);
    case TypeKind::Real: return std::get<double>(a.v_) == std::get<double>(b.v_);
    case TypeKind::Unit: return true;
    case TypeKind::Pair: return a.first() == b.first() && a.second() == b.second();
    }
    return false;
}

const char* to_string(TaskState s)
{
    switch (s) {
    case TaskState::NoValue: return "NoValue";
    case TaskState::Unstable: return "Unstable";
    case TaskState::Stable: return "Stable";
    }
    return "?";
}

std::string to_string(const DynTaskValue& tv)
{
    if (!tv.has_value()) return "NoValue";
    return std::string("Value ") + tv.value().to_string() + (tv.is_stable() ? " stable" : " unstable");
}

} // namespace mtask
