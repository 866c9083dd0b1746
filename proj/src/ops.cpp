#include "mtask/ops.hpp"

#include <limits>

namespace mtask {

const char* to_string(TrapKind k)
{
    switch (k) {
    case TrapKind::DivByZero: return "division by zero";
    case TrapKind::CallDepth: return "call depth exceeded";
    case TrapKind::StackOverflow: return "stack overflow";
    case TrapKind::OutOfArena: return "out of arena";
    case TrapKind::TypeError: return "type error";
    case TrapKind::Watchdog: return "watchdog";
    }
    return "?";
}

const char* to_symbol(ArithOp op)
{
    switch (op) {
    case ArithOp::Add: return "+";
    case ArithOp::Sub: return "-";
    case ArithOp::Mul: return "*";
    case ArithOp::Div: return "/";
    }
    return "?";
}

const char* to_symbol(CmpOp op)
{
    switch (op) {
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Gt: return ">";
    case CmpOp::Le: return "<=";
    case CmpOp::Ge: return ">=";
    }
    return "?";
}

DynValue round_real(const DynValue& v, RealWidth w)
{
    if (w == RealWidth::F64) return v;
    if (v.kind() == TypeKind::Real) return DynValue::real(static_cast<float>(v.as_real()));
    if (v.kind() == TypeKind::Pair) return DynValue::pair(round_real(v.first(), w), round_real(v.second(), w));
    return v;
}

namespace {

std::int32_t wrap(std::int64_t x)
{
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(static_cast<std::uint64_t>(x)));
}

} // namespace

DynValue apply_arith(ArithOp op, const DynValue& a, const DynValue& b, RealWidth w)
{
    if (a.kind() == TypeKind::Int && b.kind() == TypeKind::Int) {
        std::int64_t x = a.as_int(), y = b.as_int();
        switch (op) {
        case ArithOp::Add: return DynValue::integer(wrap(x + y));
        case ArithOp::Sub: return DynValue::integer(wrap(x - y));
        case ArithOp::Mul: return DynValue::integer(wrap(x * y));
        case ArithOp::Div:
            if (y == 0) throw Trap(TrapKind::DivByZero);
            return DynValue::integer(wrap(x / y));
        }
    }
    if (a.kind() == TypeKind::Real && b.kind() == TypeKind::Real) {
        if (w == RealWidth::F32) {
            float x = static_cast<float>(a.as_real()), y = static_cast<float>(b.as_real());
            float r = 0;
            switch (op) {
            case ArithOp::Add: r = x + y; break;
            case ArithOp::Sub: r = x - y; break;
            case ArithOp::Mul: r = x * y; break;
            case ArithOp::Div: r = x / y; break;
            }
            return DynValue::real(r);
        }
        double x = a.as_real(), y = b.as_real();
        switch (op) {
        case ArithOp::Add: return DynValue::real(x + y);
        case ArithOp::Sub: return DynValue::real(x - y);
        case ArithOp::Mul: return DynValue::real(x * y);
        case ArithOp::Div: return DynValue::real(x / y);
        }
    }
    throw Trap(TrapKind::TypeError);
}

namespace {

int order(const DynValue& a, const DynValue& b)
{
    if (a.kind() == TypeKind::Int && b.kind() == TypeKind::Int) return a.as_int() < b.as_int() ? -1 : (a.as_int() > b.as_int() ? 1 : 0);
    if (a.kind() == TypeKind::Real && b.kind() == TypeKind::Real) return a.as_real() < b.as_real() ? -1 : (a.as_real() > b.as_real() ? 1 : 0);
    throw Trap(TrapKind::TypeError);
}

} // namespace

bool apply_cmp(CmpOp op, const DynValue& a, const DynValue& b)
{
    switch (op) {
    case CmpOp::Eq: return a == b;
    case CmpOp::Ne: return !(a == b);
    case CmpOp::Lt: return order(a, b) < 0;
    case CmpOp::Gt: return order(a, b) > 0;
    case CmpOp::Le: return order(a, b) <= 0;
    case CmpOp::Ge: return order(a, b) >= 0;
    }
    return false;
}

} // namespace mtask
