#pragma once

#include "mtask/lang.hpp"

#include <stdexcept>
#include <string>

namespace mtask {

enum class TrapKind : std::uint8_t { DivByZero, CallDepth, StackOverflow, OutOfArena, TypeError, Watchdog };

const char* to_string(TrapKind k);

class Trap : public std::runtime_error {
public:
    explicit Trap(TrapKind k) : std::runtime_error(to_string(k)), kind(k) {}
    TrapKind kind;
};

enum class RealWidth { F64, F32 };

// Primitive operators shared by both evaluators. Int arithmetic wraps at 32
// bits; integer division by zero traps.
DynValue apply_arith(ArithOp op, const DynValue& a, const DynValue& b, RealWidth w);
bool apply_cmp(CmpOp op, const DynValue& a, const DynValue& b);

DynValue round_real(const DynValue& v, RealWidth w);

const char* to_symbol(ArithOp op);
const char* to_symbol(CmpOp op);

} // namespace mtask
