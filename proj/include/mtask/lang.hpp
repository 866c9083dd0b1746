#pragma once

#include "mtask/value.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mtask {

enum class ArithOp : std::uint8_t { Add, Sub, Mul, Div };
enum class CmpOp : std::uint8_t { Eq, Ne, Lt, Gt, Le, Ge };
enum class LogicOp : std::uint8_t { And, Or };

struct Pin {
    enum class Bank : std::uint8_t { Analog, Digital };
    Bank bank = Bank::Digital;
    std::uint8_t index = 0;

    bool analog() const { return bank == Bank::Analog; }
    std::string name() const { return (analog() ? "A" : "D") + std::to_string(index); }
    friend bool operator==(const Pin&, const Pin&) = default;
};

inline Pin apin(std::uint8_t i) { return {Pin::Bank::Analog, i}; }
inline Pin dpin(std::uint8_t i) { return {Pin::Bank::Digital, i}; }

struct Expr;
using ExprPtr = std::shared_ptr<Expr>;

struct Expr {
    enum class Kind : std::uint8_t { Lit, Arith, Cmp, Logic, Not, If, First, Second, MkPair, Arg, Call };

    Kind kind = Kind::Lit;
    DynValue lit;
    ArithOp arith = ArithOp::Add;
    CmpOp cmp = CmpOp::Eq;
    LogicOp logic = LogicOp::And;
    std::uint8_t slot = 0;  // Arg
    std::uint8_t fun = 0;   // Call
    std::vector<ExprPtr> kids;

    // filled in by validate()
    Type type;
    bool tail = false;
};

struct TaskExpr;
using TaskPtr = std::shared_ptr<TaskExpr>;

inline constexpr int kNoBinder = -1;

struct StepCont {
    enum class Kind : std::uint8_t { IfValue, IfStable, IfUnstable, IfNoValue, Always };

    Kind kind = Kind::Always;
    int binder = kNoBinder;  // frame slot receiving the left value, shared by pred and body
    ExprPtr pred;            // null for IfNoValue / Always
    TaskPtr body;
};

struct TaskExpr {
    enum class Kind : std::uint8_t {
        Rtrn, Rpeat, Delay, And, Or, Step, Call, If,
        GetSds, SetSds, ReadA, WriteA, ReadD, WriteD,
        DhtTemp, DhtHum, LmDot, LmIntensity, LmClear, LmDisplay
    };

    Kind kind = Kind::Rtrn;
    std::vector<ExprPtr> args;  // operand expressions (If: condition)
    std::vector<TaskPtr> kids;  // Rpeat: 1, And/Or: 2, Step: left, If: then/else
    std::vector<StepCont> conts;
    std::uint8_t ref = 0;       // fun / sds / peripheral id
    Pin pin;
    bool implicit = false;      // Rtrn wrapping an expression-valued main

    Type type;
    bool tail = false;
};

const char* kind_name(TaskExpr::Kind k);

struct FunDef {
    std::string name;
    std::vector<Type> params;
    Type result;
    bool is_task = true;
    ExprPtr expr_body;
    TaskPtr task_body;
    std::uint8_t frame_size = 0;  // params followed by binder slots

    // filled in by validate(): types of all frame slots
    std::vector<Type> slot_types;
};

struct SdsDecl {
    std::uint8_t id = 0;
    Type type;
    DynValue initial;
    bool lifted = false;
    std::string key;  // server binding for lifted SDSs
};

enum class DhtVariant : std::uint8_t { DHT11 = 0, DHT21 = 1, DHT22 = 2 };

struct PeriphDecl {
    enum class Kind : std::uint8_t { Dht = 0, LedMatrix = 1 };
    std::uint8_t id = 0;
    Kind kind = Kind::Dht;
    Pin pin_a;  // DHT data pin / matrix data pin
    Pin pin_b;  // matrix clock pin
    DhtVariant variant = DhtVariant::DHT22;
};

struct Program {
    std::vector<FunDef> funs;
    std::vector<SdsDecl> sds;
    std::vector<PeriphDecl> periphs;
    TaskPtr main;
    std::uint8_t main_frame_size = 0;

    bool validated = false;
    std::vector<Type> main_slot_types;

    const SdsDecl* find_sds(std::uint8_t id) const;
    const PeriphDecl* find_periph(std::uint8_t id) const;
};

struct Diagnostic {
    std::string path;
    std::string reason;
};

struct ValidationReport {
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return diagnostics.empty(); }
    std::string to_string() const;
};

// Type-checks, resolves references and marks tail calls. The expression and
// task trees are deep-copied first so that annotations never leak into
// subtrees shared with other programs.
ValidationReport validate(Program& p);

ExprPtr clone(const ExprPtr& e);
TaskPtr clone(const TaskPtr& t);

std::vector<std::string> pretty_print(const Program& p);

// canonical binary encoding of a (not necessarily validated) program
std::vector<std::uint8_t> serialize(const Program& p);
Program deserialize(const std::vector<std::uint8_t>& bytes);

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Wire: big-endian, Real as f64 (frames, program files).
// Image: little-endian, Real as f32 (bytecode images).
enum class ValueLayout { Wire, Image };

void put_value(std::vector<std::uint8_t>& out, const DynValue& v, ValueLayout layout);
DynValue get_value(const std::uint8_t*& p, const std::uint8_t* end, ValueLayout layout, int depth = 0);
void put_type(std::vector<std::uint8_t>& out, const Type& t);
Type get_type(const std::uint8_t*& p, const std::uint8_t* end, int depth = 0);

} // namespace mtask
