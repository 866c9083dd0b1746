#pragma once

#include "mtask/lang.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtask {

inline constexpr std::uint8_t kImageVersion = 1;
inline constexpr std::uint16_t kNoSegment = 0xFFFF;
inline constexpr std::uint8_t kNoSlot = 0xFF;

enum class Op : std::uint8_t {
    PushLit = 0x01,
    PushArg = 0x02,
    Add = 0x10, Sub, Mul, Div,
    Eq = 0x20, Ne, Lt, Gt, Le, Ge,
    And = 0x30, Or, Not,
    Jmp = 0x40, JmpIfFalse,
    MkPair = 0x50, Fst, Snd,
    Task = 0x60,
    Call = 0x70, TailCall, Return
};

const char* op_name(Op op);

// Decoded form of one instruction. Jump targets are byte offsets within the
// owning segment.
struct Instr {
    Op op = Op::Return;
    DynValue lit;                          // PushLit
    std::uint8_t a = 0;                    // PushArg slot, Call fun, Task sds/periph id
    std::uint8_t b = 0;                    // Call argc
    std::uint16_t target = 0;              // Jmp, JmpIfFalse, Task Step (cont table) / Rpeat (segment)
    TaskExpr::Kind task = TaskExpr::Kind::Rtrn;
    Pin pin;
    std::size_t size = 0;                  // encoded length in bytes
};

struct Segment {
    std::vector<std::uint8_t> code;
    friend bool operator==(const Segment&, const Segment&) = default;
};

struct FunEntry {
    std::uint16_t segment = 0;
    std::uint8_t arity = 0;
    std::uint8_t frame_size = 0;
    bool is_task = false;
    friend bool operator==(const FunEntry&, const FunEntry&) = default;
};

struct ContEntry {
    StepCont::Kind kind = StepCont::Kind::Always;
    std::uint8_t binder = kNoSlot;
    std::uint16_t pred = kNoSegment;
    std::uint16_t body = 0;
    friend bool operator==(const ContEntry&, const ContEntry&) = default;
};

struct SdsEntry {
    std::uint8_t id = 0;
    Type type;
    DynValue initial;
    bool lifted = false;
    std::string key;
    friend bool operator==(const SdsEntry& a, const SdsEntry& b)
    {
        return a.id == b.id && a.type == b.type && a.initial == b.initial && a.lifted == b.lifted && a.key == b.key;
    }
};

struct PeriphEntry {
    std::uint8_t id = 0;
    PeriphDecl::Kind kind = PeriphDecl::Kind::Dht;
    Pin pin_a;
    Pin pin_b;
    DhtVariant variant = DhtVariant::DHT22;
    friend bool operator==(const PeriphEntry&, const PeriphEntry&) = default;
};

struct BytecodeImage {
    std::uint8_t version = kImageVersion;
    std::uint16_t entry = 0;
    std::uint8_t main_frame = 0;
    std::vector<FunEntry> funs;
    std::vector<SdsEntry> sds;
    std::vector<PeriphEntry> periphs;
    std::vector<std::vector<ContEntry>> conts;
    std::vector<Segment> segments;

    const SdsEntry* find_sds(std::uint8_t id) const;
    const PeriphEntry* find_periph(std::uint8_t id) const;

    friend bool operator==(const BytecodeImage&, const BytecodeImage&) = default;
};

class MalformedImage : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CapacityExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

BytecodeImage compile(const Program& p);

std::vector<std::uint8_t> encode(const BytecodeImage& img);
BytecodeImage decode(const std::vector<std::uint8_t>& bytes);

// Throws MalformedImage when the bytes at pc are not a complete instruction.
Instr decode_instr(const Segment& seg, std::size_t pc);

std::string disassemble(const BytecodeImage& img);

} // namespace mtask
