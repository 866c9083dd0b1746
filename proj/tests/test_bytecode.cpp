#include "mtask/builder.hpp"
#include "mtask/bytecode.hpp"
#include "mtask/examples.hpp"
#include "mtask/testkit.hpp"
#include "mtask/vm.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace mtask;
using namespace mtask::dsl;

namespace {

Program rtrn1()
{
    ProgramBuilder b;
    return examples::validated(b.main([](Scope&) { return rtrn(lit(1)); }));
}

std::vector<std::string> lines_of(const std::string& s)
{
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

int count_lines(const std::string& text, const std::string& prefix, const std::string& segment_label)
{
    int n = 0;
    bool inside = false;
    for (const auto& l : lines_of(text)) {
        if (!l.empty() && l[0] == 's' && l.find(':') != std::string::npos) inside = l.find(segment_label) != std::string::npos;
        if (inside && l.rfind(prefix, 0) == 0) ++n;
    }
    return n;
}

struct Peaks {
    std::size_t nodes, stack, frames;
    DynTaskValue value;
};

Peaks run_peaks(const Program& p)
{
    PeripheralBus bus;
    VM vm(bus);
    vm.reset_peaks();
    vm.load_task(1, compile(p), 0);
    vm.eval_cycle(0);
    return {vm.peak_nodes(), vm.peak_stack(), vm.peak_frames(), vm.task_value(1)};
}

} // namespace

TEST(Compile, SmallestImage)
{
    BytecodeImage img = compile(rtrn1());
    ASSERT_EQ(img.segments.size(), 1u);
    ASSERT_EQ(img.entry, 0);
    const auto& code = img.segments[0].code;
    Instr a = decode_instr(img.segments[0], 0);
    EXPECT_EQ(a.op, Op::PushLit);
    EXPECT_EQ(a.lit, DynValue::integer(1));
    Instr b = decode_instr(img.segments[0], a.size);
    EXPECT_EQ(b.op, Op::Task);
    EXPECT_EQ(b.task, TaskExpr::Kind::Rtrn);
    EXPECT_EQ(a.size + b.size, code.size());
}

TEST(Compile, RequiresValidatedProgram)
{
    ProgramBuilder b;
    Program p = b.main([](Scope&) { return rtrn(lit(1)); });
    EXPECT_THROW(compile(p), std::invalid_argument);
}

TEST(Compile, FactorialAccUsesOneTailCall)
{
    std::string d = disassemble(compile(examples::factorial_acc(10)));
    EXPECT_EQ(count_lines(d, "TAILCALL", "f0"), 1);
    EXPECT_EQ(count_lines(d, "CALL", "f0"), 0);
    EXPECT_NE(d.find("\nTAILCALL f0 2\n"), std::string::npos);
}

TEST(Compile, NonTailFactorialHasNoTailCall)
{
    std::string d = disassemble(compile(examples::factorial(5)));
    EXPECT_EQ(d.find("TAILCALL"), std::string::npos);
    EXPECT_NE(d.find("CALL f0 1"), std::string::npos);
}

TEST(Compile, CapacityExceeded)
{
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope& s) {
        E e = lit(0);
        for (int i = 0; i < 12000; ++i) e = e + lit(i);
        return s.then(rtrn(e), rtrn(lit(1)));
    }));
    EXPECT_THROW(compile(p), CapacityExceeded);
}

TEST(Disassemble, SmallestImage)
{
    std::string d = disassemble(compile(rtrn1()));
    EXPECT_NE(d.find("PUSHLIT 1\nTASK RTRN"), std::string::npos);
    for (const auto& l : lines_of(d))
        if (l.rfind(";", 0) == 0) EXPECT_EQ(l.find("; f"), std::string::npos);
    // no functions: only header lines and the main segment
    auto ls = lines_of(d);
    ASSERT_EQ(ls.size(), 5u);
    EXPECT_EQ(ls[2], "s0: main");
}

TEST(Disassemble, OneInstructionPerLine)
{
    BytecodeImage img = compile(examples::plotter());
    std::size_t instrs = 0;
    for (const auto& seg : img.segments)
        for (std::size_t pc = 0; pc < seg.code.size(); pc += decode_instr(seg, pc).size) ++instrs;
    std::size_t body = 0;
    for (const auto& l : lines_of(disassemble(img)))
        if (!l.empty() && l[0] != ';' && !(l[0] == 's' && l.find(':') != std::string::npos)) ++body;
    EXPECT_EQ(body, instrs);
}

TEST(Image, RoundTripAndDeterminism)
{
    std::mt19937_64 rng(17);
    std::vector<Program> progs = {examples::blink(), examples::blink_thread(), examples::thermostat(), examples::plotter(),
                                  examples::matrix42(), examples::read_pin_bin(), examples::factorial_acc(10)};
    for (int i = 0; i < 100; ++i) progs.push_back(testkit::random_program(rng));
    for (const Program& p : progs) {
        BytecodeImage img = compile(p);
        auto bytes = encode(img);
        EXPECT_EQ(bytes, encode(compile(p)));
        BytecodeImage back = decode(bytes);
        EXPECT_TRUE(back == img);
        EXPECT_EQ(encode(back), bytes);
    }
}

TEST(Image, DecodeErrors)
{
    EXPECT_THROW(decode({}), MalformedImage);
    auto bytes = encode(compile(examples::blink()));
    auto flipped = bytes;
    flipped[0] ^= 0xFF;
    try {
        decode(flipped);
        FAIL();
    } catch (const MalformedImage& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    for (std::size_t cut = 1; cut < bytes.size(); ++cut) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(decode(part), MalformedImage) << cut;
    }
    auto longer = bytes;
    longer.push_back(0);
    EXPECT_THROW(decode(longer), MalformedImage);
}

TEST(Image, DanglingReferences)
{
    BytecodeImage img = compile(examples::read_pin_bin());
    BytecodeImage bad = img;
    bad.entry = 200;
    EXPECT_THROW(decode(encode(bad)), MalformedImage);
    bad = img;
    bad.conts[0][1].body = 99;
    EXPECT_THROW(decode(encode(bad)), MalformedImage);
    bad = img;
    bad.conts.clear();
    EXPECT_THROW(decode(encode(bad)), MalformedImage);

    BytecodeImage t = compile(examples::temp_simple());
    bad = t;
    bad.periphs.clear();
    EXPECT_THROW(decode(encode(bad)), MalformedImage);

    BytecodeImage f = compile(examples::factorial_acc(3));
    bad = f;
    bad.funs.pop_back();
    EXPECT_THROW(decode(encode(bad)), MalformedImage);
    bad = f;
    for (std::size_t pc = 0; pc < f.segments[0].code.size(); pc += decode_instr(f.segments[0], pc).size) {
        if (decode_instr(f.segments[0], pc).op != Op::JmpIfFalse) continue;
        bad.segments[0].code[pc + 1] = 0xEE;  // jump target into nowhere
        break;
    }
    EXPECT_THROW(decode(encode(bad)), MalformedImage);
}

// Mutated images either fail to decode or run without crashing the VM.
TEST(Image, MutationFuzz)
{
    std::mt19937_64 rng(23);
    std::vector<std::vector<std::uint8_t>> seeds;
    for (const Program& p : {examples::blink(), examples::thermostat(), examples::plotter(), examples::factorial_acc(8)})
        seeds.push_back(encode(compile(p)));
    int decoded = 0;
    for (int i = 0; i < 2000; ++i) {
        auto b = seeds[static_cast<std::size_t>(i) % seeds.size()];
        int flips = std::uniform_int_distribution<int>(1, 3)(rng);
        for (int k = 0; k < flips; ++k)
            b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng)] = static_cast<std::uint8_t>(rng());
        BytecodeImage img;
        try {
            img = decode(b);
        } catch (const MalformedImage&) {
            continue;
        }
        ++decoded;
        PeripheralBus bus;
        VmConfig cfg;
        cfg.max_instructions = 200000;
        VM vm(bus, cfg);
        try {
            vm.load_task(1, img, 0);
        } catch (const VmError&) {
            continue;
        }
        for (int t = 0; t < 50; t += 7) vm.eval_cycle(t);
    }
    EXPECT_GT(decoded, 0);
}

TEST(Tco, PeaksIndependentOfN)
{
    Peaks small = run_peaks(examples::factorial_acc(10));
    Peaks large = run_peaks(examples::factorial_acc(10000));
    EXPECT_EQ(small.nodes, large.nodes);
    EXPECT_EQ(small.stack, large.stack);
    EXPECT_EQ(small.frames, large.frames);
    EXPECT_EQ(small.value, DynTaskValue::stable(DynValue::integer(3628800)));
}

TEST(Tco, NonTailGrowsWithN)
{
    Peaks a = run_peaks(examples::factorial(5));
    Peaks b = run_peaks(examples::factorial(10));
    EXPECT_EQ(a.value, DynTaskValue::stable(DynValue::integer(120)));
    EXPECT_GT(b.frames, a.frames);
    EXPECT_GT(b.stack, a.stack);
}

TEST(Tco, NonTailDepthLimitTraps)
{
    PeripheralBus bus;
    VM vm(bus);
    vm.load_task(1, compile(examples::factorial(100)), 0);
    auto notes = vm.eval_cycle(0);
    ASSERT_EQ(notes.size(), 1u);
    EXPECT_EQ(notes[0].kind, Notification::Kind::TaskFailed);
    EXPECT_EQ(notes[0].reason, TrapKind::CallDepth);
}
