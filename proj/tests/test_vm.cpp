#include "mtask/builder.hpp"
#include "mtask/examples.hpp"
#include "mtask/testkit.hpp"
#include "mtask/vm.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mtask;
using namespace mtask::dsl;

namespace {

BytecodeImage image(const Program& p) { return decode(encode(compile(p))); }

std::size_t count(const std::vector<Notification>& ns, Notification::Kind k)
{
    std::size_t n = 0;
    for (const auto& x : ns)
        if (x.kind == k) ++n;
    return n;
}

VmErrorKind error_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const VmError& e) {
        return e.kind;
    }
    ADD_FAILURE() << "no VmError";
    return VmErrorKind::UnknownTask;
}

} // namespace

TEST(Vm, LoadUnload)
{
    PeripheralBus bus;
    VM vm(bus);
    EXPECT_EQ(vm.live_nodes(), 0u);
    vm.load_task(1, image(examples::blink()), 0);
    EXPECT_TRUE(vm.has_task(1));
    EXPECT_GT(vm.live_nodes(), 0u);
    EXPECT_EQ(error_of([&] { vm.load_task(1, image(examples::blink()), 0); }), VmErrorKind::DuplicateTask);
    vm.unload_task(1);
    EXPECT_FALSE(vm.has_task(1));
    EXPECT_EQ(vm.live_nodes(), 0u);
    EXPECT_EQ(error_of([&] { vm.unload_task(1); }), VmErrorKind::UnknownTask);
}

TEST(Vm, OutOfArenaOnLoad)
{
    PeripheralBus bus;
    VmConfig cfg;
    cfg.arena_capacity = 0;
    VM vm(bus, cfg);
    EXPECT_EQ(error_of([&] { vm.load_task(1, image(examples::blink()), 0); }), VmErrorKind::OutOfArena);
    EXPECT_FALSE(vm.has_task(1));

    VmConfig small;
    small.arena_capacity = 3;
    VM vm2(bus, small);
    EXPECT_EQ(error_of([&] { vm2.load_task(1, image(examples::blink_thread()), 0); }), VmErrorKind::OutOfArena);
    EXPECT_EQ(vm2.live_nodes(), 0u);
}

TEST(Vm, PeripheralSupportChecked)
{
    BoardConfig board;
    board.has_matrix = false;
    PeripheralBus bus(board);
    VM vm(bus);
    EXPECT_EQ(error_of([&] { vm.load_task(1, image(examples::matrix42()), 0); }), VmErrorKind::UnsupportedPeripheral);

    BoardConfig tiny;
    tiny.digital_pins = 2;
    PeripheralBus bus2(tiny);
    VM vm2(bus2);
    EXPECT_EQ(error_of([&] { vm2.load_task(1, image(examples::blink()), 0); }), VmErrorKind::UnknownPeripheral);
}

TEST(Vm, UnloadMidDelaySilencesTask)
{
    PeripheralBus bus;
    VM vm(bus);
    vm.load_task(1, image(examples::blink()), 0);
    vm.load_task(2, image(examples::read_pin_bin()), 0);
    vm.eval_cycle(0);
    vm.eval_cycle(250);
    vm.unload_task(1);
    for (int t = 251; t < 2000; t += 50)
        for (const auto& n : vm.eval_cycle(t)) EXPECT_NE(n.task, 1u);
    EXPECT_TRUE(bus.read_digital(dpin(2)));
}

TEST(Vm, BlinkFirstCycles)
{
    PeripheralBus bus;
    std::vector<PinWrite> writes;
    bus.on_write = [&](const PinWrite& w) { writes.push_back(w); };
    VM vm(bus);
    vm.load_task(7, image(examples::blink()), 0);
    auto first = vm.eval_cycle(0);
    ASSERT_EQ(first.size(), 1u);
    EXPECT_EQ(first[0].kind, Notification::Kind::TaskValueChanged);
    EXPECT_EQ(first[0].task, 7u);
    EXPECT_FALSE(first[0].value.has_value());
    EXPECT_TRUE(bus.read_digital(dpin(2)));
    EXPECT_TRUE(vm.eval_cycle(499).empty());
    EXPECT_TRUE(bus.read_digital(dpin(2)));
    EXPECT_TRUE(vm.eval_cycle(500).empty());
    EXPECT_FALSE(bus.read_digital(dpin(2)));
    ASSERT_EQ(writes.size(), 2u);
    EXPECT_EQ(writes[1].time, 500);
}

TEST(Vm, Fairness)
{
    PeripheralBus bus;
    VM vm(bus);
    std::mt19937_64 rng(8);
    VmConfig big;
    for (std::uint32_t id = 1; id <= 6; ++id) vm.load_task(id, image(testkit::random_program(rng)), 0);
    vm.load_task(10, image(examples::blink_thread()), 0);
    for (int t = 0; t < 300; ++t) vm.eval_cycle(t);
    for (std::uint32_t id : vm.task_ids())
        if (!vm.task_failure(id)) EXPECT_EQ(vm.passes(id), 300u) << id;
}

TEST(Vm, ArenaConservation)
{
    PeripheralBus bus;
    VmConfig cfg;
    cfg.arena_capacity = 2000;
    VM vm(bus, cfg);
    std::mt19937_64 rng(12);
    std::uint32_t next = 1;
    for (int t = 0; t < 3000; ++t) {
        if (t % 100 == 0) {
            try {
                vm.load_task(next++, image(testkit::random_program(rng)), t);
            } catch (const VmError&) {
            }
        }
        if (t % 250 == 0 && !vm.task_ids().empty()) vm.unload_task(vm.task_ids().front());
        vm.eval_cycle(t);
        ASSERT_EQ(vm.live_nodes() + vm.free_nodes(), cfg.arena_capacity);
    }
    for (auto id : vm.task_ids()) vm.unload_task(id);
    EXPECT_EQ(vm.live_nodes(), 0u);
}

TEST(Vm, LiveNodesStayBounded)
{
    PeripheralBus bus;
    VM vm(bus);
    vm.load_task(1, image(examples::matrix42()), 0);
    vm.load_task(2, image(examples::blink_thread()), 0);
    vm.eval_cycle(0);
    std::size_t settled = vm.live_nodes();
    vm.reset_peaks();
    for (int t = 1; t <= 20000; t += 3) vm.eval_cycle(t);
    vm.eval_cycle(30000);
    EXPECT_LE(vm.peak_nodes(), settled + 8);
    EXPECT_LE(vm.live_nodes(), settled + 8);
}

TEST(Vm, NotificationMinimality)
{
    PeripheralBus bus;
    bus.set_analog(0, 300);
    VM vm(bus);
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return par_and(read_a(apin(0)), read_d(dpin(1))); }));
    vm.load_task(1, image(p), 0);
    vm.load_task(2, image(examples::temp_simple()), 0);
    EXPECT_EQ(count(vm.eval_cycle(0), Notification::Kind::TaskValueChanged), 2u);
    for (int i = 0; i < 100; ++i) EXPECT_TRUE(vm.eval_cycle(0).empty());
    bus.set_analog(0, 301);
    auto ns = vm.eval_cycle(0);
    ASSERT_EQ(ns.size(), 1u);
    EXPECT_EQ(ns[0].task, 1u);
    bus.temperature = 215;
    ns = vm.eval_cycle(0);
    ASSERT_EQ(ns.size(), 1u);
    EXPECT_EQ(ns[0].value.value().first(), DynValue::integer(215));
}

TEST(Vm, NotificationOrder)
{
    PeripheralBus bus;
    VM vm(bus);
    ProgramBuilder b;
    Sds s = b.lift_sds("x", DynValue::integer(0));
    Program writer = examples::validated(b.main([&](Scope&) { return rpeat(set_sds(s, lit(5))); }));
    vm.load_task(9, image(writer), 0);
    vm.load_task(3, image(examples::read_pin_bin()), 0);
    vm.load_task(5, image(examples::temp_simple()), 0);
    auto ns = vm.eval_cycle(0);
    ASSERT_EQ(ns.size(), 4u);
    EXPECT_EQ(ns[0].task, 3u);
    EXPECT_EQ(ns[1].task, 5u);
    EXPECT_EQ(ns[2].task, 9u);
    EXPECT_EQ(ns[3].kind, Notification::Kind::SdsWritten);
    EXPECT_EQ(ns[3].task, 9u);
    // lifted writes are reported every time, even when the value repeats
    for (int i = 1; i < 5; ++i) {
        ns = vm.eval_cycle(i);
        ASSERT_EQ(ns.size(), 1u);
        EXPECT_EQ(ns[0].kind, Notification::Kind::SdsWritten);
        EXPECT_EQ(ns[0].sds_value, DynValue::integer(5));
    }
}

TEST(Vm, ServerSdsWrites)
{
    PeripheralBus bus;
    std::vector<PinWrite> writes;
    bus.on_write = [&](const PinWrite& w) { writes.push_back(w); };
    VM vm(bus);
    vm.load_task(1, image(examples::blink_interactive()), 0);
    vm.eval_cycle(0);
    vm.sds_write_from_server(1, 0, DynValue::integer(250));
    vm.sds_write_from_server(1, 0, DynValue::integer(250));
    EXPECT_EQ(*vm.sds_value(1, 0), DynValue::integer(250));
    for (int t = 1; t <= 1200; ++t)
        for (const auto& n : vm.eval_cycle(t)) EXPECT_NE(n.kind, Notification::Kind::SdsWritten);
    ASSERT_GE(writes.size(), 4u);
    // the first delay was already running with 500; later ones use 250
    EXPECT_EQ(writes[1].time, 500);
    EXPECT_EQ(writes[2].time, 750);
    EXPECT_EQ(writes[3].time, 1000);

    EXPECT_EQ(error_of([&] { vm.sds_write_from_server(2, 0, DynValue::integer(1)); }), VmErrorKind::UnknownTask);
    EXPECT_EQ(error_of([&] { vm.sds_write_from_server(1, 3, DynValue::integer(1)); }), VmErrorKind::UnknownSds);
    EXPECT_THROW(vm.sds_write_from_server(1, 0, DynValue::boolean(true)), TypeError);

    ProgramBuilder b;
    Sds local = b.sds(DynValue::integer(1));
    Program p = examples::validated(b.main([&](Scope&) { return get_sds(local); }));
    vm.load_task(2, image(p), 0);
    EXPECT_EQ(error_of([&] { vm.sds_write_from_server(2, local.id, DynValue::integer(1)); }), VmErrorKind::UnknownSds);
}

TEST(Vm, DhtReadsDeciUnits)
{
    PeripheralBus bus;
    bus.temperature = 215;
    bus.humidity = 480;
    VM vm(bus);
    vm.load_task(1, image(examples::temp_simple()), 0);
    vm.eval_cycle(0);
    DynTaskValue v = vm.task_value(1);
    ASSERT_TRUE(v.is_unstable());
    EXPECT_EQ(v.value(), DynValue::pair(DynValue::integer(215), DynValue::integer(480)));
}

TEST(Vm, PinReadBack)
{
    PeripheralBus bus;
    VM vm(bus);
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope& s) { return s.then(write_d(dpin(2), lit(true)), read_d(dpin(2))); }));
    vm.load_task(1, image(p), 0);
    vm.eval_cycle(0);
    EXPECT_EQ(vm.task_value(1), DynTaskValue::unstable(DynValue::boolean(true)));
}

TEST(Vm, AnalogPinAsDigital)
{
    PeripheralBus bus;
    VM vm(bus);
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return read_d(apin(1)); }));
    vm.load_task(1, image(p), 0);
    bus.set_analog(1, 511);
    vm.eval_cycle(0);
    EXPECT_EQ(vm.task_value(1).value(), DynValue::boolean(false));
    bus.set_analog(1, 512);
    vm.eval_cycle(1);
    EXPECT_EQ(vm.task_value(1).value(), DynValue::boolean(true));
}

TEST(Vm, MatrixFramebufferNeedsDisplay)
{
    PeripheralBus bus;
    VM vm(bus);
    vm.load_task(1, image(examples::matrix_toggle(0, 0, true)), 0);
    ProgramBuilder b;
    Matrix lm = b.ledmatrix(dpin(5), dpin(7));
    Program dot_only = examples::validated(b.main([&](Scope&) { return lm_dot(lm, lit(3), lit(4), lit(true)); }));
    vm.load_task(2, image(dot_only), 0);
    vm.eval_cycle(0);
    EXPECT_TRUE(bus.matrix.lit(0, 0));
    EXPECT_FALSE(bus.matrix.lit(3, 4));
    EXPECT_TRUE((bus.matrix.frame[4] >> 3) & 1);
    vm.load_task(3, image(examples::matrix_clear()), 0);
    vm.eval_cycle(1);
    for (int y = 0; y < 8; ++y) EXPECT_EQ(bus.matrix.displayed[y], 0);
}

TEST(Vm, RpeatRestartDefersWhenArenaIsFull)
{
    PeripheralBus bus;
    std::vector<PinWrite> writes;
    bus.on_write = [&](const PinWrite& w) { writes.push_back(w); };
    VmConfig cfg;
    cfg.arena_capacity = 64;
    VM vm(bus, cfg);
    vm.load_task(1, image(examples::blink()), 0);
    for (int t = 0; t < 1000; ++t) vm.eval_cycle(t);
    ASSERT_EQ(writes.size(), 2u);

    ProgramBuilder b;
    BytecodeImage filler = image(examples::validated(b.main([](Scope&) { return read_d(dpin(1)); })));
    std::uint32_t id = 100;
    while (vm.free_nodes() > 0) vm.load_task(id++, filler, 999);
    EXPECT_EQ(error_of([&] { vm.load_task(id, filler, 999); }), VmErrorKind::OutOfArena);

    for (int t = 1000; t < 1100; ++t) vm.eval_cycle(t);
    EXPECT_FALSE(vm.task_failure(1));
    EXPECT_EQ(writes.size(), 2u);

    for (std::uint32_t k = 100; k < id; ++k) vm.unload_task(k);
    vm.eval_cycle(1100);
    EXPECT_FALSE(vm.task_failure(1));
    ASSERT_EQ(writes.size(), 3u);
    EXPECT_EQ(writes[2].time, 1100);
    EXPECT_TRUE(writes[2].level);
}

TEST(Vm, TrapsAreIsolated)
{
    PeripheralBus bus;
    VM vm(bus);
    ProgramBuilder b;
    Program bad = examples::validated(b.main([](Scope& s) {
        return s.bind(delay(lit(10)), [](E x) { return rtrn(lit(1) / (x - x)); });
    }));
    vm.load_task(1, image(bad), 0);
    vm.load_task(2, image(examples::blink()), 0);
    std::size_t failures = 0;
    for (int t = 0; t <= 1000; ++t) failures += count(vm.eval_cycle(t), Notification::Kind::TaskFailed);
    EXPECT_EQ(failures, 1u);
    EXPECT_EQ(*vm.task_failure(1), TrapKind::DivByZero);
    EXPECT_EQ(vm.passes(2), 1001u);
    EXPECT_TRUE(bus.read_digital(dpin(2)));
}

TEST(Vm, DelayOvershootIsNonNegative)
{
    PeripheralBus bus;
    VM vm(bus);
    ProgramBuilder b;
    Program p = examples::validated(b.main([](Scope&) { return delay(lit(100)); }));
    vm.load_task(1, image(p), 3);
    vm.eval_cycle(50);
    EXPECT_FALSE(vm.task_value(1).has_value());
    vm.eval_cycle(110);
    EXPECT_EQ(vm.task_value(1), DynTaskValue::stable(DynValue::integer(7)));
}
