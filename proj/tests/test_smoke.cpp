#include "mtask/examples.hpp"
#include "mtask/reference.hpp"
#include "mtask/vm.hpp"

#include <gtest/gtest.h>

using namespace mtask;

TEST(Smoke, Golden)
{
    auto p = examples::recursive_blink();
    EXPECT_EQ(pretty_print(p)[0], "let f0 a1 = writeD(D13, a1) >>= \\a2.(delay 1000) >>| (f0 (Not a1)) in (f0 True)");
}

TEST(Smoke, BlinkBoth)
{
    auto p = examples::blink();
    World w;
    int ref_writes = 0;
    w.bus.on_write = [&](const PinWrite&) { ++ref_writes; };
    ReferenceTask rt(p, w, 0);
    for (int t = 0; t <= 10000; ++t) rt.step(t);
    EXPECT_EQ(ref_writes, 21);

    PeripheralBus bus;
    int vm_writes = 0;
    bus.on_write = [&](const PinWrite&) { ++vm_writes; };
    VM vm(bus);
    vm.load_task(1, decode(encode(compile(p))), 0);
    for (int t = 0; t <= 10000; ++t) vm.eval_cycle(t);
    EXPECT_EQ(vm_writes, 21);
}
