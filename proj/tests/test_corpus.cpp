#include "mtask/testkit.hpp"

#include <gtest/gtest.h>

using namespace mtask;
using namespace mtask::testkit;

TEST(Corpus, OracleEquivalenceAndLegality)
{
    std::mt19937_64 rng(20240611);
    VmConfig cfg;
    cfg.arena_capacity = 1 << 16;
    int failures = 0;
    for (int i = 0; i < 300; ++i) {
        Program p = random_program(rng);
        Script s = random_script(rng, p, 200);
        DualRun r = run_dual(p, s, cfg);
        EXPECT_TRUE(r.equivalent()) << "program " << i << ": " << r.mismatch() << "\n" << pretty_print(p)[0];
        EXPECT_EQ(r.ref_monitor.illegal(), 0u) << r.ref_monitor.first_violation();
        EXPECT_EQ(r.vm_monitor.illegal(), 0u) << r.vm_monitor.first_violation();
        if (r.ref_failure) ++failures;
        if (HasFailure()) break;
    }
    RecordProperty("trapped", failures);
}
