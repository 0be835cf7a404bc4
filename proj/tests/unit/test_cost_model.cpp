// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mage/cost_model.hpp"
#include "mage/error.hpp"
#include "mage/kv_config.hpp"
#include "oracles/brute_force.hpp"
#include "support/generators.hpp"

namespace mage {
namespace {

TEST(Overlap, Examples) {
    EXPECT_DOUBLE_EQ(overlap(10.0, 0.0, 2.0), 12.0);
    EXPECT_DOUBLE_EQ(overlap(10.0, 7.0, 2.0), 12.0);
    EXPECT_DOUBLE_EQ(overlap(10.0, 14.0, 1.0), 15.0);
    EXPECT_THROW(overlap(-1.0, 0.0, 0.0), DomainError);
}

TEST(Overlap, BoundedByMaxAndSum) {
    testing::Rng rng(81);
    for (int trial = 0; trial < 10000; ++trial) {
        const double m = testing::uniform_real(rng, 0.0, 100.0);
        const double a = testing::uniform_real(rng, 0.0, 100.0);
        const double t = testing::uniform_real(rng, 0.0, 100.0);
        const double r = overlap(m, a, t);
        EXPECT_GE(r, std::max(m, a));
        EXPECT_LE(r, m + a + t);
    }
}

TEST(BreakEven, Examples) {
    EXPECT_EQ(break_even(10.0, 16.0, 4.0), std::optional<std::size_t>(3));
    // With first = exact the strict inequality fails at m = 1 and holds from m = 2.
    EXPECT_EQ(break_even(10.0, 10.0, 4.0), std::optional<std::size_t>(2));
    EXPECT_EQ(break_even(10.0, 9.0, 4.0), std::optional<std::size_t>(1));
    EXPECT_EQ(break_even(10.0, 16.0, 10.0), std::nullopt);
    EXPECT_EQ(break_even(10.0, 16.0, 12.0), std::nullopt);
    EXPECT_THROW(break_even(-1.0, 1.0, 1.0), DomainError);
}

TEST(BreakEven, MatchesCeilingFormulaAndScan) {
    testing::Rng rng(82);
    for (int trial = 0; trial < 10000; ++trial) {
        const double exact = testing::uniform_real(rng, 1.0, 100.0);
        const double rest = testing::uniform_real(rng, 0.0, exact * 0.999);
        const double first = testing::uniform_real(rng, 0.0, exact * 20.0);
        const auto m = break_even(exact, first, rest);
        ASSERT_TRUE(m.has_value());
        const double ratio = (first - rest) / (exact - rest);
        const auto formula = static_cast<std::size_t>(std::max(1.0, std::floor(ratio) + 1.0));
        const auto scan = oracle::brute_break_even(exact, first, rest);
        EXPECT_EQ(m, scan);
        // The closed form can only miss by one on rounding.
        EXPECT_LE(*m > formula ? *m - formula : formula - *m, 1u);
    }
}

TEST(BreakEven, Monotonicity) {
    testing::Rng rng(83);
    for (int trial = 0; trial < 2000; ++trial) {
        const double exact = testing::uniform_real(rng, 1.0, 50.0);
        const double rest = testing::uniform_real(rng, 0.0, exact * 0.9);
        const double first = testing::uniform_real(rng, 0.0, 400.0);
        const auto base = *break_even(exact, first, rest);
        EXPECT_LE(*break_even(exact * 1.5, first, rest), base);
        EXPECT_GE(*break_even(exact, first + 10.0, rest), base);
    }
}

TEST(StepLatency, FullBudgetMatchesExact) {
    const CostParams p;
    for (const std::size_t n : {1024u, 16384u, 131072u}) {
        const auto exact = step_latency(p, n, 0.0, StepKind::exact);
        const auto rest = step_latency(p, n, static_cast<double>(n), StepKind::mage_rest);
        EXPECT_NEAR(rest.total, exact.total, 1e-9 * exact.total);
        EXPECT_DOUBLE_EQ(exact.speedup, 1.0);
        const auto quest = step_latency(p, n, static_cast<double>(n), StepKind::quest);
        EXPECT_NEAR(quest.main.attention, exact.main.attention, 1e-9 * exact.total);
    }
    EXPECT_THROW(step_latency(p, 100, 101.0, StepKind::mage_rest), DomainError);
    EXPECT_THROW(step_latency(p, 100, -1.0, StepKind::quest), DomainError);
}

TEST(StepLatency, FreeMemoryLimitIsLaunchBound) {
    CostParams p;
    p.bandwidth = 1e300;
    p.compute_rate = 1e300;
    p.other_per_layer = 0.0;
    const double launch_bound = static_cast<double>(p.num_layers) * p.launch_overhead;
    EXPECT_NEAR(step_latency(p, 65536, 0.0, StepKind::exact).total, launch_bound, 1e-6);
    EXPECT_NEAR(step_latency(p, 65536, 2048.0, StepKind::mage_rest).total, launch_bound, 1e-6);
}

TEST(StepLatency, MageRestSpeedupGrowsWithContext) {
    const CostParams p;
    double prev = 0.0;
    for (const std::size_t n : {16384u, 32768u, 65536u, 131072u}) {
        const double s = step_latency(p, n, 2048.0, StepKind::mage_rest).speedup;
        EXPECT_GT(s, prev) << n;
        EXPECT_GT(s, 1.0);
        prev = s;
    }
}

TEST(StepLatency, FirstStepOverheadShrinksWithContext) {
    const CostParams p;
    double prev = std::numeric_limits<double>::infinity();
    for (const std::size_t n : {16384u, 32768u, 65536u, 131072u}) {
        const auto first = step_latency(p, n, 2048.0, StepKind::mage_first);
        const double ratio = first.total / first.exact_total - 1.0;
        EXPECT_GT(ratio, 0.0);
        EXPECT_LT(ratio, prev) << n;
        prev = ratio;
        EXPECT_DOUBLE_EQ(first.total, overlap(first.main.total(), first.async.total(), first.serial_tail));
    }
}

TEST(StepLatency, SparseKindsAreMonotoneInBudget) {
    const CostParams p;
    for (const StepKind kind : {StepKind::mage_rest, StepKind::quest, StepKind::tidal}) {
        double prev = 0.0;
        for (const double k : {256.0, 1024.0, 4096.0, 16384.0}) {
            const double t = step_latency(p, 65536, k, kind).total;
            EXPECT_GT(t, prev) << to_string(kind);
            prev = t;
        }
    }
}

TEST(CostParams, ValidationAndConfig) {
    CostParams p;
    p.bandwidth = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = CostParams{};
    p.exact_layer_prefix = p.num_layers;
    EXPECT_THROW(p.validate(), ConfigError);

    const KeyValueConfig kv = KeyValueConfig::parse("bandwidth = 1000\nnum_layers = 8\n");
    const CostParams q = CostParams::from_config(kv);
    EXPECT_DOUBLE_EQ(q.bandwidth, 1000.0);
    EXPECT_EQ(q.num_layers, 8u);
    EXPECT_EQ(parse_step_kind("mage_first"), StepKind::mage_first);
    EXPECT_THROW(parse_step_kind("bogus"), ConfigError);
}

}  // namespace
}  // namespace mage
