// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "mage/error.hpp"
#include "mage/plan.hpp"

namespace mage {
namespace {

SelectionPlan sample_plan() {
    SelectionPlan plan = full_plan(3, 2, 10, 1, Method::mage);
    plan.layers[1] = {4, {{0, 2, 5, 9}, {1, 2, 3, 4}}};
    plan.layers[2] = {2, {{7, 8}, {0, 9}}};
    return plan;
}

TEST(Method, NamesRoundTrip) {
    for (const Method m : {Method::exact, Method::mage, Method::quest, Method::tidal, Method::window, Method::oracle,
                           Method::random, Method::full}) {
        EXPECT_EQ(parse_method(to_string(m)), m);
    }
    EXPECT_THROW(parse_method("dense"), ConfigError);
}

TEST(PlanText, RoundTrips) {
    const SelectionPlan plan = sample_plan();
    std::istringstream in(plan_to_text(plan));
    EXPECT_EQ(parse_plan_text(in), plan);
}

TEST(PlanText, MultiplePlansWithAnnotations) {
    const SelectionPlan a = sample_plan();
    SelectionPlan b = full_plan(2, 1, 3, 1, Method::window);
    std::istringstream in("## block=0 step=2\n" + plan_to_text(a) + "## block=1 step=2\n" + plan_to_text(b));
    const auto plans = parse_plan_texts(in);
    ASSERT_EQ(plans.size(), 2u);
    EXPECT_EQ(plans[0], a);
    EXPECT_EQ(plans[1], b);
}

TEST(PlanText, ReportsOffsets) {
    std::istringstream body_first("0 0 1 : 0\n");
    EXPECT_THROW(parse_plan_text(body_first), ParseError);
    const std::string text = "# plan method=mage layers=1 kv_heads=1 n=4 first_planned=0\n0 0 2 : 1 x\n";
    std::istringstream in(text);
    try {
        parse_plan_text(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset(), text.find("0 0 2"));
    }
    std::istringstream empty("");
    EXPECT_THROW(parse_plan_text(empty), ParseError);
}

TEST(ValidatePlan, ChecksInvariants) {
    const SelectionPlan good = sample_plan();
    EXPECT_NO_THROW(validate_plan(good, 3, 2, 10, 2));
    EXPECT_THROW(validate_plan(good, 3, 2, 10, 3), PlanError);
    EXPECT_THROW(validate_plan(good, 4, 2, 10), PlanError);
    SelectionPlan unsorted = good;
    unsorted.layers[2].heads[0] = {8, 7};
    EXPECT_THROW(validate_plan(unsorted, 3, 2, 10), PlanError);
    SelectionPlan wrong_size = good;
    wrong_size.layers[2].heads[1] = {0};
    EXPECT_THROW(validate_plan(wrong_size, 3, 2, 10), PlanError);
    SelectionPlan out_of_range = good;
    out_of_range.layers[2].heads[1] = {0, 10};
    EXPECT_THROW(validate_plan(out_of_range, 3, 2, 10), PlanError);
}

TEST(FullPlan, CoversEverything) {
    const SelectionPlan plan = full_plan(2, 3, 5, 1);
    for (const auto& layer : plan.layers) {
        EXPECT_EQ(layer.budget, 5u);
        for (const auto& h : layer.heads) {
            EXPECT_EQ(h, full_range(5));
        }
    }
}

}  // namespace
}  // namespace mage
