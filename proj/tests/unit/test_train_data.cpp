// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mage/decoder.hpp"
#include "mage/error.hpp"
#include "mage/train_data.hpp"
#include "support/generators.hpp"
#include "support/toy.hpp"

namespace mage {
namespace {

TrainingPair toy_pair(const Model& model, std::size_t blocks, double ratio, std::uint64_t seed) {
    const auto& c = model.config();
    const auto tokens = synthesize_prompt(c, blocks * c.block_size, seed);
    return make_training_pair(tokens, c.block_size, ratio, seed, c.mask_token());
}

TEST(TrainingPair, RatioLimits) {
    const std::vector<std::size_t> tokens{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const TrainingPair none = make_training_pair(tokens, 4, 0.0, 1, 64);
    EXPECT_EQ(none.xt, none.x0);
    EXPECT_EQ(none.x0.size(), 8u);
    EXPECT_EQ(none.truncated, 1u);
    const TrainingPair all = make_training_pair(tokens, 4, 1.0, 1, 64);
    EXPECT_EQ(all.xt, std::vector<std::size_t>(8, 64));
    EXPECT_EQ(all.masked, std::vector<bool>(8, true));
}

TEST(TrainingPair, PerBlockCountsAndDeterminism) {
    testing::Rng rng(91);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = testing::uniform_size(rng, 1, 12);
        const std::size_t blocks = testing::uniform_size(rng, 1, 6);
        std::vector<std::size_t> tokens(b * blocks);
        for (auto& t : tokens) {
            t = testing::uniform_size(rng, 0, 63);
        }
        const double ratio = testing::uniform_real(rng, 0.0, 1.0);
        const TrainingPair p = make_training_pair(tokens, b, ratio, trial, 64);
        const TrainingPair q = make_training_pair(tokens, b, ratio, trial, 64);
        EXPECT_EQ(p.xt, q.xt);
        for (std::size_t blk = 0; blk < blocks; ++blk) {
            std::size_t count = 0;
            for (std::size_t i = blk * b; i < (blk + 1) * b; ++i) {
                count += p.masked[i] ? 1 : 0;
                EXPECT_EQ(p.xt[i], p.masked[i] ? 64u : p.x0[i]);
            }
            EXPECT_EQ(count, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(b))));
        }
    }
}

TEST(TrainingPair, Errors) {
    const std::vector<std::size_t> tokens{1, 2, 3, 4};
    EXPECT_THROW(make_training_pair({}, 4, 0.5, 1, 64), DataError);
    EXPECT_THROW(make_training_pair(std::vector<std::size_t>{1, 2}, 4, 0.5, 1, 64), DataError);
    EXPECT_THROW(make_training_pair(tokens, 4, 1.5, 1, 64), ConfigError);
    EXPECT_THROW(make_training_pair(tokens, 0, 0.5, 1, 64), ConfigError);
    EXPECT_THROW(make_training_pair(std::vector<std::size_t>{1, 2, 64, 4}, 4, 0.5, 1, 64), DataError);
}

TEST(OffsetMask, HandExamples) {
    const AttnMask m = offset_block_causal_mask(2, 1);
    const std::vector<std::vector<int>> expected{{1, 0, 0, 0}, {1, 1, 0, 0}, {0, 0, 1, 0}, {1, 0, 0, 1}};
    ASSERT_EQ(m.size, 4u);
    for (std::size_t q = 0; q < 4; ++q) {
        for (std::size_t k = 0; k < 4; ++k) {
            EXPECT_EQ(m.allowed(q, k) ? 1 : 0, expected[q][k]) << q << "," << k;
        }
    }
    const AttnMask one = offset_block_causal_mask(1, 3);
    for (std::size_t q = 3; q < 6; ++q) {
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_FALSE(one.allowed(q, k));
        }
        for (std::size_t k = 3; k < 6; ++k) {
            EXPECT_TRUE(one.allowed(q, k));
        }
    }
}

TEST(OffsetMask, EveryRowAttendsItself) {
    for (std::size_t blocks = 1; blocks <= 4; ++blocks) {
        for (std::size_t b = 1; b <= 5; ++b) {
            const AttnMask m = offset_block_causal_mask(blocks, b);
            EXPECT_EQ(m.size, 2 * blocks * b);
            for (std::size_t q = 0; q < m.size; ++q) {
                EXPECT_TRUE(m.allowed(q, q));
            }
        }
    }
}

TEST(TopP, Examples) {
    EXPECT_EQ(top_p_select(std::vector<double>{0.5, 0.3, 0.15, 0.05}, 0.8), (IndexList{0, 1}));
    EXPECT_EQ(top_p_select(std::vector<double>{0.5, 0.0, 0.5}, 1.0), (IndexList{0, 2}));
    EXPECT_EQ(top_p_select(std::vector<double>{0.2, 0.5, 0.3}, 1e-9), (IndexList{1}));
    EXPECT_EQ(top_p_select(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 0.5), (IndexList{0, 1}));
    EXPECT_THROW(top_p_select(std::vector<double>{1.0}, 0.0), ConfigError);
    EXPECT_THROW(top_p_select(std::vector<double>{1.0}, 1.5), ConfigError);
}

TEST(DistillLoss, Examples) {
    Matrix two(1, 2);
    const auto l = distill_loss(two, two, std::vector<std::size_t>{0}, {true}, 0.5, 1.0);
    EXPECT_NEAR(l.ce, std::log(2.0), 1e-12);
    EXPECT_DOUBLE_EQ(l.kl, 0.0);
    EXPECT_NEAR(l.total, std::log(2.0), 1e-12);

    Matrix s(1, 2);
    s(0, 0) = 2.0f;
    const auto zero_lambda = distill_loss(s, two, std::vector<std::size_t>{1}, {true}, 0.0, 2.0);
    EXPECT_GT(zero_lambda.kl, 0.0);
    EXPECT_EQ(zero_lambda.total, zero_lambda.ce);
    EXPECT_THROW(distill_loss(s, Matrix(2, 2), std::vector<std::size_t>{0}, {true}, 0.0, 1.0), ShapeError);
    const auto empty = distill_loss(s, two, std::vector<std::size_t>{0}, {false}, 1.0, 1.0);
    EXPECT_EQ(empty.total, 0.0);
}

TEST(DistillLoss, KlNonNegativeOnRandomLogits) {
    testing::Rng rng(92);
    std::normal_distribution<float> normal(0.0f, 3.0f);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t v = testing::uniform_size(rng, 2, 40);
        Matrix a(1, v);
        Matrix b(1, v);
        for (std::size_t i = 0; i < v; ++i) {
            a(0, i) = normal(rng);
            b(0, i) = normal(rng);
        }
        const double tau = testing::uniform_real(rng, 0.2, 4.0);
        const auto l = distill_loss(a, b, std::vector<std::size_t>{0}, {true}, 1.0, tau);
        EXPECT_GE(l.kl, 0.0);
        EXPECT_TRUE(std::isfinite(l.total));
    }
}

TEST(ThreeStage, FullCoverageMatchesTeacher) {
    const Model model = build_model(testing::toy_config(7));
    const TrainingPair pair = toy_pair(model, 4, 0.5, 7);
    const TrainingForward f = three_stage_forward(model, pair, 1.0, 0.0, 1.0);
    for (std::size_t i = 0; i < f.artifacts.student_logits.data.size(); ++i) {
        EXPECT_NEAR(f.artifacts.student_logits.data[i], f.artifacts.teacher_logits.data[i], 1e-6);
    }
    EXPECT_LT(f.loss.kl, 1e-9);
    EXPECT_EQ(f.loss.total, f.loss.ce);
}

TEST(ThreeStage, SparseMaskIsSubMaskOfDense) {
    const Model model = build_model(testing::toy_config(7));
    for (const double p : {0.3, 0.7, 0.95}) {
        const TrainingPair pair = toy_pair(model, 3, 0.5, 3);
        const TrainingForward f = three_stage_forward(model, pair, p, 0.5, 1.0);
        const auto& dense = f.artifacts.dense_mask;
        EXPECT_EQ(dense, offset_block_causal_mask(3, model.config().block_size));
        for (const auto& layer : f.artifacts.sparse_masks) {
            for (const auto& m : layer) {
                for (std::size_t i = 0; i < m.bits.size(); ++i) {
                    EXPECT_LE(m.bits[i], dense.bits[i]);
                }
            }
        }
        for (std::size_t l = 0; l < 2; ++l) {
            for (const auto& m : f.artifacts.sparse_masks[l]) {
                EXPECT_EQ(m, dense);
            }
        }
    }
}

TEST(ThreeStage, AllMaskStageOneEqualsStageTwo) {
    const Model model = build_model(testing::toy_config(7));
    const TrainingPair pair = toy_pair(model, 2, 1.0, 5);
    const TrainingForward f = three_stage_forward(model, pair, 0.8, 0.5, 1.0);
    EXPECT_EQ(f.artifacts.stage1_tokens, f.artifacts.stage2_tokens);
}

TEST(ThreeStage, KlShrinksAsCoverageGrows) {
    const Model model = build_model(testing::toy_config(7));
    const TrainingPair pair = toy_pair(model, 6, 0.5, 7);
    double prev = std::numeric_limits<double>::infinity();
    for (const double p : {0.5, 0.7, 0.9, 0.99, 1.0}) {
        const double kl = three_stage_forward(model, pair, p, 1.0, 1.0).loss.kl;
        if (p == 0.7) {
            EXPECT_GT(kl, 0.0);
        }
        EXPECT_LE(kl, prev) << "p=" << p;
        prev = kl;
    }
}

TEST(ThreeStage, UnmaskedTargetsDoNotAffectLoss) {
    const Model model = build_model(testing::toy_config(7));
    TrainingPair pair = toy_pair(model, 3, 0.5, 11);
    const auto base = three_stage_forward(model, pair, 0.7, 0.5, 1.0).loss;
    // Changing x0 would change the context, so only the loss inputs are perturbed.
    const auto fwd = three_stage_forward(model, pair, 0.7, 0.5, 1.0);
    std::vector<std::size_t> targets = pair.x0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (!pair.masked[i]) {
            targets[i] = (targets[i] + 1) % model.config().vocab_size;
        }
    }
    const auto flipped = distill_loss(fwd.artifacts.student_logits, fwd.artifacts.teacher_logits, targets,
                                      pair.masked, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(flipped.total, base.total);
    EXPECT_DOUBLE_EQ(flipped.ce, base.ce);
}

TEST(ThreeStage, Deterministic) {
    const Model model = build_model(testing::toy_config(7));
    const TrainingPair pair = toy_pair(model, 3, 0.5, 2);
    const auto a = three_stage_forward(model, pair, 0.7, 0.5, 1.0);
    const auto b = three_stage_forward(model, pair, 0.7, 0.5, 1.0);
    EXPECT_EQ(a.loss.total, b.loss.total);
    EXPECT_EQ(a.artifacts.selected, b.artifacts.selected);
}

}  // namespace
}  // namespace mage
