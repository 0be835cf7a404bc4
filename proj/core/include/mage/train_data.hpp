// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mage/model.hpp"
#include "mage/tensor.hpp"

namespace mage {

/// Clean sequence x0 and its partially masked copy xt.
struct TrainingPair {
    std::vector<std::size_t> x0;
    std::vector<std::size_t> xt;
    std::vector<bool> masked;
    std::size_t block_size = 0;
    double mask_ratio = 0.0;
    std::uint64_t seed = 0;
    std::size_t truncated = 0;  // trailing tokens dropped to fit whole blocks

    std::size_t num_blocks() const { return block_size == 0 ? 0 : x0.size() / block_size; }
};

/// Masks round(mask_ratio * B) positions of every block, chosen by a generator
/// seeded with `seed`. Input is truncated to a whole number of blocks.
TrainingPair make_training_pair(std::span<const std::size_t> tokens, std::size_t block_size, double mask_ratio,
                                std::uint64_t seed, std::size_t mask_token);

using AttnMask = AttentionMask;

/// Mask over the layout [x0 ∥ xt] (length 2 * num_blocks * B):
///  - x0 block i sees x0 blocks 0..i
///  - xt block i sees x0 blocks 0..i-1 and xt block i
AttnMask offset_block_causal_mask(std::size_t num_blocks, std::size_t block_size);

/// Smallest set of highest-mass indices (ties to lower index) whose cumulative
/// mass reaches p of the total. Returned ascending.
IndexList top_p_select(std::span<const double> mass, double p);

struct LossBreakdown {
    double ce = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double lambda = 0.0;
    double tau = 1.0;
};

/// Cross entropy of `targets` under the student (temperature 1) plus
/// lambda * KL(softmax(student / tau) || softmax(teacher / tau)), both averaged
/// over rows where `loss_rows` is set.
LossBreakdown distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                           std::span<const std::size_t> targets, const std::vector<bool>& loss_rows, double lambda,
                           double tau);

struct StageArtifacts {
    std::vector<std::size_t> stage1_tokens;  // [x0 ∥ all-mask]
    std::vector<std::size_t> stage2_tokens;  // [x0 ∥ xt]
    std::vector<std::size_t> positions;
    /// selected[l][h][b]: x0 positions chosen for xt block b at layer l, KV head h.
    std::vector<std::vector<std::vector<IndexList>>> selected;
    /// sparse_masks[l][h]; layers below the exact prefix hold the dense mask.
    std::vector<std::vector<AttnMask>> sparse_masks;
    AttnMask dense_mask;
    Matrix student_logits;  // xt rows only
    Matrix teacher_logits;  // xt rows only
};

struct TrainingForward {
    LossBreakdown loss;
    StageArtifacts artifacts;
};

/// Forward-only version of the sparse-aware fine-tuning step: index selection
/// on the all-[MASK] copy, sparse student forward, exact teacher forward and
/// the distillation loss at masked xt positions. `exact_layers` defaults to
/// min(2, L).
TrainingForward three_stage_forward(const Model& model, const TrainingPair& pair, double p, double lambda,
                                    double tau, std::optional<std::size_t> exact_layers = std::nullopt);

}  // namespace mage
