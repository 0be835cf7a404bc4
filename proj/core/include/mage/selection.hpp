// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mage/plan.hpp"
#include "mage/tensor.hpp"

namespace mage {

struct ModelConfig;

/// Indices of the `k` largest probabilities in `row`, ties broken by lower
/// index. Returned in ascending index order.
IndexList per_query_topk(std::span<const float> row, std::size_t k);

struct UnionResult {
    IndexList members;                           // ascending
    std::map<std::size_t, std::size_t> votes;    // index -> rows whose top-k contained it
};

/// Union of per-row top-k sets over every row sharing one KV head.
UnionResult form_union(const GroupRows& rows, std::size_t k);

/// Mean over rows of the probability mass that falls on `members`.
double coverage(const GroupRows& rows, std::span<const std::size_t> members);

/// union_size * (1 - ln p) for p in (0, 1].
double adjusted_score(std::size_t union_size, double p);

/// Proportional per-layer budgets with a floor of `k_min`:
///   K_l = max(k_min, floor(s_l / sum(s) * k * layer_count))
/// `layer_count` defaults to the number of scores.
std::vector<std::size_t> allocate_budgets(std::span<const double> layer_scores, std::size_t k, std::size_t k_min,
                                          std::optional<std::size_t> layer_count = std::nullopt);

/// Picks `budget` indices from the union ranked by votes, then mass, then
/// lower index. When the union is smaller than the budget, the most recent
/// positions outside the union fill the remaining slots up to min(budget, n).
IndexList select_indices(std::span<const std::size_t> members, const std::map<std::size_t, std::size_t>& votes,
                         std::span<const double> mass, std::size_t budget, std::size_t n);

struct HeadStats {
    UnionResult union_set;
    double coverage = 0.0;
    double score = 0.0;
};

struct LayerStats {
    std::size_t layer = 0;
    std::vector<HeadStats> heads;
    double score = 0.0;  // max over heads
};

struct UnionStats {
    std::vector<LayerStats> layers;  // planned layers only, in order
};

struct MageParams {
    std::size_t k = 32;
    std::size_t k_min = 8;
    /// Layer count used in the proportional allocation; defaults to the
    /// number of planned layers.
    std::optional<std::size_t> budget_layer_count;
};

struct PlanBuild {
    SelectionPlan plan;
    UnionStats stats;
};

/// Builds the selection plan from exact attention computed on the all-[MASK]
/// block. `attention[l]` is H_q x B x n over cache keys only, each row a
/// probability distribution.
PlanBuild build_plan(std::span<const AttentionTensor> attention, const ModelConfig& config, const MageParams& params);

}  // namespace mage
