// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mage/kv_cache.hpp"
#include "mage/plan.hpp"
#include "mage/tensor.hpp"

namespace mage {

struct ModelConfig;

struct BaselineConfig {
    Method method = Method::window;
    std::size_t page_size = 16;     // quest
    std::size_t anchor_layer = 1;   // tidal
    std::size_t num_sinks = 4;      // window
    std::size_t window_size = 64;   // window
    std::uint64_t seed = 0;         // random

    void validate(const ModelConfig& config) const;
};

/// Ranks indices by summed mass (desc), then index (asc) and keeps the first
/// min(k, n), returned ascending.
IndexList top_k_by_mass(std::span<const double> mass, std::size_t k);

/// Quest upper-bound score of one page for a set of query vectors:
///   sum_q sum_j max(q_j * min_j, q_j * max_j)
double quest_page_importance(std::span<const std::span<const float>> queries, std::span<const float> page_min,
                             std::span<const float> page_max);

/// Page-level selection for one layer. `queries` is B x (H_q * d). Pages are
/// taken by importance until at least k tokens are covered, then the
/// lowest-importance selected page is trimmed from its tail down to exactly k.
std::vector<IndexList> quest_select_layer(const Matrix& queries, const PageMeta& meta, std::size_t layer,
                                          std::size_t num_query_heads, std::size_t k);

/// Quest plan over all layers given each layer's queries.
SelectionPlan quest_plan(std::span<const Matrix> layer_queries, const PageMeta& meta, const ModelConfig& config,
                         std::size_t k);

/// Per-KV-head top-k by summed mass at the anchor layer, shared by every
/// planned layer.
SelectionPlan tidal_plan(const AttentionTensor& anchor_attention, const ModelConfig& config, std::size_t k);

/// Attention sinks [0, sinks) plus the trailing `window` positions.
SelectionPlan window_plan(std::size_t n, std::size_t num_sinks, std::size_t window_size, const ModelConfig& config);

/// Per layer and KV head: top-k by summed exact attention mass. `attention[l]`
/// is H_q x B x n over cache keys.
SelectionPlan oracle_plan(std::span<const AttentionTensor> attention, const ModelConfig& config, std::size_t k);

/// Uniformly random k-subset per layer and KV head.
SelectionPlan random_plan(std::size_t n, std::size_t k, std::uint64_t seed, const ModelConfig& config);

}  // namespace mage
