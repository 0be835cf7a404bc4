// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mage/baselines.hpp"
#include "mage/kv_cache.hpp"
#include "mage/model.hpp"
#include "mage/plan.hpp"
#include "mage/selection.hpp"

namespace mage {

class KeyValueConfig;

struct DecodeConfig {
    Method method = Method::exact;
    std::size_t tokens_per_step = 1;
    std::size_t budget = 32;  // K
    std::size_t k_min = 8;
    std::optional<std::size_t> budget_layer_count;
    BaselineConfig baseline;
    std::size_t num_blocks = 1;
    std::size_t prompt_len = 256;
    std::uint64_t seed = 0;

    /// Record the exact top-K oracle sets (and 90%-coverage counts) at every step.
    bool trace_oracle = false;
    /// Keep each step's exact cache attention (needed for skew heatmaps).
    bool keep_attention = false;
    /// Keep each step's logits.
    bool keep_logits = false;

    /// Number of denoising steps for a block of `block_size` positions.
    std::size_t steps(std::size_t block_size) const;

    void validate(const ModelConfig& model) const;
    static DecodeConfig from_config(const KeyValueConfig& kv);
};

struct StepRecord {
    std::size_t step = 0;  // 1-based
    /// Plan in force for this step; null when the step ran exact attention.
    std::shared_ptr<const SelectionPlan> plan;
    /// Exact top-K sets at this step (trace_oracle).
    std::optional<SelectionPlan> oracle;
    /// Per layer, per KV head 90%-coverage counts of exact attention (trace_oracle).
    std::vector<std::vector<std::size_t>> coverage_counts;
    IndexList unmasked;
    std::vector<std::size_t> tokens;
    /// Max softmax probability per block position; -1 for positions decoded earlier.
    std::vector<double> confidence;
    std::size_t kv_entries_read = 0;
    std::size_t bytes_gathered = 0;
    std::size_t exact_layers = 0;
    std::size_t sparse_layers = 0;
    std::vector<AttentionTensor> attention;  // keep_attention: exact, cache keys only
    std::optional<Matrix> logits;            // keep_logits
};

struct DenoiseTrace {
    std::size_t block_index = 0;
    std::size_t context_length = 0;
    std::size_t block_size = 0;
    std::size_t oracle_k = 0;
    std::size_t first_planned_layer = 0;
    Method method = Method::exact;
    std::vector<StepRecord> steps;
    std::optional<UnionStats> union_stats;
};

struct UnmaskResult {
    IndexList positions;              // ascending
    std::vector<std::size_t> tokens;  // parallel to positions
    std::vector<double> confidence;   // per block position, -1 where not masked
};

/// Unmasks the `tokens_per_step` most confident masked positions (ties to the
/// lower position) with their argmax tokens.
UnmaskResult unmask_step(const Matrix& logits, const std::vector<bool>& masked, std::size_t tokens_per_step);

struct BlockResult {
    BlockState block;
    DenoiseTrace trace;
};

/// Denoises one block appended after the cache contents, then appends the
/// decoded block's keys and values to `cache`.
BlockResult denoise_block(const Model& model, KVCache& cache, const DecodeConfig& config,
                          std::size_t block_index = 0);

/// Deterministic synthetic prompt drawn from `seed`.
std::vector<std::size_t> synthesize_prompt(const ModelConfig& config, std::size_t length, std::uint64_t seed);

/// Exact block-causal prefill of `tokens` (length must be a multiple of the
/// block size) into `cache`.
void prefill(const Model& model, KVCache& cache, std::span<const std::size_t> tokens);

struct Generation {
    std::vector<std::size_t> prompt;
    std::vector<std::size_t> tokens;  // generated tokens only
    std::vector<DenoiseTrace> traces;
};

Generation generate(const Model& model, const DecodeConfig& config);

}  // namespace mage
