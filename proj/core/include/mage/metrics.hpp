// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mage/plan.hpp"
#include "mage/tensor.hpp"

namespace mage {

struct DenoiseTrace;

/// |ref ∩ other| / |ref|. Both lists must be ascending.
double topk_recall(std::span<const std::size_t> ref, std::span<const std::size_t> other);

/// Smallest m such that the m largest probabilities reach `threshold` of the
/// row's total mass.
std::size_t coverage_budget(std::span<const float> row, double threshold = 0.9);

struct RecallPoint {
    std::size_t step = 0;
    double recall = 0.0;
};

struct RecallCurve {
    std::size_t k = 0;
    std::string label;
    std::vector<RecallPoint> points;
};

/// Recall of the step-1 oracle selection against each step's oracle,
/// averaged over planned layers and KV heads.
RecallCurve recall_curve(std::span<const SelectionPlan> per_step_oracle, std::size_t k, const std::string& label);
RecallCurve recall_curve(const DenoiseTrace& trace, const std::string& label);

/// Pointwise mean of curves that share K and step count.
RecallCurve average_curves(std::span<const RecallCurve> curves, const std::string& label);

/// Mean over planned layers and KV heads of topk_recall(oracle, method).
double method_recall(const SelectionPlan& method, const SelectionPlan& oracle);

enum class HeatmapNormalization { none, global_max, row_max };

std::string_view to_string(HeatmapNormalization mode);

struct SkewHeatmap {
    std::size_t layers = 0;
    std::size_t steps = 0;
    double threshold = 0.9;
    HeatmapNormalization normalization = HeatmapNormalization::global_max;
    std::vector<double> raw;     // layers x steps, coverage counts averaged over KV heads
    std::vector<double> values;  // normalized

    double raw_at(std::size_t layer, std::size_t step) const { return raw[layer * steps + step]; }
    double value(std::size_t layer, std::size_t step) const { return values[layer * steps + step]; }
};

/// Per KV head: coverage budget of the mean distribution over the head's
/// query rows.
std::vector<std::size_t> kv_head_coverage_budgets(const AttentionTensor& attention, std::size_t kv_heads,
                                                  double threshold = 0.9);

/// `per_step[t][l]` is the exact attention (cache keys) of layer l at step t.
SkewHeatmap skew_heatmap(std::span<const std::vector<AttentionTensor>> per_step, std::size_t kv_heads,
                         double threshold = 0.9,
                         HeatmapNormalization normalization = HeatmapNormalization::global_max);

/// Same grid from precomputed per-step, per-layer, per-KV-head counts.
SkewHeatmap skew_heatmap_from_counts(std::span<const std::vector<std::vector<std::size_t>>> per_step_counts,
                                     double threshold = 0.9,
                                     HeatmapNormalization normalization = HeatmapNormalization::global_max);

/// Elementwise mean of raw grids with equal shape, renormalized.
SkewHeatmap average_heatmaps(std::span<const SkewHeatmap> maps);

/// Spearman correlation between the step-1 layer ranking and every step's
/// layer ranking (1.0 at step 1).
std::vector<double> layer_rank_stability(const SkewHeatmap& heatmap);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Maps 1-based `step` of `total_steps` onto `bins` equal denoising-progress buckets.
std::size_t progress_bucket(std::size_t step, std::size_t total_steps, std::size_t bins = 10);

}  // namespace mage
