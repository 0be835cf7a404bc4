// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "mage/decoder.hpp"
#include "mage/error.hpp"

namespace mage {

namespace {

// Relative slack on the coverage target so that e.g. ten entries of 0.1 reach
// 0.9 after nine despite binary rounding.
constexpr double kCoverageSlack = 1e-12;

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t r = i; r <= j; ++r) {
            ranks[order[r]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

void normalize(SkewHeatmap& map) {
    map.values = map.raw;
    if (map.normalization == HeatmapNormalization::none) {
        return;
    }
    if (map.normalization == HeatmapNormalization::global_max) {
        const double peak = *std::max_element(map.raw.begin(), map.raw.end());
        if (peak > 0.0) {
            for (auto& v : map.values) {
                v /= peak;
            }
        }
        return;
    }
    for (std::size_t l = 0; l < map.layers; ++l) {
        double peak = 0.0;
        for (std::size_t t = 0; t < map.steps; ++t) {
            peak = std::max(peak, map.raw_at(l, t));
        }
        if (peak > 0.0) {
            for (std::size_t t = 0; t < map.steps; ++t) {
                map.values[l * map.steps + t] /= peak;
            }
        }
    }
}

}  // namespace

double topk_recall(std::span<const std::size_t> ref, std::span<const std::size_t> other) {
    if (ref.empty()) {
        throw MetricError("recall against an empty reference set is undefined");
    }
    if (!std::is_sorted(ref.begin(), ref.end()) || !std::is_sorted(other.begin(), other.end())) {
        throw MetricError("recall inputs must be ascending index lists");
    }
    std::size_t hits = 0;
    auto a = ref.begin();
    auto b = other.begin();
    while (a != ref.end() && b != other.end()) {
        if (*a < *b) {
            ++a;
        } else if (*b < *a) {
            ++b;
        } else {
            ++hits;
            ++a;
            ++b;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ref.size());
}

std::size_t coverage_budget(std::span<const float> row, double threshold) {
    if (!(threshold > 0.0) || threshold > 1.0) {
        throw ConfigError("coverage threshold must lie in (0, 1]");
    }
    if (row.empty()) {
        throw MetricError("coverage budget of an empty distribution");
    }
    std::vector<double> sorted(row.begin(), row.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    if (threshold == 1.0) {
        const auto positive = std::count_if(sorted.begin(), sorted.end(), [](double p) { return p > 0.0; });
        if (positive == 0) {
            throw MetricError("coverage budget of a zero-mass distribution");
        }
        return static_cast<std::size_t>(positive);
    }
    double total = 0.0;
    for (const double p : sorted) {
        total += p;
    }
    if (!(total > 0.0)) {
        throw MetricError("coverage budget of a zero-mass distribution");
    }
    const double target = threshold * total * (1.0 - kCoverageSlack);
    double cumulative = 0.0;
    for (std::size_t m = 0; m < sorted.size(); ++m) {
        cumulative += sorted[m];
        if (cumulative >= target) {
            return m + 1;
        }
    }
    return sorted.size();
}

RecallCurve recall_curve(std::span<const SelectionPlan> per_step_oracle, std::size_t k, const std::string& label) {
    if (per_step_oracle.empty()) {
        throw MetricError("recall curve needs at least one traced step");
    }
    RecallCurve curve;
    curve.k = k;
    curve.label = label;
    const SelectionPlan& reference = per_step_oracle.front();
    for (std::size_t t = 0; t < per_step_oracle.size(); ++t) {
        curve.points.push_back({t + 1, method_recall(reference, per_step_oracle[t])});
    }
    return curve;
}

RecallCurve recall_curve(const DenoiseTrace& trace, const std::string& label) {
    std::vector<SelectionPlan> oracles;
    for (const auto& step : trace.steps) {
        if (!step.oracle) {
            throw MetricError("trace has no oracle sets (tracing disabled)");
        }
        oracles.push_back(*step.oracle);
    }
    return recall_curve(oracles, trace.oracle_k, label);
}

RecallCurve average_curves(std::span<const RecallCurve> curves, const std::string& label) {
    if (curves.empty()) {
        throw MetricError("no recall curves to average");
    }
    RecallCurve out = curves.front();
    out.label = label;
    for (std::size_t c = 1; c < curves.size(); ++c) {
        if (curves[c].k != out.k || curves[c].points.size() != out.points.size()) {
            throw MetricError("recall curves differ in K or step count");
        }
        for (std::size_t i = 0; i < out.points.size(); ++i) {
            out.points[i].recall += curves[c].points[i].recall;
        }
    }
    for (auto& p : out.points) {
        p.recall /= static_cast<double>(curves.size());
    }
    return out;
}

double method_recall(const SelectionPlan& method, const SelectionPlan& oracle) {
    if (method.num_layers() != oracle.num_layers() || method.num_kv_heads() != oracle.num_kv_heads() ||
        method.first_planned_layer != oracle.first_planned_layer) {
        throw MetricError("method and oracle plans cover different layers or heads");
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t l = oracle.first_planned_layer; l < oracle.num_layers(); ++l) {
        for (std::size_t h = 0; h < oracle.num_kv_heads(); ++h) {
            total += topk_recall(oracle.layers[l].heads[h], method.layers[l].heads[h]);
            ++count;
        }
    }
    if (count == 0) {
        throw MetricError("plans have no planned layers to compare");
    }
    return total / static_cast<double>(count);
}

std::string_view to_string(HeatmapNormalization mode) {
    switch (mode) {
    case HeatmapNormalization::none:
        return "none";
    case HeatmapNormalization::global_max:
        return "global_max";
    case HeatmapNormalization::row_max:
        return "row_max";
    }
    return "unknown";
}

std::vector<std::size_t> kv_head_coverage_budgets(const AttentionTensor& attention, std::size_t kv_heads,
                                                  double threshold) {
    if (kv_heads == 0 || attention.heads % kv_heads != 0) {
        throw ShapeError("query heads must be a multiple of KV heads");
    }
    const std::size_t group = attention.heads / kv_heads;
    std::vector<std::size_t> out;
    for (std::size_t h = 0; h < kv_heads; ++h) {
        const GroupRows rows = group_rows(attention, h, group);
        const auto mass = summed_mass(rows);
        std::vector<float> mean(mass.size());
        for (std::size_t i = 0; i < mass.size(); ++i) {
            mean[i] = static_cast<float>(mass[i] / static_cast<double>(rows.rows.size()));
        }
        out.push_back(coverage_budget(mean, threshold));
    }
    return out;
}

SkewHeatmap skew_heatmap(std::span<const std::vector<AttentionTensor>> per_step, std::size_t kv_heads,
                         double threshold, HeatmapNormalization normalization) {
    std::vector<std::vector<std::vector<std::size_t>>> counts;
    for (const auto& step : per_step) {
        auto& layers = counts.emplace_back();
        for (const auto& layer : step) {
            layers.push_back(kv_head_coverage_budgets(layer, kv_heads, threshold));
        }
    }
    return skew_heatmap_from_counts(counts, threshold, normalization);
}

SkewHeatmap skew_heatmap_from_counts(std::span<const std::vector<std::vector<std::size_t>>> per_step_counts,
                                     double threshold, HeatmapNormalization normalization) {
    if (per_step_counts.empty() || per_step_counts.front().empty()) {
        throw MetricError("skew heatmap needs attention at every step");
    }
    SkewHeatmap map;
    map.layers = per_step_counts.front().size();
    map.steps = per_step_counts.size();
    map.threshold = threshold;
    map.normalization = normalization;
    map.raw.assign(map.layers * map.steps, 0.0);
    for (std::size_t t = 0; t < map.steps; ++t) {
        if (per_step_counts[t].size() != map.layers) {
            throw MetricError("step " + std::to_string(t + 1) + " is missing layers");
        }
        for (std::size_t l = 0; l < map.layers; ++l) {
            const auto& heads = per_step_counts[t][l];
            if (heads.empty()) {
                throw MetricError("step " + std::to_string(t + 1) + " has no KV heads at layer " + std::to_string(l));
            }
            const double sum = std::accumulate(heads.begin(), heads.end(), 0.0);
            map.raw[l * map.steps + t] = sum / static_cast<double>(heads.size());
        }
    }
    normalize(map);
    return map;
}

SkewHeatmap average_heatmaps(std::span<const SkewHeatmap> maps) {
    if (maps.empty()) {
        throw MetricError("no heatmaps to average");
    }
    SkewHeatmap out = maps.front();
    for (std::size_t m = 1; m < maps.size(); ++m) {
        if (maps[m].layers != out.layers || maps[m].steps != out.steps) {
            throw MetricError("heatmaps differ in shape");
        }
        for (std::size_t i = 0; i < out.raw.size(); ++i) {
            out.raw[i] += maps[m].raw[i];
        }
    }
    for (auto& v : out.raw) {
        v /= static_cast<double>(maps.size());
    }
    normalize(out);
    return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw MetricError("spearman needs two equal-length, non-empty samples");
    }
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double cov = 0.0;
    double va = 0.0;
    double vb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (va == 0.0 || vb == 0.0) {
        return (va == 0.0 && vb == 0.0) ? 1.0 : 0.0;
    }
    return cov / std::sqrt(va * vb);
}

std::vector<double> layer_rank_stability(const SkewHeatmap& heatmap) {
    std::vector<double> first(heatmap.layers);
    for (std::size_t l = 0; l < heatmap.layers; ++l) {
        first[l] = heatmap.raw_at(l, 0);
    }
    std::vector<double> out;
    std::vector<double> column(heatmap.layers);
    for (std::size_t t = 0; t < heatmap.steps; ++t) {
        for (std::size_t l = 0; l < heatmap.layers; ++l) {
            column[l] = heatmap.raw_at(l, t);
        }
        out.push_back(spearman(first, column));
    }
    return out;
}

std::size_t progress_bucket(std::size_t step, std::size_t total_steps, std::size_t bins) {
    if (step == 0 || step > total_steps || bins == 0) {
        throw MetricError("progress bucket needs 1 <= step <= total_steps and bins >= 1");
    }
    return std::min(bins - 1, (step - 1) * bins / total_steps);
}

}  // namespace mage
