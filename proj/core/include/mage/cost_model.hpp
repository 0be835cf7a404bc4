// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace mage {

class KeyValueConfig;

/// Analytic hardware and model-shape parameters. Time is in microseconds and
/// sizes in bytes; defaults approximate a 1.5B-parameter GQA model on a
/// datacenter GPU and only matter relative to each other.
struct CostParams {
    double bandwidth = 3.35e6;       // bytes / us
    double launch_overhead = 5.0;    // us per kernel
    double compute_rate = 9.9e8;     // flop / us
    double element_size = 2.0;       // bytes
    double other_per_layer = 3.0;    // us of non-attention work per layer
    double compare_cost = 1.0;       // flop per element compared during selection
    std::size_t selection_launches = 4;  // kernels per layer for union + selection
    std::size_t num_layers = 28;
    std::size_t num_query_heads = 12;
    std::size_t num_kv_heads = 2;
    std::size_t head_dim = 128;
    std::size_t block_size = 32;
    std::size_t exact_layer_prefix = 1;
    std::size_t page_size = 16;

    /// Key plus value bytes for one cached token in one layer.
    double bytes_per_kv_entry() const { return 2.0 * static_cast<double>(head_dim * num_kv_heads) * element_size; }
    std::size_t planned_layers() const { return num_layers - exact_layer_prefix; }

    void validate() const;
    static CostParams from_config(const KeyValueConfig& kv);
};

enum class StepKind { exact, mage_first, mage_rest, quest, tidal };

std::string_view to_string(StepKind kind);
StepKind parse_step_kind(std::string_view name);

struct PhaseTimes {
    double index_selection = 0.0;
    double attention = 0.0;
    double other = 0.0;

    double total() const { return index_selection + attention + other; }
};

struct LatencyReport {
    StepKind kind = StepKind::exact;
    std::size_t context_length = 0;
    double budget = 0.0;
    PhaseTimes main;       // main stream
    PhaseTimes async;      // overlapped stream (first MAGE step only)
    double serial_tail = 0.0;  // selection work that cannot overlap
    double total = 0.0;
    double exact_total = 0.0;
    double speedup = 1.0;  // exact_total / total
};

/// Two-lane overlap: max(main, async) + serial_tail.
double overlap(double main, double async, double serial_tail);

/// Modeled latency of one denoising step at context length `n` with an
/// average per-layer budget `budget` (ignored for exact).
LatencyReport step_latency(const CostParams& params, std::size_t n, double budget, StepKind kind);

/// Smallest step count m >= 1 with first + (m - 1) * rest < m * exact, or
/// nullopt when rest >= exact.
std::optional<std::size_t> break_even(double exact_step, double first_step, double rest_step);

}  // namespace mage
