// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>

#include "mage/cost_model.hpp"
#include "mage/metrics.hpp"

namespace mage {

/// Shortest round-trippable decimal form, independent of locale.
std::string format_number(double value);

/// step,K,recall,label
void write_recall_csv(std::ostream& out, std::span<const RecallCurve> curves);

/// layer,step_bucket,value (steps sharing a progress bucket are averaged)
void write_heatmap_csv(std::ostream& out, const SkewHeatmap& heatmap, std::size_t bins = 10);
std::string heatmap_metadata_json(const SkewHeatmap& heatmap, std::size_t bins = 10);

/// context_len,K,method,phase,stream,time
void write_breakdown_header(std::ostream& out);
void write_breakdown_rows(std::ostream& out, const LatencyReport& report, std::size_t k);

struct AmortizationRow {
    std::size_t context_length = 0;
    std::size_t k = 0;
    std::string baseline;
    double baseline_step = 0.0;
    double first_step = 0.0;
    double rest_step = 0.0;
    std::optional<std::size_t> break_even;
};

inline constexpr std::string_view kNoBreakEven = "no-break-even";

/// context_len,K,baseline,baseline_step,first_step,rest_step,break_even
void write_amortization_csv(std::ostream& out, std::span<const AmortizationRow> rows);

struct SummaryRow {
    std::string method;
    std::size_t k = 0;
    std::size_t tokens_per_step = 0;
    std::optional<double> mean_recall;
    double step_latency = 0.0;
};

/// method,K,tokens_per_step,mean_recall,step_latency
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace mage
