// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mage/error.hpp"

namespace mage {

namespace {

// bucket -> mean value, for one layer, over the steps falling into it.
std::map<std::size_t, double> bucket_means(const SkewHeatmap& heatmap, std::size_t layer, std::size_t bins) {
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (std::size_t t = 0; t < heatmap.steps; ++t) {
        auto& [sum, count] = acc[progress_bucket(t + 1, heatmap.steps, bins)];
        sum += heatmap.value(layer, t);
        ++count;
    }
    std::map<std::size_t, double> out;
    for (const auto& [bucket, entry] : acc) {
        out[bucket] = entry.first / static_cast<double>(entry.second);
    }
    return out;
}

void write_breakdown_row(std::ostream& out, const LatencyReport& r, std::size_t k, std::string_view phase,
                         std::string_view stream, double time) {
    out << r.context_length << ',' << k << ',' << to_string(r.kind) << ',' << phase << ',' << stream << ','
        << format_number(time) << '\n';
}

}  // namespace

std::string format_number(double value) {
    if (!std::isfinite(value)) {
        return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
    }
    std::array<char, 64> buf{};
    const auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc()) {
        throw DataError("failed to format number");
    }
    return std::string(buf.data(), end);
}

void write_recall_csv(std::ostream& out, std::span<const RecallCurve> curves) {
    out << "step,K,recall,label\n";
    for (const auto& curve : curves) {
        for (const auto& p : curve.points) {
            out << p.step << ',' << curve.k << ',' << format_number(p.recall) << ',' << curve.label << '\n';
        }
    }
}

void write_heatmap_csv(std::ostream& out, const SkewHeatmap& heatmap, std::size_t bins) {
    out << "layer,step_bucket,value\n";
    for (std::size_t l = 0; l < heatmap.layers; ++l) {
        for (const auto& [bucket, value] : bucket_means(heatmap, l, bins)) {
            out << l << ',' << bucket << ',' << format_number(value) << '\n';
        }
    }
}

std::string heatmap_metadata_json(const SkewHeatmap& heatmap, std::size_t bins) {
    const auto [lo, hi] = std::minmax_element(heatmap.raw.begin(), heatmap.raw.end());
    const nlohmann::json j = {{"layers", heatmap.layers},
                              {"steps", heatmap.steps},
                              {"bins", bins},
                              {"threshold", heatmap.threshold},
                              {"normalization", std::string(to_string(heatmap.normalization))},
                              {"raw_min", heatmap.raw.empty() ? 0.0 : *lo},
                              {"raw_max", heatmap.raw.empty() ? 0.0 : *hi}};
    return j.dump(2);
}

void write_breakdown_header(std::ostream& out) { out << "context_len,K,method,phase,stream,time\n"; }

void write_breakdown_rows(std::ostream& out, const LatencyReport& report, std::size_t k) {
    write_breakdown_row(out, report, k, "index_selection", "main", report.main.index_selection);
    write_breakdown_row(out, report, k, "attention", "main", report.main.attention);
    write_breakdown_row(out, report, k, "other", "main", report.main.other);
    if (report.kind == StepKind::mage_first) {
        write_breakdown_row(out, report, k, "index_selection", "async", report.async.index_selection);
        write_breakdown_row(out, report, k, "index_selection", "serial", report.serial_tail);
    }
    write_breakdown_row(out, report, k, "total", "overlapped", report.total);
}

void write_amortization_csv(std::ostream& out, std::span<const AmortizationRow> rows) {
    out << "context_len,K,baseline,baseline_step,first_step,rest_step,break_even\n";
    for (const auto& r : rows) {
        out << r.context_length << ',' << r.k << ',' << r.baseline << ',' << format_number(r.baseline_step) << ','
            << format_number(r.first_step) << ',' << format_number(r.rest_step) << ',';
        if (r.break_even) {
            out << *r.break_even;
        } else {
            out << kNoBreakEven;
        }
        out << '\n';
    }
}

void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows) {
    out << "method,K,tokens_per_step,mean_recall,step_latency\n";
    for (const auto& r : rows) {
        out << r.method << ',' << r.k << ',' << r.tokens_per_step << ','
            << (r.mean_recall ? format_number(*r.mean_recall) : std::string()) << ','
            << format_number(r.step_latency) << '\n';
    }
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open " + tmp.string() + " for writing");
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            throw DataError("failed writing " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot move output into place at " + path);
    }
}

}  // namespace mage
