// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage_cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mage/baselines.hpp"
#include "mage/cost_model.hpp"
#include "mage/decoder.hpp"
#include "mage/error.hpp"
#include "mage/kv_config.hpp"
#include "mage/metrics.hpp"
#include "mage/model.hpp"
#include "mage/report.hpp"
#include "mage/trace_io.hpp"

namespace mage::cli {

namespace {

namespace fs = std::filesystem;

struct SharedOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::string> method;
    std::optional<std::size_t> k;
    std::optional<std::size_t> k_min;
    std::optional<std::size_t> blocks;
    std::optional<std::size_t> tokens_per_step;
    std::optional<std::uint64_t> seed;
};

struct SimulateOptions {
    SharedOptions shared;
    std::string out_dir = ".";
};

struct AnalyzeOptions {
    std::string trace;
    std::string analysis;
    std::size_t k = 32;
    double threshold = 0.9;
    std::size_t bins = 10;
    std::string normalization = "global_max";
    std::size_t exact_prefix = 1;
    std::string label = "oracle";
    std::string out_dir = ".";
};

struct CostOptions {
    std::string params;
    std::vector<std::string> overrides;
    std::vector<std::size_t> contexts{16384, 32768, 65536, 131072};
    std::vector<std::size_t> ks{2048};
    std::string out_dir = ".";
};

struct ExportOptions {
    SharedOptions shared;
    std::string out;
};

struct IngestOptions {
    std::string trace;
    std::string out;
};

void add_shared(CLI::App* cmd, SharedOptions& o) {
    cmd->add_option("--config", o.config, "Key/value config file (model and decoding keys)");
    cmd->add_option("--set", o.overrides, "Override a config key, as key=value (repeatable)");
    cmd->add_option("--method", o.method, "exact|mage|quest|tidal|window|oracle|random|full");
    cmd->add_option("--k", o.k, "Token budget K");
    cmd->add_option("--kmin", o.k_min, "Per-layer budget floor K_min");
    cmd->add_option("--blocks", o.blocks, "Number of blocks to generate");
    cmd->add_option("--tokens-per-step", o.tokens_per_step, "Tokens unmasked per denoising step");
    cmd->add_option("--seed", o.seed, "Seed for weights, prompt and every sampler");
}

KeyValueConfig shared_config(const SharedOptions& o) {
    KeyValueConfig kv = o.config.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.config);
    for (const auto& assignment : o.overrides) {
        kv.set_override(assignment);
    }
    if (o.method) {
        kv.set("method", *o.method);
    }
    if (o.k) {
        kv.set("budget", std::to_string(*o.k));
    }
    if (o.k_min) {
        kv.set("k_min", std::to_string(*o.k_min));
    }
    if (o.blocks) {
        kv.set("num_blocks", std::to_string(*o.blocks));
    }
    if (o.tokens_per_step) {
        kv.set("tokens_per_step", std::to_string(*o.tokens_per_step));
    }
    if (o.seed) {
        kv.set("seed", std::to_string(*o.seed));
    }
    return kv;
}

fs::path output_dir(const std::string& dir) {
    const fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) {
        throw DataError("cannot create output directory " + dir);
    }
    return p;
}

void emit(std::ostream& out, const fs::path& path, const std::string& content) {
    write_file_atomic(path.string(), content);
    out << "wrote " << path.string() << '\n';
}

CostParams cost_params_for(const KeyValueConfig& kv, const ModelConfig& model) {
    KeyValueConfig shaped = kv;
    shaped.set("num_layers", std::to_string(model.num_layers));
    shaped.set("num_query_heads", std::to_string(model.num_query_heads));
    shaped.set("num_kv_heads", std::to_string(model.num_kv_heads));
    shaped.set("head_dim", std::to_string(model.head_dim));
    shaped.set("block_size", std::to_string(model.block_size));
    shaped.set("exact_layer_prefix", std::to_string(model.exact_layer_prefix));
    return CostParams::from_config(shaped);
}

double mean_planned_budget(const SelectionPlan& plan) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t l = plan.first_planned_layer; l < plan.num_layers(); ++l) {
        sum += static_cast<double>(std::min(plan.layers[l].budget, plan.context_length));
        ++count;
    }
    return count == 0 ? static_cast<double>(plan.context_length) : sum / static_cast<double>(count);
}

double modeled_step_latency(const CostParams& params, const DenoiseTrace& trace, const StepRecord& step,
                            std::size_t k) {
    const std::size_t n = trace.context_length;
    const double kk = static_cast<double>(std::min(k, n));
    if (n == 0 || trace.method == Method::exact) {
        return step_latency(params, n, static_cast<double>(n), StepKind::exact).total;
    }
    switch (trace.method) {
    case Method::mage:
        if (!step.plan) {
            return step_latency(params, n, static_cast<double>(n), StepKind::mage_first).total;
        }
        return step_latency(params, n, mean_planned_budget(*step.plan), StepKind::mage_rest).total;
    case Method::quest:
        return step_latency(params, n, kk, StepKind::quest).total;
    case Method::tidal:
        return step_latency(params, n, kk, StepKind::tidal).total;
    default:
        if (!step.plan) {
            return step_latency(params, n, static_cast<double>(n), StepKind::exact).total;
        }
        return step_latency(params, n, mean_planned_budget(*step.plan), StepKind::mage_rest).total;
    }
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    const KeyValueConfig kv = shared_config(o.shared);
    const ModelConfig model_config = ModelConfig::from_config(kv);
    DecodeConfig decode = DecodeConfig::from_config(kv);
    decode.trace_oracle = true;
    const Model model = build_model(model_config);
    const Generation gen = generate(model, decode);
    const CostParams params = cost_params_for(kv, model_config);

    double recall_sum = 0.0;
    std::size_t recall_count = 0;
    double latency_sum = 0.0;
    std::size_t steps = 0;
    std::ostringstream plans;
    for (const auto& trace : gen.traces) {
        const SelectionPlan* previous = nullptr;
        for (const auto& step : trace.steps) {
            latency_sum += modeled_step_latency(params, trace, step, decode.budget);
            ++steps;
            if (step.plan && step.oracle) {
                recall_sum += method_recall(*step.plan, *step.oracle);
                ++recall_count;
            }
            if (step.plan && step.plan.get() != previous) {
                plans << "## block=" << trace.block_index << " step=" << step.step << '\n';
                write_plan_text(plans, *step.plan);
            }
            previous = step.plan.get();
        }
    }

    SummaryRow row;
    row.method = std::string(to_string(decode.method));
    row.k = decode.budget;
    row.tokens_per_step = decode.tokens_per_step;
    if (decode.method != Method::exact && recall_count > 0) {
        row.mean_recall = recall_sum / static_cast<double>(recall_count);
    }
    row.step_latency = steps == 0 ? 0.0 : latency_sum / static_cast<double>(steps);

    const fs::path dir = output_dir(o.out_dir);
    std::ostringstream trace_text;
    write_trace_jsonl(trace_text, gen.traces);
    std::ostringstream summary;
    write_summary_csv(summary, std::span<const SummaryRow>(&row, 1));
    emit(out, dir / "trace.jsonl", trace_text.str());
    emit(out, dir / "plans.txt", plans.str());
    emit(out, dir / "summary.csv", summary.str());
    return kExitOk;
}

HeatmapNormalization parse_normalization(const std::string& name) {
    for (const auto mode :
         {HeatmapNormalization::none, HeatmapNormalization::global_max, HeatmapNormalization::row_max}) {
        if (to_string(mode) == name) {
            return mode;
        }
    }
    throw ConfigError("unknown normalization '" + name + "'");
}

// Consecutive steps with equal context length belong to one block.
std::vector<std::vector<std::size_t>> block_runs(const TraceFile& trace) {
    std::vector<std::vector<std::size_t>> runs;
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        if (runs.empty() || trace.context_lengths[runs.back().front()] != trace.context_lengths[t]) {
            runs.emplace_back();
        }
        runs.back().push_back(t);
    }
    if (runs.empty()) {
        throw MetricError("trace contains no steps");
    }
    return runs;
}

ModelConfig shape_of(const TraceFile& trace, std::size_t exact_prefix) {
    if (exact_prefix >= trace.num_layers) {
        throw ConfigError("--exact-prefix must be smaller than the trace's layer count");
    }
    ModelConfig c;
    c.num_layers = trace.num_layers;
    c.num_query_heads = trace.num_query_heads;
    c.num_kv_heads = trace.num_kv_heads;
    c.block_size = trace.block_size;
    c.exact_layer_prefix = exact_prefix;
    return c;
}

std::vector<DenoiseTrace> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    auto traces = read_trace_jsonl(in);
    if (traces.empty()) {
        throw DataError(path + " holds no trace records");
    }
    return traces;
}

int cmd_analyze(const AnalyzeOptions& o, std::ostream& out) {
    std::ifstream in(o.trace, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + o.trace);
    }
    const bool binary = is_binary_trace(in);
    std::optional<TraceFile> file;
    std::vector<DenoiseTrace> traces;
    if (binary) {
        file = read_trace_file(in);
        validate_trace_file(*file);
    } else {
        in.close();
        traces = load_jsonl(o.trace);
    }
    const fs::path dir = output_dir(o.out_dir);

    if (o.analysis == "recall" || o.analysis == "method-recall") {
        std::vector<RecallCurve> curves;
        std::string label = o.label;
        if (o.analysis == "recall" && binary) {
            const ModelConfig shape = shape_of(*file, o.exact_prefix);
            for (const auto& run : block_runs(*file)) {
                std::vector<SelectionPlan> oracles;
                for (const std::size_t t : run) {
                    oracles.push_back(oracle_plan(file->attention[t], shape, o.k));
                }
                curves.push_back(recall_curve(oracles, o.k, o.label));
            }
        } else if (o.analysis == "recall") {
            for (const auto& trace : traces) {
                curves.push_back(recall_curve(trace, o.label));
            }
        } else {
            if (binary) {
                throw ConfigError("method-recall needs a JSON-lines trace with selection plans");
            }
            label = std::string(to_string(traces.front().method));
            for (const auto& trace : traces) {
                RecallCurve curve;
                curve.k = trace.oracle_k;
                curve.label = label;
                for (const auto& step : trace.steps) {
                    if (!step.oracle) {
                        throw MetricError("trace has no oracle sets (tracing disabled)");
                    }
                    if (step.plan) {
                        curve.points.push_back({step.step, method_recall(*step.plan, *step.oracle)});
                    }
                }
                if (curve.points.empty()) {
                    throw MetricError("block " + std::to_string(trace.block_index) + " has no sparse steps");
                }
                curves.push_back(std::move(curve));
            }
        }
        const RecallCurve mean = average_curves(curves, label);
        std::ostringstream csv;
        write_recall_csv(csv, std::span<const RecallCurve>(&mean, 1));
        emit(out, dir / (o.analysis == "recall" ? "recall.csv" : "method_recall.csv"), csv.str());
        return kExitOk;
    }
    if (o.analysis == "skew") {
        const HeatmapNormalization norm = parse_normalization(o.normalization);
        std::vector<SkewHeatmap> maps;
        if (binary) {
            for (const auto& run : block_runs(*file)) {
                std::vector<std::vector<AttentionTensor>> per_step;
                for (const std::size_t t : run) {
                    per_step.push_back(file->attention[t]);
                }
                maps.push_back(skew_heatmap(per_step, file->num_kv_heads, o.threshold, norm));
            }
        } else {
            if (o.threshold != 0.9) {
                throw ConfigError("JSON-lines traces record 90%-coverage counts only");
            }
            for (const auto& trace : traces) {
                std::vector<std::vector<std::vector<std::size_t>>> counts;
                for (const auto& step : trace.steps) {
                    if (step.coverage_counts.empty()) {
                        throw MetricError("step " + std::to_string(step.step) + " has no coverage counts");
                    }
                    counts.push_back(step.coverage_counts);
                }
                maps.push_back(skew_heatmap_from_counts(counts, o.threshold, norm));
            }
        }
        const SkewHeatmap mean = average_heatmaps(maps);
        std::ostringstream csv;
        write_heatmap_csv(csv, mean, o.bins);
        emit(out, dir / "heatmap.csv", csv.str());
        emit(out, dir / "heatmap.json", heatmap_metadata_json(mean, o.bins) + "\n");
        return kExitOk;
    }
    throw ConfigError("unknown analysis '" + o.analysis + "'");
}

int cmd_cost(const CostOptions& o, std::ostream& out) {
    KeyValueConfig kv = o.params.empty() ? KeyValueConfig{} : KeyValueConfig::load(o.params);
    for (const auto& assignment : o.overrides) {
        kv.set_override(assignment);
    }
    const CostParams params = CostParams::from_config(kv);
    if (o.contexts.empty() || o.ks.empty()) {
        throw ConfigError("cost sweep needs at least one context length and one K");
    }

    std::ostringstream breakdown;
    write_breakdown_header(breakdown);
    std::vector<AmortizationRow> rows;
    for (const std::size_t n : o.contexts) {
        for (const std::size_t k : o.ks) {
            const double budget = static_cast<double>(std::min(k, n));
            std::map<StepKind, LatencyReport> reports;
            for (const StepKind kind :
                 {StepKind::exact, StepKind::mage_first, StepKind::mage_rest, StepKind::quest, StepKind::tidal}) {
                reports[kind] = step_latency(params, n, budget, kind);
                write_breakdown_rows(breakdown, reports[kind], k);
            }
            for (const StepKind baseline : {StepKind::exact, StepKind::quest, StepKind::tidal}) {
                AmortizationRow row;
                row.context_length = n;
                row.k = k;
                row.baseline = std::string(to_string(baseline));
                row.baseline_step = reports[baseline].total;
                row.first_step = reports[StepKind::mage_first].total;
                row.rest_step = reports[StepKind::mage_rest].total;
                row.break_even = break_even(row.baseline_step, row.first_step, row.rest_step);
                rows.push_back(std::move(row));
            }
        }
    }
    std::ostringstream amortization;
    write_amortization_csv(amortization, rows);
    const fs::path dir = output_dir(o.out_dir);
    emit(out, dir / "breakdown.csv", breakdown.str());
    emit(out, dir / "amortization.csv", amortization.str());
    return kExitOk;
}

int cmd_export(const ExportOptions& o, std::ostream& out) {
    const KeyValueConfig kv = shared_config(o.shared);
    const ModelConfig model_config = ModelConfig::from_config(kv);
    DecodeConfig decode = DecodeConfig::from_config(kv);
    decode.keep_attention = true;
    const Model model = build_model(model_config);
    const Generation gen = generate(model, decode);
    const TraceFile file = trace_file_from(gen.traces, model_config.num_layers, model_config.num_query_heads,
                                           model_config.num_kv_heads);
    std::ostringstream bytes(std::ios::binary);
    write_trace_file(bytes, file);
    const fs::path target(o.out);
    if (target.has_parent_path()) {
        output_dir(target.parent_path().string());
    }
    emit(out, target, bytes.str());
    return kExitOk;
}

int cmd_ingest(const IngestOptions& o, std::ostream& out) {
    std::ifstream in(o.trace, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + o.trace);
    }
    const TraceFile file = read_trace_file(in);
    validate_trace_file(file);
    const nlohmann::json summary = {{"magic", std::string(kTraceMagic)},
                                    {"num_layers", file.num_layers},
                                    {"num_query_heads", file.num_query_heads},
                                    {"num_kv_heads", file.num_kv_heads},
                                    {"block_size", file.block_size},
                                    {"steps", file.steps()},
                                    {"context_lengths", file.context_lengths},
                                    {"valid", true}};
    if (o.out.empty()) {
        out << summary.dump(2) << '\n';
    } else {
        emit(out, fs::path(o.out), summary.dump(2) + "\n");
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse-attention experiments for block diffusion decoding"};
    app.name("mage");
    app.require_subcommand(1);

    SimulateOptions simulate;
    auto* sim = app.add_subcommand("simulate", "Decode with the toy model and write trace, plans and summary");
    add_shared(sim, simulate.shared);
    sim->add_option("--out", simulate.out_dir, "Output directory");

    AnalyzeOptions analyze;
    auto* ana = app.add_subcommand("analyze", "Recall or skew analysis of a binary or JSON-lines trace");
    ana->add_option("--trace", analyze.trace, "Trace file")->required();
    ana->add_option("--analysis", analyze.analysis, "recall|skew|method-recall")
        ->required()
        ->check(CLI::IsMember({"recall", "skew", "method-recall"}));
    ana->add_option("--k", analyze.k, "Oracle K for binary traces");
    ana->add_option("--threshold", analyze.threshold, "Coverage threshold for skew");
    ana->add_option("--bins", analyze.bins, "Denoising-progress buckets for skew");
    ana->add_option("--normalization", analyze.normalization, "none|global_max|row_max");
    ana->add_option("--exact-prefix", analyze.exact_prefix, "Leading layers excluded from recall (binary traces)");
    ana->add_option("--label", analyze.label, "Curve label for recall");
    ana->add_option("--out", analyze.out_dir, "Output directory");

    CostOptions cost;
    auto* cst = app.add_subcommand("cost", "Latency breakdown and amortization sweep from the cost model");
    cst->add_option("--params", cost.params, "Cost parameter file");
    cst->add_option("--set", cost.overrides, "Override a parameter, as key=value (repeatable)");
    cst->add_option("--contexts", cost.contexts, "Context lengths")->delimiter(',');
    cst->add_option("--k", cost.ks, "Budgets K")->delimiter(',');
    cst->add_option("--out", cost.out_dir, "Output directory");

    auto* trace = app.add_subcommand("trace", "Binary attention traces");
    trace->require_subcommand(1);
    ExportOptions exp;
    auto* ex = trace->add_subcommand("export", "Decode with the toy model and write its attention as a binary trace");
    add_shared(ex, exp.shared);
    ex->add_option("--out", exp.out, "Output trace file")->required();
    IngestOptions ing;
    auto* in = trace->add_subcommand("ingest", "Validate a binary trace and print its JSON summary");
    in->add_option("--trace", ing.trace, "Trace file")->required();
    in->add_option("--out", ing.out, "Write the summary here instead of stdout");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*sim) {
            return cmd_simulate(simulate, out);
        }
        if (*ana) {
            return cmd_analyze(analyze, out);
        }
        if (*cst) {
            return cmd_cost(cost, out);
        }
        if (*ex) {
            return cmd_export(exp, out);
        }
        return cmd_ingest(ing, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kExitData;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const MetricError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
}

}  // namespace mage::cli
