// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/cost_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mage/error.hpp"
#include "mage/kv_config.hpp"

namespace mage {

namespace {

double as_double(std::size_t v) { return static_cast<double>(v); }

// One attention kernel reading `entries` cached tokens.
double attention_layer(const CostParams& p, double entries) {
    const double bytes = entries * p.bytes_per_kv_entry();
    const double flops = as_double(p.block_size * p.num_query_heads * p.head_dim) * entries;
    return p.launch_overhead + bytes / p.bandwidth + flops / p.compute_rate;
}

// Bytes of the per-query score rows one layer produces over `n` keys.
double score_bytes(const CostParams& p, double n) {
    return as_double(p.num_query_heads * p.block_size) * n * p.element_size;
}

// Device-side work of one layer's union formation and top-K selection: read
// the score rows once and compare every element. Launches are counted
// separately because the host issues them in order on the main stream.
double selection_body(const CostParams& p, double n) {
    const double elements = as_double(p.num_query_heads * p.block_size) * n;
    return score_bytes(p, n) / p.bandwidth + p.compare_cost * elements / p.compute_rate;
}

double selection_launch_cost(const CostParams& p) { return as_double(p.selection_launches) * p.launch_overhead; }

double exact_attention(const CostParams& p, double n) { return as_double(p.num_layers) * attention_layer(p, n); }

double prefix_attention(const CostParams& p, double n) {
    return as_double(p.exact_layer_prefix) * attention_layer(p, n);
}

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(std::string("cost parameter ") + name + " must be positive and finite");
    }
}

void require_nonnegative(double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
        throw DomainError(std::string(name) + " must be a nonnegative finite time");
    }
}

}  // namespace

void CostParams::validate() const {
    require_positive(bandwidth, "bandwidth");
    require_positive(launch_overhead, "launch_overhead");
    require_positive(compute_rate, "compute_rate");
    require_positive(element_size, "element_size");
    if (!(other_per_layer >= 0.0) || !(compare_cost >= 0.0)) {
        throw ConfigError("cost parameters other_per_layer and compare_cost must be nonnegative");
    }
    if (num_layers == 0 || num_query_heads == 0 || num_kv_heads == 0 || head_dim == 0 || block_size == 0 ||
        page_size == 0) {
        throw ConfigError("cost model shape parameters must be positive");
    }
    if (num_query_heads % num_kv_heads != 0) {
        throw ConfigError("num_query_heads must be a multiple of num_kv_heads");
    }
    if (exact_layer_prefix >= num_layers) {
        throw ConfigError("exact_layer_prefix must leave at least one planned layer");
    }
}

CostParams CostParams::from_config(const KeyValueConfig& kv) {
    CostParams p;
    p.bandwidth = kv.get_double("bandwidth", p.bandwidth);
    p.launch_overhead = kv.get_double("launch_overhead", p.launch_overhead);
    p.compute_rate = kv.get_double("compute_rate", p.compute_rate);
    p.element_size = kv.get_double("element_size", p.element_size);
    p.other_per_layer = kv.get_double("other_per_layer", p.other_per_layer);
    p.compare_cost = kv.get_double("compare_cost", p.compare_cost);
    p.selection_launches = kv.get_uint("selection_launches", p.selection_launches);
    p.num_layers = kv.get_uint("num_layers", p.num_layers);
    p.num_query_heads = kv.get_uint("num_query_heads", p.num_query_heads);
    p.num_kv_heads = kv.get_uint("num_kv_heads", p.num_kv_heads);
    p.head_dim = kv.get_uint("head_dim", p.head_dim);
    p.block_size = kv.get_uint("block_size", p.block_size);
    p.exact_layer_prefix = kv.get_uint("exact_layer_prefix", p.exact_layer_prefix);
    p.page_size = kv.get_uint("page_size", p.page_size);
    p.validate();
    return p;
}

std::string_view to_string(StepKind kind) {
    switch (kind) {
    case StepKind::exact:
        return "exact";
    case StepKind::mage_first:
        return "mage_first";
    case StepKind::mage_rest:
        return "mage_rest";
    case StepKind::quest:
        return "quest";
    case StepKind::tidal:
        return "tidal";
    }
    return "unknown";
}

StepKind parse_step_kind(std::string_view name) {
    for (const StepKind k :
         {StepKind::exact, StepKind::mage_first, StepKind::mage_rest, StepKind::quest, StepKind::tidal}) {
        if (to_string(k) == name) {
            return k;
        }
    }
    throw ConfigError("unknown step kind '" + std::string(name) + "'");
}

double overlap(double main, double async, double serial_tail) {
    require_nonnegative(main, "main");
    require_nonnegative(async, "async");
    require_nonnegative(serial_tail, "serial_tail");
    return std::max(main, async) + serial_tail;
}

LatencyReport step_latency(const CostParams& params, std::size_t n, double budget, StepKind kind) {
    params.validate();
    const double nd = as_double(n);
    if (kind != StepKind::exact && kind != StepKind::mage_first) {
        if (!(budget >= 0.0) || budget > nd) {
            throw DomainError("budget " + std::to_string(budget) + " must lie in [0, n] with n = " + std::to_string(n));
        }
    }
    const double planned = as_double(params.planned_layers());
    const double other = as_double(params.num_layers) * params.other_per_layer;

    LatencyReport r;
    r.kind = kind;
    r.context_length = n;
    r.budget = kind == StepKind::exact ? nd : budget;
    r.main.other = other;
    r.exact_total = exact_attention(params, nd) + other;

    switch (kind) {
    case StepKind::exact:
        r.main.attention = exact_attention(params, nd);
        r.total = r.main.total();
        break;
    case StepKind::mage_rest:
        r.main.attention = prefix_attention(params, nd) + planned * attention_layer(params, budget);
        r.total = r.main.total();
        break;
    case StepKind::mage_first: {
        r.main.attention = exact_attention(params, nd);
        r.main.index_selection = planned * (score_bytes(params, nd) / params.bandwidth + selection_launch_cost(params));
        r.async.index_selection = (planned - 1.0) * selection_body(params, nd);
        r.serial_tail = selection_body(params, nd);
        r.total = overlap(r.main.total(), r.async.total(), r.serial_tail);
        break;
    }
    case StepKind::quest: {
        const double pages = std::ceil(nd / as_double(params.page_size));
        const double meta_bytes = pages * 2.0 * as_double(params.head_dim) * params.element_size *
                                  as_double(params.num_kv_heads);
        const double score_flops = 2.0 * as_double(params.block_size * params.num_query_heads * params.head_dim) * pages;
        const double estimate = params.launch_overhead + meta_bytes / params.bandwidth + score_flops / params.compute_rate;
        r.main.index_selection = planned * estimate;
        r.main.attention = prefix_attention(params, nd) + planned * attention_layer(params, budget);
        r.total = r.main.total();
        break;
    }
    case StepKind::tidal:
        r.main.index_selection = selection_body(params, nd) + selection_launch_cost(params);
        r.main.attention = prefix_attention(params, nd) + attention_layer(params, nd) +
                           (planned - 1.0) * attention_layer(params, budget);
        r.total = r.main.total();
        break;
    }
    r.speedup = r.exact_total / r.total;
    return r;
}

std::optional<std::size_t> break_even(double exact_step, double first_step, double rest_step) {
    require_nonnegative(exact_step, "exact_step");
    require_nonnegative(first_step, "first_step");
    require_nonnegative(rest_step, "rest_step");
    if (rest_step >= exact_step) {
        return std::nullopt;
    }
    const auto pays_off = [&](double m) { return first_step + (m - 1.0) * rest_step < m * exact_step; };
    const double ratio = (first_step - rest_step) / (exact_step - rest_step);
    double m = std::max(1.0, std::floor(ratio) + 1.0);
    // Rounding in `ratio` can land one off the smallest qualifying count.
    while (m > 1.0 && pays_off(m - 1.0)) {
        m -= 1.0;
    }
    while (!pays_off(m)) {
        m += 1.0;
    }
    return static_cast<std::size_t>(m);
}

}  // namespace mage
