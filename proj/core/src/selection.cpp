// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mage/error.hpp"
#include "mage/model.hpp"

namespace mage {

IndexList per_query_topk(std::span<const float> row, std::size_t k) {
    if (k == 0) {
        throw ConfigError("top-k requires k >= 1");
    }
    const std::size_t take = std::min(k, row.size());
    IndexList order(row.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    order.resize(take);
    std::sort(order.begin(), order.end());
    return order;
}

UnionResult form_union(const GroupRows& rows, std::size_t k) {
    if (rows.rows.empty() || rows.keys == 0) {
        throw ConfigError("union formation needs at least one non-empty attention row");
    }
    if (k == 0) {
        throw ConfigError("top-k requires k >= 1");
    }
    std::vector<std::size_t> counts(rows.keys, 0);
    for (const auto& row : rows.rows) {
        for (const auto idx : per_query_topk(row, k)) {
            ++counts[idx];
        }
    }
    UnionResult out;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] > 0) {
            out.members.push_back(i);
            out.votes.emplace(i, counts[i]);
        }
    }
    return out;
}

double coverage(const GroupRows& rows, std::span<const std::size_t> members) {
    if (members.empty()) {
        throw SelectionError("coverage of an empty union is undefined");
    }
    if (rows.rows.empty()) {
        throw SelectionError("coverage needs at least one attention row");
    }
    for (const auto idx : members) {
        if (idx >= rows.keys) {
            throw SelectionError("union member " + std::to_string(idx) + " out of range");
        }
    }
    double total = 0.0;
    for (const auto& row : rows.rows) {
        double captured = 0.0;
        for (const auto idx : members) {
            captured += row[idx];
        }
        total += captured;
    }
    // float rows summing to 1 can overshoot by an ulp or two
    return std::min(1.0, total / static_cast<double>(rows.rows.size()));
}

double adjusted_score(std::size_t union_size, double p) {
    if (!(p > 0.0) || p > 1.0) {
        throw DomainError("coverage must lie in (0, 1], got " + std::to_string(p));
    }
    return static_cast<double>(union_size) * (1.0 - std::log(p));
}

std::vector<std::size_t> allocate_budgets(std::span<const double> layer_scores, std::size_t k, std::size_t k_min,
                                          std::optional<std::size_t> layer_count) {
    if (k_min < 1 || k < k_min) {
        throw ConfigError("budgets require k >= k_min >= 1");
    }
    if (layer_scores.empty()) {
        throw AllocationError("no layer scores to allocate over");
    }
    double sum = 0.0;
    for (const double s : layer_scores) {
        if (!(s >= 0.0) || !std::isfinite(s)) {
            throw AllocationError("layer scores must be finite and non-negative");
        }
        sum += s;
    }
    if (sum <= 0.0) {
        throw AllocationError("all layer scores are zero");
    }
    const double total_budget = static_cast<double>(k) * static_cast<double>(layer_count.value_or(layer_scores.size()));
    std::vector<std::size_t> budgets;
    budgets.reserve(layer_scores.size());
    for (const double s : layer_scores) {
        const auto share = static_cast<std::size_t>(std::floor(s * total_budget / sum));
        budgets.push_back(std::max(k_min, share));
    }
    return budgets;
}

IndexList select_indices(std::span<const std::size_t> members, const std::map<std::size_t, std::size_t>& votes,
                         std::span<const double> mass, std::size_t budget, std::size_t n) {
    if (n == 0) {
        throw PlanError("cannot select indices from an empty cache");
    }
    if (budget == 0) {
        throw ConfigError("selection budget must be at least 1");
    }
    for (const auto idx : members) {
        if (idx >= n || idx >= mass.size()) {
            throw PlanError("union member " + std::to_string(idx) + " out of range");
        }
    }
    const auto vote_of = [&votes](std::size_t idx) {
        const auto it = votes.find(idx);
        return it == votes.end() ? std::size_t{0} : it->second;
    };

    IndexList chosen;
    if (budget <= members.size()) {
        IndexList ranked(members.begin(), members.end());
        std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
            const auto va = vote_of(a);
            const auto vb = vote_of(b);
            if (va != vb) {
                return va > vb;
            }
            if (mass[a] != mass[b]) {
                return mass[a] > mass[b];
            }
            return a < b;
        });
        chosen.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(budget));
    } else {
        chosen.assign(members.begin(), members.end());
        std::vector<bool> taken(n, false);
        for (const auto idx : members) {
            taken[idx] = true;
        }
        const std::size_t target = std::min(budget, n);
        for (std::size_t pos = n; pos-- > 0 && chosen.size() < target;) {
            if (!taken[pos]) {
                chosen.push_back(pos);
            }
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

PlanBuild build_plan(std::span<const AttentionTensor> attention, const ModelConfig& config, const MageParams& params) {
    config.validate();
    if (params.k == 0 || params.k_min == 0 || params.k < params.k_min) {
        throw ConfigError("plan parameters require k >= k_min >= 1");
    }
    if (attention.size() != config.num_layers) {
        throw ShapeError("expected attention for " + std::to_string(config.num_layers) + " layers, got " +
                         std::to_string(attention.size()));
    }
    const std::size_t n = attention.front().keys;
    for (const auto& layer : attention) {
        if (layer.heads != config.num_query_heads || layer.keys != n || layer.queries == 0) {
            throw ShapeError("attention tensors must be H_q x B x n with a shared n");
        }
    }
    const std::size_t group = config.group_size();
    const std::size_t first = config.exact_layer_prefix;

    PlanBuild out;
    out.plan = full_plan(config.num_layers, config.num_kv_heads, n, first, Method::mage);
    if (n == 0 || first >= config.num_layers) {
        return out;
    }

    std::vector<double> layer_scores;
    std::vector<std::vector<std::vector<double>>> head_mass;  // [planned layer][kv head]
    for (std::size_t l = first; l < config.num_layers; ++l) {
        LayerStats stats;
        stats.layer = l;
        auto& masses = head_mass.emplace_back();
        for (std::size_t h = 0; h < config.num_kv_heads; ++h) {
            const GroupRows rows = group_rows(attention[l], h, group);
            HeadStats head;
            head.union_set = form_union(rows, params.k);
            head.coverage = coverage(rows, head.union_set.members);
            head.score = adjusted_score(head.union_set.members.size(), head.coverage);
            stats.score = std::max(stats.score, head.score);
            stats.heads.push_back(std::move(head));
            masses.push_back(summed_mass(rows));
        }
        layer_scores.push_back(stats.score);
        out.stats.layers.push_back(std::move(stats));
    }

    if (n <= params.k) {
        // Budget covers the whole context: every layer reads everything.
        for (std::size_t l = first; l < config.num_layers; ++l) {
            out.plan.layers[l].budget = params.k;
        }
        return out;
    }

    const auto budgets = allocate_budgets(layer_scores, params.k, params.k_min, params.budget_layer_count);
    for (std::size_t p = 0; p < budgets.size(); ++p) {
        auto& layer = out.plan.layers[first + p];
        layer.budget = budgets[p];
        for (std::size_t h = 0; h < config.num_kv_heads; ++h) {
            const auto& u = out.stats.layers[p].heads[h].union_set;
            layer.heads[h] = select_indices(u.members, u.votes, head_mass[p][h], budgets[p], n);
        }
    }
    return out;
}

}  // namespace mage
