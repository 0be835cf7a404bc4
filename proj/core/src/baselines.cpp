// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "mage/error.hpp"
#include "mage/model.hpp"

namespace mage {

namespace {

void fill_planned(SelectionPlan& plan, const ModelConfig& config, std::size_t budget,
                  const std::vector<IndexList>& heads) {
    for (std::size_t l = config.exact_layer_prefix; l < config.num_layers; ++l) {
        plan.layers[l].budget = budget;
        plan.layers[l].heads = heads;
    }
}

}  // namespace

void BaselineConfig::validate(const ModelConfig& config) const {
    if (page_size == 0) {
        throw ConfigError("page_size must be at least 1");
    }
    if (anchor_layer < config.exact_layer_prefix || anchor_layer >= config.num_layers) {
        throw ConfigError("anchor_layer must lie in [exact_layer_prefix, num_layers)");
    }
    if (num_sinks + window_size == 0) {
        throw ConfigError("window plan needs num_sinks + window_size >= 1");
    }
}

IndexList top_k_by_mass(std::span<const double> mass, std::size_t k) {
    if (k == 0) {
        throw ConfigError("top-k requires k >= 1");
    }
    const std::size_t take = std::min(k, mass.size());
    IndexList order(mass.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&mass](std::size_t a, std::size_t b) {
                          return mass[a] > mass[b] || (mass[a] == mass[b] && a < b);
                      });
    order.resize(take);
    std::sort(order.begin(), order.end());
    return order;
}

double quest_page_importance(std::span<const std::span<const float>> queries, std::span<const float> page_min,
                             std::span<const float> page_max) {
    if (page_min.size() != page_max.size()) {
        throw ShapeError("page bounds differ in width");
    }
    double total = 0.0;
    for (const auto& q : queries) {
        if (q.size() != page_min.size()) {
            throw ShapeError("query width does not match page bounds");
        }
        for (std::size_t j = 0; j < q.size(); ++j) {
            const double lo = static_cast<double>(q[j]) * page_min[j];
            const double hi = static_cast<double>(q[j]) * page_max[j];
            total += std::max(lo, hi);
        }
    }
    return total;
}

std::vector<IndexList> quest_select_layer(const Matrix& queries, const PageMeta& meta, std::size_t layer,
                                          std::size_t num_query_heads, std::size_t k) {
    const std::size_t n = meta.covered_length();
    if (n == 0) {
        throw PlanError("quest: cannot plan over an empty cache");
    }
    if (k == 0) {
        throw ConfigError("quest budget must be at least 1");
    }
    const std::size_t d = meta.head_dim();
    const std::size_t kv_heads = meta.kv_heads();
    if (queries.cols != num_query_heads * d || num_query_heads % kv_heads != 0) {
        throw ShapeError("quest: query matrix does not match the cache head geometry");
    }
    if (k >= n) {
        return std::vector<IndexList>(kv_heads, full_range(n));
    }
    const std::size_t group = num_query_heads / kv_heads;
    const std::size_t pages = meta.num_pages();

    std::vector<IndexList> out;
    std::vector<std::span<const float>> group_queries;
    for (std::size_t h = 0; h < kv_heads; ++h) {
        group_queries.clear();
        for (std::size_t g = 0; g < group; ++g) {
            for (std::size_t i = 0; i < queries.rows; ++i) {
                group_queries.push_back(queries.row(i).subspan((h * group + g) * d, d));
            }
        }
        std::vector<double> importance(pages);
        for (std::size_t p = 0; p < pages; ++p) {
            importance[p] = quest_page_importance(group_queries, meta.min_key(layer, h, p), meta.max_key(layer, h, p));
        }
        std::vector<std::size_t> order(pages);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&importance](std::size_t a, std::size_t b) {
            return importance[a] > importance[b] || (importance[a] == importance[b] && a < b);
        });

        IndexList chosen;
        for (const auto p : order) {
            if (chosen.size() >= k) {
                break;
            }
            const std::size_t end = meta.page_end(p);
            const std::size_t keep = std::min(end - meta.page_begin(p), k - chosen.size());
            // Only the last (least important) page is trimmed, from its tail.
            for (std::size_t pos = meta.page_begin(p); pos < meta.page_begin(p) + keep; ++pos) {
                chosen.push_back(pos);
            }
        }
        std::sort(chosen.begin(), chosen.end());
        out.push_back(std::move(chosen));
    }
    return out;
}

SelectionPlan quest_plan(std::span<const Matrix> layer_queries, const PageMeta& meta, const ModelConfig& config,
                         std::size_t k) {
    if (layer_queries.size() != config.num_layers) {
        throw ShapeError("quest: expected queries for every layer");
    }
    const std::size_t n = meta.covered_length();
    if (n == 0) {
        throw PlanError("quest: cannot plan over an empty cache");
    }
    SelectionPlan plan = full_plan(config.num_layers, config.num_kv_heads, n, config.exact_layer_prefix, Method::quest);
    for (std::size_t l = config.exact_layer_prefix; l < config.num_layers; ++l) {
        plan.layers[l].budget = k;
        plan.layers[l].heads = quest_select_layer(layer_queries[l], meta, l, config.num_query_heads, k);
    }
    return plan;
}

SelectionPlan tidal_plan(const AttentionTensor& anchor_attention, const ModelConfig& config, std::size_t k) {
    if (anchor_attention.heads != config.num_query_heads) {
        throw ShapeError("tidal: anchor attention head count does not match the model");
    }
    const std::size_t n = anchor_attention.keys;
    if (n == 0) {
        throw PlanError("tidal: cannot plan over an empty cache");
    }
    std::vector<IndexList> heads;
    for (std::size_t h = 0; h < config.num_kv_heads; ++h) {
        heads.push_back(top_k_by_mass(summed_mass(group_rows(anchor_attention, h, config.group_size())), k));
    }
    SelectionPlan plan = full_plan(config.num_layers, config.num_kv_heads, n, config.exact_layer_prefix, Method::tidal);
    fill_planned(plan, config, k, heads);
    return plan;
}

SelectionPlan window_plan(std::size_t n, std::size_t num_sinks, std::size_t window_size, const ModelConfig& config) {
    if (n == 0) {
        throw PlanError("window: cannot plan over an empty cache");
    }
    if (num_sinks + window_size == 0) {
        throw ConfigError("window plan needs num_sinks + window_size >= 1");
    }
    IndexList indices;
    const std::size_t sink_end = std::min(num_sinks, n);
    const std::size_t window_begin = n > window_size ? n - window_size : 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < sink_end || i >= window_begin) {
            indices.push_back(i);
        }
    }
    SelectionPlan plan = full_plan(config.num_layers, config.num_kv_heads, n, config.exact_layer_prefix, Method::window);
    fill_planned(plan, config, indices.size(), std::vector<IndexList>(config.num_kv_heads, indices));
    return plan;
}

SelectionPlan oracle_plan(std::span<const AttentionTensor> attention, const ModelConfig& config, std::size_t k) {
    if (attention.size() != config.num_layers) {
        throw ShapeError("oracle: expected attention for every layer");
    }
    const std::size_t n = attention.front().keys;
    SelectionPlan plan = full_plan(config.num_layers, config.num_kv_heads, n, config.exact_layer_prefix, Method::oracle);
    for (std::size_t l = config.exact_layer_prefix; l < config.num_layers; ++l) {
        if (attention[l].heads != config.num_query_heads || attention[l].keys != n) {
            throw ShapeError("oracle: attention tensors must be H_q x B x n with a shared n");
        }
        plan.layers[l].budget = k;
        for (std::size_t h = 0; h < config.num_kv_heads; ++h) {
            plan.layers[l].heads[h] = top_k_by_mass(summed_mass(group_rows(attention[l], h, config.group_size())), k);
        }
    }
    return plan;
}

SelectionPlan random_plan(std::size_t n, std::size_t k, std::uint64_t seed, const ModelConfig& config) {
    if (n == 0) {
        throw PlanError("random: cannot plan over an empty cache");
    }
    if (k == 0) {
        throw ConfigError("random plan budget must be at least 1");
    }
    std::mt19937_64 rng(seed);
    const IndexList all = full_range(n);
    SelectionPlan plan = full_plan(config.num_layers, config.num_kv_heads, n, config.exact_layer_prefix, Method::random);
    for (std::size_t l = config.exact_layer_prefix; l < config.num_layers; ++l) {
        plan.layers[l].budget = k;
        for (auto& head : plan.layers[l].heads) {
            head.clear();
            std::sample(all.begin(), all.end(), std::back_inserter(head), std::min(k, n), rng);
        }
    }
    return plan;
}

}  // namespace mage
