// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mage/tensor.hpp"

namespace mage {

enum class Method { exact, mage, quest, tidal, window, oracle, random, full };

std::string_view to_string(Method method);
/// Throws ConfigError on unknown names.
Method parse_method(std::string_view name);

/// Selection for a single layer: one budget shared by all KV heads, and one
/// sorted index list per KV head.
struct LayerSelection {
    std::size_t budget = 0;
    std::vector<IndexList> heads;

    bool operator==(const LayerSelection&) const = default;
};

/// Which cache entries every layer's cross-block attention may read.
/// Layers below `first_planned_layer` always run exact attention; their
/// entries hold the full index range.
struct SelectionPlan {
    Method method = Method::full;
    std::size_t context_length = 0;
    std::size_t first_planned_layer = 0;
    std::vector<LayerSelection> layers;

    std::size_t num_layers() const noexcept { return layers.size(); }
    std::size_t num_kv_heads() const noexcept { return layers.empty() ? 0 : layers.front().heads.size(); }
    bool is_planned(std::size_t layer) const noexcept { return layer >= first_planned_layer; }

    bool operator==(const SelectionPlan&) const = default;
};

/// Plan that reads the full range [0, n) in every layer.
SelectionPlan full_plan(std::size_t num_layers, std::size_t kv_heads, std::size_t n, std::size_t first_planned_layer,
                        Method tag = Method::full);

IndexList full_range(std::size_t n);

/// Throws PlanError unless `indices` is strictly increasing with all entries < n.
void validate_index_list(const IndexList& indices, std::size_t n);

/// Checks structural invariants: layer/head counts, sorted in-range indices,
/// |T| = min(budget, n) on planned layers and budget >= `k_min` there.
void validate_plan(const SelectionPlan& plan, std::size_t num_layers, std::size_t kv_heads, std::size_t n,
                   std::size_t k_min = 1);

/// Line-oriented text form. Header line, then one line per (layer, head):
///   `<layer> <head> <budget> : <i0> <i1> ...`
void write_plan_text(std::ostream& out, const SelectionPlan& plan);
std::string plan_to_text(const SelectionPlan& plan);
SelectionPlan parse_plan_text(std::istream& in);
/// Reads consecutive plans; lines starting with `##` are annotations.
std::vector<SelectionPlan> parse_plan_texts(std::istream& in);

}  // namespace mage
