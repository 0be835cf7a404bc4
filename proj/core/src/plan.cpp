// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/plan.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mage/error.hpp"

namespace mage {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethodNames{{
    {Method::exact, "exact"},
    {Method::mage, "mage"},
    {Method::quest, "quest"},
    {Method::tidal, "tidal"},
    {Method::window, "window"},
    {Method::oracle, "oracle"},
    {Method::random, "random"},
    {Method::full, "full"},
}};

}  // namespace

std::string_view to_string(Method method) {
    for (const auto& [m, name] : kMethodNames) {
        if (m == method) {
            return name;
        }
    }
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (const auto& [m, n] : kMethodNames) {
        if (n == name) {
            return m;
        }
    }
    throw ConfigError("unknown method '" + std::string(name) + "'");
}

IndexList full_range(std::size_t n) {
    IndexList out(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
}

SelectionPlan full_plan(std::size_t num_layers, std::size_t kv_heads, std::size_t n, std::size_t first_planned_layer,
                        Method tag) {
    SelectionPlan plan;
    plan.method = tag;
    plan.context_length = n;
    plan.first_planned_layer = first_planned_layer;
    plan.layers.assign(num_layers, LayerSelection{n, std::vector<IndexList>(kv_heads, full_range(n))});
    return plan;
}

void validate_index_list(const IndexList& indices, std::size_t n) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) {
            throw PlanError("index " + std::to_string(indices[i]) + " out of range for context length " +
                            std::to_string(n));
        }
        if (i > 0 && indices[i] <= indices[i - 1]) {
            throw PlanError("index list is not strictly increasing");
        }
    }
}

void validate_plan(const SelectionPlan& plan, std::size_t num_layers, std::size_t kv_heads, std::size_t n,
                   std::size_t k_min) {
    if (plan.layers.size() != num_layers) {
        throw PlanError("plan covers " + std::to_string(plan.layers.size()) + " layers, model has " +
                        std::to_string(num_layers));
    }
    for (std::size_t l = 0; l < plan.layers.size(); ++l) {
        const auto& layer = plan.layers[l];
        if (layer.heads.size() != kv_heads) {
            throw PlanError("plan layer " + std::to_string(l) + " has " + std::to_string(layer.heads.size()) +
                            " KV heads, expected " + std::to_string(kv_heads));
        }
        for (const auto& head : layer.heads) {
            validate_index_list(head, n);
            if (plan.is_planned(l)) {
                if (head.size() != std::min(layer.budget, n)) {
                    throw PlanError("plan layer " + std::to_string(l) + " selects " + std::to_string(head.size()) +
                                    " entries for budget " + std::to_string(layer.budget));
                }
            }
        }
        if (plan.is_planned(l) && layer.budget < k_min) {
            throw PlanError("plan layer " + std::to_string(l) + " budget below the minimum");
        }
    }
}

void write_plan_text(std::ostream& out, const SelectionPlan& plan) {
    out << "# plan method=" << to_string(plan.method) << " layers=" << plan.num_layers()
        << " kv_heads=" << plan.num_kv_heads() << " n=" << plan.context_length
        << " first_planned=" << plan.first_planned_layer << '\n';
    for (std::size_t l = 0; l < plan.layers.size(); ++l) {
        const auto& layer = plan.layers[l];
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            out << l << ' ' << h << ' ' << layer.budget << " :";
            for (const auto idx : layer.heads[h]) {
                out << ' ' << idx;
            }
            out << '\n';
        }
    }
}

std::string plan_to_text(const SelectionPlan& plan) {
    std::ostringstream out;
    write_plan_text(out, plan);
    return out.str();
}

std::vector<SelectionPlan> parse_plan_texts(std::istream& in) {
    std::vector<SelectionPlan> plans;
    SelectionPlan plan;
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    bool have_header = false;
    std::size_t layers = 0;
    std::size_t kv_heads = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.empty() || line.starts_with("##")) {
            continue;
        }
        if (line.front() == '#') {
            if (have_header) {
                plans.push_back(std::move(plan));
                plan = SelectionPlan{};
                layers = 0;
                kv_heads = 0;
            }
            std::istringstream header(line.substr(1));
            std::string token;
            header >> token;
            if (token != "plan") {
                throw ParseError("plan header must start with '# plan'", line_offset);
            }
            while (header >> token) {
                const auto eq = token.find('=');
                if (eq == std::string::npos) {
                    throw ParseError("malformed plan header field '" + token + "'", line_offset);
                }
                const auto key = token.substr(0, eq);
                const auto value = token.substr(eq + 1);
                try {
                    if (key == "method") {
                        plan.method = parse_method(value);
                    } else if (key == "layers") {
                        layers = std::stoul(value);
                    } else if (key == "kv_heads") {
                        kv_heads = std::stoul(value);
                    } else if (key == "n") {
                        plan.context_length = std::stoul(value);
                    } else if (key == "first_planned") {
                        plan.first_planned_layer = std::stoul(value);
                    }
                } catch (const ConfigError&) {
                    throw ParseError("unknown method in plan header", line_offset);
                } catch (const std::exception&) {
                    throw ParseError("bad number in plan header field '" + token + "'", line_offset);
                }
            }
            plan.layers.assign(layers, LayerSelection{0, std::vector<IndexList>(kv_heads)});
            have_header = true;
            continue;
        }
        if (!have_header) {
            throw ParseError("plan body before header", line_offset);
        }
        std::istringstream body(line);
        std::size_t l = 0;
        std::size_t h = 0;
        std::size_t budget = 0;
        std::string colon;
        if (!(body >> l >> h >> budget >> colon) || colon != ":") {
            throw ParseError("malformed plan line " + std::to_string(line_no), line_offset);
        }
        if (l >= layers || h >= kv_heads) {
            throw ParseError("plan line " + std::to_string(line_no) + " references a missing layer or head",
                             line_offset);
        }
        plan.layers[l].budget = budget;
        std::size_t idx = 0;
        while (body >> idx) {
            plan.layers[l].heads[h].push_back(idx);
        }
        if (!body.eof()) {
            throw ParseError("non-numeric index on plan line " + std::to_string(line_no), line_offset);
        }
    }
    if (!have_header) {
        throw ParseError("empty plan", 0);
    }
    plans.push_back(std::move(plan));
    return plans;
}

SelectionPlan parse_plan_text(std::istream& in) {
    auto plans = parse_plan_texts(in);
    if (plans.size() != 1) {
        throw ParseError("expected one plan, found " + std::to_string(plans.size()), 0);
    }
    return std::move(plans.front());
}

}  // namespace mage
