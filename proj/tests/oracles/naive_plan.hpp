// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

// Straight-line reference for union voting, coverage, adjusted scores,
// proportional budgets and index selection. Deliberately shares no code with
// the library: plain vectors in, plain vectors out.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <tuple>
#include <vector>

namespace mage::oracle {

struct NaivePlan {
    std::vector<std::size_t> budgets;                          // per layer
    std::vector<std::vector<std::vector<std::size_t>>> sets;   // [layer][kv_head]
    std::vector<std::vector<std::size_t>> union_sizes;         // [layer][kv_head], planned layers only
};

// attention[l] holds H_q * B * n floats laid out (head, query, key).
inline NaivePlan naive_build_plan(const std::vector<std::vector<float>>& attention, std::size_t num_layers,
                                  std::size_t q_heads, std::size_t kv_heads, std::size_t block, std::size_t n,
                                  std::size_t prefix, std::size_t k, std::size_t k_min) {
    NaivePlan out;
    out.budgets.assign(num_layers, n);
    out.sets.assign(num_layers, std::vector<std::vector<std::size_t>>(kv_heads));
    std::vector<std::size_t> everything;
    for (std::size_t i = 0; i < n; ++i) {
        everything.push_back(i);
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        for (std::size_t h = 0; h < kv_heads; ++h) {
            out.sets[l][h] = everything;
        }
    }
    if (n == 0) {
        return out;
    }
    const std::size_t group = q_heads / kv_heads;

    std::vector<std::vector<std::vector<std::size_t>>> votes(num_layers);   // [l][h][i]
    std::vector<std::vector<std::vector<double>>> masses(num_layers);       // [l][h][i]
    std::vector<double> layer_score(num_layers, 0.0);
    for (std::size_t l = prefix; l < num_layers; ++l) {
        votes[l].assign(kv_heads, std::vector<std::size_t>(n, 0));
        masses[l].assign(kv_heads, std::vector<double>(n, 0.0));
        out.union_sizes.emplace_back();
        for (std::size_t h = 0; h < kv_heads; ++h) {
            for (std::size_t g = 0; g < group; ++g) {
                for (std::size_t q = 0; q < block; ++q) {
                    const float* row = attention[l].data() + ((h * group + g) * block + q) * n;
                    std::vector<bool> picked(n, false);
                    for (std::size_t round = 0; round < std::min(k, n); ++round) {
                        std::size_t best = n;
                        for (std::size_t i = 0; i < n; ++i) {
                            if (!picked[i] && (best == n || row[i] > row[best])) {
                                best = i;
                            }
                        }
                        picked[best] = true;
                        votes[l][h][best] += 1;
                    }
                    for (std::size_t i = 0; i < n; ++i) {
                        masses[l][h][i] += row[i];
                    }
                }
            }
            std::size_t union_size = 0;
            for (std::size_t i = 0; i < n; ++i) {
                union_size += votes[l][h][i] > 0 ? 1 : 0;
            }
            double total = 0.0;
            for (std::size_t g = 0; g < group; ++g) {
                for (std::size_t q = 0; q < block; ++q) {
                    const float* row = attention[l].data() + ((h * group + g) * block + q) * n;
                    double captured = 0.0;
                    for (std::size_t i = 0; i < n; ++i) {
                        if (votes[l][h][i] > 0) {
                            captured += row[i];
                        }
                    }
                    total += captured;
                }
            }
            double p = total / static_cast<double>(group * block);
            if (p > 1.0) {
                p = 1.0;
            }
            const double score = static_cast<double>(union_size) * (1.0 - std::log(p));
            if (score > layer_score[l]) {
                layer_score[l] = score;
            }
            out.union_sizes.back().push_back(union_size);
        }
    }
    if (n <= k) {
        for (std::size_t l = prefix; l < num_layers; ++l) {
            out.budgets[l] = k;
        }
        return out;
    }

    double score_sum = 0.0;
    for (std::size_t l = prefix; l < num_layers; ++l) {
        score_sum += layer_score[l];
    }
    const double pool = static_cast<double>(k) * static_cast<double>(num_layers - prefix);
    for (std::size_t l = prefix; l < num_layers; ++l) {
        std::size_t budget = static_cast<std::size_t>(std::floor(layer_score[l] * pool / score_sum));
        if (budget < k_min) {
            budget = k_min;
        }
        out.budgets[l] = budget;
        for (std::size_t h = 0; h < kv_heads; ++h) {
            std::vector<std::tuple<std::size_t, double, std::size_t>> members;  // votes, mass, index
            for (std::size_t i = 0; i < n; ++i) {
                if (votes[l][h][i] > 0) {
                    members.emplace_back(votes[l][h][i], masses[l][h][i], i);
                }
            }
            std::vector<std::size_t> chosen;
            if (budget <= members.size()) {
                std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
                    if (std::get<0>(a) != std::get<0>(b)) {
                        return std::get<0>(a) > std::get<0>(b);
                    }
                    if (std::get<1>(a) != std::get<1>(b)) {
                        return std::get<1>(a) > std::get<1>(b);
                    }
                    return std::get<2>(a) < std::get<2>(b);
                });
                for (std::size_t r = 0; r < budget; ++r) {
                    chosen.push_back(std::get<2>(members[r]));
                }
            } else {
                for (const auto& m : members) {
                    chosen.push_back(std::get<2>(m));
                }
                const std::size_t want = std::min(budget, n);
                for (std::size_t i = n; i > 0 && chosen.size() < want; --i) {
                    if (votes[l][h][i - 1] == 0) {
                        chosen.push_back(i - 1);
                    }
                }
            }
            std::sort(chosen.begin(), chosen.end());
            out.sets[l][h] = chosen;
        }
    }
    return out;
}

}  // namespace mage::oracle
