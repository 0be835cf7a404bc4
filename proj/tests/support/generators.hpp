// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded generators for property tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "mage/tensor.hpp"

namespace mage::testing {

using Rng = std::mt19937_64;

inline std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double uniform_real(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

// Softmax of Gaussian logits scaled by `sharpness`; larger is more peaked.
inline std::vector<float> random_distribution(Rng& rng, std::size_t n, double sharpness = 2.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> logits(n);
    for (auto& v : logits) {
        v = sharpness * normal(rng);
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - peak);
        sum += v;
    }
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = static_cast<float>(logits[i] / sum);
    }
    return out;
}

inline AttentionTensor random_attention(Rng& rng, std::size_t heads, std::size_t queries, std::size_t keys,
                                        double sharpness = 2.0) {
    AttentionTensor t(heads, queries, keys);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t q = 0; q < queries; ++q) {
            const auto row = random_distribution(rng, keys, sharpness);
            std::copy(row.begin(), row.end(), t.row(h, q).begin());
        }
    }
    return t;
}

// Sorted random subset of [0, n) with `size` elements.
inline IndexList random_subset(Rng& rng, std::size_t n, std::size_t size) {
    IndexList all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    IndexList out;
    std::sample(all.begin(), all.end(), std::back_inserter(out), size, rng);
    return out;
}

}  // namespace mage::testing
