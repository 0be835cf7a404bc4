// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mage {

/// Sorted list of KV-cache positions.
using IndexList = std::vector<std::size_t>;

/// Dense row-major matrix of floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// Attention probabilities for one layer laid out as (head, query, key),
/// row-major. Every (head, query) row is a probability distribution over
/// `keys` entries.
struct AttentionTensor {
    std::size_t heads = 0;
    std::size_t queries = 0;
    std::size_t keys = 0;
    std::vector<float> data;

    AttentionTensor() = default;
    AttentionTensor(std::size_t h, std::size_t q, std::size_t k)
        : heads(h), queries(q), keys(k), data(h * q * k, 0.0f) {}

    std::span<float> row(std::size_t head, std::size_t query) {
        return {data.data() + (head * queries + query) * keys, keys};
    }
    std::span<const float> row(std::size_t head, std::size_t query) const {
        return {data.data() + (head * queries + query) * keys, keys};
    }

    bool operator==(const AttentionTensor&) const = default;
};

/// Rows belonging to one KV head: the G query heads of its group times every
/// query. Produced by `group_rows`.
struct GroupRows {
    std::vector<std::span<const float>> rows;
    std::size_t keys = 0;
};

/// Collects the G*Q rows of `attn` that share KV head `kv_head` when
/// `group_size` query heads map onto each KV head.
GroupRows group_rows(const AttentionTensor& attn, std::size_t kv_head, std::size_t group_size);

/// Summed attention mass per key over a set of rows (accumulated in double).
std::vector<double> summed_mass(const GroupRows& rows);

/// Returns `attn` restricted to its first `n` keys with every row renormalized
/// to sum to one. Rows with zero mass on that prefix stay all-zero.
AttentionTensor restrict_keys(const AttentionTensor& attn, std::size_t n);

}  // namespace mage
