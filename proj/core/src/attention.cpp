// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/tensor.hpp"

#include "mage/error.hpp"

namespace mage {

GroupRows group_rows(const AttentionTensor& attn, std::size_t kv_head, std::size_t group_size) {
    if (group_size == 0 || (kv_head + 1) * group_size > attn.heads) {
        throw ShapeError("kv head " + std::to_string(kv_head) + " out of range for " + std::to_string(attn.heads) +
                         " query heads with group size " + std::to_string(group_size));
    }
    GroupRows out;
    out.keys = attn.keys;
    out.rows.reserve(group_size * attn.queries);
    for (std::size_t g = 0; g < group_size; ++g) {
        const std::size_t head = kv_head * group_size + g;
        for (std::size_t q = 0; q < attn.queries; ++q) {
            out.rows.push_back(attn.row(head, q));
        }
    }
    return out;
}

std::vector<double> summed_mass(const GroupRows& rows) {
    std::vector<double> mass(rows.keys, 0.0);
    for (const auto& row : rows.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            mass[i] += row[i];
        }
    }
    return mass;
}

AttentionTensor restrict_keys(const AttentionTensor& attn, std::size_t n) {
    if (n > attn.keys) {
        throw ShapeError("cannot restrict " + std::to_string(attn.keys) + " keys to " + std::to_string(n));
    }
    AttentionTensor out(attn.heads, attn.queries, n);
    for (std::size_t h = 0; h < attn.heads; ++h) {
        for (std::size_t q = 0; q < attn.queries; ++q) {
            const auto src = attn.row(h, q);
            auto dst = out.row(h, q);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                total += src[i];
            }
            if (total <= 0.0) {
                continue;
            }
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] = static_cast<float>(src[i] / total);
            }
        }
    }
    return out;
}

}  // namespace mage
