// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mage/tensor.hpp"

namespace mage {

/// Keys and values for `positions` consecutive tokens of one layer, laid out
/// as (position, kv_head, dim).
struct KVSlab {
    std::size_t positions = 0;
    std::size_t kv_heads = 0;
    std::size_t head_dim = 0;
    std::vector<float> keys;
    std::vector<float> values;

    KVSlab() = default;
    KVSlab(std::size_t p, std::size_t h, std::size_t d)
        : positions(p), kv_heads(h), head_dim(d), keys(p * h * d, 0.0f), values(p * h * d, 0.0f) {}

    std::span<float> key(std::size_t pos, std::size_t head) {
        return {keys.data() + (pos * kv_heads + head) * head_dim, head_dim};
    }
    std::span<const float> key(std::size_t pos, std::size_t head) const {
        return {keys.data() + (pos * kv_heads + head) * head_dim, head_dim};
    }
    std::span<float> value(std::size_t pos, std::size_t head) {
        return {values.data() + (pos * kv_heads + head) * head_dim, head_dim};
    }
    std::span<const float> value(std::size_t pos, std::size_t head) const {
        return {values.data() + (pos * kv_heads + head) * head_dim, head_dim};
    }
};

struct GatherResult {
    Matrix keys;    // m x d
    Matrix values;  // m x d
};

/// Append-only per-layer key/value store. All layers always hold the same
/// number of positions.
class KVCache {
public:
    KVCache(std::size_t num_layers, std::size_t kv_heads, std::size_t head_dim);

    std::size_t length() const noexcept { return m_length; }
    std::size_t num_layers() const noexcept { return m_layers.size(); }
    std::size_t kv_heads() const noexcept { return m_kv_heads; }
    std::size_t head_dim() const noexcept { return m_head_dim; }

    /// Appends one slab per layer. Every slab must cover the same number of
    /// positions and match the cache's head geometry.
    void append(std::span<const KVSlab> slabs);

    std::span<const float> key(std::size_t layer, std::size_t pos, std::size_t kv_head) const;
    std::span<const float> value(std::size_t layer, std::size_t pos, std::size_t kv_head) const;

    /// Copies the rows at `indices` (strictly increasing, all < length()).
    GatherResult gather(std::size_t layer, std::size_t kv_head, std::span<const std::size_t> indices) const;

private:
    std::vector<KVSlab> m_layers;
    std::size_t m_kv_heads;
    std::size_t m_head_dim;
    std::size_t m_length = 0;
};

/// Per-page elementwise key bounds used for page-level importance estimates.
class PageMeta {
public:
    PageMeta() = default;
    PageMeta(std::size_t page_size, std::size_t num_layers, std::size_t kv_heads, std::size_t head_dim);

    std::size_t page_size() const noexcept { return m_page_size; }
    std::size_t num_pages() const noexcept { return m_num_pages; }
    std::size_t covered_length() const noexcept { return m_length; }
    std::size_t head_dim() const noexcept { return m_head_dim; }
    std::size_t num_layers() const noexcept { return m_num_layers; }
    std::size_t kv_heads() const noexcept { return m_kv_heads; }

    /// First and one-past-last token position of `page`.
    std::size_t page_begin(std::size_t page) const { return page * m_page_size; }
    std::size_t page_end(std::size_t page) const;

    std::span<const float> min_key(std::size_t layer, std::size_t kv_head, std::size_t page) const;
    std::span<const float> max_key(std::size_t layer, std::size_t kv_head, std::size_t page) const;

private:
    friend class PageMetaCache;
    friend PageMeta build_page_meta(const KVCache& cache, std::size_t page_size);

    void resize(std::size_t length);
    void recompute_page(const KVCache& cache, std::size_t page);
    std::size_t offset(std::size_t layer, std::size_t kv_head, std::size_t page) const;

    std::size_t m_page_size = 0;
    std::size_t m_num_layers = 0;
    std::size_t m_kv_heads = 0;
    std::size_t m_head_dim = 0;
    std::size_t m_num_pages = 0;
    std::size_t m_length = 0;
    // (page, layer, kv_head, dim)
    std::vector<float> m_min;
    std::vector<float> m_max;
};

/// Computes page metadata for every page of `cache` from scratch.
PageMeta build_page_meta(const KVCache& cache, std::size_t page_size);

/// Keeps a PageMeta in sync with a growing cache, recomputing only the pages
/// touched by appends since the previous refresh.
class PageMetaCache {
public:
    explicit PageMetaCache(std::size_t page_size);

    const PageMeta& refresh(const KVCache& cache);
    std::size_t pages_recomputed() const noexcept { return m_recomputed; }

private:
    std::size_t m_page_size;
    PageMeta m_meta;
    bool m_initialized = false;
    std::size_t m_recomputed = 0;
};

}  // namespace mage
