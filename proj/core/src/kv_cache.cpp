// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/kv_cache.hpp"

#include <algorithm>
#include <limits>

#include "mage/error.hpp"

namespace mage {

KVCache::KVCache(std::size_t num_layers, std::size_t kv_heads, std::size_t head_dim)
    : m_kv_heads(kv_heads), m_head_dim(head_dim) {
    if (num_layers == 0 || kv_heads == 0 || head_dim == 0) {
        throw ConfigError("KV cache needs positive layer, head and dim counts");
    }
    m_layers.assign(num_layers, KVSlab(0, kv_heads, head_dim));
}

void KVCache::append(std::span<const KVSlab> slabs) {
    if (slabs.size() != m_layers.size()) {
        throw ShapeError("append: expected " + std::to_string(m_layers.size()) + " layer slabs, got " +
                         std::to_string(slabs.size()));
    }
    const std::size_t width = slabs.front().positions;
    for (const auto& slab : slabs) {
        if (slab.positions != width || slab.kv_heads != m_kv_heads || slab.head_dim != m_head_dim ||
            slab.keys.size() != width * m_kv_heads * m_head_dim || slab.values.size() != slab.keys.size()) {
            throw ShapeError("append: slab geometry does not match the cache");
        }
    }
    for (std::size_t l = 0; l < m_layers.size(); ++l) {
        auto& dst = m_layers[l];
        dst.keys.insert(dst.keys.end(), slabs[l].keys.begin(), slabs[l].keys.end());
        dst.values.insert(dst.values.end(), slabs[l].values.begin(), slabs[l].values.end());
        dst.positions += width;
    }
    m_length += width;
}

std::span<const float> KVCache::key(std::size_t layer, std::size_t pos, std::size_t kv_head) const {
    return m_layers.at(layer).key(pos, kv_head);
}

std::span<const float> KVCache::value(std::size_t layer, std::size_t pos, std::size_t kv_head) const {
    return m_layers.at(layer).value(pos, kv_head);
}

GatherResult KVCache::gather(std::size_t layer, std::size_t kv_head, std::span<const std::size_t> indices) const {
    if (layer >= m_layers.size() || kv_head >= m_kv_heads) {
        throw PlanError("gather: layer or kv head out of range");
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m_length) {
            throw PlanError("gather: index " + std::to_string(indices[i]) + " >= cache length " +
                            std::to_string(m_length));
        }
        if (i > 0 && indices[i] <= indices[i - 1]) {
            throw PlanError("gather: indices must be strictly increasing");
        }
    }
    GatherResult out{Matrix(indices.size(), m_head_dim), Matrix(indices.size(), m_head_dim)};
    const auto& slab = m_layers[layer];
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::ranges::copy(slab.key(indices[r], kv_head), out.keys.row(r).begin());
        std::ranges::copy(slab.value(indices[r], kv_head), out.values.row(r).begin());
    }
    return out;
}

PageMeta::PageMeta(std::size_t page_size, std::size_t num_layers, std::size_t kv_heads, std::size_t head_dim)
    : m_page_size(page_size), m_num_layers(num_layers), m_kv_heads(kv_heads), m_head_dim(head_dim) {
    if (page_size == 0) {
        throw ConfigError("page size must be at least 1");
    }
}

std::size_t PageMeta::page_end(std::size_t page) const {
    return std::min(m_length, (page + 1) * m_page_size);
}

std::size_t PageMeta::offset(std::size_t layer, std::size_t kv_head, std::size_t page) const {
    return ((page * m_num_layers + layer) * m_kv_heads + kv_head) * m_head_dim;
}

std::span<const float> PageMeta::min_key(std::size_t layer, std::size_t kv_head, std::size_t page) const {
    if (page >= m_num_pages || layer >= m_num_layers || kv_head >= m_kv_heads) {
        throw PlanError("page metadata lookup out of range (page " + std::to_string(page) + ")");
    }
    return {m_min.data() + offset(layer, kv_head, page), m_head_dim};
}

std::span<const float> PageMeta::max_key(std::size_t layer, std::size_t kv_head, std::size_t page) const {
    if (page >= m_num_pages || layer >= m_num_layers || kv_head >= m_kv_heads) {
        throw PlanError("page metadata lookup out of range (page " + std::to_string(page) + ")");
    }
    return {m_max.data() + offset(layer, kv_head, page), m_head_dim};
}

void PageMeta::resize(std::size_t length) {
    m_length = length;
    m_num_pages = (length + m_page_size - 1) / m_page_size;
    const std::size_t size = m_num_pages * m_num_layers * m_kv_heads * m_head_dim;
    m_min.resize(size);
    m_max.resize(size);
}

void PageMeta::recompute_page(const KVCache& cache, std::size_t page) {
    for (std::size_t l = 0; l < m_num_layers; ++l) {
        for (std::size_t h = 0; h < m_kv_heads; ++h) {
            float* lo = m_min.data() + offset(l, h, page);
            float* hi = m_max.data() + offset(l, h, page);
            std::fill(lo, lo + m_head_dim, std::numeric_limits<float>::infinity());
            std::fill(hi, hi + m_head_dim, -std::numeric_limits<float>::infinity());
            for (std::size_t pos = page_begin(page); pos < page_end(page); ++pos) {
                const auto k = cache.key(l, pos, h);
                for (std::size_t j = 0; j < m_head_dim; ++j) {
                    lo[j] = std::min(lo[j], k[j]);
                    hi[j] = std::max(hi[j], k[j]);
                }
            }
        }
    }
}

PageMeta build_page_meta(const KVCache& cache, std::size_t page_size) {
    PageMeta meta(page_size, cache.num_layers(), cache.kv_heads(), cache.head_dim());
    meta.resize(cache.length());
    for (std::size_t p = 0; p < meta.num_pages(); ++p) {
        meta.recompute_page(cache, p);
    }
    return meta;
}

PageMetaCache::PageMetaCache(std::size_t page_size) : m_page_size(page_size) {
    if (page_size == 0) {
        throw ConfigError("page size must be at least 1");
    }
}

const PageMeta& PageMetaCache::refresh(const KVCache& cache) {
    if (!m_initialized) {
        m_meta = PageMeta(m_page_size, cache.num_layers(), cache.kv_heads(), cache.head_dim());
        m_initialized = true;
    }
    const std::size_t old_length = m_meta.covered_length();
    if (cache.length() < old_length) {
        throw StateError("page metadata is ahead of the cache");
    }
    if (cache.length() == old_length) {
        return m_meta;
    }
    // The last (possibly partial) page and every new page are stale.
    const std::size_t first_dirty = old_length / m_page_size;
    m_meta.resize(cache.length());
    for (std::size_t p = first_dirty; p < m_meta.num_pages(); ++p) {
        m_meta.recompute_page(cache, p);
        ++m_recomputed;
    }
    return m_meta;
}

}  // namespace mage
