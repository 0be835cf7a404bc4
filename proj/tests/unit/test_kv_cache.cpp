// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mage/error.hpp"
#include "mage/kv_cache.hpp"
#include "support/generators.hpp"

namespace mage {
namespace {

std::vector<KVSlab> random_slabs(testing::Rng& rng, std::size_t layers, std::size_t positions, std::size_t heads,
                                 std::size_t dim) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<KVSlab> slabs;
    for (std::size_t l = 0; l < layers; ++l) {
        KVSlab s(positions, heads, dim);
        for (auto& v : s.keys) {
            v = normal(rng);
        }
        for (auto& v : s.values) {
            v = normal(rng);
        }
        slabs.push_back(std::move(s));
    }
    return slabs;
}

TEST(KVCache, AppendGrowsLength) {
    testing::Rng rng(1);
    KVCache cache(2, 1, 4);
    cache.append(random_slabs(rng, 2, 4, 1, 4));
    EXPECT_EQ(cache.length(), 4u);
    const auto before = cache.gather(1, 0, std::vector<std::size_t>{0, 1, 2, 3});
    cache.append(random_slabs(rng, 2, 4, 1, 4));
    EXPECT_EQ(cache.length(), 8u);
    const auto after = cache.gather(1, 0, std::vector<std::size_t>{0, 1, 2, 3});
    EXPECT_EQ(before.keys.data, after.keys.data);
    EXPECT_EQ(before.values.data, after.values.data);
}

TEST(KVCache, AppendRejectsMissingLayer) {
    testing::Rng rng(2);
    KVCache cache(3, 1, 4);
    EXPECT_THROW(cache.append(random_slabs(rng, 2, 4, 1, 4)), ShapeError);
    EXPECT_THROW(cache.append(random_slabs(rng, 3, 4, 2, 4)), ShapeError);
    EXPECT_EQ(cache.length(), 0u);
}

TEST(KVCache, GatherIdentityAndEmpty) {
    testing::Rng rng(3);
    KVCache cache(1, 2, 3);
    const auto slabs = random_slabs(rng, 1, 5, 2, 3);
    cache.append(slabs);
    const auto full = cache.gather(0, 1, std::vector<std::size_t>{0, 1, 2, 3, 4});
    for (std::size_t p = 0; p < 5; ++p) {
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_EQ(full.keys(p, j), slabs[0].key(p, 1)[j]);
            EXPECT_EQ(full.values(p, j), slabs[0].value(p, 1)[j]);
        }
    }
    const auto none = cache.gather(0, 0, std::vector<std::size_t>{});
    EXPECT_EQ(none.keys.rows, 0u);
    EXPECT_EQ(none.keys.cols, 3u);
}

TEST(KVCache, GatherSubsetConsistency) {
    testing::Rng rng(4);
    KVCache cache(1, 1, 4);
    cache.append(random_slabs(rng, 1, 10, 1, 4));
    const std::vector<std::size_t> g{1, 3, 4, 7, 9};
    const std::vector<std::size_t> s{3, 9};
    const auto big = cache.gather(0, 0, g);
    const auto small = cache.gather(0, 0, s);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(small.keys(0, j), big.keys(1, j));
        EXPECT_EQ(small.keys(1, j), big.keys(4, j));
    }
}

TEST(KVCache, GatherRejectsBadIndices) {
    testing::Rng rng(5);
    KVCache cache(1, 1, 2);
    cache.append(random_slabs(rng, 1, 4, 1, 2));
    EXPECT_THROW(cache.gather(0, 0, std::vector<std::size_t>{4}), PlanError);
    EXPECT_THROW(cache.gather(0, 0, std::vector<std::size_t>{2, 1}), PlanError);
    EXPECT_THROW(cache.gather(0, 0, std::vector<std::size_t>{1, 1}), PlanError);
}

TEST(PageMeta, TwoRowMinMax) {
    KVCache cache(1, 1, 2);
    KVSlab slab(2, 1, 2);
    slab.keys = {1.0f, 2.0f, 3.0f, -1.0f};
    cache.append(std::span<const KVSlab>(&slab, 1));
    const PageMeta meta = build_page_meta(cache, 2);
    ASSERT_EQ(meta.num_pages(), 1u);
    EXPECT_EQ(std::vector<float>(meta.min_key(0, 0, 0).begin(), meta.min_key(0, 0, 0).end()),
              (std::vector<float>{1.0f, -1.0f}));
    EXPECT_EQ(std::vector<float>(meta.max_key(0, 0, 0).begin(), meta.max_key(0, 0, 0).end()),
              (std::vector<float>{3.0f, 2.0f}));
}

TEST(PageMeta, PageSizeOneIsTheKeyItself) {
    testing::Rng rng(6);
    KVCache cache(2, 2, 3);
    cache.append(random_slabs(rng, 2, 5, 2, 3));
    const PageMeta meta = build_page_meta(cache, 1);
    ASSERT_EQ(meta.num_pages(), 5u);
    for (std::size_t p = 0; p < 5; ++p) {
        const auto key = cache.key(1, p, 1);
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_EQ(meta.min_key(1, 1, p)[j], key[j]);
            EXPECT_EQ(meta.max_key(1, 1, p)[j], key[j]);
        }
    }
}

TEST(PageMeta, PartialLastPage) {
    testing::Rng rng(7);
    KVCache cache(1, 1, 2);
    cache.append(random_slabs(rng, 1, 5, 1, 2));
    const PageMeta meta = build_page_meta(cache, 2);
    EXPECT_EQ(meta.num_pages(), 3u);
    EXPECT_EQ(meta.page_begin(2), 4u);
    EXPECT_EQ(meta.page_end(2), 5u);
    EXPECT_THROW(build_page_meta(cache, 0), ConfigError);
}

TEST(PageMetaProperty, BoundsDominateKeys) {
    testing::Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t layers = testing::uniform_size(rng, 1, 3);
        const std::size_t heads = testing::uniform_size(rng, 1, 3);
        const std::size_t dim = testing::uniform_size(rng, 1, 6);
        const std::size_t page = testing::uniform_size(rng, 1, 7);
        KVCache cache(layers, heads, dim);
        cache.append(random_slabs(rng, layers, testing::uniform_size(rng, 1, 40), heads, dim));
        const PageMeta meta = build_page_meta(cache, page);
        ASSERT_EQ(meta.num_pages(), (cache.length() + page - 1) / page);
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t pos = 0; pos < cache.length(); ++pos) {
                    const auto key = cache.key(l, pos, h);
                    for (std::size_t j = 0; j < dim; ++j) {
                        ASSERT_LE(meta.min_key(l, h, pos / page)[j], key[j]);
                        ASSERT_GE(meta.max_key(l, h, pos / page)[j], key[j]);
                    }
                }
            }
        }
    }
}

TEST(PageMetaCache, IncrementalMatchesRebuild) {
    testing::Rng rng(9);
    KVCache cache(2, 2, 4);
    PageMetaCache incremental(3);
    for (int round = 0; round < 6; ++round) {
        cache.append(random_slabs(rng, 2, 4, 2, 4));
        const PageMeta& inc = incremental.refresh(cache);
        const PageMeta full = build_page_meta(cache, 3);
        ASSERT_EQ(inc.num_pages(), full.num_pages());
        for (std::size_t p = 0; p < full.num_pages(); ++p) {
            for (std::size_t l = 0; l < 2; ++l) {
                for (std::size_t h = 0; h < 2; ++h) {
                    for (std::size_t j = 0; j < 4; ++j) {
                        ASSERT_EQ(inc.min_key(l, h, p)[j], full.min_key(l, h, p)[j]);
                        ASSERT_EQ(inc.max_key(l, h, p)[j], full.max_key(l, h, p)[j]);
                    }
                }
            }
        }
    }
    // 24 positions in pages of 3: each append touches at most two pages.
    EXPECT_LT(incremental.pages_recomputed(), 6u * 3u);
}

}  // namespace
}  // namespace mage
