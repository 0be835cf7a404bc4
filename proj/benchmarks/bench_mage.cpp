// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

// Microbenchmarks for plan construction, the block forward pass and KV gather.

#include <benchmark/benchmark.h>

#include <random>

#include "mage/decoder.hpp"
#include "mage/model.hpp"
#include "mage/selection.hpp"

namespace {

using namespace mage;

std::vector<AttentionTensor> random_attention(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<float> weight(1.0f);
    std::vector<AttentionTensor> out;
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        AttentionTensor t(c.num_query_heads, c.block_size, n);
        for (std::size_t h = 0; h < t.heads; ++h) {
            for (std::size_t q = 0; q < t.queries; ++q) {
                auto row = t.row(h, q);
                float sum = 0.0f;
                for (auto& v : row) {
                    v = weight(rng);
                    sum += v;
                }
                for (auto& v : row) {
                    v /= sum;
                }
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

void BM_BuildPlan(benchmark::State& state) {
    const ModelConfig c;
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto attention = random_attention(c, n, 1);
    const MageParams params{static_cast<std::size_t>(state.range(1)), 8, std::nullopt};
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_plan(attention, c, params));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_BuildPlan)->Args({256, 32})->Args({1024, 64})->Args({4096, 128});

void BM_ForwardBlock(benchmark::State& state) {
    const Model model = build_model(ModelConfig{});
    const auto n = static_cast<std::size_t>(state.range(0));
    KVCache cache = model.make_cache();
    prefill(model, cache, synthesize_prompt(model.config(), n, 1));
    const BlockState block = BlockState::all_masked(model.config().block_size, n, model.config().mask_token());
    const bool sparse = state.range(1) != 0;
    SelectionPlan plan;
    if (sparse) {
        const ForwardResult fwd = forward_block(model, cache, block);
        std::vector<AttentionTensor> attention;
        for (const auto& a : fwd.attention) {
            attention.push_back(restrict_keys(a, n));
        }
        plan = build_plan(attention, model.config(), {32, 8, std::nullopt}).plan;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(forward_block(model, cache, block, sparse ? &plan : nullptr));
    }
}
BENCHMARK(BM_ForwardBlock)->Args({256, 0})->Args({256, 1})->Args({2048, 0})->Args({2048, 1});

void BM_Gather(benchmark::State& state) {
    const std::size_t n = 8192;
    const std::size_t d = 128;
    KVCache cache(1, 1, d);
    KVSlab slab(n, 1, d);
    cache.append(std::span<const KVSlab>(&slab, 1));
    const auto k = static_cast<std::size_t>(state.range(0));
    IndexList indices;
    for (std::size_t i = 0; i < k; ++i) {
        indices.push_back(i * (n / k));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(cache.gather(0, 0, indices));
    }
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(2 * k * d * sizeof(float)));
}
BENCHMARK(BM_Gather)->Arg(64)->Arg(512)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
