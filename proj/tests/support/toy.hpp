// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

// Toy-model fixtures shared by the unit and acceptance tests.

#pragma once

#include <vector>

#include "mage/decoder.hpp"
#include "mage/model.hpp"

namespace mage::testing {

inline ModelConfig toy_config(std::uint64_t seed, double skew_temperature = 1.0) {
    ModelConfig c;
    c.seed = seed;
    c.skew_temperature = skew_temperature;
    return c;
}

// Cache prefilled with a synthetic prompt of `length` tokens.
inline KVCache prefilled_cache(const Model& model, std::size_t length, std::uint64_t seed) {
    KVCache cache = model.make_cache();
    const auto prompt = synthesize_prompt(model.config(), length, seed);
    prefill(model, cache, prompt);
    return cache;
}

// Phase-1 attention of an all-[MASK] block, restricted to the cache keys.
inline std::vector<AttentionTensor> mask_block_attention(const Model& model, const KVCache& cache) {
    const auto& c = model.config();
    const BlockState block = BlockState::all_masked(c.block_size, cache.length(), c.mask_token());
    const ForwardResult fwd = forward_block(model, cache, block);
    std::vector<AttentionTensor> out;
    for (const auto& a : fwd.attention) {
        out.push_back(restrict_keys(a, cache.length()));
    }
    return out;
}

}  // namespace mage::testing
