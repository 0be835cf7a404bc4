// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/decoder.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <random>

#include "mage/error.hpp"
#include "mage/kv_config.hpp"
#include "mage/metrics.hpp"

namespace mage {

namespace {

constexpr double kSkewThreshold = 0.9;

std::vector<AttentionTensor> cache_attention(const ForwardResult& fwd) {
    std::vector<AttentionTensor> out;
    out.reserve(fwd.attention.size());
    for (const auto& layer : fwd.attention) {
        out.push_back(restrict_keys(layer, fwd.context_length));
    }
    return out;
}

// Builds a page-level plan layer by layer from the step's own queries.
class QuestSelector final : public LayerSelector {
public:
    QuestSelector(const ModelConfig& config, const PageMeta& meta, std::size_t k)
        : m_config(config), m_meta(meta), m_k(k),
          m_plan(full_plan(config.num_layers, config.num_kv_heads, meta.covered_length(), config.exact_layer_prefix,
                           Method::quest)) {}

    std::optional<std::span<const IndexList>> select(std::size_t layer, const Matrix& queries) override {
        auto& entry = m_plan.layers[layer];
        entry.budget = m_k;
        entry.heads = quest_select_layer(queries, m_meta, layer, m_config.num_query_heads, m_k);
        return std::span<const IndexList>(entry.heads);
    }

    SelectionPlan take_plan() { return std::move(m_plan); }

private:
    const ModelConfig& m_config;
    const PageMeta& m_meta;
    std::size_t m_k;
    SelectionPlan m_plan;
};

// Runs layers up to and including the anchor exactly, then reuses the
// anchor's per-head top-k for every later layer of the same step.
class TidalSelector final : public LayerSelector {
public:
    TidalSelector(const ModelConfig& config, std::size_t anchor, std::size_t n, std::size_t k)
        : m_config(config), m_anchor(anchor), m_n(n), m_k(k) {}

    std::optional<std::span<const IndexList>> select(std::size_t layer, const Matrix&) override {
        if (layer <= m_anchor) {
            return std::nullopt;
        }
        if (!m_plan) {
            throw StateError("tidal: anchor layer did not run before a reusing layer");
        }
        return std::span<const IndexList>(m_plan->layers[layer].heads);
    }

    void observe(std::size_t layer, const AttentionTensor& attention) override {
        if (layer == m_anchor) {
            m_plan = tidal_plan(restrict_keys(attention, m_n), m_config, m_k);
        }
    }

    SelectionPlan take_plan() {
        if (!m_plan) {
            throw StateError("tidal: anchor layer never ran");
        }
        return std::move(*m_plan);
    }

private:
    const ModelConfig& m_config;
    std::size_t m_anchor;
    std::size_t m_n;
    std::size_t m_k;
    std::optional<SelectionPlan> m_plan;
};

std::uint64_t block_seed(std::uint64_t seed, std::size_t block_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(block_index)};
    std::uint64_t out = 0;
    std::vector<std::uint32_t> words(2);
    seq.generate(words.begin(), words.end());
    out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out;
}

BlockResult denoise_block_impl(const Model& model, KVCache& cache, const DecodeConfig& config,
                               std::size_t block_index, PageMetaCache* page_meta) {
    const auto& cfg = model.config();
    config.validate(cfg);
    const std::size_t n = cache.length();
    const std::size_t b = cfg.block_size;
    const std::size_t steps = config.steps(b);

    BlockResult result;
    result.block = BlockState::all_masked(b, n, cfg.mask_token());
    auto& trace = result.trace;
    trace.block_index = block_index;
    trace.context_length = n;
    trace.block_size = b;
    trace.oracle_k = config.budget;
    trace.first_planned_layer = cfg.exact_layer_prefix;
    trace.method = config.method;

    const MageParams mage_params{config.budget, config.k_min, config.budget_layer_count};
    std::shared_ptr<const SelectionPlan> block_plan;  // plans fixed for the whole block
    std::optional<PageMeta> local_meta;
    const PageMeta* meta = nullptr;
    if (n > 0) {
        switch (config.method) {
        case Method::window:
            block_plan = std::make_shared<const SelectionPlan>(
                window_plan(n, config.baseline.num_sinks, config.baseline.window_size, cfg));
            break;
        case Method::random:
            block_plan = std::make_shared<const SelectionPlan>(
                random_plan(n, config.budget, block_seed(config.baseline.seed ^ config.seed, block_index), cfg));
            break;
        case Method::full:
            block_plan = std::make_shared<const SelectionPlan>(
                full_plan(cfg.num_layers, cfg.num_kv_heads, n, cfg.exact_layer_prefix));
            break;
        case Method::quest:
            if (page_meta != nullptr) {
                meta = &page_meta->refresh(cache);
            } else {
                local_meta = build_page_meta(cache, config.baseline.page_size);
                meta = &*local_meta;
            }
            break;
        default:
            break;
        }
    }

    for (std::size_t t = 1; t <= steps; ++t) {
        StepRecord rec;
        rec.step = t;
        const BlockState& state = result.block;
        ForwardResult fwd;
        std::optional<ForwardResult> exact;

        if (n == 0 || config.method == Method::exact) {
            fwd = forward_block(model, cache, state);
        } else {
            switch (config.method) {
            case Method::mage:
                if (t == 1) {
                    fwd = forward_block(model, cache, state);
                    auto built = build_plan(cache_attention(fwd), cfg, mage_params);
                    block_plan = std::make_shared<const SelectionPlan>(std::move(built.plan));
                    trace.union_stats = std::move(built.stats);
                } else {
                    fwd = forward_block(model, cache, state, block_plan.get());
                    rec.plan = block_plan;
                }
                break;
            case Method::quest: {
                QuestSelector selector(cfg, *meta, config.budget);
                fwd = forward_block(model, cache, state, selector);
                rec.plan = std::make_shared<const SelectionPlan>(selector.take_plan());
                break;
            }
            case Method::tidal: {
                TidalSelector selector(cfg, config.baseline.anchor_layer, n, config.budget);
                fwd = forward_block(model, cache, state, selector);
                rec.plan = std::make_shared<const SelectionPlan>(selector.take_plan());
                break;
            }
            case Method::oracle: {
                exact = forward_block(model, cache, state);
                rec.plan = std::make_shared<const SelectionPlan>(oracle_plan(cache_attention(*exact), cfg, config.budget));
                fwd = forward_block(model, cache, state, rec.plan.get());
                break;
            }
            default:
                fwd = forward_block(model, cache, state, block_plan.get());
                rec.plan = block_plan;
                break;
            }
        }

        if (fwd.sparse_layers == 0 && !exact) {
            exact = fwd;
        }
        if (n > 0 && (config.trace_oracle || config.keep_attention)) {
            if (!exact) {
                exact = forward_block(model, cache, state);
            }
            auto attn = cache_attention(*exact);
            if (config.trace_oracle) {
                rec.oracle = oracle_plan(attn, cfg, config.budget);
                for (const auto& layer : attn) {
                    rec.coverage_counts.push_back(kv_head_coverage_budgets(layer, cfg.num_kv_heads, kSkewThreshold));
                }
            }
            if (config.keep_attention) {
                rec.attention = std::move(attn);
            }
        }

        auto unmask = unmask_step(fwd.logits, state.masked, config.tokens_per_step);
        for (std::size_t i = 0; i < unmask.positions.size(); ++i) {
            result.block.tokens[unmask.positions[i]] = unmask.tokens[i];
            result.block.masked[unmask.positions[i]] = false;
        }
        rec.unmasked = std::move(unmask.positions);
        rec.tokens = std::move(unmask.tokens);
        rec.confidence = std::move(unmask.confidence);
        rec.kv_entries_read = fwd.kv_entries_read;
        rec.bytes_gathered = fwd.kv_entries_read * 2 * cfg.head_dim * sizeof(float);
        rec.sparse_layers = fwd.sparse_layers;
        rec.exact_layers = cfg.num_layers - fwd.sparse_layers;
        if (config.keep_logits) {
            rec.logits = std::move(fwd.logits);
        }
        trace.steps.push_back(std::move(rec));
    }
    if (result.block.masked_count() != 0) {
        throw StateError("block still has masked positions after the final step");
    }

    // Commit the decoded block's keys and values.
    const ForwardResult commit = forward_block(model, cache, result.block);
    cache.append(commit.new_kv);
    return result;
}

}  // namespace

std::size_t DecodeConfig::steps(std::size_t block_size) const {
    return (block_size + tokens_per_step - 1) / tokens_per_step;
}

void DecodeConfig::validate(const ModelConfig& model) const {
    if (tokens_per_step == 0 || !std::has_single_bit(tokens_per_step)) {
        throw ConfigError("tokens_per_step must be a power of two");
    }
    if (budget == 0 || k_min == 0 || budget < k_min) {
        throw ConfigError("budget requires K >= K_min >= 1");
    }
    if (budget_layer_count && *budget_layer_count == 0) {
        throw ConfigError("budget_layer_count must be positive when set");
    }
    if (num_blocks == 0) {
        throw ConfigError("num_blocks must be at least 1");
    }
    if (prompt_len % model.block_size != 0) {
        throw ConfigError("prompt_len must be a multiple of block_size");
    }
    switch (method) {
    case Method::quest:
    case Method::tidal:
    case Method::window:
        baseline.validate(model);
        break;
    default:
        break;
    }
}

DecodeConfig DecodeConfig::from_config(const KeyValueConfig& kv) {
    DecodeConfig c;
    c.method = parse_method(kv.get_string("method", std::string(to_string(c.method))));
    c.tokens_per_step = kv.get_uint("tokens_per_step", c.tokens_per_step);
    c.budget = kv.get_uint("budget", c.budget);
    c.k_min = kv.get_uint("k_min", c.k_min);
    if (kv.contains("budget_layer_count")) {
        c.budget_layer_count = kv.get_uint("budget_layer_count", 0);
    }
    c.num_blocks = kv.get_uint("num_blocks", c.num_blocks);
    c.prompt_len = kv.get_uint("prompt_len", c.prompt_len);
    c.seed = kv.get_uint("seed", c.seed);
    c.baseline.method = c.method;
    c.baseline.page_size = kv.get_uint("page_size", c.baseline.page_size);
    c.baseline.anchor_layer = kv.get_uint("anchor_layer", c.baseline.anchor_layer);
    c.baseline.num_sinks = kv.get_uint("num_sinks", c.baseline.num_sinks);
    c.baseline.window_size = kv.get_uint("window_size", c.baseline.window_size);
    c.baseline.seed = c.seed;
    c.trace_oracle = kv.get_int("trace_oracle", c.trace_oracle ? 1 : 0) != 0;
    return c;
}

UnmaskResult unmask_step(const Matrix& logits, const std::vector<bool>& masked, std::size_t tokens_per_step) {
    if (tokens_per_step == 0) {
        throw ConfigError("tokens_per_step must be at least 1");
    }
    if (logits.rows != masked.size()) {
        throw ShapeError("logit rows do not match the block length");
    }
    UnmaskResult out;
    out.confidence.assign(masked.size(), -1.0);
    std::vector<std::size_t> argmax(masked.size(), 0);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < masked.size(); ++i) {
        if (!masked[i]) {
            continue;
        }
        const auto probs = softmax(logits.row(i));
        const auto best = std::max_element(probs.begin(), probs.end());  // first maximum
        out.confidence[i] = *best;
        argmax[i] = static_cast<std::size_t>(best - probs.begin());
        candidates.push_back(i);
    }
    if (candidates.empty()) {
        throw StateError("no masked positions remain");
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&out](std::size_t a, std::size_t b) { return out.confidence[a] > out.confidence[b]; });
    candidates.resize(std::min(tokens_per_step, candidates.size()));
    std::sort(candidates.begin(), candidates.end());
    for (const auto pos : candidates) {
        out.positions.push_back(pos);
        out.tokens.push_back(argmax[pos]);
    }
    return out;
}

BlockResult denoise_block(const Model& model, KVCache& cache, const DecodeConfig& config, std::size_t block_index) {
    return denoise_block_impl(model, cache, config, block_index, nullptr);
}

std::vector<std::size_t> synthesize_prompt(const ModelConfig& config, std::size_t length, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_int_distribution<std::size_t> dist(0, config.vocab_size - 1);
    std::vector<std::size_t> tokens(length);
    for (auto& t : tokens) {
        t = dist(rng);
    }
    return tokens;
}

void prefill(const Model& model, KVCache& cache, std::span<const std::size_t> tokens) {
    const std::size_t b = model.config().block_size;
    if (tokens.size() % b != 0) {
        throw ConfigError("prefill length must be a multiple of block_size");
    }
    for (std::size_t start = 0; start < tokens.size(); start += b) {
        const auto block = BlockState::decoded(tokens.subspan(start, b), cache.length());
        const ForwardResult fwd = forward_block(model, cache, block);
        cache.append(fwd.new_kv);
    }
}

Generation generate(const Model& model, const DecodeConfig& config) {
    config.validate(model.config());
    Generation out;
    out.prompt = synthesize_prompt(model.config(), config.prompt_len, config.seed);
    KVCache cache = model.make_cache();
    prefill(model, cache, out.prompt);
    PageMetaCache page_meta(config.baseline.page_size);
    for (std::size_t blk = 0; blk < config.num_blocks; ++blk) {
        auto block = denoise_block_impl(model, cache, config, blk,
                                        config.method == Method::quest ? &page_meta : nullptr);
        out.tokens.insert(out.tokens.end(), block.block.tokens.begin(), block.block.tokens.end());
        out.traces.push_back(std::move(block.trace));
    }
    return out;
}

}  // namespace mage
