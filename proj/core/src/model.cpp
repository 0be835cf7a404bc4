// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "mage/error.hpp"
#include "mage/kv_config.hpp"

namespace mage {

namespace {

constexpr double kNormEps = 1e-6;
constexpr std::size_t kFfnMultiplier = 2;
constexpr float kUnembeddingScale = 2.0f;

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, float stddev) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Matrix m(rows, cols);
    for (auto& v : m.data) {
        v = dist(rng);
    }
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const float aik = a(i, k);
            const float* brow = b.data.data() + k * b.cols;
            float* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    return out;
}

Matrix rms_norm(const Matrix& x) {
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double sq = 0.0;
        for (const float v : x.row(i)) {
            sq += static_cast<double>(v) * v;
        }
        const double inv = 1.0 / std::sqrt(sq / static_cast<double>(x.cols) + kNormEps);
        for (std::size_t j = 0; j < x.cols; ++j) {
            out(i, j) = static_cast<float>(x(i, j) * inv);
        }
    }
    return out;
}

void add_in_place(Matrix& x, const Matrix& y) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        x.data[i] += y.data[i];
    }
}

Matrix embed(const Model& model, std::span<const std::size_t> tokens, std::span<const std::size_t> positions) {
    const auto& cfg = model.config();
    const std::size_t dim = cfg.model_dim();
    Matrix x(tokens.size(), dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] > cfg.mask_token()) {
            throw ModelError("token id " + std::to_string(tokens[i]) + " outside the vocabulary");
        }
        const auto row = model.embedding().row(tokens[i]);
        const double pos = static_cast<double>(positions[i]);
        for (std::size_t j = 0; j < dim; ++j) {
            const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(dim));
            const double pe = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
            x(i, j) = row[j] + static_cast<float>(pe);
        }
    }
    return x;
}

void feed_forward(const LayerWeights& w, Matrix& x) {
    Matrix hidden = matmul(rms_norm(x), w.ffn_in);
    for (auto& v : hidden.data) {
        v = std::max(v, 0.0f);
    }
    add_in_place(x, matmul(hidden, w.ffn_out));
}

Matrix unembed(const Model& model, const Matrix& x) { return matmul(rms_norm(x), model.unembedding()); }

// Softmax-weighted sum over an explicit list of key/value rows. Probabilities
// are written to `probs` (same order as `keys`).
void attend(std::span<const float> q, const std::vector<std::span<const float>>& keys,
            const std::vector<std::span<const float>>& values, double scale, std::vector<double>& probs,
            std::span<float> out) {
    probs.resize(keys.size());
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < keys.size(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            dot += static_cast<double>(q[j]) * keys[i][j];
        }
        probs[i] = dot * scale;
        max_logit = std::max(max_logit, probs[i]);
    }
    double total = 0.0;
    for (auto& p : probs) {
        p = std::exp(p - max_logit);
        total += p;
    }
    std::vector<double> acc(out.size(), 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] /= total;
        for (std::size_t j = 0; j < acc.size(); ++j) {
            acc[j] += probs[i] * values[i][j];
        }
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = static_cast<float>(acc[j]);
    }
}

double attention_scale(const ModelConfig& cfg) {
    return 1.0 / (std::sqrt(static_cast<double>(cfg.head_dim)) * cfg.skew_temperature);
}

std::span<const float> head_slice(const Matrix& m, std::size_t row, std::size_t head, std::size_t dim) {
    return m.row(row).subspan(head * dim, dim);
}

// Plan-backed selector: fixed index lists per layer.
class PlanSelector final : public LayerSelector {
public:
    PlanSelector(const SelectionPlan* plan) : m_plan(plan) {}

    std::optional<std::span<const IndexList>> select(std::size_t layer, const Matrix&) override {
        if (m_plan == nullptr) {
            return std::nullopt;
        }
        return std::span<const IndexList>(m_plan->layers[layer].heads);
    }

private:
    const SelectionPlan* m_plan;
};

void check_block(const ModelConfig& cfg, const BlockState& block) {
    if (block.tokens.empty() || block.masked.size() != block.tokens.size() ||
        block.positions.size() != block.tokens.size()) {
        throw ShapeError("block state fields must be non-empty and of equal length");
    }
    for (std::size_t i = 0; i < block.size(); ++i) {
        if (block.masked[i] && block.tokens[i] != cfg.mask_token()) {
            throw ShapeError("masked position must carry the mask token id");
        }
    }
}

ForwardResult run_block(const Model& model, const KVCache& cache, const BlockState& block, LayerSelector& selector) {
    const auto& cfg = model.config();
    check_block(cfg, block);
    if (cache.num_layers() != cfg.num_layers || cache.kv_heads() != cfg.num_kv_heads ||
        cache.head_dim() != cfg.head_dim) {
        throw ShapeError("cache geometry does not match the model");
    }
    const std::size_t n = cache.length();
    const std::size_t b = block.size();
    const std::size_t d = cfg.head_dim;
    const std::size_t group = cfg.group_size();
    const double scale = attention_scale(cfg);
    const IndexList all_cache = full_range(n);

    ForwardResult result;
    result.context_length = n;
    Matrix x = embed(model, block.tokens, block.positions);

    std::vector<std::span<const float>> keys;
    std::vector<std::span<const float>> values;
    std::vector<double> probs;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const auto& w = model.layers()[l];
        const Matrix xn = rms_norm(x);
        const Matrix q = matmul(xn, w.query);
        const Matrix k = matmul(xn, w.key);
        const Matrix v = matmul(xn, w.value);

        KVSlab slab(b, cfg.num_kv_heads, d);
        std::copy(k.data.begin(), k.data.end(), slab.keys.begin());
        std::copy(v.data.begin(), v.data.end(), slab.values.begin());

        std::optional<std::span<const IndexList>> selection;
        if (l >= cfg.exact_layer_prefix) {
            selection = selector.select(l, q);
        }
        if (selection) {
            if (selection->size() != cfg.num_kv_heads) {
                throw PlanError("selection for layer " + std::to_string(l) + " has wrong KV head count");
            }
            for (const auto& list : *selection) {
                if (n == 0 && !list.empty()) {
                    throw PlanError("plan references cache entries but the cache is empty");
                }
                validate_index_list(list, n);
            }
            ++result.sparse_layers;
        }

        AttentionTensor attn(cfg.num_query_heads, b, n + b);
        Matrix out(b, cfg.num_query_heads * d);
        for (std::size_t h = 0; h < cfg.num_kv_heads; ++h) {
            const IndexList& idx = selection ? (*selection)[h] : all_cache;
            result.kv_entries_read += idx.size();
            keys.clear();
            values.clear();
            for (const auto i : idx) {
                keys.push_back(cache.key(l, i, h));
                values.push_back(cache.value(l, i, h));
            }
            for (std::size_t j = 0; j < b; ++j) {
                keys.push_back(slab.key(j, h));
                values.push_back(slab.value(j, h));
            }
            for (std::size_t g = 0; g < group; ++g) {
                const std::size_t qh = h * group + g;
                for (std::size_t i = 0; i < b; ++i) {
                    attend(head_slice(q, i, qh, d), keys, values, scale, probs, out.row(i).subspan(qh * d, d));
                    auto row = attn.row(qh, i);
                    for (std::size_t c = 0; c < idx.size(); ++c) {
                        row[idx[c]] = static_cast<float>(probs[c]);
                    }
                    for (std::size_t j = 0; j < b; ++j) {
                        row[n + j] = static_cast<float>(probs[idx.size() + j]);
                    }
                }
            }
        }
        selector.observe(l, attn);
        add_in_place(x, matmul(out, w.output));
        feed_forward(w, x);
        result.attention.push_back(std::move(attn));
        result.new_kv.push_back(std::move(slab));
    }
    result.logits = unembed(model, x);
    return result;
}

}  // namespace

void ModelConfig::validate() const {
    if (num_layers == 0 || num_query_heads == 0 || num_kv_heads == 0 || head_dim == 0 || vocab_size == 0 ||
        block_size == 0) {
        throw ConfigError("model dimensions must all be positive");
    }
    if (num_query_heads % num_kv_heads != 0) {
        throw ConfigError("num_query_heads (" + std::to_string(num_query_heads) +
                          ") must be a multiple of num_kv_heads (" + std::to_string(num_kv_heads) + ")");
    }
    if (exact_layer_prefix < 1 || exact_layer_prefix > num_layers) {
        throw ConfigError("exact_layer_prefix must lie in [1, num_layers]");
    }
    if (!(skew_temperature > 0.0) || !std::isfinite(skew_temperature)) {
        throw ConfigError("skew_temperature must be a positive finite number");
    }
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) {
    ModelConfig c;
    c.num_layers = kv.get_uint("num_layers", c.num_layers);
    c.num_query_heads = kv.get_uint("num_query_heads", c.num_query_heads);
    c.num_kv_heads = kv.get_uint("num_kv_heads", c.num_kv_heads);
    c.head_dim = kv.get_uint("head_dim", c.head_dim);
    c.vocab_size = kv.get_uint("vocab_size", c.vocab_size);
    c.block_size = kv.get_uint("block_size", c.block_size);
    c.exact_layer_prefix = kv.get_uint("exact_layer_prefix", c.exact_layer_prefix);
    c.skew_temperature = kv.get_double("skew_temperature", c.skew_temperature);
    c.seed = kv.get_uint("seed", c.seed);
    c.validate();
    return c;
}

Model Model::build(const ModelConfig& config) {
    config.validate();
    Model model(config);
    std::mt19937_64 rng(config.seed);
    const std::size_t dim = config.model_dim();
    const std::size_t ffn = kFfnMultiplier * dim;
    const std::size_t q_width = config.num_query_heads * config.head_dim;
    const std::size_t kv_width = config.num_kv_heads * config.head_dim;
    const float inv_sqrt_dim = 1.0f / std::sqrt(static_cast<float>(dim));

    // Every embedding row shares one common direction plus token-specific
    // noise; the shared part gives keys a query-independent salience.
    const Matrix shared = random_matrix(rng, 1, dim, 1.0f);
    model.m_embedding = random_matrix(rng, config.vocab_size + 1, dim, 1.0f);
    for (std::size_t t = 0; t <= config.vocab_size; ++t) {
        for (std::size_t j = 0; j < dim; ++j) {
            model.m_embedding(t, j) += shared(0, j);
        }
    }
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights w;
        w.query = random_matrix(rng, dim, q_width, inv_sqrt_dim);
        w.key = random_matrix(rng, dim, kv_width, inv_sqrt_dim);
        w.value = random_matrix(rng, dim, kv_width, inv_sqrt_dim);
        w.output = random_matrix(rng, q_width, dim, 1.0f / std::sqrt(static_cast<float>(q_width)));
        w.ffn_in = random_matrix(rng, dim, ffn, inv_sqrt_dim);
        w.ffn_out = random_matrix(rng, ffn, dim, 1.0f / std::sqrt(static_cast<float>(ffn)));
        model.m_layers.push_back(std::move(w));
    }
    model.m_unembedding = random_matrix(rng, dim, config.vocab_size, kUnembeddingScale * inv_sqrt_dim);
    return model;
}

std::uint64_t Model::checksum() const {
    std::uint64_t hash = 1469598103934665603ull;
    const auto mix = [&hash](const Matrix& m) {
        for (const float v : m.data) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, &v, sizeof(bits));
            for (int byte = 0; byte < 4; ++byte) {
                hash ^= (bits >> (8 * byte)) & 0xffu;
                hash *= 1099511628211ull;
            }
        }
    };
    mix(m_embedding);
    for (const auto& w : m_layers) {
        mix(w.query);
        mix(w.key);
        mix(w.value);
        mix(w.output);
        mix(w.ffn_in);
        mix(w.ffn_out);
    }
    mix(m_unembedding);
    return hash;
}

BlockState BlockState::all_masked(std::size_t block_size, std::size_t start_position, std::size_t mask_token) {
    BlockState s;
    s.tokens.assign(block_size, mask_token);
    s.masked.assign(block_size, true);
    s.positions.resize(block_size);
    for (std::size_t i = 0; i < block_size; ++i) {
        s.positions[i] = start_position + i;
    }
    return s;
}

BlockState BlockState::decoded(std::span<const std::size_t> tokens, std::size_t start_position) {
    BlockState s;
    s.tokens.assign(tokens.begin(), tokens.end());
    s.masked.assign(tokens.size(), false);
    s.positions.resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        s.positions[i] = start_position + i;
    }
    return s;
}

std::size_t BlockState::masked_count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true));
}

ForwardResult forward_block(const Model& model, const KVCache& cache, const BlockState& block,
                            const SelectionPlan* plan) {
    if (plan != nullptr) {
        const auto& cfg = model.config();
        if (plan->layers.size() != cfg.num_layers) {
            throw PlanError("plan covers " + std::to_string(plan->layers.size()) + " layers, model has " +
                            std::to_string(cfg.num_layers));
        }
    }
    PlanSelector selector(plan);
    return run_block(model, cache, block, selector);
}

ForwardResult forward_block(const Model& model, const KVCache& cache, const BlockState& block,
                            LayerSelector& selector) {
    return run_block(model, cache, block, selector);
}

SequenceResult forward_sequence(const Model& model, std::span<const std::size_t> tokens,
                                std::span<const std::size_t> positions, const MaskProvider& masks) {
    const auto& cfg = model.config();
    const std::size_t s = tokens.size();
    if (s == 0 || positions.size() != s) {
        throw ShapeError("forward_sequence: tokens and positions must be non-empty and of equal length");
    }
    const std::size_t d = cfg.head_dim;
    const std::size_t group = cfg.group_size();
    const double scale = attention_scale(cfg);

    SequenceResult result;
    Matrix x = embed(model, tokens, positions);
    std::vector<std::span<const float>> keys;
    std::vector<std::span<const float>> values;
    std::vector<std::size_t> cols;
    std::vector<double> probs;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const auto& w = model.layers()[l];
        const Matrix xn = rms_norm(x);
        const Matrix q = matmul(xn, w.query);
        const Matrix k = matmul(xn, w.key);
        const Matrix v = matmul(xn, w.value);
        AttentionTensor attn(cfg.num_query_heads, s, s);
        Matrix out(s, cfg.num_query_heads * d);
        for (std::size_t h = 0; h < cfg.num_kv_heads; ++h) {
            const AttentionMask& mask = masks(l, h);
            if (mask.size != s) {
                throw ShapeError("mask size does not match the sequence length");
            }
            for (std::size_t i = 0; i < s; ++i) {
                keys.clear();
                values.clear();
                cols.clear();
                for (std::size_t j = 0; j < s; ++j) {
                    if (mask.allowed(i, j)) {
                        cols.push_back(j);
                        keys.push_back(head_slice(k, j, h, d));
                        values.push_back(head_slice(v, j, h, d));
                    }
                }
                if (cols.empty()) {
                    throw ShapeError("mask row " + std::to_string(i) + " permits no keys");
                }
                for (std::size_t g = 0; g < group; ++g) {
                    const std::size_t qh = h * group + g;
                    attend(head_slice(q, i, qh, d), keys, values, scale, probs, out.row(i).subspan(qh * d, d));
                    auto row = attn.row(qh, i);
                    for (std::size_t c = 0; c < cols.size(); ++c) {
                        row[cols[c]] = static_cast<float>(probs[c]);
                    }
                }
            }
        }
        add_in_place(x, matmul(out, w.output));
        feed_forward(w, x);
        result.attention.push_back(std::move(attn));
    }
    result.logits = unembed(model, x);
    return result;
}

std::vector<double> softmax(std::span<const float> logits, double temperature) {
    std::vector<double> out(logits.size());
    double max_v = -std::numeric_limits<double>::infinity();
    for (const float v : logits) {
        max_v = std::max(max_v, static_cast<double>(v) / temperature);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(static_cast<double>(logits[i]) / temperature - max_v);
        total += out[i];
    }
    for (auto& p : out) {
        p /= total;
    }
    return out;
}

}  // namespace mage
