// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mage/kv_cache.hpp"
#include "mage/plan.hpp"
#include "mage/tensor.hpp"

namespace mage {

class KeyValueConfig;

struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t num_query_heads = 4;
    std::size_t num_kv_heads = 2;
    std::size_t head_dim = 16;
    std::size_t vocab_size = 64;
    std::size_t block_size = 8;
    std::size_t exact_layer_prefix = 1;
    double skew_temperature = 1.0;
    std::uint64_t seed = 0;

    std::size_t group_size() const { return num_query_heads / num_kv_heads; }
    std::size_t model_dim() const { return num_query_heads * head_dim; }
    /// Reserved [MASK] id. It has an embedding row but no output logit.
    std::size_t mask_token() const { return vocab_size; }

    /// Throws ConfigError when an invariant does not hold.
    void validate() const;

    /// Reads the keys named after the fields above; missing keys keep their
    /// defaults.
    static ModelConfig from_config(const KeyValueConfig& kv);

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Matrix query;   // D x (H_q * d)
    Matrix key;     // D x (H_kv * d)
    Matrix value;   // D x (H_kv * d)
    Matrix output;  // (H_q * d) x D
    Matrix ffn_in;  // D x F
    Matrix ffn_out; // F x D
};

/// Seeded miniature GQA transformer. Weights are immutable after build.
class Model {
public:
    /// Draws every weight from a generator seeded with `config.seed`.
    static Model build(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return m_config; }
    const std::vector<LayerWeights>& layers() const noexcept { return m_layers; }
    const Matrix& embedding() const noexcept { return m_embedding; }
    const Matrix& unembedding() const noexcept { return m_unembedding; }

    /// FNV-1a over the raw bytes of every weight tensor.
    std::uint64_t checksum() const;

    KVCache make_cache() const { return KVCache(m_config.num_layers, m_config.num_kv_heads, m_config.head_dim); }

private:
    explicit Model(const ModelConfig& config) : m_config(config) {}

    ModelConfig m_config;
    std::vector<LayerWeights> m_layers;
    Matrix m_embedding;    // (V + 1) x D, last row is [MASK]
    Matrix m_unembedding;  // D x V
};

inline Model build_model(const ModelConfig& config) { return Model::build(config); }

/// Tokens of the block being denoised. Token ids at masked positions are the
/// reserved mask id.
struct BlockState {
    std::vector<std::size_t> tokens;
    std::vector<bool> masked;
    std::vector<std::size_t> positions;

    static BlockState all_masked(std::size_t block_size, std::size_t start_position, std::size_t mask_token);
    static BlockState decoded(std::span<const std::size_t> tokens, std::size_t start_position);

    std::size_t size() const noexcept { return tokens.size(); }
    std::size_t masked_count() const;

    bool operator==(const BlockState&) const = default;
};

struct ForwardResult {
    Matrix logits;                          // B x V
    std::vector<AttentionTensor> attention; // per layer: H_q x B x (n + B)
    std::vector<KVSlab> new_kv;             // per layer: B positions
    std::size_t context_length = 0;         // n
    std::size_t kv_entries_read = 0;        // cache rows read, summed over layers and KV heads
    std::size_t sparse_layers = 0;
};

/// Per-layer hook used by methods whose selection depends on the current
/// step's queries (page-level estimation) or on an earlier layer's attention
/// in the same step (anchor reuse).
class LayerSelector {
public:
    virtual ~LayerSelector() = default;

    /// Returns one index list per KV head, or nullopt to run exact attention.
    /// `queries` is B x (H_q * d) for this layer.
    virtual std::optional<std::span<const IndexList>> select(std::size_t layer, const Matrix& queries) = 0;

    /// Sees the attention probabilities of every layer after it runs.
    virtual void observe(std::size_t /*layer*/, const AttentionTensor& /*attention*/) {}
};

/// Runs the block through the model against the cached context. Without a
/// plan every layer attends to the full cache; with a plan, layers at or
/// above `exact_layer_prefix` read only the planned entries. Attention inside
/// the block is always exact.
ForwardResult forward_block(const Model& model, const KVCache& cache, const BlockState& block,
                            const SelectionPlan* plan = nullptr);
ForwardResult forward_block(const Model& model, const KVCache& cache, const BlockState& block,
                            LayerSelector& selector);

/// Square boolean matrix over a token sequence; `allowed(q, k)` permits query
/// q to attend key k.
struct AttentionMask {
    std::size_t size = 0;
    std::vector<std::uint8_t> bits;

    AttentionMask() = default;
    explicit AttentionMask(std::size_t n) : size(n), bits(n * n, 0) {}

    bool allowed(std::size_t q, std::size_t k) const { return bits[q * size + k] != 0; }
    void set(std::size_t q, std::size_t k, bool value) { bits[q * size + k] = value ? 1 : 0; }

    bool operator==(const AttentionMask&) const = default;
};

/// Supplies the mask used by (layer, kv_head).
using MaskProvider = std::function<const AttentionMask&(std::size_t layer, std::size_t kv_head)>;

struct SequenceResult {
    Matrix logits;                           // S x V
    std::vector<AttentionTensor> attention;  // per layer: H_q x S x S
};

/// Cache-free forward over a whole sequence with arbitrary masks. Each row of
/// every mask must permit at least one key.
SequenceResult forward_sequence(const Model& model, std::span<const std::size_t> tokens,
                                std::span<const std::size_t> positions, const MaskProvider& masks);

/// Row-wise softmax with temperature, accumulated in double.
std::vector<double> softmax(std::span<const float> logits, double temperature = 1.0);

}  // namespace mage
