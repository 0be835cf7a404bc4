// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/train_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "mage/error.hpp"

namespace mage {

namespace {

constexpr double kTopPSlack = 1e-12;

std::vector<double> log_softmax(std::span<const float> logits, double tau) {
    double peak = -INFINITY;
    for (const float v : logits) {
        peak = std::max(peak, static_cast<double>(v) / tau);
    }
    double sum = 0.0;
    for (const float v : logits) {
        sum += std::exp(static_cast<double>(v) / tau - peak);
    }
    const double log_z = peak + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = static_cast<double>(logits[i]) / tau - log_z;
    }
    return out;
}

Matrix tail_rows(const Matrix& m, std::size_t first) {
    Matrix out(m.rows - first, m.cols);
    std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(first * m.cols), m.data.end(), out.data.begin());
    return out;
}

}  // namespace

TrainingPair make_training_pair(std::span<const std::size_t> tokens, std::size_t block_size, double mask_ratio,
                                std::uint64_t seed, std::size_t mask_token) {
    if (block_size == 0) {
        throw ConfigError("block size must be positive");
    }
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
        throw ConfigError("mask ratio must lie in [0, 1]");
    }
    if (tokens.empty()) {
        throw DataError("training pair needs a non-empty token sequence");
    }
    const std::size_t kept = tokens.size() / block_size * block_size;
    if (kept == 0) {
        throw DataError("sequence of " + std::to_string(tokens.size()) + " tokens is shorter than one block of " +
                        std::to_string(block_size));
    }
    TrainingPair pair;
    pair.block_size = block_size;
    pair.mask_ratio = mask_ratio;
    pair.seed = seed;
    pair.truncated = tokens.size() - kept;
    pair.x0.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(kept));
    for (const std::size_t t : pair.x0) {
        if (t >= mask_token) {
            throw DataError("token id " + std::to_string(t) + " is outside the vocabulary");
        }
    }
    pair.xt = pair.x0;
    pair.masked.assign(kept, false);

    const auto per_block = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(block_size)));
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> offsets(block_size);
    std::iota(offsets.begin(), offsets.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    for (std::size_t b = 0; b < pair.num_blocks(); ++b) {
        chosen.clear();
        std::sample(offsets.begin(), offsets.end(), std::back_inserter(chosen), per_block, rng);
        for (const std::size_t o : chosen) {
            const std::size_t pos = b * block_size + o;
            pair.xt[pos] = mask_token;
            pair.masked[pos] = true;
        }
    }
    return pair;
}

AttnMask offset_block_causal_mask(std::size_t num_blocks, std::size_t block_size) {
    if (num_blocks == 0 || block_size == 0) {
        throw ConfigError("offset block-causal mask needs at least one non-empty block");
    }
    const std::size_t half = num_blocks * block_size;
    AttnMask mask(2 * half);
    for (std::size_t q = 0; q < half; ++q) {
        const std::size_t qb = q / block_size;
        for (std::size_t k = 0; k < (qb + 1) * block_size; ++k) {
            mask.set(q, k, true);
        }
        for (std::size_t k = 0; k < qb * block_size; ++k) {
            mask.set(half + q, k, true);
        }
        for (std::size_t k = qb * block_size; k < (qb + 1) * block_size; ++k) {
            mask.set(half + q, half + k, true);
        }
    }
    return mask;
}

IndexList top_p_select(std::span<const double> mass, double p) {
    if (!(p > 0.0) || p > 1.0) {
        throw ConfigError("top-p threshold must lie in (0, 1]");
    }
    std::vector<std::size_t> order(mass.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&mass](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
    IndexList out;
    if (p == 1.0) {
        for (const std::size_t i : order) {
            if (mass[i] > 0.0) {
                out.push_back(i);
            }
        }
    } else {
        const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
        const double target = p * total * (1.0 - kTopPSlack);
        double cumulative = 0.0;
        for (const std::size_t i : order) {
            out.push_back(i);
            cumulative += mass[i];
            if (cumulative >= target) {
                break;
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

LossBreakdown distill_loss(const Matrix& student_logits, const Matrix& teacher_logits,
                           std::span<const std::size_t> targets, const std::vector<bool>& loss_rows, double lambda,
                           double tau) {
    if (student_logits.rows != teacher_logits.rows || student_logits.cols != teacher_logits.cols) {
        throw ShapeError("student and teacher logits differ in shape");
    }
    if (targets.size() != student_logits.rows || loss_rows.size() != student_logits.rows) {
        throw ShapeError("targets and loss rows must have one entry per logit row");
    }
    if (!(tau > 0.0)) {
        throw ConfigError("distillation temperature must be positive");
    }
    if (!(lambda >= 0.0)) {
        throw ConfigError("distillation weight must be nonnegative");
    }
    LossBreakdown loss;
    loss.lambda = lambda;
    loss.tau = tau;
    std::size_t rows = 0;
    for (std::size_t r = 0; r < student_logits.rows; ++r) {
        if (!loss_rows[r]) {
            continue;
        }
        if (targets[r] >= student_logits.cols) {
            throw DataError("target id " + std::to_string(targets[r]) + " at row " + std::to_string(r) +
                            " is outside the vocabulary");
        }
        ++rows;
        loss.ce -= log_softmax(student_logits.row(r), 1.0)[targets[r]];
        const auto ls = log_softmax(student_logits.row(r), tau);
        const auto lt = log_softmax(teacher_logits.row(r), tau);
        double kl = 0.0;
        for (std::size_t v = 0; v < ls.size(); ++v) {
            kl += std::exp(ls[v]) * (ls[v] - lt[v]);
        }
        loss.kl += std::max(0.0, kl);
    }
    if (rows > 0) {
        loss.ce /= static_cast<double>(rows);
        loss.kl /= static_cast<double>(rows);
    }
    loss.total = loss.ce + lambda * loss.kl;
    return loss;
}

TrainingForward three_stage_forward(const Model& model, const TrainingPair& pair, double p, double lambda,
                                    double tau, std::optional<std::size_t> exact_layers) {
    const ModelConfig& cfg = model.config();
    if (pair.block_size != cfg.block_size) {
        throw ConfigError("training pair block size " + std::to_string(pair.block_size) +
                          " differs from the model block size " + std::to_string(cfg.block_size));
    }
    if (pair.x0.empty() || pair.x0.size() != pair.xt.size() || pair.masked.size() != pair.x0.size()) {
        throw DataError("malformed training pair");
    }
    if (!(p > 0.0) || p > 1.0) {
        throw ConfigError("top-p threshold must lie in (0, 1]");
    }
    const std::size_t layers = cfg.num_layers;
    const std::size_t dense_layers = std::min(exact_layers.value_or(2), layers);
    const std::size_t B = pair.block_size;
    const std::size_t blocks = pair.num_blocks();
    const std::size_t half = blocks * B;
    const std::size_t group = cfg.group_size();

    TrainingForward result;
    StageArtifacts& art = result.artifacts;
    art.dense_mask = offset_block_causal_mask(blocks, B);
    art.positions.resize(2 * half);
    for (std::size_t i = 0; i < half; ++i) {
        art.positions[i] = i;
        art.positions[half + i] = i;
    }
    art.stage1_tokens = pair.x0;
    art.stage1_tokens.resize(2 * half, cfg.mask_token());
    art.stage2_tokens = pair.x0;
    art.stage2_tokens.insert(art.stage2_tokens.end(), pair.xt.begin(), pair.xt.end());

    const MaskProvider dense = [&art](std::size_t, std::size_t) -> const AttnMask& { return art.dense_mask; };
    const SequenceResult stage1 = forward_sequence(model, art.stage1_tokens, art.positions, dense);

    art.selected.assign(layers, std::vector<std::vector<IndexList>>(cfg.num_kv_heads, std::vector<IndexList>(blocks)));
    art.sparse_masks.assign(layers, std::vector<AttnMask>(cfg.num_kv_heads, art.dense_mask));
    for (std::size_t l = 0; l < layers; ++l) {
        const AttentionTensor& attn = stage1.attention[l];
        for (std::size_t h = 0; h < cfg.num_kv_heads; ++h) {
            for (std::size_t b = 1; b < blocks; ++b) {
                const std::size_t region = b * B;
                IndexList merged;
                for (std::size_t g = 0; g < group; ++g) {
                    std::vector<double> mass(region, 0.0);
                    for (std::size_t q = 0; q < B; ++q) {
                        const auto row = attn.row(h * group + g, half + region + q);
                        for (std::size_t j = 0; j < region; ++j) {
                            mass[j] += row[j];
                        }
                    }
                    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
                    if (total > 0.0) {
                        for (auto& m : mass) {
                            m /= total;
                        }
                    }
                    const IndexList picked = top_p_select(mass, p);
                    IndexList joined;
                    std::set_union(merged.begin(), merged.end(), picked.begin(), picked.end(),
                                   std::back_inserter(joined));
                    merged = std::move(joined);
                }
                if (l >= dense_layers) {
                    AttnMask& mask = art.sparse_masks[l][h];
                    for (std::size_t q = 0; q < B; ++q) {
                        const std::size_t row = half + region + q;
                        for (std::size_t j = 0; j < region; ++j) {
                            mask.set(row, j, false);
                        }
                        for (const std::size_t j : merged) {
                            mask.set(row, j, true);
                        }
                    }
                }
                art.selected[l][h][b] = std::move(merged);
            }
        }
    }

    const MaskProvider sparse = [&art](std::size_t l, std::size_t h) -> const AttnMask& {
        return art.sparse_masks[l][h];
    };
    const SequenceResult stage2 = forward_sequence(model, art.stage2_tokens, art.positions, sparse);
    const SequenceResult stage3 = forward_sequence(model, art.stage2_tokens, art.positions, dense);
    art.student_logits = tail_rows(stage2.logits, half);
    art.teacher_logits = tail_rows(stage3.logits, half);
    result.loss = distill_loss(art.student_logits, art.teacher_logits, pair.x0, pair.masked, lambda, tau);
    return result;
}

}  // namespace mage
