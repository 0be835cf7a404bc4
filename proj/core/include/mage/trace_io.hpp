// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mage/decoder.hpp"
#include "mage/tensor.hpp"
#include "mage/train_data.hpp"

namespace mage {

inline constexpr std::string_view kTraceMagic = "MAGETRACE1";

/// Binary attention trace. Layout (little-endian):
///   10 bytes   "MAGETRACE1"
///   5 x u32    L, H_q, H_kv, B, T
///   T x u32    n for each step
///   payload    for each step, for each layer: H_q * B * n_t f32 values,
///              row-major (head, query, key)
struct TraceFile {
    std::size_t num_layers = 0;
    std::size_t num_query_heads = 0;
    std::size_t num_kv_heads = 0;
    std::size_t block_size = 0;
    std::vector<std::size_t> context_lengths;            // one per step
    std::vector<std::vector<AttentionTensor>> attention;  // [step][layer]

    std::size_t steps() const { return context_lengths.size(); }
};

void write_trace_file(std::ostream& out, const TraceFile& trace);
/// Throws ParseError naming the byte offset for truncated or corrupt input.
TraceFile read_trace_file(std::istream& in);
/// Dimension and row-sum checks (rows must sum to 1 within `tolerance`).
void validate_trace_file(const TraceFile& trace, double tolerance = 1e-3);
/// True when the stream starts with the binary magic.
bool is_binary_trace(std::istream& in);

/// Builds a TraceFile from decoder traces that kept their attention.
TraceFile trace_file_from(std::span<const DenoiseTrace> traces, std::size_t num_layers, std::size_t num_query_heads,
                          std::size_t num_kv_heads);

/// One JSON object per denoising step.
void write_trace_jsonl(std::ostream& out, std::span<const DenoiseTrace> traces);
/// Reads back the fields needed for analysis (plans, oracle sets, coverage
/// counts, unmasking); attention and logits are not serialized.
std::vector<DenoiseTrace> read_trace_jsonl(std::istream& in);

std::string training_pair_to_json(const TrainingPair& pair);
void write_mask_csv(std::ostream& out, const AttentionMask& mask);

}  // namespace mage
