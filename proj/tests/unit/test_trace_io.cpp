// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "mage/error.hpp"
#include "mage/trace_io.hpp"
#include "support/generators.hpp"
#include "support/toy.hpp"

namespace mage {
namespace {

TraceFile random_trace(testing::Rng& rng) {
    TraceFile t;
    t.num_layers = 2;
    t.num_query_heads = 4;
    t.num_kv_heads = 2;
    t.block_size = 3;
    for (const std::size_t n : {5u, 5u, 9u}) {
        t.context_lengths.push_back(n);
        std::vector<AttentionTensor> layers;
        for (std::size_t l = 0; l < t.num_layers; ++l) {
            layers.push_back(testing::random_attention(rng, 4, 3, n));
        }
        t.attention.push_back(std::move(layers));
    }
    return t;
}

std::string serialize(const TraceFile& t) {
    std::ostringstream out(std::ios::binary);
    write_trace_file(out, t);
    return out.str();
}

TEST(BinaryTrace, RoundTrip) {
    testing::Rng rng(101);
    const TraceFile t = random_trace(rng);
    const std::string bytes = serialize(t);
    EXPECT_EQ(bytes.size(), 10 + 5 * 4 + 3 * 4 + 4 * 2 * 4 * 3 * (5 + 5 + 9));
    std::istringstream in(bytes, std::ios::binary);
    EXPECT_TRUE(is_binary_trace(in));
    const TraceFile back = read_trace_file(in);
    EXPECT_EQ(back.context_lengths, t.context_lengths);
    EXPECT_EQ(back.attention, t.attention);
    EXPECT_NO_THROW(validate_trace_file(back));
}

TEST(BinaryTrace, TruncationNamesOffset) {
    testing::Rng rng(102);
    const std::string bytes = serialize(random_trace(rng));
    for (const std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 1}) {
        std::istringstream in(bytes.substr(0, cut), std::ios::binary);
        try {
            read_trace_file(in);
            FAIL() << "expected ParseError at cut " << cut;
        } catch (const ParseError& e) {
            EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
        }
    }
    std::istringstream trailing(bytes + "x", std::ios::binary);
    EXPECT_THROW(read_trace_file(trailing), ParseError);
}

TEST(BinaryTrace, BadMagic) {
    std::istringstream in(std::string("NOTATRACE!") + std::string(64, '\0'), std::ios::binary);
    EXPECT_FALSE(is_binary_trace(in));
    EXPECT_THROW(read_trace_file(in), ParseError);
}

TEST(BinaryTrace, ValidationRejectsBadRows) {
    testing::Rng rng(103);
    TraceFile t = random_trace(rng);
    t.attention[1][0].row(0, 0)[0] += 0.5f;
    EXPECT_THROW(validate_trace_file(t), DataError);
    t = random_trace(rng);
    t.num_kv_heads = 3;
    EXPECT_THROW(validate_trace_file(t), DataError);
}

TEST(BinaryTrace, FromDecoderRun) {
    const Model model = build_model(testing::toy_config(3));
    DecodeConfig c;
    c.method = Method::mage;
    c.budget = 16;
    c.prompt_len = 32;
    c.num_blocks = 2;
    const auto& m = model.config();
    const Generation plain = generate(model, c);
    EXPECT_THROW(trace_file_from(plain.traces, m.num_layers, m.num_query_heads, m.num_kv_heads), StateError);
    c.keep_attention = true;
    const Generation g = generate(model, c);
    const TraceFile t = trace_file_from(g.traces, m.num_layers, m.num_query_heads, m.num_kv_heads);
    EXPECT_EQ(t.steps(), 16u);
    EXPECT_EQ(t.context_lengths.front(), 32u);
    EXPECT_EQ(t.context_lengths.back(), 40u);
    EXPECT_NO_THROW(validate_trace_file(t));
}

TEST(JsonlTrace, RoundTripKeepsAnalysisFields) {
    const Model model = build_model(testing::toy_config(4));
    DecodeConfig c;
    c.method = Method::mage;
    c.budget = 16;
    c.prompt_len = 64;
    c.num_blocks = 2;
    c.trace_oracle = true;
    const Generation g = generate(model, c);
    std::ostringstream out;
    write_trace_jsonl(out, g.traces);
    std::istringstream in(out.str());
    const auto back = read_trace_jsonl(in);
    ASSERT_EQ(back.size(), g.traces.size());
    for (std::size_t b = 0; b < back.size(); ++b) {
        EXPECT_EQ(back[b].context_length, g.traces[b].context_length);
        EXPECT_EQ(back[b].method, Method::mage);
        ASSERT_EQ(back[b].steps.size(), g.traces[b].steps.size());
        for (std::size_t t = 0; t < back[b].steps.size(); ++t) {
            const auto& x = back[b].steps[t];
            const auto& y = g.traces[b].steps[t];
            EXPECT_EQ(x.oracle, y.oracle);
            EXPECT_EQ(x.coverage_counts, y.coverage_counts);
            EXPECT_EQ(x.unmasked, y.unmasked);
            EXPECT_EQ(x.tokens, y.tokens);
            EXPECT_EQ(x.plan == nullptr, y.plan == nullptr);
            if (x.plan) {
                EXPECT_EQ(*x.plan, *y.plan);
            }
        }
        EXPECT_EQ(back[b].steps[2].plan.get(), back[b].steps[1].plan.get());
    }
    std::ostringstream again;
    write_trace_jsonl(again, back);
    EXPECT_EQ(again.str(), out.str());
}

TEST(JsonlTrace, MalformedLineIsParseError) {
    std::istringstream bad("{\"block\": 0, \"step\": 1\n");
    EXPECT_THROW(read_trace_jsonl(bad), ParseError);
    std::istringstream junk("not json\n");
    EXPECT_THROW(read_trace_jsonl(junk), ParseError);
}

TEST(Export, MaskCsvAndPairJson) {
    AttentionMask m(2);
    m.set(0, 0, true);
    m.set(1, 0, true);
    m.set(1, 1, true);
    std::ostringstream csv;
    write_mask_csv(csv, m);
    EXPECT_EQ(csv.str(), "1,0\n1,1\n");
    const TrainingPair pair = make_training_pair(std::vector<std::size_t>{1, 2, 3, 4}, 2, 1.0, 0, 64);
    const std::string json = training_pair_to_json(pair);
    EXPECT_NE(json.find("\"xt\""), std::string::npos);
    EXPECT_EQ(json.find('\n'), std::string::npos);
}

}  // namespace
}  // namespace mage
