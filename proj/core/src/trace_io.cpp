// Copyright (C) 2026 The mage-sparse Authors
// SPDX-License-Identifier: Apache-2.0

#include "mage/trace_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mage/error.hpp"

namespace mage {

namespace {

using nlohmann::json;

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> bytes{static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                                    static_cast<char>((v >> 16) & 0xffu), static_cast<char>((v >> 24) & 0xffu)};
    out.write(bytes.data(), bytes.size());
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw ShapeError(std::string(what) + " does not fit the trace header");
    }
    return static_cast<std::uint32_t>(v);
}

class Reader {
public:
    explicit Reader(std::istream& in) : m_in(in) {}

    std::size_t offset() const { return m_offset; }

    void read(char* dst, std::size_t count, const char* what) {
        m_in.read(dst, static_cast<std::streamsize>(count));
        const auto got = static_cast<std::size_t>(m_in.gcount());
        if (got != count) {
            throw ParseError("truncated trace: expected " + std::string(what), m_offset + got);
        }
        m_offset += count;
    }

    std::uint32_t u32(const char* what) {
        std::array<unsigned char, 4> b{};
        read(reinterpret_cast<char*>(b.data()), b.size(), what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    // Bytes left in a seekable stream, or nullopt.
    std::optional<std::size_t> remaining() {
        const auto here = m_in.tellg();
        if (here < 0) {
            return std::nullopt;
        }
        m_in.seekg(0, std::ios::end);
        const auto end = m_in.tellg();
        m_in.seekg(here);
        if (end < 0 || !m_in) {
            m_in.clear();
            m_in.seekg(here);
            return std::nullopt;
        }
        return static_cast<std::size_t>(end - here);
    }

private:
    std::istream& m_in;
    std::size_t m_offset = 0;
};

json indices_json(const IndexList& list) { return json(list); }

json plan_json(const SelectionPlan& plan) {
    json layers = json::array();
    for (const auto& layer : plan.layers) {
        json heads = json::array();
        for (const auto& h : layer.heads) {
            heads.push_back(indices_json(h));
        }
        layers.push_back({{"budget", layer.budget}, {"heads", std::move(heads)}});
    }
    return {{"method", std::string(to_string(plan.method))},
            {"context_length", plan.context_length},
            {"first_planned_layer", plan.first_planned_layer},
            {"layers", std::move(layers)}};
}

SelectionPlan plan_from_json(const json& j) {
    SelectionPlan plan;
    plan.method = parse_method(j.at("method").get<std::string>());
    plan.context_length = j.at("context_length").get<std::size_t>();
    plan.first_planned_layer = j.at("first_planned_layer").get<std::size_t>();
    for (const auto& layer : j.at("layers")) {
        LayerSelection sel;
        sel.budget = layer.at("budget").get<std::size_t>();
        for (const auto& h : layer.at("heads")) {
            sel.heads.push_back(h.get<IndexList>());
        }
        plan.layers.push_back(std::move(sel));
    }
    return plan;
}

json union_stats_json(const UnionStats& stats) {
    json layers = json::array();
    for (const auto& layer : stats.layers) {
        json heads = json::array();
        for (const auto& h : layer.heads) {
            json votes = json::array();
            for (const auto& [index, count] : h.union_set.votes) {
                votes.push_back({index, count});
            }
            heads.push_back({{"members", indices_json(h.union_set.members)},
                             {"votes", std::move(votes)},
                             {"coverage", h.coverage},
                             {"score", h.score}});
        }
        layers.push_back({{"layer", layer.layer}, {"score", layer.score}, {"heads", std::move(heads)}});
    }
    return layers;
}

UnionStats union_stats_from_json(const json& j) {
    UnionStats stats;
    for (const auto& layer : j) {
        LayerStats ls;
        ls.layer = layer.at("layer").get<std::size_t>();
        ls.score = layer.at("score").get<double>();
        for (const auto& h : layer.at("heads")) {
            HeadStats hs;
            hs.union_set.members = h.at("members").get<IndexList>();
            for (const auto& v : h.at("votes")) {
                hs.union_set.votes[v.at(0).get<std::size_t>()] = v.at(1).get<std::size_t>();
            }
            hs.coverage = h.at("coverage").get<double>();
            hs.score = h.at("score").get<double>();
            ls.heads.push_back(std::move(hs));
        }
        stats.layers.push_back(std::move(ls));
    }
    return stats;
}

}  // namespace

void write_trace_file(std::ostream& out, const TraceFile& trace) {
    if (trace.attention.size() != trace.steps()) {
        throw ShapeError("trace has attention for " + std::to_string(trace.attention.size()) + " steps but " +
                         std::to_string(trace.steps()) + " context lengths");
    }
    out.write(kTraceMagic.data(), static_cast<std::streamsize>(kTraceMagic.size()));
    put_u32(out, checked_u32(trace.num_layers, "L"));
    put_u32(out, checked_u32(trace.num_query_heads, "H_q"));
    put_u32(out, checked_u32(trace.num_kv_heads, "H_kv"));
    put_u32(out, checked_u32(trace.block_size, "B"));
    put_u32(out, checked_u32(trace.steps(), "T"));
    for (const std::size_t n : trace.context_lengths) {
        put_u32(out, checked_u32(n, "n"));
    }
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        if (trace.attention[t].size() != trace.num_layers) {
            throw ShapeError("step " + std::to_string(t + 1) + " does not hold one tensor per layer");
        }
        for (const auto& layer : trace.attention[t]) {
            if (layer.heads != trace.num_query_heads || layer.queries != trace.block_size ||
                layer.keys != trace.context_lengths[t]) {
                throw ShapeError("step " + std::to_string(t + 1) + " attention does not match the header dimensions");
            }
            for (const float v : layer.data) {
                put_u32(out, std::bit_cast<std::uint32_t>(v));
            }
        }
    }
    if (!out) {
        throw DataError("failed to write trace");
    }
}

TraceFile read_trace_file(std::istream& in) {
    Reader r(in);
    std::array<char, kTraceMagic.size()> magic{};
    r.read(magic.data(), magic.size(), "magic");
    if (std::string_view(magic.data(), magic.size()) != kTraceMagic) {
        throw ParseError("bad trace magic", 0);
    }
    TraceFile trace;
    trace.num_layers = r.u32("L");
    trace.num_query_heads = r.u32("H_q");
    trace.num_kv_heads = r.u32("H_kv");
    const std::size_t dims_end = r.offset();
    trace.block_size = r.u32("B");
    const std::size_t steps = r.u32("T");
    if (trace.num_layers == 0 || trace.num_query_heads == 0 || trace.num_kv_heads == 0 || trace.block_size == 0 ||
        trace.num_query_heads % trace.num_kv_heads != 0) {
        throw ParseError("invalid trace dimensions", dims_end - 12);
    }
    std::size_t payload = 0;
    for (std::size_t t = 0; t < steps; ++t) {
        const std::size_t n = r.u32("context length");
        trace.context_lengths.push_back(n);
        payload += trace.num_layers * trace.num_query_heads * trace.block_size * n * 4;
    }
    if (const auto left = r.remaining(); left && *left < payload) {
        throw ParseError("truncated trace: header declares " + std::to_string(payload) + " payload bytes but only " +
                             std::to_string(*left) + " remain",
                         r.offset() + *left);
    }
    std::vector<char> buffer;
    for (std::size_t t = 0; t < steps; ++t) {
        auto& layers = trace.attention.emplace_back();
        for (std::size_t l = 0; l < trace.num_layers; ++l) {
            AttentionTensor tensor(trace.num_query_heads, trace.block_size, trace.context_lengths[t]);
            buffer.resize(tensor.data.size() * 4);
            r.read(buffer.data(), buffer.size(), "attention payload");
            for (std::size_t i = 0; i < tensor.data.size(); ++i) {
                const auto* b = reinterpret_cast<const unsigned char*>(buffer.data() + 4 * i);
                const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                           (static_cast<std::uint32_t>(b[2]) << 16) |
                                           (static_cast<std::uint32_t>(b[3]) << 24);
                tensor.data[i] = std::bit_cast<float>(bits);
            }
            layers.push_back(std::move(tensor));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ParseError("trailing bytes after trace payload", r.offset());
    }
    return trace;
}

void validate_trace_file(const TraceFile& trace, double tolerance) {
    if (trace.num_layers == 0 || trace.num_query_heads == 0 || trace.num_kv_heads == 0 || trace.block_size == 0) {
        throw DataError("trace dimensions must be positive");
    }
    if (trace.num_query_heads % trace.num_kv_heads != 0) {
        throw DataError("H_q must be a multiple of H_kv");
    }
    if (trace.attention.size() != trace.steps()) {
        throw DataError("trace step count disagrees with its attention payload");
    }
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        if (trace.attention[t].size() != trace.num_layers) {
            throw DataError("step " + std::to_string(t + 1) + " is missing layers");
        }
        for (std::size_t l = 0; l < trace.num_layers; ++l) {
            const auto& a = trace.attention[t][l];
            if (a.heads != trace.num_query_heads || a.queries != trace.block_size ||
                a.keys != trace.context_lengths[t]) {
                throw DataError("step " + std::to_string(t + 1) + " layer " + std::to_string(l) +
                                " has the wrong shape");
            }
            if (a.keys == 0) {
                continue;
            }
            for (std::size_t h = 0; h < a.heads; ++h) {
                for (std::size_t q = 0; q < a.queries; ++q) {
                    double sum = 0.0;
                    for (const float v : a.row(h, q)) {
                        if (!std::isfinite(v) || v < 0.0f) {
                            throw DataError("non-probability value in step " + std::to_string(t + 1) + " layer " +
                                            std::to_string(l));
                        }
                        sum += v;
                    }
                    if (std::abs(sum - 1.0) > tolerance) {
                        throw DataError("row (step " + std::to_string(t + 1) + ", layer " + std::to_string(l) +
                                        ", head " + std::to_string(h) + ", query " + std::to_string(q) +
                                        ") sums to " + std::to_string(sum));
                    }
                }
            }
        }
    }
}

bool is_binary_trace(std::istream& in) {
    const auto start = in.tellg();
    std::array<char, kTraceMagic.size()> head{};
    in.read(head.data(), head.size());
    const bool match = in.gcount() == static_cast<std::streamsize>(head.size()) &&
                       std::string_view(head.data(), head.size()) == kTraceMagic;
    in.clear();
    in.seekg(start);
    return match;
}

TraceFile trace_file_from(std::span<const DenoiseTrace> traces, std::size_t num_layers, std::size_t num_query_heads,
                          std::size_t num_kv_heads) {
    TraceFile file;
    file.num_layers = num_layers;
    file.num_query_heads = num_query_heads;
    file.num_kv_heads = num_kv_heads;
    for (const auto& trace : traces) {
        if (file.block_size == 0) {
            file.block_size = trace.block_size;
        } else if (file.block_size != trace.block_size) {
            throw ShapeError("traces disagree on block size");
        }
        for (const auto& step : trace.steps) {
            if (step.attention.size() != num_layers) {
                throw StateError("step " + std::to_string(step.step) + " of block " +
                                 std::to_string(trace.block_index) + " kept no attention");
            }
            file.context_lengths.push_back(trace.context_length);
            file.attention.push_back(step.attention);
        }
    }
    return file;
}

void write_trace_jsonl(std::ostream& out, std::span<const DenoiseTrace> traces) {
    for (const auto& trace : traces) {
        for (std::size_t i = 0; i < trace.steps.size(); ++i) {
            const StepRecord& step = trace.steps[i];
            json j = {{"block", trace.block_index},
                      {"step", step.step},
                      {"method", std::string(to_string(trace.method))},
                      {"context_length", trace.context_length},
                      {"block_size", trace.block_size},
                      {"oracle_k", trace.oracle_k},
                      {"first_planned_layer", trace.first_planned_layer},
                      {"plan", step.plan ? plan_json(*step.plan) : json(nullptr)},
                      {"oracle", step.oracle ? plan_json(*step.oracle) : json(nullptr)},
                      {"coverage_counts", step.coverage_counts},
                      {"unmasked", step.unmasked},
                      {"tokens", step.tokens},
                      {"confidence", step.confidence},
                      {"kv_entries_read", step.kv_entries_read},
                      {"bytes_gathered", step.bytes_gathered},
                      {"exact_layers", step.exact_layers},
                      {"sparse_layers", step.sparse_layers}};
            if (i == 0 && trace.union_stats) {
                j["union_stats"] = union_stats_json(*trace.union_stats);
            }
            out << j.dump() << '\n';
        }
    }
    if (!out) {
        throw DataError("failed to write trace");
    }
}

std::vector<DenoiseTrace> read_trace_jsonl(std::istream& in) {
    std::vector<DenoiseTrace> traces;
    std::string line;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t line_offset = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const json j = json::parse(line);
            const auto block = j.at("block").get<std::size_t>();
            if (traces.empty() || traces.back().block_index != block) {
                DenoiseTrace& t = traces.emplace_back();
                t.block_index = block;
                t.method = parse_method(j.at("method").get<std::string>());
                t.context_length = j.at("context_length").get<std::size_t>();
                t.block_size = j.at("block_size").get<std::size_t>();
                t.oracle_k = j.at("oracle_k").get<std::size_t>();
                t.first_planned_layer = j.at("first_planned_layer").get<std::size_t>();
                if (j.contains("union_stats")) {
                    t.union_stats = union_stats_from_json(j.at("union_stats"));
                }
            }
            DenoiseTrace& trace = traces.back();
            StepRecord step;
            step.step = j.at("step").get<std::size_t>();
            if (step.step != trace.steps.size() + 1) {
                throw ParseError("line " + std::to_string(line_no) + ": step " + std::to_string(step.step) +
                                     " out of order",
                                 line_offset);
            }
            if (!j.at("plan").is_null()) {
                SelectionPlan plan = plan_from_json(j.at("plan"));
                const auto& prev = trace.steps.empty() ? nullptr : trace.steps.back().plan;
                step.plan = (prev && *prev == plan) ? prev : std::make_shared<const SelectionPlan>(std::move(plan));
            }
            if (!j.at("oracle").is_null()) {
                step.oracle = plan_from_json(j.at("oracle"));
            }
            step.coverage_counts = j.at("coverage_counts").get<std::vector<std::vector<std::size_t>>>();
            step.unmasked = j.at("unmasked").get<IndexList>();
            step.tokens = j.at("tokens").get<std::vector<std::size_t>>();
            step.confidence = j.at("confidence").get<std::vector<double>>();
            step.kv_entries_read = j.at("kv_entries_read").get<std::size_t>();
            step.bytes_gathered = j.at("bytes_gathered").get<std::size_t>();
            step.exact_layers = j.at("exact_layers").get<std::size_t>();
            step.sparse_layers = j.at("sparse_layers").get<std::size_t>();
            trace.steps.push_back(std::move(step));
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_offset);
        } catch (const ConfigError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_offset);
        }
    }
    return traces;
}

std::string training_pair_to_json(const TrainingPair& pair) {
    const json j = {{"x0", pair.x0},
                    {"xt", pair.xt},
                    {"masked", pair.masked},
                    {"block_size", pair.block_size},
                    {"mask_ratio", pair.mask_ratio},
                    {"seed", pair.seed},
                    {"truncated", pair.truncated}};
    return j.dump();
}

void write_mask_csv(std::ostream& out, const AttentionMask& mask) {
    for (std::size_t q = 0; q < mask.size; ++q) {
        for (std::size_t k = 0; k < mask.size; ++k) {
            out << (k ? "," : "") << (mask.allowed(q, k) ? '1' : '0');
        }
        out << '\n';
    }
}

}  // namespace mage
