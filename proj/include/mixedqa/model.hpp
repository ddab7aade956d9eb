#ifndef MIXEDQA_MODEL_HPP
#define MIXEDQA_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixedqa/data.hpp"
#include "mixedqa/diffcore.hpp"

namespace mixedqa::model {

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ModelConfig {
    std::size_t vocab_size = 200;
    std::size_t d_emb = 32;
    std::size_t d_hid = 64;

    // [embedding; question vector; product; overlap flag]
    std::size_t feature_dim() const { return 3 * d_emb + 1; }
    bool operator==(const ModelConfig&) const = default;
};

// Shared encoder parameters plus the two head weight vectors, kept as leaf
// autodiff nodes so gradients can be read back per group after backward().
struct ModelParams {
    ModelConfig config;
    diff::NodePtr embedding;    // vocab x d_emb
    diff::NodePtr w1, b1;       // feature_dim x d_hid, d_hid
    diff::NodePtr w2, b2;       // d_hid x d_hid, d_hid
    diff::NodePtr theta_start;  // d_hid
    diff::NodePtr theta_end;    // d_hid
    diff::NodePtr theta_z;      // d_hid

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    std::vector<std::pair<std::string, diff::NodePtr>> named() const;
    ModelParams clone() const;
};

// One hidden matrix [n_p x d_hid] per paragraph.
struct HiddenStates {
    std::vector<diff::NodePtr> per_paragraph;
};

// Factorized span distribution: independent start and end log-probabilities
// over all document token positions, flattened across paragraphs.
struct SpanBelief {
    diff::NodePtr start_logprob;
    diff::NodePtr end_logprob;
    std::vector<std::size_t> paragraph_offsets;  // flat index of each paragraph's first token
    std::vector<std::size_t> paragraph_lengths;

    std::size_t flat_index(std::size_t p, std::size_t t) const {
        return paragraph_offsets[p] + t;
    }
    std::size_t num_positions() const;
};

struct ParagraphBelief {
    diff::NodePtr logprob;  // over M paragraphs
};

struct ScoredSpan {
    data::FineLabel span;
    double score = 0.0;  // start_logprob + end_logprob
};

HiddenStates encode(const ModelParams& params, const data::Example& example);
SpanBelief fine_belief(const ModelParams& params, const data::Example& example);
SpanBelief fine_belief(const ModelParams& params, const HiddenStates& hidden);
ParagraphBelief coarse_belief(const ModelParams& params, const data::Example& example);
ParagraphBelief coarse_belief(const ModelParams& params, const HiddenStates& hidden);

// Argmax over valid spans (within one paragraph, length <= max_span_len),
// ties broken by earliest (paragraph, start, end).
ScoredSpan decode_span(const SpanBelief& belief, const data::Document& doc,
                       std::size_t max_span_len,
                       std::optional<std::size_t> restrict_to = std::nullopt);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& file);
ModelParams load_checkpoint(const std::filesystem::path& file);

}  // namespace mixedqa::model

#endif
