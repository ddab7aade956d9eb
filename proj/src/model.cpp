#include "mixedqa/model.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "mixedqa/rng.hpp"

namespace mixedqa::model {

using namespace mixedqa::diff;

namespace {

Array uniform_init(Rng& rng, std::vector<std::size_t> shape, double bound) {
    Array a = Array::zeros(std::move(shape));
    for (double& v : a.data) v = rng.uniform_real(-bound, bound);
    return a;
}

std::vector<std::size_t> as_indices(const data::TokenSeq& tokens, std::size_t vocab,
                                    const std::string& what) {
    std::vector<std::size_t> idx;
    idx.reserve(tokens.size());
    for (auto t : tokens) {
        if (t >= vocab) throw InputError(what + ": token id out of vocabulary");
        idx.push_back(t);
    }
    return idx;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    const double b = 0.1;
    ModelParams p;
    p.config = config;
    p.embedding = param(uniform_init(rng, {config.vocab_size, config.d_emb}, b));
    p.w1 = param(uniform_init(rng, {config.feature_dim(), config.d_hid}, b));
    p.b1 = param(uniform_init(rng, {config.d_hid}, b));
    p.w2 = param(uniform_init(rng, {config.d_hid, config.d_hid}, b));
    p.b2 = param(uniform_init(rng, {config.d_hid}, b));
    p.theta_start = param(uniform_init(rng, {config.d_hid}, b));
    p.theta_end = param(uniform_init(rng, {config.d_hid}, b));
    p.theta_z = param(uniform_init(rng, {config.d_hid}, b));
    return p;
}

std::vector<std::pair<std::string, NodePtr>> ModelParams::named() const {
    return {{"embedding", embedding}, {"w1", w1},
            {"b1", b1},               {"w2", w2},
            {"b2", b2},               {"theta_start", theta_start},
            {"theta_end", theta_end}, {"theta_z", theta_z}};
}

ModelParams ModelParams::clone() const {
    ModelParams p;
    p.config = config;
    p.embedding = param(embedding->value);
    p.w1 = param(w1->value);
    p.b1 = param(b1->value);
    p.w2 = param(w2->value);
    p.b2 = param(b2->value);
    p.theta_start = param(theta_start->value);
    p.theta_end = param(theta_end->value);
    p.theta_z = param(theta_z->value);
    return p;
}

HiddenStates encode(const ModelParams& params, const data::Example& example) {
    const ModelConfig& cfg = params.config;
    auto q_idx = as_indices(example.question, cfg.vocab_size, "question");
    if (q_idx.empty()) throw InputError("question must be nonempty");

    NodePtr q_emb = gather_rows(params.embedding, q_idx);
    NodePtr q_vec = scale(sum_rows(q_emb), 1.0 / static_cast<double>(q_idx.size()));

    std::unordered_set<std::uint32_t> q_tokens(example.question.begin(), example.question.end());

    HiddenStates hidden;
    for (const auto& par : example.document.paragraphs) {
        auto t_idx = as_indices(par, cfg.vocab_size, "paragraph");
        if (t_idx.empty()) throw InputError("paragraph must be nonempty");
        std::size_t n = t_idx.size();

        NodePtr emb = gather_rows(params.embedding, t_idx);
        NodePtr q_tiled = tile_rows(q_vec, n);
        NodePtr prod = mul(emb, q_tiled);
        Array overlap = Array::zeros({n, 1});
        for (std::size_t i = 0; i < n; ++i)
            overlap.data[i] = q_tokens.count(par[i]) ? 1.0 : 0.0;

        NodePtr feats = concat_cols({emb, q_tiled, prod, constant(std::move(overlap))});
        NodePtr h1 = tanh_(add(matmul(feats, params.w1), tile_rows(params.b1, n)));
        NodePtr h2 = tanh_(add(matmul(h1, params.w2), tile_rows(params.b2, n)));
        hidden.per_paragraph.push_back(h2);
    }
    return hidden;
}

std::size_t SpanBelief::num_positions() const {
    return paragraph_offsets.empty()
               ? 0
               : paragraph_offsets.back() + paragraph_lengths.back();
}

SpanBelief fine_belief(const ModelParams& params, const HiddenStates& hidden) {
    SpanBelief belief;
    std::vector<NodePtr> start_parts, end_parts;
    std::size_t off = 0;
    for (const auto& h : hidden.per_paragraph) {
        std::size_t n = h->value.rows();
        belief.paragraph_offsets.push_back(off);
        belief.paragraph_lengths.push_back(n);
        off += n;
        start_parts.push_back(matvec(h, params.theta_start));
        end_parts.push_back(matvec(h, params.theta_end));
    }
    belief.start_logprob = log_softmax(concat(start_parts));
    belief.end_logprob = log_softmax(concat(end_parts));
    return belief;
}

SpanBelief fine_belief(const ModelParams& params, const data::Example& example) {
    return fine_belief(params, encode(params, example));
}

ParagraphBelief coarse_belief(const ModelParams& params, const HiddenStates& hidden) {
    std::vector<NodePtr> scores;
    for (const auto& h : hidden.per_paragraph)
        scores.push_back(dot(max_pool_rows(h), params.theta_z));
    return ParagraphBelief{log_softmax(concat(scores))};
}

ParagraphBelief coarse_belief(const ModelParams& params, const data::Example& example) {
    return coarse_belief(params, encode(params, example));
}

ScoredSpan decode_span(const SpanBelief& belief, const data::Document& doc,
                       std::size_t max_span_len, std::optional<std::size_t> restrict_to) {
    if (max_span_len == 0) throw InputError("decode_span: max_span_len must be >= 1");
    const Array& slp = belief.start_logprob->value;
    const Array& elp = belief.end_logprob->value;

    bool found = false;
    ScoredSpan best;
    for (std::size_t p = 0; p < doc.num_paragraphs(); ++p) {
        if (restrict_to && *restrict_to != p) continue;
        std::size_t n = doc.paragraphs[p].size();
        std::size_t off = belief.paragraph_offsets[p];
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t e = s; e < n && e - s < max_span_len; ++e) {
                double score = slp.data[off + s] + elp.data[off + e];
                if (!found || score > best.score) {  // strict: ties keep the earliest span
                    best = ScoredSpan{data::FineLabel{p, s, e}, score};
                    found = true;
                }
            }
    }
    if (!found) throw InputError("decode_span: no valid span");
    return best;
}

namespace {

constexpr const char* kCheckpointMagic = "mixedqa-checkpoint v1";

void write_array(std::ofstream& out, const std::string& name, const Array& a) {
    out << name;
    for (std::size_t d : a.shape) out << " " << d;
    out << "\n";
    char buf[40];
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", a.data[i]);
        out << buf << (i + 1 == a.size() ? "\n" : " ");
    }
}

Array read_array(std::ifstream& in, const std::string& expected_name) {
    std::string name;
    if (!(in >> name) || name != expected_name)
        throw InputError("checkpoint: expected array '" + expected_name + "'");
    std::string rest;
    std::getline(in, rest);
    std::vector<std::size_t> shape;
    {
        std::istringstream ss(rest);
        std::size_t d;
        while (ss >> d) shape.push_back(d);
    }
    Array a = Array::zeros(shape);
    for (double& v : a.data)
        if (!(in >> v)) throw InputError("checkpoint: truncated array '" + expected_name + "'");
    return a;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InputError("cannot open " + file.string() + " for writing");
    out << kCheckpointMagic << "\n";
    out << "config " << params.config.vocab_size << " " << params.config.d_emb << " "
        << params.config.d_hid << "\n";
    for (const auto& [name, node] : params.named()) write_array(out, name, node->value);
}

ModelParams load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InputError("cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    if (line != kCheckpointMagic) throw InputError("checkpoint: bad magic line");
    std::string word;
    ModelConfig cfg;
    if (!(in >> word >> cfg.vocab_size >> cfg.d_emb >> cfg.d_hid) || word != "config")
        throw InputError("checkpoint: bad config line");

    ModelParams p;
    p.config = cfg;
    p.embedding = param(read_array(in, "embedding"));
    p.w1 = param(read_array(in, "w1"));
    p.b1 = param(read_array(in, "b1"));
    p.w2 = param(read_array(in, "w2"));
    p.b2 = param(read_array(in, "b2"));
    p.theta_start = param(read_array(in, "theta_start"));
    p.theta_end = param(read_array(in, "theta_end"));
    p.theta_z = param(read_array(in, "theta_z"));
    return p;
}

}  // namespace mixedqa::model
