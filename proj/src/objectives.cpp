#include "mixedqa/objectives.hpp"

#include <cmath>
#include <limits>

namespace mixedqa::objectives {

using namespace mixedqa::diff;
using mixedqa::model::SpanBelief;

namespace {

constexpr double kMarginalFloor = 1e-30;

void check_fine_label(const SpanBelief& belief, const data::Example& example) {
    const data::FineLabel& f = example.fine();
    if (f.a_p >= belief.paragraph_lengths.size() ||
        f.a_end >= belief.paragraph_lengths[f.a_p] || f.a_start > f.a_end)
        throw model::InputError("fine label out of range for example " + example.id);
}

NodePtr mean_of(const std::vector<NodePtr>& losses) {
    NodePtr total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
    return scale(total, 1.0 / static_cast<double>(losses.size()));
}

// Per-factor distance between a fixed teacher and the student factor.
NodePtr factor_distance(const Array& teacher, const NodePtr& logprob, DistanceKind distance) {
    if (distance == DistanceKind::cross_entropy)
        return scale(sum(mul(constant(teacher), logprob)), -1.0);
    NodePtr p = exp_(logprob);
    return sum(square(sub(constant(teacher), p)));
}

}  // namespace

std::string Objective::name() const {
    switch (kind) {
        case ObjectiveKind::supervised: return "supervised";
        case ObjectiveKind::mtl: return "mtl";
        case ObjectiveKind::mml: return "mml";
        case ObjectiveKind::pd:
            return distance == DistanceKind::cross_entropy ? "pd-xent" : "pd-err2";
    }
    return "?";
}

Objective Objective::parse(const std::string& name) {
    if (name == "supervised") return {ObjectiveKind::supervised, {}};
    if (name == "mtl") return {ObjectiveKind::mtl, {}};
    if (name == "mml") return {ObjectiveKind::mml, {}};
    if (name == "pd-xent") return {ObjectiveKind::pd, DistanceKind::cross_entropy};
    if (name == "pd-err2") return {ObjectiveKind::pd, DistanceKind::squared_error};
    throw data::ConfigError("unknown objective '" + name + "'");
}

NodePtr supervised_loss(const SpanBelief& belief, const data::Example& example) {
    check_fine_label(belief, example);
    const data::FineLabel& f = example.fine();
    NodePtr lp_start = pick(belief.start_logprob, belief.flat_index(f.a_p, f.a_start));
    NodePtr lp_end = pick(belief.end_logprob, belief.flat_index(f.a_p, f.a_end));
    return scale(add(lp_start, lp_end), -1.0);
}

NodePtr coarse_nll(const model::ParagraphBelief& belief, const data::Example& example) {
    std::size_t p = example.labeled_paragraph();
    if (p >= belief.logprob->value.size())
        throw model::InputError("coarse label out of range for example " + example.id);
    return scale(pick(belief.logprob, p), -1.0);
}

NodePtr paragraph_marginal(const SpanBelief& belief, const data::Document& doc,
                           const data::CoarseLabel& z, std::size_t max_span_len) {
    if (z.a_p >= doc.num_paragraphs())
        throw model::InputError("paragraph_marginal: paragraph index out of range");
    std::size_t off = belief.paragraph_offsets[z.a_p];
    std::size_t n = belief.paragraph_lengths[z.a_p];
    NodePtr p_start = exp_(slice(belief.start_logprob, off, off + n));
    NodePtr p_end = exp_(slice(belief.end_logprob, off, off + n));
    return pair_window_sum(p_start, p_end, max_span_len);
}

NodePtr mml_loss(const SpanBelief& belief, const data::Document& doc, const data::CoarseLabel& z,
                 std::size_t max_span_len) {
    NodePtr marginal = paragraph_marginal(belief, doc, z, max_span_len);
    return scale(log_(clamp_min(marginal, kMarginalFloor)), -1.0);
}

ProjectedBelief project(const SpanBelief& belief, const data::CoarseLabel& z,
                        const data::Document& doc) {
    if (z.a_p >= doc.num_paragraphs())
        throw model::InputError("project: paragraph index out of range");
    std::size_t off = belief.paragraph_offsets[z.a_p];
    std::size_t n = belief.paragraph_lengths[z.a_p];

    ProjectedBelief out;
    out.paragraph = z.a_p;
    const Array* factors[] = {&belief.start_logprob->value, &belief.end_logprob->value};
    Array* probs[] = {&out.start_prob, &out.end_prob};
    for (int f = 0; f < 2; ++f) {
        const Array& lp = *factors[f];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, lp.data[off + i]);
        // All in-paragraph positions masked: no mass to renormalize.
        if (mx <= kMaskedLogProb / 2)
            throw DegenerateProjection("zero in-paragraph mass in factor " +
                                       std::to_string(f));
        double zsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) zsum += std::exp(lp.data[off + i] - mx);
        *probs[f] = Array::zeros({lp.size()});
        for (std::size_t i = 0; i < n; ++i)
            probs[f]->data[off + i] = std::exp(lp.data[off + i] - mx) / zsum;
    }
    return out;
}

NodePtr pd_loss(const SpanBelief& belief, const data::Example& example, DistanceKind distance,
                bool joint_squared_error, std::size_t max_span_len) {
    const data::CoarseLabel& z = std::get<data::CoarseLabel>(example.label);
    ProjectedBelief teacher = project(belief, z, example.document);

    if (distance == DistanceKind::squared_error && joint_squared_error) {
        // Distance over the joint span space instead of per factor. Teacher is
        // the jointly renormalized product restricted to valid in-paragraph
        // spans; the student joint is the unnormalized factor product.
        std::vector<std::size_t> sidx, eidx;
        std::vector<double> q;
        double qz = 0.0;
        const Array& slp = belief.start_logprob->value;
        const Array& elp = belief.end_logprob->value;
        for (std::size_t p = 0; p < example.document.num_paragraphs(); ++p) {
            std::size_t off = belief.paragraph_offsets[p];
            std::size_t n = belief.paragraph_lengths[p];
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t e = s; e < n && e - s < max_span_len; ++e) {
                    sidx.push_back(off + s);
                    eidx.push_back(off + e);
                    double joint = 0.0;
                    if (p == z.a_p) joint = std::exp(slp.data[off + s] + elp.data[off + e]);
                    q.push_back(joint);
                    if (p == z.a_p) qz += joint;
                }
        }
        if (qz <= 0.0) throw DegenerateProjection("zero in-paragraph joint mass");
        for (double& v : q) v /= qz;
        NodePtr student =
            exp_(add(gather(belief.start_logprob, sidx), gather(belief.end_logprob, eidx)));
        return sum(square(sub(constant(Array::vec(std::move(q))), student)));
    }

    NodePtr start_term = factor_distance(teacher.start_prob, belief.start_logprob, distance);
    NodePtr end_term = factor_distance(teacher.end_prob, belief.end_logprob, distance);
    return add(start_term, end_term);
}

CombinedLossResult combined_loss(const model::ModelParams& params,
                                 std::span<const data::Example> fine_batch,
                                 std::span<const data::Example> coarse_batch,
                                 const LossConfig& config) {
    if (fine_batch.empty()) throw ContractError("combined_loss: fine batch must be nonempty");

    CombinedLossResult result;
    std::vector<NodePtr> fine_losses;
    for (const data::Example& ex : fine_batch)
        fine_losses.push_back(supervised_loss(model::fine_belief(params, ex), ex));
    NodePtr fine_mean = mean_of(fine_losses);
    result.fine_term = fine_mean->value.data[0];

    bool use_coarse = config.objective.uses_coarse() && config.alpha_z != 0.0;
    if (!use_coarse) {
        result.loss = fine_mean;
        return result;
    }
    if (coarse_batch.empty()) throw ContractError("combined_loss: coarse batch must be nonempty");

    std::vector<NodePtr> coarse_losses;
    for (const data::Example& ex : coarse_batch) {
        switch (config.objective.kind) {
            case ObjectiveKind::mtl:
                coarse_losses.push_back(coarse_nll(model::coarse_belief(params, ex), ex));
                break;
            case ObjectiveKind::mml:
                coarse_losses.push_back(mml_loss(model::fine_belief(params, ex),
                                                 ex.document, std::get<data::CoarseLabel>(ex.label),
                                                 config.max_span_len));
                break;
            case ObjectiveKind::pd:
                try {
                    coarse_losses.push_back(pd_loss(model::fine_belief(params, ex), ex,
                                                    config.objective.distance,
                                                    config.pd_joint_squared_error,
                                                    config.max_span_len));
                } catch (const DegenerateProjection&) {
                    ++result.skipped_coarse;
                }
                break;
            case ObjectiveKind::supervised:
                break;  // unreachable: uses_coarse() is false
        }
    }
    if (coarse_losses.empty()) {
        result.loss = fine_mean;
        return result;
    }
    NodePtr coarse_mean = mean_of(coarse_losses);
    result.coarse_term = coarse_mean->value.data[0];
    result.loss = add(fine_mean, scale(coarse_mean, config.alpha_z));
    return result;
}

}  // namespace mixedqa::objectives
