#ifndef MIXEDQA_OBJECTIVES_HPP
#define MIXEDQA_OBJECTIVES_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixedqa/data.hpp"
#include "mixedqa/diffcore.hpp"
#include "mixedqa/model.hpp"

namespace mixedqa::objectives {

struct DegenerateProjection : std::runtime_error {
    explicit DegenerateProjection(const std::string& msg) : std::runtime_error(msg) {}
};

enum class DistanceKind { cross_entropy, squared_error };

enum class ObjectiveKind { supervised, mtl, mml, pd };

struct Objective {
    ObjectiveKind kind = ObjectiveKind::supervised;
    DistanceKind distance = DistanceKind::cross_entropy;  // meaningful for pd only

    bool uses_coarse() const { return kind != ObjectiveKind::supervised; }
    std::string name() const;
    static Objective parse(const std::string& name);
};

// Teacher distribution: the detached span belief restricted to one paragraph
// and renormalized per factor. Zero probability outside the paragraph.
struct ProjectedBelief {
    diff::Array start_prob;  // over all document positions
    diff::Array end_prob;
    std::size_t paragraph = 0;
};

diff::NodePtr supervised_loss(const model::SpanBelief& belief, const data::Example& example);
diff::NodePtr coarse_nll(const model::ParagraphBelief& belief, const data::Example& example);

// P(z|x): total probability of valid spans within paragraph z.a_p, computed
// through the factorized prefix-sum identity.
diff::NodePtr paragraph_marginal(const model::SpanBelief& belief, const data::Document& doc,
                                 const data::CoarseLabel& z, std::size_t max_span_len);

diff::NodePtr mml_loss(const model::SpanBelief& belief, const data::Document& doc,
                       const data::CoarseLabel& z, std::size_t max_span_len);

ProjectedBelief project(const model::SpanBelief& belief, const data::CoarseLabel& z,
                        const data::Document& doc);

// Per-factor distance between the projected teacher and the student belief.
diff::NodePtr pd_loss(const model::SpanBelief& belief, const data::Example& example,
                      DistanceKind distance, bool joint_squared_error = false,
                      std::size_t max_span_len = 10);

struct CombinedLossResult {
    diff::NodePtr loss;
    double fine_term = 0.0;    // mean supervised loss over the fine batch
    double coarse_term = 0.0;  // mean coarse loss before the alpha weight
    std::size_t skipped_coarse = 0;  // degenerate projections skipped
};

struct LossConfig {
    Objective objective;
    double alpha_z = 1.0;
    std::size_t max_span_len = 10;
    bool pd_joint_squared_error = false;
};

// Mean fine loss plus alpha_z times the mean coarse term, where the coarse
// term depends on the objective. With alpha_z == 0 or a supervised objective
// the coarse batch is not touched at all.
CombinedLossResult combined_loss(const model::ModelParams& params,
                                 std::span<const data::Example> fine_batch,
                                 std::span<const data::Example> coarse_batch,
                                 const LossConfig& config);

}  // namespace mixedqa::objectives

#endif
