#ifndef MIXEDQA_TRAINING_HPP
#define MIXEDQA_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mixedqa/data.hpp"
#include "mixedqa/model.hpp"
#include "mixedqa/objectives.hpp"
#include "mixedqa/rng.hpp"

namespace mixedqa::training {

struct NumericalError : std::runtime_error {
    std::size_t step;
    NumericalError(const std::string& msg, std::size_t step_)
        : std::runtime_error(msg), step(step_) {}
};

struct TrainConfig {
    objectives::Objective objective;
    double alpha_z = 1.0;
    std::size_t fine_batch_size = 16;
    std::size_t coarse_batch_size = 16;
    std::size_t paragraphs_sampled_per_example = 8;
    std::size_t max_steps = 2000;
    std::size_t eval_every = 100;
    std::size_t patience = 5;  // dev evaluations without improvement
    std::size_t max_span_len = 10;
    bool pd_joint_squared_error = false;
    double rho = 0.95;
    double epsilon = 1e-6;
    std::uint64_t seed = 1;

    model::ModelConfig model;

    void validate() const;
};

struct EvalPoint {
    std::size_t step = 0;
    double dev_fine_f1 = 0.0;
    double fine_loss = 0.0;
    double coarse_loss = 0.0;
};

struct RunRecord {
    TrainConfig config;
    std::vector<EvalPoint> history;
    std::size_t best_step = 0;
    double best_dev_f1 = 0.0;
    std::size_t skipped_projections = 0;
    double wall_seconds = 0.0;
};

void save_run_record(const RunRecord& record, const std::filesystem::path& report_file,
                     const std::filesystem::path& summary_file);

// Per-parameter accumulators E[g^2] and E[dx^2].
struct OptimizerState {
    std::vector<diff::Array> grad_sq;
    std::vector<diff::Array> delta_sq;

    static OptimizerState init(const model::ModelParams& params);
};

void adadelta_step(model::ModelParams& params, const diff::Gradients& grads,
                   OptimizerState& state, double rho, double epsilon);

// Plain gradient descent, debug-only path for step-size sanity checks.
void sgd_step(model::ModelParams& params, const diff::Gradients& grads, double lr);

// Keeps the labeled paragraph plus k-1 distinct others (all, if M <= k);
// label indices remapped, original paragraph order preserved.
data::Example subsample_paragraphs(const data::Example& example, std::size_t k, Rng& rng);

struct TrainResult {
    model::ModelParams best_params;
    RunRecord record;
};

TrainResult train(const TrainConfig& config, const data::DatasetBundle& bundle);

struct SweepResult {
    double best_alpha = 0.0;
    TrainResult best;
    std::vector<std::pair<double, double>> dev_f1_by_alpha;
};

// The canonical coarse-weight grid swept for every coarse-using method.
extern const std::vector<double> kAlphaGrid;

// One run per alpha value, selected by dev fine F1; ties go to the smaller alpha.
SweepResult sweep(const TrainConfig& base, const std::vector<double>& alpha_grid,
                  const data::DatasetBundle& bundle);

}  // namespace mixedqa::training

#endif
