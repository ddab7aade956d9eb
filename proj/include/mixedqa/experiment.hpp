#ifndef MIXEDQA_EXPERIMENT_HPP
#define MIXEDQA_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mixedqa/data.hpp"
#include "mixedqa/eval.hpp"
#include "mixedqa/training.hpp"

namespace mixedqa::experiment {

// Full experiment description: generation, training, sweep and replication.
struct ExperimentConfig {
    data::GenConfig gen;
    training::TrainConfig train;
    std::vector<double> alpha_grid = training::kAlphaGrid;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::vector<std::string> objectives = {"supervised", "mtl", "mml", "pd-xent", "pd-err2"};
    bool with_ceiling = true;
    std::size_t jobs = 1;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& file);
void save_experiment_config(const ExperimentConfig& config, const std::filesystem::path& file);

// One completed (objective, alpha, seed) training cell with test metrics.
struct CellResult {
    std::string objective;  // "ceiling" for the promoted-coarse condition
    double alpha = 0.0;
    std::uint64_t seed = 0;
    double dev_f1 = 0.0;
    double test_fine_f1 = 0.0;
    double test_passage_f1 = 0.0;
    double test_passage_mrr = 0.0;
    eval::PredictiveStats predictive;  // on the coarse split, hidden spans
    std::size_t skipped_projections = 0;
};

struct MethodSummary {
    std::string objective;
    double selected_alpha = 0.0;
    std::vector<double> dev_f1;  // per seed at the selected alpha
    std::vector<double> test_fine_f1;
    std::vector<double> test_passage_f1;
    std::vector<double> test_passage_mrr;
    std::vector<double> entropy, xent_gold, err2_gold, analysis_mrr;
    double gain = 0.0;  // vs. the run's own supervised baseline and ceiling
    bool gain_defined = false;
};

struct ExperimentResult {
    std::vector<CellResult> cells;       // every run, including non-selected alphas
    std::vector<MethodSummary> methods;  // one per objective plus ceiling
};

// Trains every (objective, alpha, seed) cell, selects alpha per objective by
// mean dev F1, evaluates on the test split, and writes the result tables and
// per-run artifacts under out_dir.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const data::DatasetBundle& bundle,
                                const std::filesystem::path& out_dir);

}  // namespace mixedqa::experiment

#endif
