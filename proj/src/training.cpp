#include "mixedqa/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mixedqa/eval.hpp"
#include <json.hpp>

namespace mixedqa::training {

using diff::Array;

const std::vector<double> kAlphaGrid = {0.01, 0.1, 0.5, 1.0, 5.0, 10.0, 100.0};

namespace {

// RNG stream ids derived from the master seed.
enum Stream : std::uint64_t {
    kStreamInit = 0,
    kStreamFineOrder = 1,
    kStreamCoarseOrder = 2,
    kStreamSubsample = 3,
};

// Epoch-shuffled cyclic batch iterator.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_);
    }

    std::vector<std::size_t> next(std::size_t batch_size) {
        std::vector<std::size_t> batch;
        for (std::size_t i = 0; i < batch_size; ++i) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            batch.push_back(order_[pos_++]);
        }
        return batch;
    }

private:
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

bool all_finite(const Array& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

void TrainConfig::validate() const {
    if (fine_batch_size == 0 || coarse_batch_size == 0)
        throw data::ConfigError("batch sizes must be >= 1");
    if (paragraphs_sampled_per_example == 0)
        throw data::ConfigError("paragraphs_sampled_per_example must be >= 1");
    if (patience == 0) throw data::ConfigError("patience must be >= 1");
    if (max_span_len == 0) throw data::ConfigError("max_span_len must be >= 1");
    if (eval_every == 0) throw data::ConfigError("eval_every must be >= 1");
    if (alpha_z < 0.0) throw data::ConfigError("alpha_z must be >= 0");
    if (rho <= 0.0 || rho >= 1.0) throw data::ConfigError("rho must be in (0,1)");
    if (epsilon <= 0.0) throw data::ConfigError("epsilon must be > 0");
}

OptimizerState OptimizerState::init(const model::ModelParams& params) {
    OptimizerState s;
    for (const auto& [name, node] : params.named()) {
        s.grad_sq.push_back(Array::zeros(node->value.shape));
        s.delta_sq.push_back(Array::zeros(node->value.shape));
    }
    return s;
}

void adadelta_step(model::ModelParams& params, const diff::Gradients& grads,
                   OptimizerState& state, double rho, double epsilon) {
    auto named = params.named();
    for (std::size_t k = 0; k < named.size(); ++k) {
        Array g = grads.of(named[k].second);
        if (!all_finite(g))
            throw NumericalError("non-finite gradient in parameter group " + named[k].first, 0);
        Array& eg2 = state.grad_sq[k];
        Array& edx2 = state.delta_sq[k];
        Array& value = named[k].second->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double gi = g.data[i];
            eg2.data[i] = rho * eg2.data[i] + (1.0 - rho) * gi * gi;
            double dx = -std::sqrt(edx2.data[i] + epsilon) / std::sqrt(eg2.data[i] + epsilon) * gi;
            edx2.data[i] = rho * edx2.data[i] + (1.0 - rho) * dx * dx;
            value.data[i] += dx;
        }
    }
}

void sgd_step(model::ModelParams& params, const diff::Gradients& grads, double lr) {
    for (const auto& [name, node] : params.named()) {
        Array g = grads.of(node);
        for (std::size_t i = 0; i < g.size(); ++i) node->value.data[i] -= lr * g.data[i];
    }
}

data::Example subsample_paragraphs(const data::Example& example, std::size_t k, Rng& rng) {
    std::size_t m = example.document.num_paragraphs();
    if (m <= k) return example;

    std::size_t labeled = example.labeled_paragraph();
    std::vector<std::size_t> others;
    for (std::size_t p = 0; p < m; ++p)
        if (p != labeled) others.push_back(p);
    rng.shuffle(others);
    others.resize(k - 1);

    std::vector<std::size_t> keep = others;
    keep.push_back(labeled);
    std::sort(keep.begin(), keep.end());

    data::Document doc;
    std::size_t new_labeled = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] == labeled) new_labeled = i;
        doc.paragraphs.push_back(example.document.paragraphs[keep[i]]);
    }

    data::Label label;
    if (example.is_fine()) {
        data::FineLabel f = example.fine();
        f.a_p = new_labeled;
        label = f;
    } else {
        label = data::CoarseLabel{new_labeled};
    }
    return data::Example(example.id, example.question, std::move(doc), std::move(label));
}

TrainResult train(const TrainConfig& config, const data::DatasetBundle& bundle) {
    config.validate();
    if (bundle.fine_train.empty()) throw data::ConfigError("train: empty fine split");
    bool use_coarse = config.objective.uses_coarse() && config.alpha_z != 0.0;
    if (use_coarse && bundle.coarse_train.empty())
        throw data::ConfigError("train: objective needs a coarse split");

    auto t0 = std::chrono::steady_clock::now();

    model::ModelParams params =
        model::ModelParams::init(config.model, Rng::derive(config.seed, kStreamInit));
    OptimizerState opt = OptimizerState::init(params);
    BatchSampler fine_sampler(bundle.fine_train.size(), Rng::derive(config.seed, kStreamFineOrder));
    BatchSampler coarse_sampler(std::max<std::size_t>(bundle.coarse_train.size(), 1),
                                Rng::derive(config.seed, kStreamCoarseOrder));
    Rng subsample_rng(Rng::derive(config.seed, kStreamSubsample));

    objectives::LossConfig loss_config{config.objective, config.alpha_z, config.max_span_len,
                                       config.pd_joint_squared_error};

    TrainResult result;
    result.record.config = config;
    result.best_params = params.clone();
    result.record.best_dev_f1 = -1.0;
    std::size_t evals_since_best = 0;

    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        std::vector<data::Example> fine_batch;
        for (std::size_t i : fine_sampler.next(config.fine_batch_size))
            fine_batch.push_back(subsample_paragraphs(
                bundle.fine_train[i], config.paragraphs_sampled_per_example, subsample_rng));

        std::vector<data::Example> coarse_batch;
        if (use_coarse)
            for (std::size_t i : coarse_sampler.next(config.coarse_batch_size))
                coarse_batch.push_back(subsample_paragraphs(
                    bundle.coarse_train[i], config.paragraphs_sampled_per_example, subsample_rng));

        objectives::CombinedLossResult loss =
            objectives::combined_loss(params, fine_batch, coarse_batch, loss_config);
        result.record.skipped_projections += loss.skipped_coarse;
        if (!std::isfinite(loss.loss->value.data[0]))
            throw NumericalError("non-finite training loss", step);

        diff::Gradients grads = diff::backward(loss.loss);
        try {
            adadelta_step(params, grads, opt, config.rho, config.epsilon);
        } catch (const NumericalError& e) {
            throw NumericalError(e.what(), step);
        }

        if (step % config.eval_every == 0 || step == config.max_steps) {
            double dev_f1 = eval::evaluate_fine(params, bundle.dev_fine, config.max_span_len);
            result.record.history.push_back(
                EvalPoint{step, dev_f1, loss.fine_term, loss.coarse_term});
            if (dev_f1 > result.record.best_dev_f1) {
                result.record.best_dev_f1 = dev_f1;
                result.record.best_step = step;
                result.best_params = params.clone();
                evals_since_best = 0;
            } else if (++evals_since_best >= config.patience) {
                break;
            }
            if (step == config.max_steps) break;
        }
    }

    result.record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

SweepResult sweep(const TrainConfig& base, const std::vector<double>& alpha_grid,
                  const data::DatasetBundle& bundle) {
    if (alpha_grid.empty()) throw data::ConfigError("sweep: empty alpha grid");
    SweepResult result;
    bool have_best = false;
    for (double alpha : alpha_grid) {
        TrainConfig config = base;
        config.alpha_z = alpha;
        TrainResult run = train(config, bundle);
        result.dev_f1_by_alpha.emplace_back(alpha, run.record.best_dev_f1);
        // strict improvement only: ties keep the smaller alpha seen first
        if (!have_best || run.record.best_dev_f1 > result.best.record.best_dev_f1) {
            result.best = std::move(run);
            result.best_alpha = alpha;
            have_best = true;
        }
    }
    return result;
}

void save_run_record(const RunRecord& record, const std::filesystem::path& report_file,
                     const std::filesystem::path& summary_file) {
    std::ofstream out(report_file, std::ios::binary);
    if (!out) throw data::ParseError("cannot open " + report_file.string() + " for writing");
    out << "# step dev_fine_f1 fine_loss coarse_loss\n";
    char buf[128];
    for (const EvalPoint& p : record.history) {
        std::snprintf(buf, sizeof(buf), "%zu %.6f %.6f %.6f\n", p.step, p.dev_fine_f1,
                      p.fine_loss, p.coarse_loss);
        out << buf;
    }

    nlohmann::json j{{"objective", record.config.objective.name()},
                     {"alpha_z", record.config.alpha_z},
                     {"seed", record.config.seed},
                     {"best_step", record.best_step},
                     {"best_dev_f1", record.best_dev_f1},
                     {"skipped_projections", record.skipped_projections}};
    // wall_seconds stays in memory only: serialized outputs must be
    // byte-stable across reruns.
    nlohmann::json hist = nlohmann::json::array();
    for (const EvalPoint& p : record.history)
        hist.push_back({{"step", p.step},
                        {"dev_fine_f1", p.dev_fine_f1},
                        {"fine_loss", p.fine_loss},
                        {"coarse_loss", p.coarse_loss}});
    j["history"] = std::move(hist);
    std::ofstream js(summary_file, std::ios::binary);
    if (!js) throw data::ParseError("cannot open " + summary_file.string() + " for writing");
    js << j.dump(2) << "\n";
}

}  // namespace mixedqa::training
