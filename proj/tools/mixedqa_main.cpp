// Command-line driver: data generation, training, the full experiment grid,
// predictive-distribution analysis, and report regeneration.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mixedqa/data.hpp"
#include "mixedqa/eval.hpp"
#include "mixedqa/experiment.hpp"
#include "mixedqa/model.hpp"
#include "mixedqa/training.hpp"
#include <CLI11.hpp>
#include <json.hpp>

namespace {

namespace fs = std::filesystem;
using namespace mixedqa;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    experiment::ExperimentConfig config = experiment::load_experiment_config(config_path);
    fs::create_directories(out_dir);
    data::DatasetBundle bundle = data::generate(config.gen);
    data::save(bundle, out_dir);
    experiment::save_experiment_config(config, fs::path(out_dir) / "manifest.json");
    std::cout << "wrote dataset: " << bundle.fine_train.size() << " fine / "
              << bundle.coarse_train.size() << " coarse / " << bundle.dev_fine.size()
              << " dev / " << bundle.test_fine.size() << " test examples\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& objective_flag, double alpha_flag,
              std::int64_t seed_flag) {
    experiment::ExperimentConfig config = experiment::load_experiment_config(config_path);
    // Flag overrides beat the file config.
    if (!objective_flag.empty())
        config.train.objective = objectives::Objective::parse(objective_flag);
    if (alpha_flag >= 0.0) config.train.alpha_z = alpha_flag;
    if (seed_flag >= 0) config.train.seed = static_cast<std::uint64_t>(seed_flag);
    config.train.validate();

    data::DatasetBundle bundle = data::load(data_dir);
    config.train.model.vocab_size = bundle.config.vocab_size;
    fs::create_directories(out_dir);
    experiment::save_experiment_config(config, fs::path(out_dir) / "resolved_config.json");

    if (!config.train.objective.uses_coarse())
        std::cout << "objective " << config.train.objective.name()
                  << ": coarse split ignored\n";

    training::TrainResult run = training::train(config.train, bundle);
    training::save_run_record(run.record, fs::path(out_dir) / "record.txt",
                              fs::path(out_dir) / "summary.json");
    model::save_checkpoint(run.best_params, fs::path(out_dir) / "checkpoint.txt");
    std::printf("best dev Fine-F1 %.4f at step %zu (%.1fs)\n", run.record.best_dev_f1,
                run.record.best_step, run.record.wall_seconds);
    return kExitOk;
}

int cmd_experiment(const std::string& config_path, const std::string& data_dir,
                   const std::string& out_dir, std::int64_t jobs_flag) {
    experiment::ExperimentConfig config = experiment::load_experiment_config(config_path);
    if (jobs_flag > 0) config.jobs = static_cast<std::size_t>(jobs_flag);
    data::DatasetBundle bundle = data::load(data_dir);
    config.train.model.vocab_size = bundle.config.vocab_size;
    fs::create_directories(out_dir);
    experiment::save_experiment_config(config, fs::path(out_dir) / "resolved_config.json");

    experiment::ExperimentResult result = experiment::run_experiment(config, bundle, out_dir);
    for (const auto& m : result.methods) {
        std::printf("%-10s alpha=%-6g test Fine-F1 %.4f", m.objective.c_str(),
                    m.selected_alpha, eval::mean(m.test_fine_f1));
        if (m.gain_defined) std::printf("  gain %.3f", m.gain);
        std::printf("\n");
    }
    std::cout << "tables written to " << out_dir << "\n";
    return kExitOk;
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& data_dir,
                const std::string& out_dir, std::size_t max_span_len) {
    model::ModelParams params = model::load_checkpoint(checkpoint_path);
    data::DatasetBundle bundle = data::load(data_dir);
    if (params.config.vocab_size != bundle.config.vocab_size)
        throw data::ConfigError("checkpoint vocabulary does not match the dataset");
    if (bundle.coarse_train.empty())
        throw data::ConfigError("analyze: dataset has no coarse split");

    eval::PredictiveStats stats =
        eval::analyze_predictive(params, bundle.coarse_train, max_span_len);
    fs::create_directories(out_dir);
    eval::ReportRow row;
    row.data_condition = "coarse_train";
    row.model = "checkpoint";
    row.metrics = {{"Entropy", {stats.entropy}},
                   {"xent-Gold", {stats.xent_gold}},
                   {"err2-Gold", {stats.err2_gold}},
                   {"Passage-MRR", {stats.passage_mrr}}};
    eval::write_report({row}, fs::path(out_dir) / "analysis.txt",
                       fs::path(out_dir) / "analysis.json");
    std::printf("entropy %.4f  xent-Gold %.4f  err2-Gold %.4f  Passage-MRR %.4f  (n=%zu)\n",
                stats.entropy, stats.xent_gold, stats.err2_gold, stats.passage_mrr,
                stats.n_examples);
    return kExitOk;
}

int cmd_report(const std::string& summary_path, const std::string& out_path) {
    std::ifstream in(summary_path, std::ios::binary);
    if (!in) throw data::ConfigError("cannot open " + summary_path);
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw data::ParseError(summary_path + ": " + e.what());
    }
    std::vector<eval::ReportRow> rows;
    for (const auto& r : j) {
        eval::ReportRow row;
        row.data_condition = r.at("data_condition").get<std::string>();
        row.model = r.at("model").get<std::string>();
        for (const auto& [name, m] : r.at("metrics").items())
            row.metrics.emplace_back(name, m.at("per_seed").get<std::vector<double>>());
        rows.push_back(std::move(row));
    }
    fs::path tmp_json = fs::path(out_path).string() + ".json";
    eval::write_report(rows, out_path, tmp_json);
    std::cout << "wrote " << out_path << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixedqa: span selection from mixed fine/coarse supervision"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string config_path, data_dir, out_dir, objective_flag, checkpoint_path, summary_path,
        out_path;
    double alpha_flag = -1.0;
    std::int64_t seed_flag = -1, jobs_flag = -1;
    std::size_t max_span_len = 10;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--config", config_path, "experiment config file (JSON)")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a single model");
    train->add_option("--config", config_path)->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_dir)->required();
    train->add_option("--objective", objective_flag,
                      "supervised | mtl | mml | pd-xent | pd-err2 (overrides config file)");
    train->add_option("--alpha", alpha_flag, "coarse loss weight (overrides config file)");
    train->add_option("--seed", seed_flag, "training seed (overrides config file)");

    auto* exp = app.add_subcommand("experiment", "full grid: objectives x alpha x seeds");
    exp->add_option("--config", config_path)->required();
    exp->add_option("--data", data_dir)->required();
    exp->add_option("--out", out_dir)->required();
    exp->add_option("--jobs", jobs_flag, "concurrent training cells (overrides config file)");

    auto* analyze = app.add_subcommand("analyze", "predictive-distribution analysis");
    analyze->add_option("--checkpoint", checkpoint_path)->required();
    analyze->add_option("--data", data_dir)->required();
    analyze->add_option("--out", out_dir)->required();
    analyze->add_option("--max-span-len", max_span_len);

    auto* report = app.add_subcommand("report", "render a text table from a JSON summary");
    report->add_option("--summary", summary_path)->required();
    report->add_option("--out", out_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_dir);
        if (train->parsed())
            return cmd_train(config_path, data_dir, out_dir, objective_flag, alpha_flag,
                             seed_flag);
        if (exp->parsed()) return cmd_experiment(config_path, data_dir, out_dir, jobs_flag);
        if (analyze->parsed())
            return cmd_analyze(checkpoint_path, data_dir, out_dir, max_span_len);
        if (report->parsed()) return cmd_report(summary_path, out_path);
    } catch (const training::NumericalError& e) {
        std::cerr << "numerical failure at step " << e.step << ": " << e.what() << "\n";
        return kExitNumerical;
    } catch (const data::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const data::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const model::InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
