#include "mixedqa/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "mixedqa/model.hpp"
#include <json.hpp>

namespace mixedqa::experiment {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const char* where,
                    std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok) throw data::ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json gen_to_json(const data::GenConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"num_documents", c.num_documents},
                {"paragraphs_per_doc", c.paragraphs_per_doc},
                {"tokens_per_paragraph_min", c.tokens_per_paragraph_min},
                {"tokens_per_paragraph_max", c.tokens_per_paragraph_max},
                {"questions_per_doc", c.questions_per_doc},
                {"signature_length", c.signature_length},
                {"distractor_rate", c.distractor_rate},
                {"noise_rate", c.noise_rate},
                {"fine_frac", c.fine_frac},
                {"coarse_frac", c.coarse_frac},
                {"dev_frac", c.dev_frac},
                {"test_frac", c.test_frac},
                {"seed", c.seed}};
}

data::GenConfig gen_from_json(const json& j) {
    reject_unknown(j, "gen",
                   {"vocab_size", "num_documents", "paragraphs_per_doc",
                    "tokens_per_paragraph_min", "tokens_per_paragraph_max", "questions_per_doc",
                    "signature_length", "distractor_rate", "noise_rate", "fine_frac",
                    "coarse_frac", "dev_frac", "test_frac", "seed"});
    data::GenConfig c;
    get_if(j, "vocab_size", c.vocab_size);
    get_if(j, "num_documents", c.num_documents);
    get_if(j, "paragraphs_per_doc", c.paragraphs_per_doc);
    get_if(j, "tokens_per_paragraph_min", c.tokens_per_paragraph_min);
    get_if(j, "tokens_per_paragraph_max", c.tokens_per_paragraph_max);
    get_if(j, "questions_per_doc", c.questions_per_doc);
    get_if(j, "signature_length", c.signature_length);
    get_if(j, "distractor_rate", c.distractor_rate);
    get_if(j, "noise_rate", c.noise_rate);
    get_if(j, "fine_frac", c.fine_frac);
    get_if(j, "coarse_frac", c.coarse_frac);
    get_if(j, "dev_frac", c.dev_frac);
    get_if(j, "test_frac", c.test_frac);
    get_if(j, "seed", c.seed);
    return c;
}

json train_to_json(const training::TrainConfig& c) {
    return json{{"objective", c.objective.name()},
                {"alpha_z", c.alpha_z},
                {"fine_batch_size", c.fine_batch_size},
                {"coarse_batch_size", c.coarse_batch_size},
                {"paragraphs_sampled_per_example", c.paragraphs_sampled_per_example},
                {"max_steps", c.max_steps},
                {"eval_every", c.eval_every},
                {"patience", c.patience},
                {"max_span_len", c.max_span_len},
                {"pd_joint_squared_error", c.pd_joint_squared_error},
                {"rho", c.rho},
                {"epsilon", c.epsilon},
                {"seed", c.seed}};
}

training::TrainConfig train_from_json(const json& j) {
    reject_unknown(j, "train",
                   {"objective", "alpha_z", "fine_batch_size", "coarse_batch_size",
                    "paragraphs_sampled_per_example", "max_steps", "eval_every", "patience",
                    "max_span_len", "pd_joint_squared_error", "rho", "epsilon", "seed"});
    training::TrainConfig c;
    if (j.contains("objective"))
        c.objective = objectives::Objective::parse(j.at("objective").get<std::string>());
    get_if(j, "alpha_z", c.alpha_z);
    get_if(j, "fine_batch_size", c.fine_batch_size);
    get_if(j, "coarse_batch_size", c.coarse_batch_size);
    get_if(j, "paragraphs_sampled_per_example", c.paragraphs_sampled_per_example);
    get_if(j, "max_steps", c.max_steps);
    get_if(j, "eval_every", c.eval_every);
    get_if(j, "patience", c.patience);
    get_if(j, "max_span_len", c.max_span_len);
    get_if(j, "pd_joint_squared_error", c.pd_joint_squared_error);
    get_if(j, "rho", c.rho);
    get_if(j, "epsilon", c.epsilon);
    get_if(j, "seed", c.seed);
    return c;
}

std::string percent(double frac) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", frac * 100.0);
    return buf;
}

std::string alpha_tag(double alpha) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", alpha);
    return buf;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw data::ConfigError("cannot open config file " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw data::ConfigError(file.string() + ": " + e.what());
    }
    reject_unknown(j, "config",
                   {"gen", "model", "train", "alpha_grid", "seeds", "objectives", "with_ceiling",
                    "jobs"});
    ExperimentConfig c;
    if (j.contains("gen")) c.gen = gen_from_json(j.at("gen"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, "model", {"d_emb", "d_hid"});
        get_if(m, "d_emb", c.train.model.d_emb);
        get_if(m, "d_hid", c.train.model.d_hid);
    }
    c.train.model.vocab_size = c.gen.vocab_size;
    get_if(j, "alpha_grid", c.alpha_grid);
    get_if(j, "seeds", c.seeds);
    get_if(j, "objectives", c.objectives);
    get_if(j, "with_ceiling", c.with_ceiling);
    get_if(j, "jobs", c.jobs);
    c.gen.validate();
    c.train.validate();
    for (const std::string& name : c.objectives) objectives::Objective::parse(name);
    if (c.seeds.empty()) throw data::ConfigError("seeds: need at least one seed");
    if (c.jobs == 0) throw data::ConfigError("jobs must be >= 1");
    return c;
}

void save_experiment_config(const ExperimentConfig& c, const std::filesystem::path& file) {
    json j{{"gen", gen_to_json(c.gen)},
           {"model", json{{"d_emb", c.train.model.d_emb}, {"d_hid", c.train.model.d_hid}}},
           {"train", train_to_json(c.train)},
           {"alpha_grid", c.alpha_grid},
           {"seeds", c.seeds},
           {"objectives", c.objectives},
           {"with_ceiling", c.with_ceiling},
           {"jobs", c.jobs}};
    std::ofstream out(file, std::ios::binary);
    if (!out) throw data::ConfigError("cannot open " + file.string() + " for writing");
    out << j.dump(2) << "\n";
}

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const data::DatasetBundle& bundle,
                                const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "runs");

    // Ceiling condition: the coarse split's hidden spans revealed and merged
    // into the fine split.
    data::DatasetBundle ceiling_bundle = bundle;
    {
        data::DatasetBundle promoted = data::promote_coarse_to_fine(bundle);
        for (const data::Example& ex : promoted.coarse_train)
            ceiling_bundle.fine_train.push_back(ex);
        ceiling_bundle.coarse_train.clear();
    }

    struct Cell {
        std::string objective;
        double alpha;
        std::uint64_t seed;
        bool is_ceiling;
    };
    std::vector<Cell> cells;
    for (const std::string& name : config.objectives) {
        objectives::Objective obj = objectives::Objective::parse(name);
        if (!obj.uses_coarse()) {
            for (std::uint64_t seed : config.seeds) cells.push_back({name, 0.0, seed, false});
        } else {
            for (double alpha : config.alpha_grid)
                for (std::uint64_t seed : config.seeds) cells.push_back({name, alpha, seed, false});
        }
    }
    if (config.with_ceiling)
        for (std::uint64_t seed : config.seeds) cells.push_back({"ceiling", 0.0, seed, true});

    std::vector<CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const Cell& cell = cells[i];
            const data::DatasetBundle& b = cell.is_ceiling ? ceiling_bundle : bundle;

            training::TrainConfig tc = config.train;
            tc.objective = cell.is_ceiling
                               ? objectives::Objective{objectives::ObjectiveKind::supervised, {}}
                               : objectives::Objective::parse(cell.objective);
            tc.alpha_z = cell.alpha;
            tc.seed = cell.seed;
            training::TrainResult run = training::train(tc, b);

            CellResult& r = results[i];
            r.objective = cell.objective;
            r.alpha = cell.alpha;
            r.seed = cell.seed;
            r.dev_f1 = run.record.best_dev_f1;
            r.skipped_projections = run.record.skipped_projections;
            r.test_fine_f1 = eval::evaluate_fine(run.best_params, bundle.test_fine, tc.max_span_len);
            r.test_passage_f1 =
                eval::evaluate_passage_given(run.best_params, bundle.test_fine, tc.max_span_len);
            r.test_passage_mrr =
                eval::passage_mrr(run.best_params, bundle.test_fine, tc.max_span_len);
            r.predictive =
                eval::analyze_predictive(run.best_params, bundle.coarse_train, tc.max_span_len);

            std::ostringstream dir_name;
            dir_name << cell.objective << "_a" << alpha_tag(cell.alpha) << "_s" << cell.seed;
            std::filesystem::path run_dir = out_dir / "runs" / dir_name.str();
            std::filesystem::create_directories(run_dir);
            training::save_run_record(run.record, run_dir / "record.txt",
                                      run_dir / "summary.json");
            model::save_checkpoint(run.best_params, run_dir / "checkpoint.txt");
        }
    };
    std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(config.jobs, 1), cells.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    ExperimentResult out;
    out.cells = results;

    // Alpha selection per objective by mean dev F1 (ascending grid, strict
    // improvement, so ties keep the smaller alpha).
    std::vector<std::string> method_names = config.objectives;
    if (config.with_ceiling) method_names.push_back("ceiling");
    for (const std::string& name : method_names) {
        MethodSummary m;
        m.objective = name;
        bool coarse_method =
            name != "ceiling" && objectives::Objective::parse(name).uses_coarse();
        std::vector<double> alphas = coarse_method ? config.alpha_grid : std::vector<double>{0.0};
        double best_mean = -1.0;
        for (double alpha : alphas) {
            std::vector<double> dev;
            for (const CellResult& r : results)
                if (r.objective == name && r.alpha == alpha) dev.push_back(r.dev_f1);
            double mdev = eval::mean(dev);
            if (mdev > best_mean) {
                best_mean = mdev;
                m.selected_alpha = alpha;
            }
        }
        for (const CellResult& r : results)
            if (r.objective == name && r.alpha == m.selected_alpha) {
                m.dev_f1.push_back(r.dev_f1);
                m.test_fine_f1.push_back(r.test_fine_f1);
                m.test_passage_f1.push_back(r.test_passage_f1);
                m.test_passage_mrr.push_back(r.test_passage_mrr);
                m.entropy.push_back(r.predictive.entropy);
                m.xent_gold.push_back(r.predictive.xent_gold);
                m.err2_gold.push_back(r.predictive.err2_gold);
                m.analysis_mrr.push_back(r.predictive.passage_mrr);
            }
        out.methods.push_back(std::move(m));
    }

    // Gain against the run's own supervised baseline and ceiling.
    const MethodSummary* baseline = nullptr;
    const MethodSummary* ceiling = nullptr;
    for (const MethodSummary& m : out.methods) {
        if (m.objective == "supervised") baseline = &m;
        if (m.objective == "ceiling") ceiling = &m;
    }
    if (baseline && ceiling) {
        double base_f1 = eval::mean(baseline->test_fine_f1);
        double ceil_f1 = eval::mean(ceiling->test_fine_f1);
        for (MethodSummary& m : out.methods) {
            if (ceil_f1 <= base_f1) break;
            m.gain = eval::gain(eval::mean(m.test_fine_f1), base_f1, ceil_f1);
            m.gain_defined = true;
        }
    }

    // Main results: test metrics and gain per method.
    std::string fine_cond = "D_" + percent(bundle.config.fine_frac) + "fine";
    std::string mixed_cond = fine_cond + "+D_" + percent(bundle.config.coarse_frac) + "coarse";
    std::string ceil_cond =
        "D_" + percent(bundle.config.fine_frac + bundle.config.coarse_frac) + "fine";
    std::vector<eval::ReportRow> rows_main;
    for (const MethodSummary& m : out.methods) {
        eval::ReportRow row;
        row.model = m.objective == "ceiling" ? "Ceiling" : m.objective;
        row.data_condition = m.objective == "ceiling"
                                 ? ceil_cond
                                 : (m.objective == "supervised" ? fine_cond : mixed_cond);
        row.metrics.emplace_back("Fine-F1", m.test_fine_f1);
        if (m.gain_defined) row.metrics.emplace_back("Gain", std::vector<double>{m.gain});
        row.metrics.emplace_back("Passage-F1", m.test_passage_f1);
        row.metrics.emplace_back("Passage-MRR", m.test_passage_mrr);
        row.metrics.emplace_back("alpha", std::vector<double>{m.selected_alpha});
        rows_main.push_back(std::move(row));
    }
    eval::write_report(rows_main, out_dir / "results.txt", out_dir / "results.json");

    // Predictive-distribution properties on the coarse split.
    std::vector<eval::ReportRow> rows_pred;
    for (const MethodSummary& m : out.methods) {
        if (m.objective == "ceiling") continue;
        eval::ReportRow row;
        row.data_condition = mixed_cond;
        row.model = m.objective;
        row.metrics.emplace_back("Entropy", m.entropy);
        row.metrics.emplace_back("xent-Gold", m.xent_gold);
        row.metrics.emplace_back("err2-Gold", m.err2_gold);
        row.metrics.emplace_back("Passage-MRR", m.analysis_mrr);
        rows_pred.push_back(std::move(row));
    }
    eval::write_report(rows_pred, out_dir / "predictive.txt", out_dir / "predictive.json");

    return out;
}

}  // namespace mixedqa::experiment
