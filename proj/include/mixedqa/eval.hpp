#ifndef MIXEDQA_EVAL_HPP
#define MIXEDQA_EVAL_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mixedqa/data.hpp"
#include "mixedqa/model.hpp"

namespace mixedqa::eval {

struct UndefinedGain : std::runtime_error {
    explicit UndefinedGain(const std::string& msg) : std::runtime_error(msg) {}
};

// Token-position overlap F1; zero when the paragraphs differ.
double token_f1(const data::FineLabel& pred, const data::FineLabel& gold);

// Mean token F1 of the decoded span over the whole document.
double evaluate_fine(const model::ModelParams& params, std::span<const data::Example> split,
                     std::size_t max_span_len);

// Same, but decoding restricted to the gold paragraph.
double evaluate_passage_given(const model::ModelParams& params,
                              std::span<const data::Example> split, std::size_t max_span_len);

// Paragraphs ranked by their best valid-span score; reciprocal rank of the
// gold paragraph with ties counted at the worst rank.
double passage_mrr(const model::ModelParams& params, std::span<const data::Example> split,
                   std::size_t max_span_len);

// Per-factor measurements of the predictive span distribution against the
// hidden gold span, averaged over the two factors and then over examples.
struct PredictiveStats {
    double entropy = 0.0;
    double xent_gold = 0.0;
    double err2_gold = 0.0;
    double passage_mrr = 0.0;
    std::size_t n_examples = 0;
};

// Single-example core of analyze_predictive: stats of one belief against one
// gold span. n_examples is set to 1.
PredictiveStats predictive_stats(const model::SpanBelief& belief, const data::FineLabel& gold,
                                 const data::Document& doc, std::size_t max_span_len);

PredictiveStats analyze_predictive(const model::ModelParams& params,
                                   std::span<const data::Example> coarse_split,
                                   std::size_t max_span_len);

// Relative error reduction against the ceiling.
double gain(double model_f1, double baseline_f1, double ceiling_f1);

double mean(std::span<const double> values);
double sample_stddev(std::span<const double> values);

// One table row: a (data condition, model) cell with per-seed metric values.
struct ReportRow {
    std::string data_condition;
    std::string model;
    std::vector<std::pair<std::string, std::vector<double>>> metrics;
};

// Aligned text table (mean +- std over seeds) plus a machine-readable summary.
void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& text_file,
                  const std::filesystem::path& json_file);

}  // namespace mixedqa::eval

#endif
