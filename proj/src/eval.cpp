#include "mixedqa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace mixedqa::eval {

namespace {

// Best valid-span score per paragraph under the factorized belief.
std::vector<double> paragraph_span_scores(const model::SpanBelief& belief,
                                          const data::Document& doc, std::size_t max_span_len) {
    const diff::Array& slp = belief.start_logprob->value;
    const diff::Array& elp = belief.end_logprob->value;
    std::vector<double> scores;
    for (std::size_t p = 0; p < doc.num_paragraphs(); ++p) {
        std::size_t off = belief.paragraph_offsets[p];
        std::size_t n = belief.paragraph_lengths[p];
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t e = s; e < n && e - s < max_span_len; ++e)
                best = std::max(best, slp.data[off + s] + elp.data[off + e]);
        scores.push_back(best);
    }
    return scores;
}

const data::FineLabel& gold_of(const data::Example& ex) {
    return ex.is_fine() ? ex.fine() : ex.hidden_fine_for_analysis();
}

double reciprocal_rank(const std::vector<double>& scores, std::size_t gold) {
    std::size_t rank = 1;
    for (std::size_t p = 0; p < scores.size(); ++p)
        if (p != gold && scores[p] >= scores[gold]) ++rank;  // ties: worst rank
    return 1.0 / static_cast<double>(rank);
}

}  // namespace

double token_f1(const data::FineLabel& pred, const data::FineLabel& gold) {
    if (pred.a_p != gold.a_p) return 0.0;
    std::size_t lo = std::max(pred.a_start, gold.a_start);
    std::size_t hi = std::min(pred.a_end, gold.a_end);
    if (lo > hi) return 0.0;
    double overlap = static_cast<double>(hi - lo + 1);
    double precision = overlap / static_cast<double>(pred.a_end - pred.a_start + 1);
    double recall = overlap / static_cast<double>(gold.a_end - gold.a_start + 1);
    return 2.0 * precision * recall / (precision + recall);
}

double evaluate_fine(const model::ModelParams& params, std::span<const data::Example> split,
                     std::size_t max_span_len) {
    double total = 0.0;
    for (const data::Example& ex : split) {
        model::SpanBelief belief = model::fine_belief(params, ex);
        model::ScoredSpan pred = model::decode_span(belief, ex.document, max_span_len);
        total += token_f1(pred.span, ex.fine());
    }
    return split.empty() ? 0.0 : total / static_cast<double>(split.size());
}

double evaluate_passage_given(const model::ModelParams& params,
                              std::span<const data::Example> split, std::size_t max_span_len) {
    double total = 0.0;
    for (const data::Example& ex : split) {
        model::SpanBelief belief = model::fine_belief(params, ex);
        model::ScoredSpan pred =
            model::decode_span(belief, ex.document, max_span_len, ex.fine().a_p);
        total += token_f1(pred.span, ex.fine());
    }
    return split.empty() ? 0.0 : total / static_cast<double>(split.size());
}

double passage_mrr(const model::ModelParams& params, std::span<const data::Example> split,
                   std::size_t max_span_len) {
    double total = 0.0;
    for (const data::Example& ex : split) {
        model::SpanBelief belief = model::fine_belief(params, ex);
        auto scores = paragraph_span_scores(belief, ex.document, max_span_len);
        total += reciprocal_rank(scores, gold_of(ex).a_p);
    }
    return split.empty() ? 0.0 : total / static_cast<double>(split.size());
}

PredictiveStats predictive_stats(const model::SpanBelief& belief, const data::FineLabel& gold,
                                 const data::Document& doc, std::size_t max_span_len) {
    PredictiveStats stats;
    const diff::Array* factors[] = {&belief.start_logprob->value, &belief.end_logprob->value};
    std::size_t gold_pos[] = {belief.flat_index(gold.a_p, gold.a_start),
                              belief.flat_index(gold.a_p, gold.a_end)};
    double entropy = 0.0, xent = 0.0, err2 = 0.0;
    for (int f = 0; f < 2; ++f) {
        const diff::Array& lp = *factors[f];
        double h = 0.0, sq = 0.0;
        for (double v : lp.data) {
            double p = std::exp(v);
            if (p > 0.0) h -= p * v;
            sq += p * p;
        }
        double pg = std::exp(lp.data[gold_pos[f]]);
        entropy += h;
        xent += -lp.data[gold_pos[f]];
        // ||delta_gold - p||^2 = 1 - 2 p_g + sum p_t^2
        err2 += 1.0 - 2.0 * pg + sq;
    }
    stats.entropy = entropy / 2.0;
    stats.xent_gold = xent / 2.0;
    stats.err2_gold = err2 / 2.0;
    auto scores = paragraph_span_scores(belief, doc, max_span_len);
    stats.passage_mrr = reciprocal_rank(scores, gold.a_p);
    stats.n_examples = 1;
    return stats;
}

PredictiveStats analyze_predictive(const model::ModelParams& params,
                                   std::span<const data::Example> coarse_split,
                                   std::size_t max_span_len) {
    PredictiveStats stats;
    for (const data::Example& ex : coarse_split) {
        if (!ex.has_hidden_fine())
            throw model::InputError("analyze_predictive: example " + ex.id +
                                    " carries no hidden span");
        const data::FineLabel& gold = ex.hidden_fine_for_analysis();
        model::SpanBelief belief = model::fine_belief(params, ex);
        PredictiveStats one = predictive_stats(belief, gold, ex.document, max_span_len);
        stats.entropy += one.entropy;
        stats.xent_gold += one.xent_gold;
        stats.err2_gold += one.err2_gold;
        stats.passage_mrr += one.passage_mrr;
        ++stats.n_examples;
    }
    if (stats.n_examples > 0) {
        double n = static_cast<double>(stats.n_examples);
        stats.entropy /= n;
        stats.xent_gold /= n;
        stats.err2_gold /= n;
        stats.passage_mrr /= n;
    }
    return stats;
}

double gain(double model_f1, double baseline_f1, double ceiling_f1) {
    if (ceiling_f1 <= baseline_f1)
        throw UndefinedGain("gain: ceiling must exceed baseline");
    return (model_f1 - baseline_f1) / (ceiling_f1 - baseline_f1);
}

double mean(std::span<const double> values) {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

double sample_stddev(std::span<const double> values) {
    if (values.size() < 2) return 0.0;
    double m = mean(values);
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
}

void write_report(const std::vector<ReportRow>& rows, const std::filesystem::path& text_file,
                  const std::filesystem::path& json_file) {
    if (rows.empty()) throw model::InputError("write_report: need at least one row");

    // Column set: union over rows, in first-seen order.
    std::vector<std::string> metric_names;
    for (const auto& row : rows)
        for (const auto& [name, _] : row.metrics)
            if (std::find(metric_names.begin(), metric_names.end(), name) == metric_names.end())
                metric_names.push_back(name);

    auto cell_text = [&](const ReportRow& row, const std::string& metric) -> std::string {
        for (const auto& [name, vals] : row.metrics)
            if (name == metric && !vals.empty()) {
                char buf[64];
                if (vals.size() == 1)
                    std::snprintf(buf, sizeof(buf), "%.4f", vals[0]);
                else
                    std::snprintf(buf, sizeof(buf), "%.4f +- %.4f", mean(vals),
                                  sample_stddev(vals));
                return buf;
            }
        return "-";
    };

    std::vector<std::size_t> widths{4, 5};  // "Data", "Model"
    for (const auto& row : rows) {
        widths[0] = std::max(widths[0], row.data_condition.size());
        widths[1] = std::max(widths[1], row.model.size());
    }
    std::vector<std::size_t> mwidths;
    for (const auto& m : metric_names) {
        std::size_t w = m.size();
        for (const auto& row : rows) w = std::max(w, cell_text(row, m).size());
        mwidths.push_back(w);
    }

    std::ofstream out(text_file, std::ios::binary);
    if (!out) throw model::InputError("cannot open " + text_file.string() + " for writing");
    auto pad = [&](const std::string& s, std::size_t w) {
        out << s << std::string(w - s.size() + 2, ' ');
    };
    out << "# span distribution metrics are per start/end factor, averaged\n";
    pad("Data", widths[0]);
    pad("Model", widths[1]);
    for (std::size_t i = 0; i < metric_names.size(); ++i) pad(metric_names[i], mwidths[i]);
    out << "\n";
    for (const auto& row : rows) {
        pad(row.data_condition, widths[0]);
        pad(row.model, widths[1]);
        for (std::size_t i = 0; i < metric_names.size(); ++i)
            pad(cell_text(row, metric_names[i]), mwidths[i]);
        out << "\n";
    }

    // ordered_json keeps the metric column order stable through a
    // read-then-rewrite round trip
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& row : rows) {
        nlohmann::ordered_json r{{"data_condition", row.data_condition}, {"model", row.model}};
        for (const auto& [name, vals] : row.metrics) {
            r["metrics"][name] = {{"per_seed", vals},
                                  {"mean", mean(vals)},
                                  {"stddev", sample_stddev(vals)}};
        }
        j.push_back(std::move(r));
    }
    std::ofstream js(json_file, std::ios::binary);
    if (!js) throw model::InputError("cannot open " + json_file.string() + " for writing");
    js << j.dump(2) << "\n";
}

}  // namespace mixedqa::eval
