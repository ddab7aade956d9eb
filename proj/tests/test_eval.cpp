#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mixedqa/eval.hpp"
#include "mixedqa/rng.hpp"
#include "test_util.hpp"

#include <json.hpp>

using namespace mixedqa::eval;
using mixedqa::Rng;
using mixedqa::data::CoarseLabel;
using mixedqa::data::Document;
using mixedqa::data::Example;
using mixedqa::data::FineLabel;
using mixedqa::model::ModelConfig;
using mixedqa::model::ModelParams;
namespace fs = std::filesystem;

namespace {

ModelConfig small_cfg() {
    ModelConfig c;
    c.vocab_size = 15;
    c.d_emb = 4;
    c.d_hid = 5;
    return c;
}

ModelParams zeroed_params() {
    ModelParams p = ModelParams::init(small_cfg(), 1);
    for (const auto& [name, node] : p.named())
        for (double& v : node->value.data) v = 0.0;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("token f1 basic cases") {
    CHECK(token_f1(FineLabel{0, 2, 4}, FineLabel{0, 2, 4}) == 1.0);
    CHECK(token_f1(FineLabel{0, 0, 1}, FineLabel{0, 3, 4}) == 0.0);
    CHECK(token_f1(FineLabel{1, 2, 4}, FineLabel{0, 2, 4}) == 0.0);

    // one of two gold tokens: precision 1, recall 1/2
    CHECK(token_f1(FineLabel{0, 0, 0}, FineLabel{0, 0, 1}) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // overlap 2, both spans of length 3
    CHECK(token_f1(FineLabel{0, 0, 2}, FineLabel{0, 1, 3}) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    // symmetry
    Rng rng(71);
    for (int t = 0; t < 50; ++t) {
        FineLabel a{rng.below(2), rng.below(5), 0};
        a.a_end = a.a_start + rng.below(4);
        FineLabel b{rng.below(2), rng.below(5), 0};
        b.a_end = b.a_start + rng.below(4);
        CHECK(token_f1(a, b) == token_f1(b, a));
        double f = token_f1(a, b);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }
}

TEST_CASE("passage-given decoding never scores below whole-document decoding") {
    Rng rng(73);
    ModelParams p = ModelParams::init(small_cfg(), 5);
    for (int t = 0; t < 20; ++t) {
        Example ex = testutil::random_coarse_example(rng, 15);
        Example fine("f", ex.question, ex.document, ex.hidden_fine_for_analysis());
        std::vector<Example> split = {fine};
        double whole = evaluate_fine(p, split, 3);
        double given = evaluate_passage_given(p, split, 3);
        CHECK(given >= whole);
    }
}

TEST_CASE("passage mrr: single paragraph and exact ties") {
    ModelParams p = ModelParams::init(small_cfg(), 9);

    Document single;
    single.paragraphs = {{1, 2, 3}};
    std::vector<Example> one = {Example("a", {2}, single, FineLabel{0, 0, 0})};
    CHECK(passage_mrr(p, one, 3) == 1.0);

    // identical paragraphs give identical scores; ties take the worst rank
    Document dup;
    dup.paragraphs = {{1, 2, 3}, {1, 2, 3}};
    std::vector<Example> tied = {Example("b", {2}, dup, FineLabel{0, 0, 0})};
    CHECK(passage_mrr(p, tied, 3) == 0.5);

    Document trip;
    trip.paragraphs = {{4, 5}, {4, 5}, {4, 5}};
    std::vector<Example> tied3 = {Example("c", {4}, trip, FineLabel{1, 0, 0})};
    CHECK(passage_mrr(p, tied3, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("predictive stats of the uniform model match closed forms") {
    ModelParams p = zeroed_params();
    std::vector<Example> split = {testutil::tiny_coarse_example()};  // 6 positions, 2 paragraphs
    PredictiveStats s = analyze_predictive(p, split, 3);
    CHECK(s.n_examples == 1);
    CHECK(s.entropy == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(s.xent_gold == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(s.err2_gold == doctest::Approx(1.0 - 1.0 / 6.0).epsilon(1e-12));
    CHECK(s.passage_mrr == 0.5);
}

TEST_CASE("predictive stats agree with direct recomputation") {
    Rng rng(79);
    ModelParams p = ModelParams::init(small_cfg(), 31);
    std::vector<Example> split;
    for (int i = 0; i < 10; ++i) split.push_back(testutil::random_coarse_example(rng, 15));
    PredictiveStats s = analyze_predictive(p, split, 4);
    REQUIRE(s.n_examples == 10);

    double entropy = 0.0, xent = 0.0, err2 = 0.0;
    for (const Example& ex : split) {
        const FineLabel& gold = ex.hidden_fine_for_analysis();
        mixedqa::model::SpanBelief b = mixedqa::model::fine_belief(p, ex);
        const mixedqa::diff::Array* lps[] = {&b.start_logprob->value, &b.end_logprob->value};
        std::size_t gpos[] = {b.flat_index(gold.a_p, gold.a_start),
                              b.flat_index(gold.a_p, gold.a_end)};
        double eh = 0.0, ex_ = 0.0, ee = 0.0;
        for (int f = 0; f < 2; ++f) {
            for (std::size_t i = 0; i < lps[f]->size(); ++i) {
                double prob = std::exp(lps[f]->data[i]);
                eh -= prob * lps[f]->data[i];
                double delta = (i == gpos[f]) ? 1.0 : 0.0;
                ee += (delta - prob) * (delta - prob);
            }
            ex_ -= lps[f]->data[gpos[f]];
        }
        entropy += eh / 2.0;
        xent += ex_ / 2.0;
        err2 += ee / 2.0;
    }
    CHECK(s.entropy == doctest::Approx(entropy / 10.0).epsilon(1e-12));
    CHECK(s.xent_gold == doctest::Approx(xent / 10.0).epsilon(1e-12));
    CHECK(s.err2_gold == doctest::Approx(err2 / 10.0).epsilon(1e-12));

    std::vector<Example> no_hidden = {testutil::tiny_fine_example()};
    CHECK_THROWS_AS(analyze_predictive(p, no_hidden, 4), mixedqa::model::InputError);
}

TEST_CASE("gain endpoints and interior value") {
    CHECK(gain(62.0, 62.0, 71.2) == 0.0);
    CHECK(gain(71.2, 62.0, 71.2) == 1.0);
    CHECK(gain(65.8, 62.0, 71.2) == doctest::Approx(3.8 / 9.2).epsilon(1e-12));
    CHECK_THROWS_AS(gain(0.5, 0.7, 0.7), UndefinedGain);
    CHECK_THROWS_AS(gain(0.5, 0.8, 0.7), UndefinedGain);
}

TEST_CASE("mean and sample stddev") {
    std::vector<double> v = {1, 2, 3, 4};
    CHECK(mean(v) == 2.5);
    CHECK(sample_stddev(v) == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-12));
    std::vector<double> one = {7.0};
    CHECK(mean(one) == 7.0);
    CHECK(sample_stddev(one) == 0.0);
    std::vector<double> none;
    CHECK(mean(none) == 0.0);
}

TEST_CASE("report writer produces an aligned table and stable json") {
    std::vector<ReportRow> rows;
    rows.push_back(ReportRow{"D_fine", "supervised",
                             {{"F1", {0.5, 0.6, 0.7}}, {"MRR", {0.9}}}});
    rows.push_back(ReportRow{"D_fine+D_coarse", "pd-xent", {{"F1", {0.8, 0.8, 0.8}}}});

    fs::path dir = fs::temp_directory_path() / "mixedqa_report";
    fs::create_directories(dir);
    write_report(rows, dir / "t.txt", dir / "t.json");

    std::string text = slurp(dir / "t.txt");
    std::istringstream lines(text);
    std::string comment, header, row1, row2;
    std::getline(lines, comment);
    std::getline(lines, header);
    std::getline(lines, row1);
    std::getline(lines, row2);
    CHECK(header.find("Data") != std::string::npos);
    CHECK(header.find("F1") != std::string::npos);
    CHECK(header.find("MRR") != std::string::npos);
    CHECK(row1.find("0.6000 +- 0.1000") != std::string::npos);
    CHECK(row1.find("0.9000") != std::string::npos);
    CHECK(row2.find("0.8000 +- 0.0000") != std::string::npos);
    CHECK(row2.find(" - ") != std::string::npos);  // missing MRR cell
    // columns align: "Model" starts at the same offset in every line
    std::size_t col = header.find("Model");
    CHECK(row1.find("supervised") == col);
    CHECK(row2.find("pd-xent") == col);

    nlohmann::json j = nlohmann::json::parse(slurp(dir / "t.json"));
    REQUIRE(j.size() == 2);
    CHECK(j[0].at("model") == "supervised");
    CHECK(j[0].at("metrics").at("F1").at("per_seed").size() == 3);
    CHECK(j[0].at("metrics").at("F1").at("mean").get<double>() == doctest::Approx(0.6));
    CHECK(j[1].at("metrics").at("F1").at("stddev").get<double>() < 1e-12);

    write_report(rows, dir / "t2.txt", dir / "t2.json");
    CHECK(slurp(dir / "t.txt") == slurp(dir / "t2.txt"));
    CHECK(slurp(dir / "t.json") == slurp(dir / "t2.json"));

    CHECK_THROWS_AS(write_report({}, dir / "x.txt", dir / "x.json"),
                    mixedqa::model::InputError);
    fs::remove_all(dir);
}
