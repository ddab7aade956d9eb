#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mixedqa/data.hpp"
#include "mixedqa/eval.hpp"
#include "mixedqa/rng.hpp"

using namespace mixedqa::data;
namespace fs = std::filesystem;

namespace {

GenConfig small_config() {
    GenConfig c;
    c.vocab_size = 50;
    c.num_documents = 30;
    c.paragraphs_per_doc = 3;
    c.tokens_per_paragraph_min = 8;
    c.tokens_per_paragraph_max = 12;
    c.signature_length = 3;
    c.distractor_rate = 0.5;
    c.noise_rate = 0.0;
    c.fine_frac = 0.2;
    c.coarse_frac = 0.3;
    c.dev_frac = 0.2;
    c.test_frac = 0.2;
    c.seed = 42;
    return c;
}

std::vector<const Example*> all_examples(const DatasetBundle& b) {
    std::vector<const Example*> out;
    for (const auto* split : {&b.fine_train, &b.coarse_train, &b.dev_fine, &b.test_fine})
        for (const auto& ex : *split) out.push_back(&ex);
    return out;
}

std::string doc_of(const std::string& example_id) {
    return example_id.substr(0, example_id.find('-'));
}

std::uint64_t fnv1a_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::uint64_t h = 14695981039346656037ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// Exact-string-match baseline: predict the first document occurrence of the
// question's leading signature tokens; no occurrence scores zero.
double exact_match_baseline_f1(const std::vector<Example>& split, std::size_t sig_len) {
    double total = 0.0;
    for (const Example& ex : split) {
        bool found = false;
        FineLabel pred;
        for (std::size_t p = 0; p < ex.document.num_paragraphs() && !found; ++p) {
            const TokenSeq& par = ex.document.paragraphs[p];
            for (std::size_t s = 0; s + sig_len <= par.size(); ++s) {
                bool match = true;
                for (std::size_t i = 0; i < sig_len; ++i)
                    if (par[s + i] != ex.question[i]) {
                        match = false;
                        break;
                    }
                if (match) {
                    pred = FineLabel{p, s, s + sig_len - 1};
                    found = true;
                    break;
                }
            }
        }
        if (found) total += mixedqa::eval::token_f1(pred, ex.fine());
    }
    return total / static_cast<double>(split.size());
}

}  // namespace

TEST_CASE("coarsen drops span fields and round-trips") {
    FineLabel f{2, 5, 7};
    CHECK(coarsen(f) == CoarseLabel{2});

    Document doc;
    doc.paragraphs = {{0, 1}, {2, 3}, {4, 5}};
    FineLabel gold{1, 0, 1};
    Example ex("e", {1}, doc, coarsen(gold), gold);
    CHECK(coarsen(ex.hidden_fine_for_analysis()) == ex.coarse());
    CHECK(ex.labeled_paragraph() == 1);
}

TEST_CASE("hidden span must agree with the coarse label") {
    Document doc;
    doc.paragraphs = {{0, 1}, {2, 3}};
    CHECK_THROWS_AS(Example("bad", {1}, doc, CoarseLabel{0}, FineLabel{1, 0, 0}), ParseError);
}

TEST_CASE("candidate_set counts") {
    Document doc;
    doc.paragraphs = {{1, 2, 3}};
    CHECK(candidate_set(doc, CoarseLabel{0}, 3).size() == 6);
    CHECK(candidate_set(doc, CoarseLabel{0}, 1).size() == 3);

    mixedqa::Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 1 + rng.below(20);
        std::size_t max_len = 1 + rng.below(25);
        Document d;
        d.paragraphs = {TokenSeq(n, 0)};
        std::size_t brute = 0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t e = s; e < n; ++e)
                if (e - s < max_len) ++brute;
        auto spans = candidate_set(d, CoarseLabel{0}, max_len);
        CHECK(spans.size() == brute);
        // lexicographic order
        for (std::size_t i = 1; i < spans.size(); ++i) {
            const auto& a = spans[i - 1];
            const auto& b = spans[i];
            CHECK((a.a_start < b.a_start || (a.a_start == b.a_start && a.a_end < b.a_end)));
        }
    }
}

TEST_CASE("generate: clean config plants unique signatures") {
    GenConfig c = small_config();
    c.distractor_rate = 0.0;
    c.noise_rate = 0.0;
    DatasetBundle b = generate(c);
    for (const Example* ex : all_examples(b)) {
        const FineLabel& gold = ex->hidden_fine_for_analysis();
        std::size_t occurrences = 0;
        for (std::size_t p = 0; p < ex->document.num_paragraphs(); ++p) {
            const TokenSeq& par = ex->document.paragraphs[p];
            for (std::size_t s = 0; s + c.signature_length <= par.size(); ++s) {
                bool match = true;
                for (std::size_t i = 0; i < c.signature_length; ++i)
                    if (par[s + i] != ex->question[i]) match = false;
                if (match) {
                    ++occurrences;
                    CHECK(p == gold.a_p);
                    CHECK(s == gold.a_start);
                }
            }
        }
        CHECK(occurrences == 1);
    }
}

TEST_CASE("generate is a pure function of the config") {
    GenConfig c = small_config();
    DatasetBundle b1 = generate(c);
    DatasetBundle b2 = generate(c);
    CHECK(b1 == b2);

    fs::path d1 = fs::temp_directory_path() / "mixedqa_gen_a";
    fs::path d2 = fs::temp_directory_path() / "mixedqa_gen_b";
    save(b1, d1);
    save(b2, d2);
    for (const char* name : {"fine_train.jsonl", "coarse_train.jsonl", "dev_fine.jsonl",
                             "test_fine.jsonl"})
        CHECK(fnv1a_file(d1 / name) == fnv1a_file(d2 / name));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("generated bundle invariants") {
    DatasetBundle b = generate(small_config());

    // split disjointness by document id
    std::set<std::string> seen;
    const std::vector<Example>* splits[] = {&b.fine_train, &b.coarse_train, &b.dev_fine,
                                            &b.test_fine};
    for (const auto* split : splits) {
        std::set<std::string> docs;
        for (const auto& ex : *split) docs.insert(doc_of(ex.id));
        for (const auto& d : docs) {
            CHECK(seen.count(d) == 0);
            seen.insert(d);
        }
    }

    for (const Example* ex : all_examples(b)) {
        CHECK(ex->has_hidden_fine());
        const FineLabel& gold = ex->hidden_fine_for_analysis();
        CHECK(gold.a_p < ex->document.num_paragraphs());
        CHECK(gold.a_start <= gold.a_end);
        CHECK(gold.a_end < ex->document.paragraphs[gold.a_p].size());
        CHECK(coarsen(gold) == CoarseLabel{ex->labeled_paragraph()});
    }

    // D_z carries coarse labels, the rest fine labels
    for (const auto& ex : b.coarse_train) CHECK_FALSE(ex.is_fine());
    for (const auto* split : {&b.fine_train, &b.dev_fine, &b.test_fine})
        for (const auto& ex : *split) CHECK(ex.is_fine());

    // hidden gold spans lie inside the candidate set when short enough
    std::size_t max_span_len = 10;
    for (const auto& ex : b.coarse_train) {
        const FineLabel& gold = ex.hidden_fine_for_analysis();
        if (gold.a_end - gold.a_start >= max_span_len) continue;
        auto spans = candidate_set(ex.document, ex.coarse(), max_span_len);
        CHECK(std::find(spans.begin(), spans.end(), gold) != spans.end());
    }
}

TEST_CASE("save/load round trip and parse errors") {
    DatasetBundle b = generate(small_config());
    fs::path dir = fs::temp_directory_path() / "mixedqa_roundtrip";
    save(b, dir);
    DatasetBundle loaded = load(dir);
    CHECK(loaded == b);

    // corrupt one record: error must carry the 1-based line number
    fs::path f = dir / "dev_fine.jsonl";
    std::ifstream in(f);
    std::stringstream all;
    all << in.rdbuf();
    in.close();
    std::string text = all.str();
    std::size_t first_nl = text.find('\n');
    std::size_t second_nl = text.find('\n', first_nl + 1);
    text.replace(first_nl + 1, second_nl - first_nl - 1, "{broken");
    std::ofstream out(f, std::ios::binary);
    out << text;
    out.close();
    try {
        load(dir);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("config validation") {
    GenConfig c = small_config();
    c.signature_length = 100;
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.fine_frac = 0.0;
    CHECK_THROWS_AS(generate(c), ConfigError);
    c = small_config();
    c.fine_frac = 0.9;
    CHECK_THROWS_AS(generate(c), ConfigError);
}

TEST_CASE("promote_coarse_to_fine reveals hidden spans") {
    DatasetBundle b = generate(small_config());
    DatasetBundle promoted = promote_coarse_to_fine(b);
    REQUIRE(promoted.coarse_train.size() == b.coarse_train.size());
    for (std::size_t i = 0; i < b.coarse_train.size(); ++i) {
        CHECK(promoted.coarse_train[i].is_fine());
        CHECK(promoted.coarse_train[i].fine() == b.coarse_train[i].hidden_fine_for_analysis());
    }
}

// Reference-scale corpus: frozen regression values, computed once from the
// exact-match oracle and the serialized bytes.
TEST_CASE("reference corpus: baseline F1 and checksum fixtures") {
    GenConfig c;
    c.vocab_size = 200;
    c.num_documents = 300;
    c.paragraphs_per_doc = 4;
    c.tokens_per_paragraph_min = 40;
    c.tokens_per_paragraph_max = 60;
    c.signature_length = 3;
    c.distractor_rate = 0.5;
    c.noise_rate = 0.3;
    c.seed = 7;
    DatasetBundle b = generate(c);

    double baseline = exact_match_baseline_f1(b.test_fine, c.signature_length);
    CHECK(baseline > 0.6);
    CHECK(baseline < 1.0);

    fs::path dir = fs::temp_directory_path() / "mixedqa_fixture";
    save(b, dir);
    std::uint64_t checksum = fnv1a_file(dir / "test_fine.jsonl");
    fs::remove_all(dir);

    std::printf("[fixture] baseline_f1=%.17g checksum=%llu\n", baseline,
                static_cast<unsigned long long>(checksum));
    // frozen after the first verified run
    CHECK(baseline == doctest::Approx(0.73333333333333328).epsilon(1e-12));
    CHECK(checksum == 17146745118370930320ULL);
}
