#include "mixedqa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mixedqa/rng.hpp"
#include <json.hpp>

namespace mixedqa::data {

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;
constexpr std::size_t kQuestionNoiseTokens = 2;

// One stream per concern so ablations change only what they intend to.
enum Stream : std::uint64_t { kStreamContent = 0, kStreamSplit = 1 };

std::string doc_id(std::size_t d) {
    std::ostringstream os;
    os << "doc" << d;
    return os.str();
}

void check_label(const Example& ex) {
    const Document& doc = ex.document;
    std::size_t p = ex.labeled_paragraph();
    if (p >= doc.num_paragraphs())
        throw ParseError("example " + ex.id + ": paragraph index out of range");
    if (ex.is_fine()) {
        const FineLabel& f = ex.fine();
        if (f.a_start > f.a_end || f.a_end >= doc.paragraphs[p].size())
            throw ParseError("example " + ex.id + ": span out of range");
    }
}

}  // namespace

std::size_t Document::num_tokens() const {
    std::size_t n = 0;
    for (const auto& p : paragraphs) n += p.size();
    return n;
}

CoarseLabel coarsen(const FineLabel& label) { return CoarseLabel{label.a_p}; }

Example::Example(std::string id_, TokenSeq question_, Document document_, Label label_,
                 std::optional<FineLabel> hidden_fine)
    : id(std::move(id_)),
      question(std::move(question_)),
      document(std::move(document_)),
      label(std::move(label_)),
      hidden_fine_(std::move(hidden_fine)) {
    if (hidden_fine_ && !is_fine() && hidden_fine_->a_p != coarse().a_p)
        throw ParseError("example " + id + ": hidden span disagrees with coarse label");
}

std::size_t Example::labeled_paragraph() const {
    return is_fine() ? fine().a_p : coarse().a_p;
}

const FineLabel& Example::hidden_fine_for_analysis() const {
    if (!hidden_fine_) throw std::logic_error("example " + id + " carries no hidden span");
    return *hidden_fine_;
}

void GenConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (num_documents == 0) throw ConfigError("num_documents must be >= 1");
    if (paragraphs_per_doc == 0) throw ConfigError("paragraphs_per_doc must be >= 1");
    if (tokens_per_paragraph_min == 0 || tokens_per_paragraph_min > tokens_per_paragraph_max)
        throw ConfigError("tokens_per_paragraph range invalid");
    if (questions_per_doc == 0) throw ConfigError("questions_per_doc must be >= 1");
    if (signature_length == 0 || signature_length > tokens_per_paragraph_min)
        throw ConfigError("signature_length must fit in the shortest paragraph");
    if (distractor_rate < 0.0 || distractor_rate > 1.0)
        throw ConfigError("distractor_rate must be in [0,1]");
    if (noise_rate < 0.0 || noise_rate > 1.0) throw ConfigError("noise_rate must be in [0,1]");
    double fracs[] = {fine_frac, coarse_frac, dev_frac, test_frac};
    double total = 0.0;
    for (double f : fracs) {
        if (f <= 0.0) throw ConfigError("split fractions must be positive");
        total += f;
    }
    if (total > 1.0 + 1e-12) throw ConfigError("split fractions must sum to <= 1");
}

DatasetBundle generate(const GenConfig& config) {
    config.validate();
    Rng content(Rng::derive(config.seed, kStreamContent));
    Rng splitter(Rng::derive(config.seed, kStreamSplit));

    std::vector<std::vector<Example>> per_doc(config.num_documents);
    for (std::size_t d = 0; d < config.num_documents; ++d) {
        Document doc;
        for (std::size_t p = 0; p < config.paragraphs_per_doc; ++p) {
            std::size_t len = static_cast<std::size_t>(content.uniform_int(
                static_cast<std::int64_t>(config.tokens_per_paragraph_min),
                static_cast<std::int64_t>(config.tokens_per_paragraph_max)));
            TokenSeq par(len);
            for (auto& t : par) t = static_cast<std::uint32_t>(content.below(config.vocab_size));
            doc.paragraphs.push_back(std::move(par));
        }
        for (std::size_t q = 0; q < config.questions_per_doc; ++q) {
            Document qdoc = doc;  // each question gets its own planted copy
            TokenSeq signature(config.signature_length);
            for (auto& t : signature)
                t = static_cast<std::uint32_t>(content.below(config.vocab_size));
            TokenSeq question = signature;
            for (std::size_t i = 0; i < kQuestionNoiseTokens; ++i)
                question.push_back(static_cast<std::uint32_t>(content.below(config.vocab_size)));

            std::size_t ans_p = content.below(qdoc.num_paragraphs());
            TokenSeq& par = qdoc.paragraphs[ans_p];
            std::size_t start = content.below(par.size() - config.signature_length + 1);
            std::copy(signature.begin(), signature.end(), par.begin() + start);
            FineLabel gold{ans_p, start, start + config.signature_length - 1};

            if (qdoc.num_paragraphs() > 1 && config.signature_length > 1 &&
                content.bernoulli(config.distractor_rate)) {
                std::size_t other = content.below(qdoc.num_paragraphs() - 1);
                if (other >= ans_p) ++other;
                std::size_t plen = 1 + content.below(config.signature_length - 1);
                TokenSeq& dpar = qdoc.paragraphs[other];
                std::size_t dstart = content.below(dpar.size() - plen + 1);
                std::copy(signature.begin(), signature.begin() + plen, dpar.begin() + dstart);
            }
            if (content.bernoulli(config.noise_rate)) {
                std::size_t pos = gold.a_start + content.below(config.signature_length);
                qdoc.paragraphs[ans_p][pos] =
                    static_cast<std::uint32_t>(content.below(config.vocab_size));
            }

            std::ostringstream id;
            id << doc_id(d) << "-q" << q;
            per_doc[d].emplace_back(id.str(), std::move(question), std::move(qdoc),
                                    Label{gold}, gold);
        }
    }

    // Whole-document split allocation: no document appears in two splits.
    std::vector<std::size_t> order(config.num_documents);
    std::iota(order.begin(), order.end(), std::size_t{0});
    splitter.shuffle(order);
    auto count = [&](double frac) {
        auto c = static_cast<std::size_t>(std::llround(frac * static_cast<double>(config.num_documents)));
        return std::max<std::size_t>(c, 1);
    };
    std::size_t n_fine = count(config.fine_frac);
    std::size_t n_coarse = count(config.coarse_frac);
    std::size_t n_dev = count(config.dev_frac);
    std::size_t n_test = count(config.test_frac);
    if (n_fine + n_coarse + n_dev + n_test > config.num_documents)
        throw ConfigError("split fractions allocate more documents than generated");

    DatasetBundle bundle;
    bundle.config = config;
    std::size_t pos = 0;
    auto take = [&](std::size_t n, std::vector<Example>& split, bool coarse) {
        for (std::size_t i = 0; i < n; ++i, ++pos) {
            for (Example& ex : per_doc[order[pos]]) {
                if (coarse) {
                    FineLabel gold = ex.fine();
                    split.emplace_back(ex.id, ex.question, ex.document,
                                       Label{coarsen(gold)}, gold);
                } else {
                    split.push_back(ex);
                }
            }
        }
    };
    take(n_fine, bundle.fine_train, false);
    take(n_coarse, bundle.coarse_train, true);
    take(n_dev, bundle.dev_fine, false);
    take(n_test, bundle.test_fine, false);
    return bundle;
}

std::vector<FineLabel> candidate_set(const Document& doc, const CoarseLabel& z,
                                     std::size_t max_span_len) {
    if (z.a_p >= doc.num_paragraphs())
        throw ParseError("candidate_set: paragraph index out of range");
    std::size_t n = doc.paragraphs[z.a_p].size();
    std::vector<FineLabel> out;
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t e = s; e < n && e - s < max_span_len; ++e)
            out.push_back(FineLabel{z.a_p, s, e});
    return out;
}

namespace {

json fine_to_json(const FineLabel& f) {
    return json{{"a_p", f.a_p}, {"a_start", f.a_start}, {"a_end", f.a_end}};
}

FineLabel fine_from_json(const json& j) {
    return FineLabel{j.at("a_p").get<std::size_t>(), j.at("a_start").get<std::size_t>(),
                     j.at("a_end").get<std::size_t>()};
}

json example_to_json(const Example& ex) {
    json j;
    j["id"] = ex.id;
    j["question"] = ex.question;
    j["paragraphs"] = ex.document.paragraphs;
    if (ex.is_fine()) {
        j["label_kind"] = "fine";
        j["a_p"] = ex.fine().a_p;
        j["a_start"] = ex.fine().a_start;
        j["a_end"] = ex.fine().a_end;
    } else {
        j["label_kind"] = "coarse";
        j["a_p"] = ex.coarse().a_p;
    }
    if (ex.has_hidden_fine()) j["hidden_fine"] = fine_to_json(ex.hidden_fine_for_analysis());
    return j;
}

Example example_from_json(const json& j) {
    Document doc;
    doc.paragraphs = j.at("paragraphs").get<std::vector<TokenSeq>>();
    std::string kind = j.at("label_kind").get<std::string>();
    Label label;
    if (kind == "fine")
        label = FineLabel{j.at("a_p").get<std::size_t>(), j.at("a_start").get<std::size_t>(),
                          j.at("a_end").get<std::size_t>()};
    else if (kind == "coarse")
        label = CoarseLabel{j.at("a_p").get<std::size_t>()};
    else
        throw ParseError("unknown label_kind '" + kind + "'");
    std::optional<FineLabel> hidden;
    if (j.contains("hidden_fine")) hidden = fine_from_json(j.at("hidden_fine"));
    Example ex(j.at("id").get<std::string>(), j.at("question").get<TokenSeq>(), std::move(doc),
               std::move(label), std::move(hidden));
    check_label(ex);
    return ex;
}

json config_to_json(const GenConfig& c) {
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

GenConfig config_from_json(const json& j) {
    GenConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_documents = j.at("num_documents").get<std::size_t>();
    c.paragraphs_per_doc = j.at("paragraphs_per_doc").get<std::size_t>();
    c.tokens_per_paragraph_min = j.at("tokens_per_paragraph_min").get<std::size_t>();
    c.tokens_per_paragraph_max = j.at("tokens_per_paragraph_max").get<std::size_t>();
    c.questions_per_doc = j.at("questions_per_doc").get<std::size_t>();
    c.signature_length = j.at("signature_length").get<std::size_t>();
    c.distractor_rate = j.at("distractor_rate").get<double>();
    c.noise_rate = j.at("noise_rate").get<double>();
    c.fine_frac = j.at("fine_frac").get<double>();
    c.coarse_frac = j.at("coarse_frac").get<double>();
    c.dev_frac = j.at("dev_frac").get<double>();
    c.test_frac = j.at("test_frac").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

const char* kSplitNames[] = {"fine_train", "coarse_train", "dev_fine", "test_fine"};

void save_split(const std::filesystem::path& file, const std::vector<Example>& split,
                const GenConfig& config, const char* name) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ParseError("cannot open " + file.string() + " for writing");
    json header{{"schema_version", kSchemaVersion},
                {"split", name},
                {"gen_config", config_to_json(config)}};
    out << header.dump() << "\n";
    for (const Example& ex : split) out << example_to_json(ex).dump() << "\n";
}

std::vector<Example> load_split(const std::filesystem::path& file, GenConfig* config_out) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ParseError("cannot open " + file.string());
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            if (lineno == 1) {
                if (j.at("schema_version").get<int>() != kSchemaVersion)
                    throw ParseError("unsupported schema version");
                if (config_out) *config_out = config_from_json(j.at("gen_config"));
                continue;
            }
            out.push_back(example_from_json(j));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (lineno == 0) throw ParseError(file.string() + ": missing header line");
    return out;
}

}  // namespace

void save(const DatasetBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::vector<Example>* splits[] = {&bundle.fine_train, &bundle.coarse_train,
                                            &bundle.dev_fine, &bundle.test_fine};
    for (int i = 0; i < 4; ++i)
        save_split(dir / (std::string(kSplitNames[i]) + ".jsonl"), *splits[i], bundle.config,
                   kSplitNames[i]);
}

DatasetBundle load(const std::filesystem::path& dir) {
    DatasetBundle b;
    std::vector<Example>* splits[] = {&b.fine_train, &b.coarse_train, &b.dev_fine, &b.test_fine};
    for (int i = 0; i < 4; ++i)
        *splits[i] =
            load_split(dir / (std::string(kSplitNames[i]) + ".jsonl"), i == 0 ? &b.config : nullptr);
    return b;
}

DatasetBundle promote_coarse_to_fine(const DatasetBundle& bundle) {
    DatasetBundle out = bundle;
    out.coarse_train.clear();
    for (const Example& ex : bundle.coarse_train) {
        FineLabel gold = ex.hidden_fine_for_analysis();
        out.coarse_train.emplace_back(ex.id, ex.question, ex.document, Label{gold}, gold);
    }
    return out;
}

}  // namespace mixedqa::data
