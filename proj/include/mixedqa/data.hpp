#ifndef MIXEDQA_DATA_HPP
#define MIXEDQA_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mixedqa::data {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

using TokenSeq = std::vector<std::uint32_t>;

struct Document {
    std::vector<TokenSeq> paragraphs;

    std::size_t num_paragraphs() const { return paragraphs.size(); }
    std::size_t num_tokens() const;
    bool operator==(const Document&) const = default;
};

// Answer span: paragraph index plus inclusive token range within it.
struct FineLabel {
    std::size_t a_p = 0;
    std::size_t a_start = 0;
    std::size_t a_end = 0;
    bool operator==(const FineLabel&) const = default;
};

struct CoarseLabel {
    std::size_t a_p = 0;
    bool operator==(const CoarseLabel&) const = default;
};

CoarseLabel coarsen(const FineLabel& label);

using Label = std::variant<FineLabel, CoarseLabel>;

// A question over a multi-paragraph document with exactly one label. The
// generator's ground-truth span is retained on coarse examples but is only
// readable through the analysis accessor; training code must not consult it.
class Example {
public:
    std::string id;
    TokenSeq question;
    Document document;
    Label label;

    Example() = default;
    Example(std::string id, TokenSeq question, Document document, Label label,
            std::optional<FineLabel> hidden_fine = std::nullopt);

    bool is_fine() const { return std::holds_alternative<FineLabel>(label); }
    const FineLabel& fine() const { return std::get<FineLabel>(label); }
    const CoarseLabel& coarse() const { return std::get<CoarseLabel>(label); }
    std::size_t labeled_paragraph() const;

    bool has_hidden_fine() const { return hidden_fine_.has_value(); }
    // Analysis-only entry point (ceiling construction and the predictive-
    // distribution report); see eval module.
    const FineLabel& hidden_fine_for_analysis() const;

    bool operator==(const Example&) const = default;

private:
    std::optional<FineLabel> hidden_fine_;
};

struct GenConfig {
    std::size_t vocab_size = 200;
    std::size_t num_documents = 300;
    std::size_t paragraphs_per_doc = 4;
    std::size_t tokens_per_paragraph_min = 40;
    std::size_t tokens_per_paragraph_max = 60;
    std::size_t questions_per_doc = 1;
    std::size_t signature_length = 3;
    double distractor_rate = 0.5;
    double noise_rate = 0.0;
    double fine_frac = 0.05;
    double coarse_frac = 0.20;
    double dev_frac = 0.10;
    double test_frac = 0.20;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const GenConfig&) const = default;
};

struct DatasetBundle {
    std::vector<Example> fine_train;
    std::vector<Example> coarse_train;
    std::vector<Example> dev_fine;
    std::vector<Example> test_fine;
    GenConfig config;

    bool operator==(const DatasetBundle&) const = default;
};

// Deterministic planted-signature corpus; a pure function of the config.
DatasetBundle generate(const GenConfig& config);

// All spans within paragraph z.a_p with length <= max_span_len, lexicographic.
std::vector<FineLabel> candidate_set(const Document& doc, const CoarseLabel& z,
                                     std::size_t max_span_len);

void save(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load(const std::filesystem::path& dir);

// Ceiling construction: reveal the hidden spans of the coarse split.
DatasetBundle promote_coarse_to_fine(const DatasetBundle& bundle);

}  // namespace mixedqa::data

#endif
