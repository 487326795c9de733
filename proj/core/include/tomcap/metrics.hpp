#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tomcap {

struct EvalInstance {
    std::uint64_t image_id = 0;
    std::string candidate;
    std::vector<std::string> references;
};

struct MetricReport {
    /// Corpus BLEU in [0, 1].
    double bleu1 = 0.0;
    double bleu4 = 0.0;
    /// Corpus CIDEr-D (mean of per-instance scores, each already x10).
    double cider = 0.0;
    std::size_t instance_count = 0;
    std::vector<double> cider_per_instance;
    /// Set when the corpus has a single instance, which zeroes every IDF weight.
    bool idf_degenerate = false;
};

/// The characters removed by tokenize(): all 32 ASCII punctuation characters.
inline constexpr std::string_view kPunctuation = R"(!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)";

/// Lowercases ASCII letters, deletes ASCII punctuation, splits on ASCII
/// whitespace. Non-ASCII bytes pass through unchanged.
std::vector<std::string> tokenize(std::string_view s);

/// Corpus BLEU with clipped n-gram counts, uniform weights over 1..max_n, and
/// a brevity penalty using each instance's closest reference length (ties go
/// to the shorter reference). No smoothing: any zero precision gives 0.
/// max_n must be in [1, 4]; throws ConfigError otherwise.
double bleu(std::span<const EvalInstance> corpus, int max_n);

struct CiderResult {
    double score = 0.0;
    std::vector<double> per_instance;
    bool idf_degenerate = false;
};

/// CIDEr-D: n = 1..4 TF-IDF vectors with document frequencies over the
/// corpus references, clipped candidate weights, Gaussian length penalty with
/// sigma = 6, averaged over n and references, scaled by 10.
CiderResult cider_d(std::span<const EvalInstance> corpus);

/// Shorthand for cider_d(corpus).score.
double cider(std::span<const EvalInstance> corpus);

/// All metrics at once. Throws ConfigError on an empty corpus.
MetricReport evaluate(std::span<const EvalInstance> corpus);

std::string report_to_json(const MetricReport& report, std::span<const EvalInstance> corpus);

/// JSON Lines with {"image_id", "candidate", "references"} per line.
std::vector<EvalInstance> read_eval_instances(const std::filesystem::path& path);

} // namespace tomcap
