#include "tomcap/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "tomcap/error.hpp"

namespace tomcap {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kCiderSigma = 6.0;

// Ordered maps keep every floating-point reduction in a fixed order.
using NgramCounts = std::map<std::string, int>;

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

NgramCounts count_ngrams(const std::vector<std::string>& tokens, int order) {
    NgramCounts counts;
    if (tokens.size() < static_cast<std::size_t>(order)) {
        return counts;
    }
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
        std::string g = tokens[i];
        for (int k = 1; k < order; ++k) {
            g += ' ';
            g += tokens[i + k];
        }
        ++counts[g];
    }
    return counts;
}

// Sum of values in ascending order: independent of the order they were produced in.
double sorted_sum(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return std::accumulate(values.begin(), values.end(), 0.0);
}

void require_nonempty(std::span<const EvalInstance> corpus) {
    if (corpus.empty()) {
        throw Error(ErrorCode::ConfigError, "evaluation corpus is empty");
    }
}

} // namespace

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (is_space(c)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else if (c < 0x80 && kPunctuation.find(ch) != std::string_view::npos) {
            continue;
        } else if (c >= 'A' && c <= 'Z') {
            current += static_cast<char>(c - 'A' + 'a');
        } else {
            current += ch;
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

double bleu(std::span<const EvalInstance> corpus, int max_n) {
    require_nonempty(corpus);
    if (max_n < 1 || max_n > kMaxOrder) {
        throw Error(ErrorCode::ConfigError, "BLEU order must be in [1, 4]");
    }
    std::uint64_t cand_len = 0;
    std::uint64_t ref_len = 0;
    std::vector<std::uint64_t> matched(max_n, 0);
    std::vector<std::uint64_t> total(max_n, 0);

    for (const auto& inst : corpus) {
        const auto cand = tokenize(inst.candidate);
        std::vector<std::vector<std::string>> refs;
        refs.reserve(inst.references.size());
        for (const auto& r : inst.references) {
            refs.push_back(tokenize(r));
        }

        cand_len += cand.size();
        if (!refs.empty()) {
            // Closest reference length; ties resolved toward the shorter one.
            std::size_t best = refs.front().size();
            for (const auto& r : refs) {
                const auto diff = [&](std::size_t len) {
                    return len > cand.size() ? len - cand.size() : cand.size() - len;
                };
                if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
                    best = r.size();
                }
            }
            ref_len += best;
        }

        for (int n = 1; n <= max_n; ++n) {
            const auto cand_counts = count_ngrams(cand, n);
            NgramCounts max_ref;
            for (const auto& r : refs) {
                for (const auto& [g, c] : count_ngrams(r, n)) {
                    auto& slot = max_ref[g];
                    slot = std::max(slot, c);
                }
            }
            for (const auto& [g, c] : cand_counts) {
                total[n - 1] += c;
                const auto it = max_ref.find(g);
                if (it != max_ref.end()) {
                    matched[n - 1] += std::min(c, it->second);
                }
            }
        }
    }

    if (cand_len == 0) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int n = 0; n < max_n; ++n) {
        if (matched[n] == 0 || total[n] == 0) {
            return 0.0;
        }
        log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    }
    double score = std::exp(log_sum / max_n);
    if (cand_len < ref_len) {
        score *= std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    }
    return score;
}

namespace {

struct TfIdf {
    std::array<std::map<std::string, double>, kMaxOrder> weights;
    std::array<double, kMaxOrder> norms{};
    std::size_t length = 0;
};

TfIdf vectorize(const std::vector<std::string>& tokens,
                const std::map<std::string, std::uint64_t>& doc_freq, double log_corpus) {
    TfIdf v;
    v.length = tokens.size();
    for (int n = 1; n <= kMaxOrder; ++n) {
        double sq = 0.0;
        for (const auto& [g, tf] : count_ngrams(tokens, n)) {
            const auto it = doc_freq.find(g);
            const double df = it == doc_freq.end() ? 1.0 : static_cast<double>(it->second);
            const double w = static_cast<double>(tf) * (log_corpus - std::log(std::max(1.0, df)));
            v.weights[n - 1].emplace(g, w);
            sq += w * w;
        }
        v.norms[n - 1] = std::sqrt(sq);
    }
    return v;
}

double similarity(const TfIdf& cand, const TfIdf& ref, int order) {
    const auto& cw = cand.weights[order];
    const auto& rw = ref.weights[order];
    double val = 0.0;
    for (const auto& [g, w] : cw) {
        const auto it = rw.find(g);
        if (it != rw.end()) {
            val += std::min(w, it->second) * it->second;
        }
    }
    if (cand.norms[order] != 0.0 && ref.norms[order] != 0.0) {
        val /= cand.norms[order] * ref.norms[order];
    }
    const double delta = static_cast<double>(cand.length) - static_cast<double>(ref.length);
    return val * std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
}

} // namespace

CiderResult cider_d(std::span<const EvalInstance> corpus) {
    require_nonempty(corpus);

    std::vector<std::vector<std::vector<std::string>>> ref_tokens(corpus.size());
    std::map<std::string, std::uint64_t> doc_freq;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        std::set<std::string> seen;
        for (const auto& r : corpus[i].references) {
            ref_tokens[i].push_back(tokenize(r));
            for (int n = 1; n <= kMaxOrder; ++n) {
                for (const auto& [g, c] : count_ngrams(ref_tokens[i].back(), n)) {
                    seen.insert(g);
                }
            }
        }
        for (const auto& g : seen) {
            ++doc_freq[g];
        }
    }

    const double log_corpus = std::log(static_cast<double>(corpus.size()));
    CiderResult result;
    result.idf_degenerate = corpus.size() == 1;
    result.per_instance.resize(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (ref_tokens[i].empty()) {
            continue;
        }
        const auto cand = vectorize(tokenize(corpus[i].candidate), doc_freq, log_corpus);
        std::vector<double> per_ref;
        per_ref.reserve(ref_tokens[i].size());
        for (const auto& r : ref_tokens[i]) {
            const auto ref = vectorize(r, doc_freq, log_corpus);
            double s = 0.0;
            for (int n = 0; n < kMaxOrder; ++n) {
                s += similarity(cand, ref, n);
            }
            per_ref.push_back(s / kMaxOrder);
        }
        result.per_instance[i] =
            sorted_sum(std::move(per_ref)) / static_cast<double>(ref_tokens[i].size()) * 10.0;
    }
    result.score = sorted_sum(result.per_instance) / static_cast<double>(corpus.size());
    return result;
}

double cider(std::span<const EvalInstance> corpus) { return cider_d(corpus).score; }

MetricReport evaluate(std::span<const EvalInstance> corpus) {
    MetricReport report;
    report.instance_count = corpus.size();
    report.bleu1 = bleu(corpus, 1);
    report.bleu4 = bleu(corpus, 4);
    auto c = cider_d(corpus);
    report.cider = c.score;
    report.cider_per_instance = std::move(c.per_instance);
    report.idf_degenerate = c.idf_degenerate;
    return report;
}

std::string report_to_json(const MetricReport& report, std::span<const EvalInstance> corpus) {
    nlohmann::ordered_json j;
    j["bleu1"] = report.bleu1;
    j["bleu4"] = report.bleu4;
    j["cider"] = report.cider;
    j["instance_count"] = report.instance_count;
    j["idf_degenerate"] = report.idf_degenerate;
    auto per = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < report.cider_per_instance.size(); ++i) {
        nlohmann::ordered_json item;
        item["image_id"] = i < corpus.size() ? corpus[i].image_id : i;
        item["cider"] = report.cider_per_instance[i];
        per.push_back(std::move(item));
    }
    j["per_instance"] = std::move(per);
    return j.dump(2);
}

std::vector<EvalInstance> read_eval_instances(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(0, "cannot open '" + path.string() + "'");
    }
    std::vector<EvalInstance> out;
    std::string line;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const auto line_start = offset;
        offset += line.size() + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            EvalInstance inst;
            inst.image_id = j.at("image_id").get<std::uint64_t>();
            inst.candidate = j.at("candidate").get<std::string>();
            inst.references = j.at("references").get<std::vector<std::string>>();
            if (inst.references.empty()) {
                throw FormatError(line_start, "instance has no references");
            }
            out.push_back(std::move(inst));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(line_start, std::string("malformed evaluation line: ") + e.what());
        }
    }
    return out;
}

} // namespace tomcap
