#include "tomcap/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tomcap/error.hpp"
#include "tomcap/parallel.hpp"

namespace tomcap {

KnorReport knor(const Datastore& store, const EmbeddingMatrix& paired_image_queries,
                const EmbeddingMatrix& paired_text_queries, std::span<const std::size_t> k_values,
                std::size_t threads) {
    const std::size_t pairs = paired_image_queries.rows();
    if (pairs != paired_text_queries.rows()) {
        throw Error(ErrorCode::PairMismatch, std::to_string(pairs) + " image queries vs " +
                                                 std::to_string(paired_text_queries.rows()) +
                                                 " text queries");
    }
    std::size_t max_k = 0;
    for (std::size_t k : k_values) {
        if (k == 0 || k > store.size()) {
            throw Error(ErrorCode::InvalidK, "k=" + std::to_string(k) + " outside [1, " +
                                                 std::to_string(store.size()) + "]");
        }
        max_k = std::max(max_k, k);
    }

    KnorReport report;
    report.k_values.assign(k_values.begin(), k_values.end());
    report.pair_count = pairs;
    report.scores.assign(k_values.size(), 0.0);
    if (pairs == 0 || k_values.empty()) {
        return report;
    }

    // overlap[i * nk + j] = |A ∩ B| for pair i at k_values[j]; integer counts
    // keep the final mean independent of how pairs were split across threads.
    const std::size_t nk = k_values.size();
    std::vector<std::size_t> overlap(pairs * nk, 0);
    parallel_chunks(pairs, resolve_threads(threads), [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            // One search at max_k serves every smaller k: top-k is a prefix of top-max_k.
            const auto a = store.search(paired_image_queries.row(i), max_k);
            const auto b = store.search(paired_text_queries.row(i), max_k);
            for (std::size_t j = 0; j < nk; ++j) {
                const std::size_t k = k_values[j];
                std::vector<std::uint64_t> ia, ib;
                for (std::size_t r = 0; r < k; ++r) {
                    ia.push_back(a[r].id);
                    ib.push_back(b[r].id);
                }
                std::sort(ia.begin(), ia.end());
                std::sort(ib.begin(), ib.end());
                std::vector<std::uint64_t> common;
                std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                                      std::back_inserter(common));
                overlap[i * nk + j] = common.size();
            }
        }
    });

    for (std::size_t j = 0; j < nk; ++j) {
        std::uint64_t shared = 0;
        for (std::size_t i = 0; i < pairs; ++i) {
            shared += overlap[i * nk + j];
        }
        report.scores[j] = static_cast<double>(shared) /
                           (static_cast<double>(k_values[j]) * static_cast<double>(pairs));
    }
    return report;
}

std::string knor_to_json(const KnorReport& report) {
    nlohmann::ordered_json j;
    j["pair_count"] = report.pair_count;
    j["k_values"] = report.k_values;
    j["scores"] = report.scores;
    return j.dump(2);
}

std::string knor_to_csv(const KnorReport& report) {
    std::ostringstream out;
    out << "k,score\n";
    for (std::size_t i = 0; i < report.k_values.size(); ++i) {
        char buf[64];
        const auto res = std::to_chars(buf, buf + sizeof(buf), report.scores[i]);
        out << report.k_values[i] << ',' << std::string_view(buf, res.ptr - buf) << '\n';
    }
    return out.str();
}

void export_projection_input(std::span<const LabeledMatrix> matrices,
                             const std::filesystem::path& path) {
    std::size_t dim = 0;
    for (const auto& m : matrices) {
        if (m.matrix == nullptr) {
            throw Error(ErrorCode::IoError, "null matrix for label '" + m.label + "'");
        }
        if (m.label.find_first_of(",\"\n") != std::string::npos) {
            throw Error(ErrorCode::IoError, "label '" + m.label + "' needs CSV quoting");
        }
        if (dim == 0) {
            dim = m.matrix->dim();
        } else if (m.matrix->dim() != dim && m.matrix->rows() > 0) {
            throw Error(ErrorCode::DimMismatch, "matrix '" + m.label + "' has dim " +
                                                    std::to_string(m.matrix->dim()) +
                                                    ", expected " + std::to_string(dim));
        }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    out << "label,row_index";
    for (std::size_t d = 0; d < dim; ++d) {
        out << ",v" << d;
    }
    out << '\n';
    char buf[64];
    for (const auto& m : matrices) {
        for (std::size_t i = 0; i < m.matrix->rows(); ++i) {
            out << m.label << ',' << i;
            for (double v : m.matrix->row(i)) {
                const auto res = std::to_chars(buf, buf + sizeof(buf), v);
                out << ',' << std::string_view(buf, res.ptr - buf);
            }
            out << '\n';
        }
    }
    if (!out) {
        throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
    }
}

} // namespace tomcap
