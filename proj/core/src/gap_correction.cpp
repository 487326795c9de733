#include "tomcap/gap_correction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tomcap/error.hpp"

namespace tomcap {

namespace {

void require_dim(std::size_t got, std::size_t want) {
    if (got != want) {
        throw Error(ErrorCode::DimMismatch,
                    "got dim " + std::to_string(got) + ", expected " + std::to_string(want));
    }
}

void validate_stats(const ModalityStats& s) {
    if (s.mean.empty() || s.mean.size() != s.std.size()) {
        throw Error(ErrorCode::InvalidEmbedding, "stats mean/std arrays empty or unequal");
    }
    require_finite(s.mean);
    require_finite(s.std);
    for (double v : s.std) {
        if (v < 0.0) {
            throw Error(ErrorCode::InvalidEmbedding, "negative standard deviation in stats");
        }
    }
}

} // namespace

std::string_view to_string(Modality m) { return m == Modality::Image ? "image" : "text"; }

Modality parse_modality(std::string_view s) {
    if (s == "image") return Modality::Image;
    if (s == "text") return Modality::Text;
    throw Error(ErrorCode::ConfigError, "unknown modality '" + std::string(s) + "'");
}

ModalityStats compute_stats(const EmbeddingMatrix& matrix, Modality modality) {
    if (matrix.rows() < 2) {
        throw Error(ErrorCode::StatsInsufficientData,
                    "need at least 2 rows, got " + std::to_string(matrix.rows()));
    }
    const std::size_t dim = matrix.dim();
    ModalityStats out;
    out.modality = modality;
    out.sample_count = matrix.rows();
    out.mean.assign(dim, 0.0);
    out.std.assign(dim, 0.0);

    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        const auto row = matrix.row(i);
        require_finite(row);
        for (std::size_t d = 0; d < dim; ++d) {
            out.mean[d] += row[d];
        }
    }
    const double n = static_cast<double>(matrix.rows());
    for (double& m : out.mean) {
        m /= n;
    }
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        const auto row = matrix.row(i);
        for (std::size_t d = 0; d < dim; ++d) {
            const double dev = row[d] - out.mean[d];
            out.std[d] += dev * dev;
        }
    }
    for (double& s : out.std) {
        s = std::sqrt(s / n);
    }
    return out;
}

StatsAccumulator::StatsAccumulator(std::size_t dim) : mean_(dim, 0.0), m2_(dim, 0.0) {}

void StatsAccumulator::add(std::span<const double> row) {
    require_dim(row.size(), mean_.size());
    require_finite(row);
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t d = 0; d < row.size(); ++d) {
        const double delta = row[d] - mean_[d];
        mean_[d] += delta / n;
        m2_[d] += delta * (row[d] - mean_[d]);
    }
}

ModalityStats StatsAccumulator::finish(Modality modality) const {
    if (count_ < 2) {
        throw Error(ErrorCode::StatsInsufficientData,
                    "need at least 2 rows, got " + std::to_string(count_));
    }
    ModalityStats out;
    out.modality = modality;
    out.sample_count = count_;
    out.mean = mean_;
    out.std.resize(m2_.size());
    const double n = static_cast<double>(count_);
    std::transform(m2_.begin(), m2_.end(), out.std.begin(),
                   [n](double m2) { return std::sqrt(std::max(m2, 0.0) / n); });
    return out;
}

std::string_view to_string(CorrectionMode m) {
    switch (m) {
    case CorrectionMode::None: return "none";
    case CorrectionMode::MeanOnly: return "mean";
    case CorrectionMode::MeanStd: return "mean_std";
    }
    return "none";
}

CorrectionMode parse_correction_mode(std::string_view s) {
    if (s == "none") return CorrectionMode::None;
    if (s == "mean" || s == "mean_only") return CorrectionMode::MeanOnly;
    if (s == "mean_std" || s == "meanstd") return CorrectionMode::MeanStd;
    throw Error(ErrorCode::ConfigError, "unknown correction mode '" + std::string(s) + "'");
}

GapCorrector::GapCorrector(ModalityStats source, ModalityStats target, CorrectionMode mode,
                           double epsilon_floor)
    : source_(std::move(source)), target_(std::move(target)), mode_(mode),
      epsilon_floor_(epsilon_floor) {
    validate_stats(source_);
    validate_stats(target_);
    require_dim(target_.dim(), source_.dim());
    if (!(epsilon_floor_ > 0.0)) {
        throw Error(ErrorCode::ConfigError, "epsilon_floor must be positive");
    }
    ratio_.resize(source_.dim());
    for (std::size_t d = 0; d < ratio_.size(); ++d) {
        ratio_[d] = target_.std[d] / std::max(source_.std[d], epsilon_floor_);
    }
}

GapCorrector GapCorrector::identity(std::size_t dim) {
    ModalityStats s{EmbeddingVector(dim, 0.0), EmbeddingVector(dim, 1.0), 2, Modality::Text};
    return GapCorrector(s, s, CorrectionMode::None);
}

void GapCorrector::apply_in_place(std::span<double> e) const {
    require_dim(e.size(), dim());
    switch (mode_) {
    case CorrectionMode::None:
        return;
    case CorrectionMode::MeanOnly:
        for (std::size_t d = 0; d < e.size(); ++d) {
            e[d] = e[d] - source_.mean[d] + target_.mean[d];
        }
        return;
    case CorrectionMode::MeanStd:
        for (std::size_t d = 0; d < e.size(); ++d) {
            e[d] = (e[d] - source_.mean[d]) * ratio_[d] + target_.mean[d];
        }
        return;
    }
}

EmbeddingVector GapCorrector::apply(std::span<const double> e) const {
    EmbeddingVector out(e.begin(), e.end());
    apply_in_place(out);
    return out;
}

GapCorrector GapCorrector::inverse() const {
    return GapCorrector(target_, source_, mode_, epsilon_floor_);
}

EmbeddingVector correct(std::span<const double> e, const GapCorrector& corrector) {
    return corrector.apply(e);
}

std::string_view to_string(NoiseMode m) { return m == NoiseMode::Fixed ? "fixed" : "resampled"; }

NoiseMode parse_noise_mode(std::string_view s) {
    if (s == "fixed") return NoiseMode::Fixed;
    if (s == "resampled") return NoiseMode::Resampled;
    throw Error(ErrorCode::ConfigError, "unknown noise mode '" + std::string(s) + "'");
}

EmbeddingVector inject_noise(std::span<const double> e, const NoiseConfig& cfg, Rng& rng) {
    EmbeddingVector out(e.begin(), e.end());
    if (cfg.scale == 0.0) {
        return out;
    }
    for (double& v : out) {
        const double z = rng.normal();
        double s = cfg.scale;
        if (cfg.mode == NoiseMode::Resampled) {
            s *= std::abs(rng.normal());
        }
        v += z * s;
    }
    return out;
}

EmbeddingVector inject_noise(std::span<const double> e, const NoiseConfig& cfg) {
    Rng rng(cfg.seed);
    return inject_noise(e, cfg, rng);
}

double gap_radius(const EmbeddingMatrix& paired_image, const EmbeddingMatrix& paired_text,
                  const GapCorrector& corrector) {
    if (paired_image.rows() != paired_text.rows()) {
        throw Error(ErrorCode::PairMismatch, std::to_string(paired_image.rows()) +
                                                 " image rows vs " +
                                                 std::to_string(paired_text.rows()) + " text rows");
    }
    if (paired_image.rows() == 0) {
        return 0.0;
    }
    require_dim(paired_text.dim(), paired_image.dim());
    const bool correct_image = corrector.source().modality == Modality::Image;
    double total = 0.0;
    for (std::size_t i = 0; i < paired_image.rows(); ++i) {
        const auto img = paired_image.row(i);
        const auto txt = paired_text.row(i);
        if (correct_image) {
            total += std::sqrt(squared_l2(corrector.apply(img), txt));
        } else {
            total += std::sqrt(squared_l2(img, corrector.apply(txt)));
        }
    }
    return total / static_cast<double>(paired_image.rows());
}

std::string stats_to_json(const ModalityStats& stats) {
    nlohmann::json j;
    j["version"] = kStatsFormatVersion;
    j["dim"] = stats.dim();
    j["modality_tag"] = to_string(stats.modality);
    j["sample_count"] = stats.sample_count;
    j["mean"] = stats.mean;
    j["std"] = stats.std;
    return j.dump(2);
}

ModalityStats stats_from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(e.byte, std::string("stats file is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != kStatsFormatVersion) {
            throw FormatError(0, "unsupported stats version " + j.at("version").dump());
        }
        ModalityStats s;
        s.modality = parse_modality(j.at("modality_tag").get<std::string>());
        s.sample_count = j.at("sample_count").get<std::uint64_t>();
        s.mean = j.at("mean").get<std::vector<double>>();
        s.std = j.at("std").get<std::vector<double>>();
        const auto dim = j.at("dim").get<std::size_t>();
        if (s.mean.size() != dim || s.std.size() != dim) {
            throw FormatError(0, "stats arrays do not match declared dim " + std::to_string(dim));
        }
        if (s.sample_count < 2) {
            throw FormatError(0, "stats sample_count must be at least 2");
        }
        validate_stats(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("malformed stats document: ") + e.what());
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(0, std::string("invalid stats document: ") + e.what());
    }
}

void save_stats(const ModalityStats& stats, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    }
    out << stats_to_json(stats) << '\n';
    if (!out) {
        throw Error(ErrorCode::IoError, "write failed for " + path.string());
    }
}

ModalityStats load_stats(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return stats_from_json(buf.str());
}

} // namespace tomcap
