#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "tomcap/embedding.hpp"
#include "tomcap/rng.hpp"

namespace tomcap {

enum class Modality { Image, Text };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

/// Per-dimension mean and standard deviation of one modality.
///
/// Standard deviations use the population (divide-by-N) convention.
struct ModalityStats {
    EmbeddingVector mean;
    EmbeddingVector std;
    std::uint64_t sample_count = 0;
    Modality modality = Modality::Text;

    std::size_t dim() const noexcept { return mean.size(); }

    friend bool operator==(const ModalityStats&, const ModalityStats&) = default;
};

/// Two-pass mean/std over the rows of `matrix`.
/// Throws StatsInsufficientData for fewer than two rows, InvalidEmbedding on NaN/Inf.
ModalityStats compute_stats(const EmbeddingMatrix& matrix, Modality modality);

/// Streaming (Welford) accumulator for inputs too large to hold in memory.
/// Rows are folded in arrival order, so results are deterministic.
class StatsAccumulator {
public:
    explicit StatsAccumulator(std::size_t dim);

    void add(std::span<const double> row);
    std::uint64_t count() const noexcept { return count_; }
    ModalityStats finish(Modality modality) const;

private:
    std::uint64_t count_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

enum class CorrectionMode { None, MeanOnly, MeanStd };

std::string_view to_string(CorrectionMode m);
CorrectionMode parse_correction_mode(std::string_view s);

/// Maps embeddings from the source modality's distribution onto the target's:
///
///   MeanStd:  out = (e - mu_src) * sigma_tgt / max(sigma_src, floor) + mu_tgt
///   MeanOnly: out = e - mu_src + mu_tgt
///   None:     out = e
///
/// Direction-generic: text->image when moving caption embeddings toward the
/// image distribution, image->text when moving image queries into a
/// text-embedded datastore.
class GapCorrector {
public:
    static constexpr double kDefaultEpsilonFloor = 1e-8;

    GapCorrector(ModalityStats source, ModalityStats target, CorrectionMode mode,
                 double epsilon_floor = kDefaultEpsilonFloor);

    /// Identity corrector of the given dim.
    static GapCorrector identity(std::size_t dim);

    EmbeddingVector apply(std::span<const double> e) const;
    void apply_in_place(std::span<double> e) const;

    /// Corrector with source and target swapped.
    GapCorrector inverse() const;

    const ModalityStats& source() const noexcept { return source_; }
    const ModalityStats& target() const noexcept { return target_; }
    CorrectionMode mode() const noexcept { return mode_; }
    double epsilon_floor() const noexcept { return epsilon_floor_; }
    std::size_t dim() const noexcept { return source_.dim(); }

private:
    ModalityStats source_;
    ModalityStats target_;
    CorrectionMode mode_;
    double epsilon_floor_;
    // sigma_tgt / max(sigma_src, floor), per dimension.
    std::vector<double> ratio_;
};

/// Throws DimMismatch when e.size() != corrector.dim().
EmbeddingVector correct(std::span<const double> e, const GapCorrector& corrector);

enum class NoiseMode { Fixed, Resampled };

std::string_view to_string(NoiseMode m);
NoiseMode parse_noise_mode(std::string_view s);

struct NoiseConfig {
    double scale = 0.0;
    NoiseMode mode = NoiseMode::Fixed;
    std::uint64_t seed = 0;
};

/// out[d] = e[d] + z_d * s_d with z_d ~ N(0,1).
/// Fixed: s_d = scale. Resampled: s_d = |w_d| * scale, w_d ~ N(0,1) drawn per
/// call. Per dimension the draw order is z_d then (Resampled only) w_d.
EmbeddingVector inject_noise(std::span<const double> e, const NoiseConfig& cfg, Rng& rng);

/// Same, using a fresh generator seeded from cfg.seed.
EmbeddingVector inject_noise(std::span<const double> e, const NoiseConfig& cfg);

/// Mean Euclidean distance between paired rows after correction. The
/// corrector is applied to whichever matrix holds its source modality; the
/// other side is left as-is. Throws PairMismatch on row-count mismatch.
double gap_radius(const EmbeddingMatrix& paired_image, const EmbeddingMatrix& paired_text,
                  const GapCorrector& corrector);

// Stats file: {version, dim, modality_tag, sample_count, mean, std}.
inline constexpr int kStatsFormatVersion = 1;

std::string stats_to_json(const ModalityStats& stats);
ModalityStats stats_from_json(std::string_view text);
void save_stats(const ModalityStats& stats, const std::filesystem::path& path);
ModalityStats load_stats(const std::filesystem::path& path);

} // namespace tomcap
