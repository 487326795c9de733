#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tomcap/datastore.hpp"
#include "tomcap/gap_correction.hpp"
#include "tomcap/prompt.hpp"
#include "tomcap/rerank.hpp"

namespace tomcap {

/// Which way queries/rows are moved when correcting the modality gap.
/// ImageToText: the datastore stays in text space and image queries are
/// corrected at inference. TextToImage: datastore rows and training queries
/// are corrected into image space; image queries are used as-is.
enum class CorrectionDirection { ImageToText, TextToImage };

std::string_view to_string(CorrectionDirection d);
CorrectionDirection parse_direction(std::string_view s);

struct DecoderEndpoint {
    enum class Kind { Top1, Echo, Subprocess, Http };

    Kind kind = Kind::Top1;
    /// Shell command (Subprocess) or base URL (Http).
    std::string target;
    std::chrono::milliseconds timeout{30000};

    /// "top1", "echo", "subprocess:<command>", or "http://host:port[/path]".
    static DecoderEndpoint parse(std::string_view text);
    std::string to_string() const;
};

/// Environment variable that overrides the configured decoder endpoint.
inline constexpr const char* kDecoderEnvVar = "TOMCAP_DECODER";

struct NoiseToggles {
    /// L-scaled noise on text queries when building training pairs.
    bool query_train = true;
    /// L-scaled noise on image queries at inference.
    bool query_infer = false;
    /// L-scaled noise on datastore rows at ingest.
    bool datastore = false;
    /// B-scaled noise on the decoder payload embeddings.
    bool decoder = true;
};

struct PipelineConfig {
    std::size_t K = 4;
    /// Retrieval-side noise scale.
    double L = 0.1;
    /// Decoder-side noise scale.
    double B = 0.125;
    CorrectionMode correction_mode = CorrectionMode::MeanStd;
    CorrectionDirection correction_direction = CorrectionDirection::ImageToText;
    double epsilon_floor = GapCorrector::kDefaultEpsilonFloor;
    NoiseMode noise_mode = NoiseMode::Fixed;
    NoiseToggles noise;
    OrderingPolicy ordering;
    std::optional<MmrConfig> rerank;
    Metric metric = Metric::L2;
    std::uint64_t seed = 0;
    DecoderEndpoint decoder;
    std::optional<std::size_t> K_train;
    bool exclude_self_in_training = false;
    std::optional<std::filesystem::path> image_stats;
    std::optional<std::filesystem::path> text_stats;
    /// Worker threads; output never depends on it.
    std::size_t threads = 1;
    /// Items in flight per reorder window.
    std::size_t window = 256;

    std::size_t train_k() const noexcept { return K_train.value_or(K); }

    /// Throws ConfigError on violated invariants.
    void validate() const;
};

/// Applies the keys present in `j` on top of `cfg`. Unknown keys are rejected.
void apply_config_json(PipelineConfig& cfg, const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);

} // namespace tomcap
