#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomcap/config.hpp"
#include "tomcap/datastore.hpp"
#include "tomcap/decoder.hpp"
#include "tomcap/error.hpp"
#include "tomcap/gap_correction.hpp"
#include "tomcap/metrics.hpp"

namespace tomcap {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// Process exit codes shared by every subcommand.
enum class ExitCode : int { Ok = 0, ItemFailures = 1, Fatal = 2 };

/// Corrector for text-side embeddings: datastore rows at ingest and text
/// queries for training pairs. Identity unless the direction is
/// text_to_image. Loads the stats files it needs; ConfigError if missing.
GapCorrector text_side_corrector(const PipelineConfig& cfg, std::size_t dim);

/// Corrector for image queries at inference. Identity unless the direction
/// is image_to_text.
GapCorrector image_side_corrector(const PipelineConfig& cfg, std::size_t dim);

struct IngestSummary {
    std::size_t rows = 0;
    std::size_t dim = 0;
};

/// Reads embeddings + captions, corrects (and optionally noises) every row,
/// writes the store file. Streams rows; the whole corpus is never held as double.
IngestSummary run_ingest(const std::filesystem::path& embeddings_path,
                         const std::filesystem::path& captions_path, const PipelineConfig& cfg,
                         const std::filesystem::path& out_store);

/// One query's output line.
struct CaptionRecordOut {
    std::uint64_t image_id = 0;
    bool ok = false;
    std::string caption;
    std::string prompt;
    std::vector<std::uint64_t> neighbor_ids;
    ErrorCode error_code = ErrorCode::ProtocolError;
    std::string error_message;
    std::string request_id;

    std::string to_jsonl() const;
};

struct InferSummary {
    std::size_t items = 0;
    std::size_t failures = 0;
};

/// Everything up to (not including) the decoder call for one image query.
/// Exposed for tests and for callers driving their own decoder loop.
DecoderRequest prepare_inference_request(const Datastore& store, std::span<const double> raw_query,
                                         std::size_t index, const GapCorrector& image_corrector,
                                         const PipelineConfig& cfg,
                                         std::vector<std::uint64_t>* neighbor_ids);

/// Per query: correct -> retrieve (or MMR over the pool) -> order -> prompt ->
/// decoder. Writes one JSON line per query, in input order. Item failures are
/// recorded in their line and counted; they do not stop the run.
InferSummary run_infer(const Datastore& store, const std::filesystem::path& queries_path,
                       const std::vector<std::uint64_t>& image_ids, const PipelineConfig& cfg,
                       Decoder& decoder, std::ostream& out);

struct TrainPairsSummary {
    std::size_t items = 0;
};

/// For each raw text embedding: correct, add L-noise, retrieve K_train+1,
/// emit {input_embedding_ref, prompt, target, target_id, neighbor_ids}.
/// `caption_ids[i]` names the caption behind row i; required only when
/// cfg.exclude_self_in_training is set.
TrainPairsSummary run_train_pairs(const Datastore& store, const std::filesystem::path& text_embeddings,
                                  const std::vector<std::uint64_t>& caption_ids,
                                  const PipelineConfig& cfg, std::ostream& out);

struct EvalResult {
    MetricReport report;
    std::vector<EvalInstance> instances;
    std::vector<std::uint64_t> unmatched_ids;
};

/// Joins candidates ({"image_id", "caption"|"candidate"}) with references
/// ({"image_id", "references"}) on image_id and scores the matched pairs.
EvalResult run_eval(const std::filesystem::path& candidates_path,
                    const std::filesystem::path& references_path);

/// Reads image ids from JSON Lines ({"image_id": n} or {"id": n}).
std::vector<std::uint64_t> read_query_ids(const std::filesystem::path& path);

/// Run manifest: tool version, command, resolved config, seeds, file CRCs.
struct RunManifest {
    std::string command;
    nlohmann::ordered_json config;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
    nlohmann::ordered_json extra = nlohmann::ordered_json::object();

    nlohmann::ordered_json to_json() const;
    void write(const std::filesystem::path& path) const;
};

} // namespace tomcap
