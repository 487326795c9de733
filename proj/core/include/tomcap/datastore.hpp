#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tomcap/embedding.hpp"
#include "tomcap/formats.hpp"

namespace tomcap {

enum class Metric : std::uint32_t { L2 = 0, Cosine = 1 };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

/// One neighbor. For L2 the score is the squared Euclidean distance (lower is
/// better); for Cosine it is the cosine similarity (higher is better).
struct SearchResult {
    std::uint64_t id = 0;
    std::size_t rank = 0;
    double score = 0.0;
    std::size_t row = 0;

    friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

struct SearchOptions {
    /// Worker threads for the scan; 0 = hardware concurrency. Results do not depend on it.
    std::size_t threads = 1;
    /// Row with this id is skipped entirely.
    std::optional<std::uint64_t> exclude_id;
};

/// Immutable caption store with exact flat search.
///
/// Rows are held as contiguous row-major float32, matching the on-disk
/// format; distances are accumulated in double. Ties on score are broken by
/// ascending id, so results are a pure function of (store, query, k).
class Datastore {
public:
    /// Throws BuildError on count/dim mismatch, DuplicateId on repeated ids.
    static Datastore build(const EmbeddingMatrix& embeddings, std::vector<CaptionRecord> records,
                           Metric metric = Metric::L2);

    std::size_t size() const noexcept { return records_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    Metric metric() const noexcept { return metric_; }

    const CaptionRecord& record(std::size_t row) const { return records_.at(row); }
    std::span<const CaptionRecord> records() const noexcept { return records_; }
    std::span<const float> row(std::size_t i) const;
    EmbeddingVector row_vector(std::size_t i) const;
    std::optional<std::size_t> row_of(std::uint64_t id) const;

    /// Exact top-k. Returns min(k, eligible rows) results, best first.
    /// Throws DimMismatch, EmptyStore, or InvalidK (k == 0).
    std::vector<SearchResult> search(std::span<const double> query, std::size_t k,
                                     const SearchOptions& options = {}) const;

    /// Store file: "TOMS" magic, u32 version, u32 metric code, an embedded
    /// embedding block (same layout as an embedding file), the caption block,
    /// and a CRC32 of everything before it.
    void save(const std::filesystem::path& path) const;
    static Datastore load(const std::filesystem::path& path);

    friend bool operator==(const Datastore& a, const Datastore& b);

private:
    friend class DatastoreBuilder;
    Datastore() = default;

    void finalize();

    std::size_t dim_ = 0;
    Metric metric_ = Metric::L2;
    std::vector<float> data_;
    std::vector<double> norms_;
    std::vector<CaptionRecord> records_;
    std::unordered_map<std::uint64_t, std::size_t> row_by_id_;
};

/// Row-at-a-time construction for corpora streamed from disk.
class DatastoreBuilder {
public:
    DatastoreBuilder(std::size_t dim, Metric metric);

    void reserve(std::size_t rows);
    void add(std::span<const double> embedding, CaptionRecord record);
    std::size_t size() const noexcept { return store_.records_.size(); }
    Datastore finish() &&;

private:
    friend class Datastore;
    Datastore store_;
};

inline constexpr char kStoreMagic[4] = {'T', 'O', 'M', 'S'};
inline constexpr std::uint32_t kStoreFormatVersion = 1;

std::vector<SearchResult> knn_search(const Datastore& store, std::span<const double> query,
                                     std::size_t k, const SearchOptions& options = {});

struct RetrievalBundle {
    std::optional<CaptionRecord> target;
    /// Decreasing-similarity order.
    std::vector<CaptionRecord> prompt_captions;
    std::vector<SearchResult> raw_results;
    /// One row per prompt caption, aligned with prompt_captions.
    EmbeddingMatrix neighbor_embeddings;
};

/// Top-K neighbors as prompt captions; no target.
RetrievalBundle retrieve_for_inference(const Datastore& store, std::span<const double> query,
                                       std::size_t k, const SearchOptions& options = {});

/// Top-(K+1) neighbors after excluding `options.exclude_id`; the best becomes
/// the target and the other K the prompt captions. Throws InsufficientStore
/// when fewer than K+1 rows are eligible.
RetrievalBundle retrieve_for_training(const Datastore& store, std::span<const double> query,
                                      std::size_t k, const SearchOptions& options = {});

} // namespace tomcap
