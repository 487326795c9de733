#include "tomcap/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "format_blocks.hpp"
#include "tomcap/error.hpp"
#include "tomcap/parallel.hpp"

namespace tomcap {

namespace {

// Lower key is better: squared distance for L2, negated similarity for Cosine.
struct Candidate {
    double key;
    std::uint64_t id;
    std::size_t row;
};

bool better(const Candidate& a, const Candidate& b) {
    return a.key < b.key || (a.key == b.key && a.id < b.id);
}

double row_norm(std::span<const float> row) {
    double acc = 0.0;
    for (float v : row) {
        acc += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(acc);
}

// Rows per CRC/read call when streaming the embedding block.
constexpr std::size_t kIoRowBlock = 4096;

} // namespace

std::string_view to_string(Metric m) { return m == Metric::L2 ? "l2" : "cosine"; }

Metric parse_metric(std::string_view s) {
    if (s == "l2" || s == "L2") return Metric::L2;
    if (s == "cosine" || s == "Cosine") return Metric::Cosine;
    throw Error(ErrorCode::ConfigError, "unknown metric '" + std::string(s) + "'");
}

DatastoreBuilder::DatastoreBuilder(std::size_t dim, Metric metric) {
    if (dim == 0) {
        throw Error(ErrorCode::BuildError, "datastore dim must be positive");
    }
    store_.dim_ = dim;
    store_.metric_ = metric;
}

void DatastoreBuilder::reserve(std::size_t rows) {
    store_.data_.reserve(rows * store_.dim_);
    store_.records_.reserve(rows);
}

void DatastoreBuilder::add(std::span<const double> embedding, CaptionRecord record) {
    if (embedding.size() != store_.dim_) {
        throw Error(ErrorCode::BuildError, "row " + std::to_string(size()) + " has dim " +
                                               std::to_string(embedding.size()) + ", store dim is " +
                                               std::to_string(store_.dim_));
    }
    try {
        require_finite(embedding);
    } catch (const Error& e) {
        throw Error(ErrorCode::BuildError, "row " + std::to_string(size()) + ": " + e.what());
    }
    if (record.text.empty()) {
        throw Error(ErrorCode::BuildError, "caption id " + std::to_string(record.id) + " has empty text");
    }
    if (!store_.row_by_id_.emplace(record.id, size()).second) {
        throw Error(ErrorCode::DuplicateId, "caption id " + std::to_string(record.id));
    }
    for (double v : embedding) {
        store_.data_.push_back(static_cast<float>(v));
    }
    store_.records_.push_back(std::move(record));
}

Datastore DatastoreBuilder::finish() && {
    store_.finalize();
    return std::move(store_);
}

void Datastore::finalize() {
    norms_.resize(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        norms_[i] = row_norm(row(i));
    }
}

Datastore Datastore::build(const EmbeddingMatrix& embeddings, std::vector<CaptionRecord> records,
                           Metric metric) {
    if (embeddings.rows() != records.size()) {
        throw Error(ErrorCode::BuildError, std::to_string(embeddings.rows()) +
                                               " embedding rows vs " +
                                               std::to_string(records.size()) + " captions");
    }
    DatastoreBuilder builder(embeddings.dim(), metric);
    builder.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        builder.add(embeddings.row(i), std::move(records[i]));
    }
    return std::move(builder).finish();
}

std::span<const float> Datastore::row(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
}

EmbeddingVector Datastore::row_vector(std::size_t i) const {
    const auto r = row(i);
    return EmbeddingVector(r.begin(), r.end());
}

std::optional<std::size_t> Datastore::row_of(std::uint64_t id) const {
    const auto it = row_by_id_.find(id);
    if (it == row_by_id_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::vector<SearchResult> Datastore::search(std::span<const double> query, std::size_t k,
                                            const SearchOptions& options) const {
    if (records_.empty()) {
        throw Error(ErrorCode::EmptyStore, "search on an empty datastore");
    }
    if (query.size() != dim_) {
        throw Error(ErrorCode::DimMismatch, "query dim " + std::to_string(query.size()) +
                                                " != store dim " + std::to_string(dim_));
    }
    if (k == 0) {
        throw Error(ErrorCode::InvalidK, "k must be at least 1");
    }

    const double query_norm = metric_ == Metric::Cosine ? norm(query) : 0.0;
    const std::size_t n = records_.size();
    const std::size_t chunks = resolve_threads(options.threads);
    std::vector<std::vector<Candidate>> partial(std::min(chunks, n));

    const auto heap_cmp = [](const Candidate& a, const Candidate& b) { return better(a, b); };
    parallel_chunks(n, chunks, [&](std::size_t c, std::size_t begin, std::size_t end) {
        auto& heap = partial[c];
        heap.reserve(k + 1);
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint64_t id = records_[i].id;
            if (options.exclude_id && *options.exclude_id == id) {
                continue;
            }
            const float* r = data_.data() + i * dim_;
            double key;
            if (metric_ == Metric::L2) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dim_; ++d) {
                    const double diff = query[d] - static_cast<double>(r[d]);
                    acc += diff * diff;
                }
                key = acc;
            } else {
                double acc = 0.0;
                for (std::size_t d = 0; d < dim_; ++d) {
                    acc += query[d] * static_cast<double>(r[d]);
                }
                const double denom = query_norm * norms_[i];
                key = denom == 0.0 ? 0.0 : -(acc / denom);
            }
            const Candidate cand{key, id, i};
            // Max-heap under better(): front is the worst kept candidate.
            if (heap.size() < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end(), heap_cmp);
            } else if (better(cand, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), heap_cmp);
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end(), heap_cmp);
            }
        }
    });

    std::vector<Candidate> merged;
    for (auto& p : partial) {
        merged.insert(merged.end(), p.begin(), p.end());
    }
    std::sort(merged.begin(), merged.end(), better);
    if (merged.size() > k) {
        merged.resize(k);
    }

    std::vector<SearchResult> out;
    out.reserve(merged.size());
    for (std::size_t r = 0; r < merged.size(); ++r) {
        const auto& c = merged[r];
        const double score = metric_ == Metric::L2 ? c.key : (c.key == 0.0 ? 0.0 : -c.key);
        out.push_back(SearchResult{c.id, r, score, c.row});
    }
    return out;
}

void Datastore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    detail::ByteWriter w(out);
    w.write_bytes(kStoreMagic, 4);
    w.write_int<std::uint32_t>(kStoreFormatVersion);
    w.write_int<std::uint32_t>(static_cast<std::uint32_t>(metric_));
    detail::write_embedding_block_header(w, static_cast<std::uint32_t>(dim_), size());
    for (std::size_t i = 0; i < size(); i += kIoRowBlock) {
        const std::size_t rows = std::min(kIoRowBlock, size() - i);
        w.write_f32_array(data_.data() + i * dim_, rows * dim_);
    }
    w.write_int<std::uint64_t>(size());
    for (const auto& r : records_) {
        w.write_int<std::uint64_t>(r.id);
        w.write_int<std::uint32_t>(static_cast<std::uint32_t>(r.text.size()));
        w.write_bytes(r.text.data(), r.text.size());
        w.write_int<std::uint32_t>(static_cast<std::uint32_t>(r.source.size()));
        w.write_bytes(r.source.data(), r.source.size());
    }
    const std::uint32_t crc = w.crc();
    w.write_int<std::uint32_t>(crc);
    out.close();
    if (!out) {
        throw Error(ErrorCode::IoError, "failed to finalize '" + path.string() + "'");
    }
}

Datastore Datastore::load(const std::filesystem::path& path) {
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    std::ifstream in(path, std::ios::binary);
    if (ec || !in) {
        throw FormatError(0, "cannot open store file '" + path.string() + "'");
    }
    detail::ByteReader r(in);
    const auto remaining = [&] { return file_size - r.offset(); };

    char magic[4];
    r.read_exact(magic, 4, "store magic");
    if (std::memcmp(magic, kStoreMagic, 4) != 0) {
        throw FormatError(0, "bad store magic, expected \"TOMS\"");
    }
    const auto version = r.read_int<std::uint32_t>("store version");
    if (version != kStoreFormatVersion) {
        throw FormatError(4, "unsupported store version " + std::to_string(version));
    }
    const auto metric_code = r.read_int<std::uint32_t>("metric code");
    if (metric_code > static_cast<std::uint32_t>(Metric::Cosine)) {
        throw FormatError(8, "unknown metric code " + std::to_string(metric_code));
    }
    const auto header = detail::read_embedding_block_header(r);
    const std::uint64_t payload_bytes = header.count * header.dim * sizeof(float);
    if (header.count != 0 && payload_bytes / header.count / sizeof(float) != header.dim) {
        throw FormatError(r.offset() - 8, "embedding count overflows");
    }
    if (payload_bytes > remaining()) {
        throw FormatError(file_size, "truncated embedding block: declares " +
                                         std::to_string(header.count) + " rows of dim " +
                                         std::to_string(header.dim));
    }

    DatastoreBuilder builder(header.dim, static_cast<Metric>(metric_code));
    Datastore& store = builder.store_;
    store.data_.resize(header.count * header.dim);
    for (std::uint64_t i = 0; i < header.count; i += kIoRowBlock) {
        const std::size_t rows = std::min<std::uint64_t>(kIoRowBlock, header.count - i);
        r.read_f32_array(store.data_.data() + i * header.dim, rows * header.dim, "embedding rows");
    }

    const std::uint64_t caption_count_offset = r.offset();
    const auto caption_count = r.read_int<std::uint64_t>("caption count");
    if (caption_count != header.count) {
        throw FormatError(caption_count_offset, "caption count " + std::to_string(caption_count) +
                                                    " != embedding count " +
                                                    std::to_string(header.count));
    }
    store.records_.reserve(caption_count);
    for (std::uint64_t i = 0; i < caption_count; ++i) {
        CaptionRecord rec;
        rec.id = r.read_int<std::uint64_t>("caption id");
        const std::uint64_t text_len_offset = r.offset();
        const auto text_len = r.read_int<std::uint32_t>("caption length");
        if (text_len > remaining()) {
            throw FormatError(file_size, "truncated caption text (length field at offset " +
                                             std::to_string(text_len_offset) + ")");
        }
        rec.text = r.read_string(text_len, "caption text");
        const auto source_len = r.read_int<std::uint32_t>("source length");
        if (source_len > remaining()) {
            throw FormatError(file_size, "truncated caption source");
        }
        rec.source = r.read_string(source_len, "caption source");
        if (!store.row_by_id_.emplace(rec.id, store.records_.size()).second) {
            throw FormatError(text_len_offset - 8, "duplicate caption id " + std::to_string(rec.id));
        }
        store.records_.push_back(std::move(rec));
    }

    const std::uint64_t trailer_offset = r.offset();
    const std::uint32_t computed = r.crc();
    const auto stored = r.read_int<std::uint32_t>("CRC32 trailer");
    if (stored != computed) {
        throw FormatError(trailer_offset, "CRC32 mismatch");
    }
    if (!r.at_end()) {
        throw FormatError(r.offset(), "trailing bytes after CRC32 trailer");
    }
    return std::move(builder).finish();
}

bool operator==(const Datastore& a, const Datastore& b) {
    if (a.dim_ != b.dim_ || a.metric_ != b.metric_ || a.records_ != b.records_ ||
        a.data_.size() != b.data_.size()) {
        return false;
    }
    return a.data_.empty() ||
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

std::vector<SearchResult> knn_search(const Datastore& store, std::span<const double> query,
                                     std::size_t k, const SearchOptions& options) {
    return store.search(query, k, options);
}

namespace {

void fill_prompt(const Datastore& store, std::span<const SearchResult> results,
                 RetrievalBundle& bundle) {
    bundle.neighbor_embeddings = EmbeddingMatrix(store.dim());
    for (const auto& res : results) {
        bundle.prompt_captions.push_back(store.record(res.row));
        bundle.neighbor_embeddings.append(store.row_vector(res.row));
    }
}

} // namespace

RetrievalBundle retrieve_for_inference(const Datastore& store, std::span<const double> query,
                                       std::size_t k, const SearchOptions& options) {
    RetrievalBundle bundle;
    bundle.raw_results = store.search(query, k, options);
    fill_prompt(store, bundle.raw_results, bundle);
    return bundle;
}

RetrievalBundle retrieve_for_training(const Datastore& store, std::span<const double> query,
                                      std::size_t k, const SearchOptions& options) {
    if (k == 0) {
        throw Error(ErrorCode::InvalidK, "k must be at least 1");
    }
    std::size_t eligible = store.size();
    if (options.exclude_id && store.row_of(*options.exclude_id)) {
        --eligible;
    }
    if (eligible < k + 1) {
        throw Error(ErrorCode::InsufficientStore, "training retrieval needs " +
                                                      std::to_string(k + 1) + " rows, store has " +
                                                      std::to_string(eligible) + " eligible");
    }
    RetrievalBundle bundle;
    bundle.raw_results = store.search(query, k + 1, options);
    bundle.target = store.record(bundle.raw_results.front().row);
    fill_prompt(store, std::span<const SearchResult>(bundle.raw_results).subspan(1), bundle);
    return bundle;
}

} // namespace tomcap
