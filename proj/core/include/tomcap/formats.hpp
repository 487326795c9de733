#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tomcap/embedding.hpp"

namespace tomcap {

// Embedding file, little-endian:
//   offset  0  magic "TOMC"
//   offset  4  u32 format version (1)
//   offset  8  u32 dtype code (0 = float32)
//   offset 12  u32 dim
//   offset 16  u64 count
//   offset 24  count * dim values, row-major
inline constexpr char kEmbeddingMagic[4] = {'T', 'O', 'M', 'C'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::size_t kEmbeddingHeaderSize = 24;

struct EmbeddingFileHeader {
    std::uint32_t version = kEmbeddingFormatVersion;
    std::uint32_t dtype = kDtypeFloat32;
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
};

/// Streams rows out of an embedding file without loading it whole.
class EmbeddingReader {
public:
    explicit EmbeddingReader(const std::filesystem::path& path);

    const EmbeddingFileHeader& header() const noexcept { return header_; }
    std::size_t dim() const noexcept { return header_.dim; }
    std::uint64_t count() const noexcept { return header_.count; }

    /// Reads the next row into `row` (resized to dim). Returns false after the last row.
    bool next(EmbeddingVector& row);

private:
    std::ifstream in_;
    EmbeddingFileHeader header_;
    std::uint64_t rows_read_ = 0;
    std::vector<float> buffer_;
};

/// Writes rows as float32; the count in the header is patched on close().
class EmbeddingWriter {
public:
    EmbeddingWriter(const std::filesystem::path& path, std::size_t dim);
    ~EmbeddingWriter();

    EmbeddingWriter(const EmbeddingWriter&) = delete;
    EmbeddingWriter& operator=(const EmbeddingWriter&) = delete;

    void write(std::span<const double> row);
    void close();

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::size_t dim_;
    std::uint64_t count_ = 0;
    std::vector<float> buffer_;
    bool closed_ = false;
};

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& matrix);

struct CaptionRecord {
    std::uint64_t id = 0;
    std::string text;
    std::string source;

    friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

/// Caption file: JSON Lines, {"id": n, "text": "...", "source": "..."} per line.
/// Malformed lines raise FormatError carrying the byte offset of the line start.
std::vector<CaptionRecord> read_captions(const std::filesystem::path& path);
void write_captions(const std::filesystem::path& path, std::span<const CaptionRecord> records);

/// CRC32 of a whole file, for run manifests.
std::uint32_t file_crc32(const std::filesystem::path& path);

} // namespace tomcap
