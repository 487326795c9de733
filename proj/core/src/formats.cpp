#include "tomcap/formats.hpp"

#include <cstring>

#include <json.hpp>

#include "format_blocks.hpp"
#include "tomcap/error.hpp"

namespace tomcap {

namespace {

EmbeddingFileHeader read_embedding_header(detail::ByteReader& reader) {
    char magic[4];
    reader.read_exact(magic, 4, "embedding magic");
    if (std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
        throw FormatError(reader.offset() - 4, "bad embedding magic, expected \"TOMC\"");
    }
    EmbeddingFileHeader h;
    h.version = reader.read_int<std::uint32_t>("embedding version");
    if (h.version != kEmbeddingFormatVersion) {
        throw FormatError(reader.offset() - 4,
                          "unsupported embedding format version " + std::to_string(h.version));
    }
    h.dtype = reader.read_int<std::uint32_t>("embedding dtype");
    if (h.dtype != kDtypeFloat32) {
        throw FormatError(reader.offset() - 4, "unsupported dtype code " + std::to_string(h.dtype));
    }
    h.dim = reader.read_int<std::uint32_t>("embedding dim");
    if (h.dim == 0) {
        throw FormatError(reader.offset() - 4, "embedding dim must be positive");
    }
    h.count = reader.read_int<std::uint64_t>("embedding count");
    return h;
}

} // namespace

namespace detail {

// Shared with the store file, which embeds an embedding block verbatim.
EmbeddingFileHeader read_embedding_block_header(ByteReader& reader) {
    return read_embedding_header(reader);
}

void write_embedding_block_header(ByteWriter& writer, std::uint32_t dim, std::uint64_t count) {
    writer.write_bytes(kEmbeddingMagic, 4);
    writer.write_int<std::uint32_t>(kEmbeddingFormatVersion);
    writer.write_int<std::uint32_t>(kDtypeFloat32);
    writer.write_int<std::uint32_t>(dim);
    writer.write_int<std::uint64_t>(count);
}

} // namespace detail

EmbeddingReader::EmbeddingReader(const std::filesystem::path& path)
    : in_(path, std::ios::binary) {
    if (!in_) {
        throw FormatError(0, "cannot open embedding file '" + path.string() + "'");
    }
    detail::ByteReader reader(in_);
    header_ = read_embedding_header(reader);
    buffer_.resize(header_.dim);
}

bool EmbeddingReader::next(EmbeddingVector& row) {
    if (rows_read_ == header_.count) {
        return false;
    }
    const std::uint64_t row_offset =
        kEmbeddingHeaderSize + rows_read_ * header_.dim * sizeof(float);
    in_.read(reinterpret_cast<char*>(buffer_.data()),
             static_cast<std::streamsize>(buffer_.size() * sizeof(float)));
    const auto got = static_cast<std::uint64_t>(in_.gcount());
    if (got != buffer_.size() * sizeof(float)) {
        throw FormatError(row_offset + got, "truncated embedding data at row " +
                                                std::to_string(rows_read_) + " of " +
                                                std::to_string(header_.count));
    }
    if constexpr (std::endian::native == std::endian::big) {
        for (float& f : buffer_) {
            f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
        }
    }
    row.assign(buffer_.begin(), buffer_.end());
    ++rows_read_;
    return true;
}

EmbeddingWriter::EmbeddingWriter(const std::filesystem::path& path, std::size_t dim)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), dim_(dim), buffer_(dim) {
    if (!out_) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    if (dim == 0 || dim > UINT32_MAX) {
        throw Error(ErrorCode::DimMismatch, "embedding dim out of range");
    }
    detail::ByteWriter writer(out_);
    detail::write_embedding_block_header(writer, static_cast<std::uint32_t>(dim), 0);
}

EmbeddingWriter::~EmbeddingWriter() {
    if (!closed_) {
        try {
            close();
        } catch (...) {
        }
    }
}

void EmbeddingWriter::write(std::span<const double> row) {
    if (row.size() != dim_) {
        throw Error(ErrorCode::DimMismatch, "row dim " + std::to_string(row.size()) +
                                                " != file dim " + std::to_string(dim_));
    }
    for (std::size_t d = 0; d < dim_; ++d) {
        buffer_[d] = static_cast<float>(row[d]);
    }
    detail::ByteWriter writer(out_);
    writer.write_f32_array(buffer_.data(), buffer_.size());
    ++count_;
}

void EmbeddingWriter::close() {
    if (closed_) {
        return;
    }
    closed_ = true;
    out_.seekp(16);
    detail::ByteWriter writer(out_);
    writer.write_int<std::uint64_t>(count_);
    out_.close();
    if (!out_) {
        throw Error(ErrorCode::IoError, "failed to finalize '" + path_.string() + "'");
    }
}

EmbeddingMatrix read_embedding_file(const std::filesystem::path& path) {
    EmbeddingReader reader(path);
    EmbeddingMatrix m(reader.dim());
    EmbeddingVector row;
    while (reader.next(row)) {
        m.append(row);
    }
    return m;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
    EmbeddingWriter writer(path, matrix.dim());
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        writer.write(matrix.row(i));
    }
    writer.close();
}

std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(0, "cannot open caption file '" + path.string() + "'");
    }
    std::vector<CaptionRecord> out;
    std::string line;
    std::uint64_t offset = 0;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
        const std::uint64_t line_start = offset;
        offset += line.size() + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            CaptionRecord r;
            r.id = j.at("id").get<std::uint64_t>();
            r.text = j.at("text").get<std::string>();
            r.source = j.value("source", std::string{});
            if (r.text.empty()) {
                throw FormatError(line_start, "empty caption text on line " + std::to_string(line_no));
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(line_start, "malformed caption on line " + std::to_string(line_no) +
                                              ": " + e.what());
        }
    }
    return out;
}

void write_captions(const std::filesystem::path& path, std::span<const CaptionRecord> records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
    }
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["text"] = r.text;
        j["source"] = r.source;
        out << j.dump() << '\n';
    }
    if (!out) {
        throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
    }
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    }
    auto crc = ::crc32(0L, Z_NULL, 0);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = in.gcount();
        if (n > 0) {
            crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n));
        }
    }
    return static_cast<std::uint32_t>(crc);
}

} // namespace tomcap
