#pragma once

// Little-endian binary reading/writing with byte-offset tracking and an
// optional running CRC32. Internal to the core library.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include <zlib.h>

#include "tomcap/error.hpp"

namespace tomcap::detail {

class ByteReader {
public:
    explicit ByteReader(std::istream& in) : in_(in) {}

    std::uint64_t offset() const noexcept { return offset_; }
    std::uint32_t crc() const noexcept { return crc_; }

    void read_exact(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        if (got != n) {
            throw FormatError(offset_ + got, std::string("truncated while reading ") + what);
        }
        crc_ = static_cast<std::uint32_t>(
            ::crc32(crc_, static_cast<const Bytef*>(dst), static_cast<uInt>(n)));
        offset_ += n;
    }

    template <typename T>
        requires std::is_integral_v<T>
    T read_int(const char* what) {
        std::array<unsigned char, sizeof(T)> buf{};
        read_exact(buf.data(), buf.size(), what);
        std::make_unsigned_t<T> v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
        }
        return static_cast<T>(v);
    }

    float read_f32(const char* what) { return std::bit_cast<float>(read_int<std::uint32_t>(what)); }

    void read_f32_array(float* dst, std::size_t n, const char* what) {
        read_exact(dst, n * sizeof(float), what);
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < n; ++i) {
                dst[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(dst[i])));
            }
        }
    }

    std::string read_string(std::size_t n, const char* what) {
        std::string s(n, '\0');
        if (n > 0) {
            read_exact(s.data(), n, what);
        }
        return s;
    }

    /// True if the stream has no bytes left.
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
    std::uint32_t crc_ = static_cast<std::uint32_t>(::crc32(0L, Z_NULL, 0));
};

class ByteWriter {
public:
    explicit ByteWriter(std::ostream& out) : out_(out) {}

    std::uint64_t offset() const noexcept { return offset_; }
    std::uint32_t crc() const noexcept { return crc_; }

    void write_bytes(const void* src, std::size_t n) {
        out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
        if (!out_) {
            throw Error(ErrorCode::IoError, "write failed at offset " + std::to_string(offset_));
        }
        crc_ = static_cast<std::uint32_t>(
            ::crc32(crc_, static_cast<const Bytef*>(src), static_cast<uInt>(n)));
        offset_ += n;
    }

    template <typename T>
        requires std::is_integral_v<T>
    void write_int(T value) {
        std::array<unsigned char, sizeof(T)> buf{};
        auto v = static_cast<std::make_unsigned_t<T>>(value);
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf[i] = static_cast<unsigned char>(v >> (8 * i));
        }
        write_bytes(buf.data(), buf.size());
    }

    void write_f32(float v) { write_int(std::bit_cast<std::uint32_t>(v)); }

    void write_f32_array(const float* src, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            write_bytes(src, n * sizeof(float));
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                write_f32(src[i]);
            }
        }
    }

private:
    std::ostream& out_;
    std::uint64_t offset_ = 0;
    std::uint32_t crc_ = static_cast<std::uint32_t>(::crc32(0L, Z_NULL, 0));
};

} // namespace tomcap::detail
