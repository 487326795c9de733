#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tomcap {

enum class ErrorCode {
    StatsInsufficientData,
    InvalidEmbedding,
    DimMismatch,
    PairMismatch,
    BuildError,
    DuplicateId,
    FormatError,
    EmptyStore,
    InsufficientStore,
    EmptyCandidates,
    EmptyPrompt,
    InvalidK,
    IoError,
    ConfigError,
    Timeout,
    ProtocolError,
    NonzeroExit,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Malformed binary or text input. `offset()` is the byte offset (or, for
/// line-oriented files, the line number) where parsing stopped.
class FormatError : public Error {
public:
    FormatError(std::uint64_t offset, const std::string& message);

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Failure at the decoder boundary; always tagged with the request it belongs to.
class DecoderError : public Error {
public:
    DecoderError(ErrorCode code, std::string request_id, const std::string& message);

    const std::string& request_id() const noexcept { return request_id_; }

private:
    std::string request_id_;
};

} // namespace tomcap
