#include "tomcap/error.hpp"

namespace tomcap {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::StatsInsufficientData: return "StatsInsufficientData";
    case ErrorCode::InvalidEmbedding: return "InvalidEmbedding";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::PairMismatch: return "PairMismatch";
    case ErrorCode::BuildError: return "BuildError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::InsufficientStore: return "InsufficientStore";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::NonzeroExit: return "NonzeroExit";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

FormatError::FormatError(std::uint64_t offset, const std::string& message)
    : Error(ErrorCode::FormatError, message + " (at offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

DecoderError::DecoderError(ErrorCode code, std::string request_id, const std::string& message)
    : Error(code, "request " + request_id + ": " + message), request_id_(std::move(request_id)) {}

} // namespace tomcap
