#include "verbcal/error.hpp"

namespace verbcal {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::WrongArity: return "WrongArity";
    case ErrorCode::NoJson: return "NoJson";
    case ErrorCode::BadSchema: return "BadSchema";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::MissingLogprobs: return "MissingLogprobs";
    case ErrorCode::SpanNotFound: return "SpanNotFound";
    case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::LogprobsUnsupported: return "LogprobsUnsupported";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingVerdict: return "MissingVerdict";
    case ErrorCode::NoValidSamples: return "NoValidSamples";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NTooLarge: return "NTooLarge";
    case ErrorCode::ProbeFailed: return "ProbeFailed";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace verbcal
