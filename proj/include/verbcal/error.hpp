#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace verbcal {

enum class ErrorCode {
  InvalidArgument,
  WrongArity,
  NoJson,
  BadSchema,
  OutOfRange,
  MissingLogprobs,
  SpanNotFound,
  UnparseableVerdict,
  Timeout,
  HttpError,
  LogprobsUnsupported,
  EmptyInput,
  MissingVerdict,
  NoValidSamples,
  SchemaError,
  DuplicateId,
  NTooLarge,
  ProbeFailed,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& body)
      : Error(ErrorCode::HttpError, "status " + std::to_string(status) + ": " + body), status_(status) {}

  int status() const noexcept { return status_; }
  bool transient() const noexcept { return status_ == 429 || status_ >= 500; }

 private:
  int status_;
};

}  // namespace verbcal
