#pragma once

#include <stdexcept>
#include <string>

#include "coseg/precision.hpp"

namespace coseg::inline COSEG_PRECISION_NS {

/// Failure categories. The CLI prints the category name as the first token
/// of its single-line error report.
enum class ErrorCategory {
  dimension,
  numeric,
  config,
  format,
  io,
  data,
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::config: return "config";
    case ErrorCategory::format: return "format";
    case ErrorCategory::io: return "io";
    case ErrorCategory::data: return "data";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorCategory::dimension, w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};

/// Binary/JSON decoding failures. `kind` distinguishes the failure so callers
/// can react to a bad magic differently from a truncated payload.
struct FormatError : Error {
  enum class Kind { bad_magic, bad_version, truncated, schema };

  FormatError(Kind kind, const std::string& w) : Error(ErrorCategory::format, w), kind(kind) {}

  Kind kind;
};

}  // namespace coseg
