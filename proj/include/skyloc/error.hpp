#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skyloc {

enum class ErrorKind {
  kInvalidArgument,
  kBehindCamera,
  kDegenerateGeometry,
  kInsufficientConstraints,
  kNonConvergence,
  kUndefinedCorrelation,
  kLowCorrelation,
  kOutOfView,
  kInsufficientSeeds,
  kNoSupport,
  kDegenerateSamples,
  kHorizonOrAbove,
  kInvalidPair,
  kUndefinedMetrics,
  kEmptyReport,
  kConfig,
  kData,
  kIo,
};

std::string_view ToString(ErrorKind kind);

// Every failure raised by the library carries a machine-readable kind so that
// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void Require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) Fail(kind, message);
}

}  // namespace skyloc
