#include <skyloc/error.hpp>

namespace skyloc {

std::string_view ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kBehindCamera: return "behind-camera";
    case ErrorKind::kDegenerateGeometry: return "degenerate-geometry";
    case ErrorKind::kInsufficientConstraints: return "insufficient-constraints";
    case ErrorKind::kNonConvergence: return "non-convergence";
    case ErrorKind::kUndefinedCorrelation: return "undefined-correlation";
    case ErrorKind::kLowCorrelation: return "low-correlation";
    case ErrorKind::kOutOfView: return "out-of-view";
    case ErrorKind::kInsufficientSeeds: return "insufficient-seeds";
    case ErrorKind::kNoSupport: return "no-support";
    case ErrorKind::kDegenerateSamples: return "degenerate-samples";
    case ErrorKind::kHorizonOrAbove: return "horizon-or-above";
    case ErrorKind::kInvalidPair: return "invalid-pair";
    case ErrorKind::kUndefinedMetrics: return "undefined-metrics";
    case ErrorKind::kEmptyReport: return "empty-report";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

}  // namespace skyloc
