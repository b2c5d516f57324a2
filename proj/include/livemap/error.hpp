#pragma once

#include <stdexcept>
#include <string>

namespace livemap {

enum class ErrorKind {
  kInvalidDepth,
  kDegenerateBox,
  kNoDepth,
  kIncompatibleGrids,
  kInvalidRecord,
  kDegenerateWeights,
  kDimensionMismatch,
  kStaleTape,
  kInsufficientBuffer,
  kArchitectureMismatch,
  kUnknownPending,
  kUnknownDecision,
  kDegenerateFit,
  kInsufficientSamples,
  kConfig,
  kIo,
  kMissingCheckpoint,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidDepth: return "invalid-depth";
    case ErrorKind::kDegenerateBox: return "degenerate-box";
    case ErrorKind::kNoDepth: return "no-depth";
    case ErrorKind::kIncompatibleGrids: return "incompatible-grids";
    case ErrorKind::kInvalidRecord: return "invalid-record";
    case ErrorKind::kDegenerateWeights: return "degenerate-weights";
    case ErrorKind::kDimensionMismatch: return "dimension-mismatch";
    case ErrorKind::kStaleTape: return "stale-tape";
    case ErrorKind::kInsufficientBuffer: return "insufficient-buffer";
    case ErrorKind::kArchitectureMismatch: return "architecture-mismatch";
    case ErrorKind::kUnknownPending: return "unknown-pending";
    case ErrorKind::kUnknownDecision: return "unknown-decision";
    case ErrorKind::kDegenerateFit: return "degenerate-fit";
    case ErrorKind::kInsufficientSamples: return "insufficient-samples";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kMissingCheckpoint: return "missing-checkpoint";
  }
  return "unknown";
}

}  // namespace livemap
