#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hmg {

enum class ErrorKind {
  kShapeMismatch,
  kUnknownOp,
  kNonScalarLoss,
  kEmptyTape,
  kOutOfRange,
  kDuplicateEdge,
  kDimensionMismatch,
  kTypeMismatch,
  kInvalidArgument,
  kInfeasible,
  kMalformedHeader,
  kTruncated,
  kCountMismatch,
  kIo,
  kConfig,
  kMissingAttribute,
  kEmptySplit,
  kNonFiniteLoss,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kUnknownOp: return "unknown_op";
    case ErrorKind::kNonScalarLoss: return "non_scalar_loss";
    case ErrorKind::kEmptyTape: return "empty_tape";
    case ErrorKind::kOutOfRange: return "out_of_range";
    case ErrorKind::kDuplicateEdge: return "duplicate_edge";
    case ErrorKind::kDimensionMismatch: return "dimension_mismatch";
    case ErrorKind::kTypeMismatch: return "type_mismatch";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kInfeasible: return "infeasible";
    case ErrorKind::kMalformedHeader: return "malformed_header";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kCountMismatch: return "count_mismatch";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kMissingAttribute: return "missing_attribute";
    case ErrorKind::kEmptySplit: return "empty_split";
    case ErrorKind::kNonFiniteLoss: return "non_finite_loss";
  }
  return "unknown";
}

// Single exception type; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hmg
