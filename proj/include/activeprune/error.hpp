#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace activeprune {

enum class ErrorCode {
  kParse,
  kDuplicateId,
  kEmptyDataset,
  kIo,
  kCorruptState,
  kEmptyCorpus,
  kInvalidArgument,
  kArpaFormat,
  kUnknownToken,
  kBinaryFormat,
  kHashCollision,
  kMissingYesLogit,
  kNonFiniteLogit,
  kBudgetExceeded,
  kScorerUnavailable,
  kKTooLarge,
  kConfigInfeasible,
  kEmptyLabelBatch,
  kInvalidGap,
  kMissingClass,
  kDimMismatch,
  kBatchTooLarge,
  kUnlabeledExhausted,
  kLengthMismatch,
  kConfig,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kCorruptState: return "CorruptState";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kArpaFormat: return "ArpaFormatError";
    case ErrorCode::kUnknownToken: return "UnknownToken";
    case ErrorCode::kBinaryFormat: return "BinaryFormatError";
    case ErrorCode::kHashCollision: return "HashCollision";
    case ErrorCode::kMissingYesLogit: return "MissingYesLogit";
    case ErrorCode::kNonFiniteLogit: return "NonFiniteLogit";
    case ErrorCode::kBudgetExceeded: return "BudgetExceeded";
    case ErrorCode::kScorerUnavailable: return "ScorerUnavailable";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kConfigInfeasible: return "ConfigInfeasible";
    case ErrorCode::kEmptyLabelBatch: return "EmptyLabelBatch";
    case ErrorCode::kInvalidGap: return "InvalidGap";
    case ErrorCode::kMissingClass: return "MissingClass";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kBatchTooLarge: return "BatchTooLarge";
    case ErrorCode::kUnlabeledExhausted: return "UnlabeledExhausted";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kConfig: return "ConfigError";
  }
  return "Error";
}

/// Every failure in the library is reported through this type. `value()`
/// carries the numeric payload of the error when it has one (a line number
/// for ParseError/ArpaFormatError, a document id for DuplicateId, a class id
/// for MissingClass); it is -1 otherwise.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::int64_t value = -1)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        value_(value) {}

  ErrorCode code() const noexcept { return code_; }
  std::int64_t value() const noexcept { return value_; }

 private:
  ErrorCode code_;
  std::int64_t value_;
};

}  // namespace activeprune
