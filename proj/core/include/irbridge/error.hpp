#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace irbridge {

// Every failure surfaced by the library carries one of these codes. The CLI
// maps them onto machine-readable error JSON.
enum class ErrorCode {
  kMalformedLine,
  kUnknownOpcode,
  kDanglingReference,
  kInvalidFunction,
  kEmptyCorpus,
  kDimensionMismatch,
  kIdOutOfRange,
  kEmptyGraph,
  kEmptyBatch,
  kInvalidArgument,
  kNonFiniteLoss,
  kSingleClassDataset,
  kFrozenViolation,
  kInsufficientShots,
  kMissingClassifier,
  kEmptyContract,
  kSingleClass,
  kZeroVector,
  kUnknownCategory,
  kSingleLanguage,
  kTooFewSamples,
  kInvalidSpec,
  kNoInjectionSite,
  kCheckpointFormat,
  kVocabMismatch,
  kIo,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace irbridge
