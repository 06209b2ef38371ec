#include "irbridge/error.hpp"

namespace irbridge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedLine: return "MalformedLine";
    case ErrorCode::kUnknownOpcode: return "UnknownOpcode";
    case ErrorCode::kDanglingReference: return "DanglingReference";
    case ErrorCode::kInvalidFunction: return "InvalidFunction";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kIdOutOfRange: return "IdOutOfRange";
    case ErrorCode::kEmptyGraph: return "EmptyGraph";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kSingleClassDataset: return "SingleClassDataset";
    case ErrorCode::kFrozenViolation: return "FrozenViolation";
    case ErrorCode::kInsufficientShots: return "InsufficientShots";
    case ErrorCode::kMissingClassifier: return "MissingClassifier";
    case ErrorCode::kEmptyContract: return "EmptyContract";
    case ErrorCode::kSingleClass: return "SingleClass";
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kUnknownCategory: return "UnknownCategory";
    case ErrorCode::kSingleLanguage: return "SingleLanguage";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kNoInjectionSite: return "NoInjectionSite";
    case ErrorCode::kCheckpointFormat: return "CheckpointFormat";
    case ErrorCode::kVocabMismatch: return "VocabMismatch";
    case ErrorCode::kIo: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace irbridge
