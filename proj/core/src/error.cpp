#include "v2c/error.hpp"

namespace v2c {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::EmptyLexicon: return "EmptyLexicon";
    case ErrorCode::NoAdjectives: return "NoAdjectives";
    case ErrorCode::NoNouns: return "NoNouns";
    case ErrorCode::NoRelations: return "NoRelations";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::DegenerateBase: return "DegenerateBase";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::MissingEmbeddings: return "MissingEmbeddings";
    case ErrorCode::GroupResolutionError: return "GroupResolutionError";
    case ErrorCode::EmptyFrequencies: return "EmptyFrequencies";
    case ErrorCode::EmptyCodebook: return "EmptyCodebook";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadClass: return "BadClass";
    case ErrorCode::InfeasibleGeometry: return "InfeasibleGeometry";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace v2c
