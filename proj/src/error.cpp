#include "ptsynth/error.hpp"

namespace ptsynth {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyCategory: return "EmptyCategory";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::MissingCategory: return "MissingCategory";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::MOutOfRange: return "MOutOfRange";
    case ErrorCode::IterOutOfRange: return "IterOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotStochastic: return "NotStochastic";
    case ErrorCode::UnknownImageId: return "UnknownImageId";
    case ErrorCode::DegeneratePairing: return "DegeneratePairing";
    case ErrorCode::MalformedHash: return "MalformedHash";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace ptsynth
