#include "adjustkit/error.hpp"

namespace adjustkit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::BadTreatValue: return "BadTreatValue";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownTerm: return "UnknownTerm";
    case ErrorCode::UnseenLevel: return "UnseenLevel";
    case ErrorCode::AllMissing: return "AllMissing";
    case ErrorCode::NonConverged: return "NonConverged";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::SeparationSuspected: return "SeparationSuspected";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::ZeroCells: return "ZeroCells";
    case ErrorCode::PredictionGap: return "PredictionGap";
    case ErrorCode::NegativeVariance: return "NegativeVariance";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
    case ErrorCode::PerfectPredictionOfMissingness: return "PerfectPredictionOfMissingness";
    case ErrorCode::InvalidEstimand: return "InvalidEstimand";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DesignMismatch: return "DesignMismatch";
    case ErrorCode::UnknownFactorLevel: return "UnknownFactorLevel";
    case ErrorCode::UnknownScenario: return "UnknownScenario";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

ErrorCategory category(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn:
    case ErrorCode::BadTreatValue:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyDataset:
    case ErrorCode::UnseenLevel:
    case ErrorCode::AllMissing:
      return ErrorCategory::Data;
    case ErrorCode::InvalidEstimand:
    case ErrorCode::InvalidArgument:
    case ErrorCode::DesignMismatch:
    case ErrorCode::UnknownFactorLevel:
    case ErrorCode::UnknownScenario:
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownTerm:
      return ErrorCategory::Config;
    default:
      return ErrorCategory::Estimation;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace adjustkit
