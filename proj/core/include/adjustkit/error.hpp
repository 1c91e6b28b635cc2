#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace adjustkit {

enum class ErrorCode {
  // data
  MissingColumn,
  BadTreatValue,
  ParseError,
  EmptyDataset,
  UnknownTerm,
  UnseenLevel,
  AllMissing,
  // estimation
  NonConverged,
  SingularInformation,
  SeparationSuspected,
  DomainError,
  ZeroCells,
  PredictionGap,
  NegativeVariance,
  DegenerateInput,
  TooManyFailures,
  PerfectPredictionOfMissingness,
  // configuration
  InvalidEstimand,
  InvalidArgument,
  DesignMismatch,
  UnknownFactorLevel,
  UnknownScenario,
  ConfigError,
};

/// Coarse grouping used for process exit codes.
enum class ErrorCategory { Config, Data, Estimation };

std::string_view to_string(ErrorCode code);
ErrorCategory category(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace adjustkit
