#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adjustkit/estimators.hpp"
#include "adjustkit/inference.hpp"
#include "adjustkit/trialdata.hpp"

namespace adjustkit::cli {

enum class MissingStrategy { CompleteCase, MeanImpute, MissingIndicator, Ipmw, MiByArm };
enum class InferenceKind { Wald, TestBased, Bootstrap };

struct AnalysisConfig {
  std::string dataset;  // CSV path
  std::string builtin;  // embedded trial instead of a CSV
  SchemaConfig schema;
  EstimandSpec estimand;
  std::vector<Method> methods;
  std::vector<std::string> terms;
  RiskRatioEngine logrr_engine = RiskRatioEngine::LogBinomial;

  MissingStrategy missing = MissingStrategy::CompleteCase;
  std::vector<std::string> missing_vars;  // imputed / indicator / missingness-model covariates
  bool missingness_arm_interactions = true;
  int imputations = 10;
  std::uint64_t imputation_seed = 1;

  InferenceKind inference = InferenceKind::Wald;
  BootstrapPlan bootstrap;

  bool allow_prediction_gap = false;
  bool weights_fixed = false;
  double level = 0.95;
};

/// Parses and validates an analysis config. Relative schema paths resolve
/// against `base_dir`. Throws Error (ConfigError, InvalidEstimand, ...).
AnalysisConfig parse_analysis_config(const nlohmann::json& j, const std::string& base_dir = ".");
nlohmann::json to_json(const AnalysisConfig& config);

/// Loads the dataset named by the config (builtin or CSV).
TrialDataset load_dataset(const AnalysisConfig& config);

/// Runs every configured method; one result object per method. A method that
/// fails aborts the run with its Error.
nlohmann::json run_analysis(const AnalysisConfig& config, const TrialDataset& dataset);

struct SimulationConfig {
  std::string generator = "logistic";  // logistic | quadratic
  nlohmann::json parameters = nlohmann::json::object();
  EstimandSpec estimand{Summary::RiskDifference, Level::Marginal, Population::AllRandomised};
  std::vector<Method> methods{Method::Unadjusted, Method::Standardisation, Method::Iptw};
  std::vector<std::string> terms{"x"};
  int replications = 1000;
  std::uint64_t seed = 1;
  double level = 0.95;
};

SimulationConfig parse_simulation_config(const nlohmann::json& j);
nlohmann::json run_simulation(const SimulationConfig& config);

/// Entry point shared by the executable and the tests. Returns the process
/// exit code: 0 success, 2 configuration, 3 data, 4 estimation.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adjustkit::cli
