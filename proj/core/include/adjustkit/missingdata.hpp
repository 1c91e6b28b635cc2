#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "adjustkit/glm.hpp"
#include "adjustkit/trialdata.hpp"

namespace adjustkit {

/// Replaces missing cells of a continuous covariate with the observed mean
/// pooled across arms, recording the imputed cells in the dataset audit.
/// Throws AllMissing when nothing is observed.
TrialDataset mean_impute_covariate(const TrialDataset& dataset, std::string_view var);

/// Adds the 0/1 column "<var>_missing" and fills the gaps in `var` (pooled
/// mean or reference level). Both columns must then enter the model. A
/// constant indicator is listed in audit().removable_columns.
TrialDataset missing_indicator(const TrialDataset& dataset, std::string_view var);

/// Logistic model for P(outcome observed | covariates, arm).
struct MissingnessModel {
  std::vector<std::string> covariates;
  bool arm_interactions = true;

  std::vector<Term> terms() const;
};

enum class WeightSource { TreatmentModel, MissingnessModel, Product };

struct WeightSet {
  std::vector<std::size_t> rows;  // dataset rows carrying a weight
  std::vector<double> weights;
  WeightSource source = WeightSource::TreatmentModel;
  std::vector<std::shared_ptr<const FitResult>> source_fits;

  double max_ratio() const;
};

/// Fits the missingness model on all rows; weights 1/P(observed) for rows with
/// an observed outcome. Throws PerfectPredictionOfMissingness when any fitted
/// observation probability falls below 1e-6, NonConverged on fit failure.
WeightSet ipmw_weights(const TrialDataset& dataset, const MissingnessModel& model);

/// Elementwise product over the rows both sets cover.
WeightSet product(const WeightSet& a, const WeightSet& b);

struct ImputationPlan {
  int m = 10;
  bool by_arm = true;
  /// Covariate terms of the logistic imputation model (intercept implied).
  std::vector<Term> terms;
  std::uint64_t seed = 1;
};

/// Multiple imputation of a binary outcome. Per arm (or pooled with a
/// treatment term when by_arm is false) a logistic model is fitted to the
/// observed rows, coefficients are drawn from their asymptotic normal
/// distribution and each missing outcome is a Bernoulli draw.
std::vector<TrialDataset> mi_by_arm(const TrialDataset& dataset, const ImputationPlan& plan);

struct MIResult {
  std::vector<double> estimates;
  std::vector<double> variances;
  double combined = 0.0;
  double within = 0.0;   // W
  double between = 0.0;  // B
  double total = 0.0;    // T = W + (1 + 1/m) B
  double df = 0.0;       // +inf when B == 0
  int m = 0;
};

MIResult rubin_combine(std::span<const double> estimates, std::span<const double> variances);

struct MIVectorResult {
  Eigen::VectorXd combined;
  Eigen::MatrixXd within;
  Eigen::MatrixXd between;
  Eigen::MatrixXd total;
  int m = 0;
};

/// Rubin's rules for a parameter vector and its covariance matrices.
MIVectorResult rubin_combine(std::span<const Eigen::VectorXd> estimates,
                             std::span<const Eigen::MatrixXd> covariances);

}  // namespace adjustkit
