#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjustkit/trialdata.hpp"

namespace adjustkit {

enum class CIMethod { Wald, TestBased, BootstrapPercentile };

std::string to_string(CIMethod method);

struct CI {
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  CIMethod method = CIMethod::Wald;
};

double normal_cdf(double x);
double normal_quantile(double p);

/// sqrt(g' V g). Throws NegativeVariance when g' V g < -1e-12 * scale.
double delta_method(const Eigen::VectorXd& gradient, const Eigen::MatrixXd& covariance);

/// Central finite-difference gradient with step `h`, for checking analytic
/// gradients.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& g,
                                 const Eigen::VectorXd& at, double h = 1e-6);

CI wald_ci(double estimate, double se, double level = 0.95);
double wald_p(double estimate, double se);

/// estimate +/- (q / z) * estimate, so that the interval excludes 0 exactly
/// when |z| exceeds the normal quantile q.
CI test_based_ci(double estimate, double z, double level = 0.95);

enum class Resampling { Simple, WithinStratum, WithinStratumBlock };

std::string to_string(Resampling r);

struct BootstrapPlan {
  int replicates = 1999;
  Resampling resampling = Resampling::Simple;
  std::vector<std::string> strata;
  std::uint64_t seed = 20240101;
  double level = 0.95;
  /// Permit a stratified approximation for minimisation designs.
  bool allow_minimisation_approximation = false;
  /// 0 => worker_count().
  unsigned threads = 0;
};

struct BootstrapResult {
  double se = 0.0;
  CI ci;
  int failures = 0;
  int successes = 0;
  std::vector<double> replicates;  // indexed by replicate; NaN where the estimator failed
};

using ScalarEstimator = std::function<double(const TrialDataset&)>;

/// Throws DesignMismatch when the plan cannot mimic the dataset's design.
void check_compatible(const BootstrapPlan& plan, const TrialDataset& dataset);

/// Row indices of replicate `r` (ascending within each resampling cell).
std::vector<std::size_t> resample_indices(const TrialDataset& dataset, const BootstrapPlan& plan, int r);

/// Nonparametric bootstrap; replicates run in parallel and aggregate by index.
/// Throws TooManyFailures if more than 10% of replicates fail.
BootstrapResult bootstrap(const TrialDataset& dataset, const ScalarEstimator& estimator,
                          const BootstrapPlan& plan);

}  // namespace adjustkit
