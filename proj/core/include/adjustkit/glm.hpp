#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjustkit/trialdata.hpp"

namespace adjustkit {

enum class Family { Gaussian, Binomial, Poisson };
enum class Link { Identity, Logit, Log };
/// Which column plays the response: the trial outcome, the treatment
/// indicator (propensity models) or the outcome-observed indicator
/// (missingness models).
enum class Response { Outcome, Treatment, OutcomeObserved };

std::string to_string(Family family);
std::string to_string(Link link);

struct ModelSpec {
  Family family = Family::Binomial;
  Link link = Link::Logit;
  std::vector<Term> terms;
  /// Aligned with dataset rows when present; rows with weight 0 are ignored.
  std::optional<std::vector<double>> prior_weights;
  Response response = Response::Outcome;
  /// Also compute the HC0 sandwich at convergence.
  bool robust = false;
};

/// Throws InvalidArgument for unsupported family/link pairs or bad weights.
void validate(const ModelSpec& spec);

struct FitOptions {
  double tolerance = 1e-8;  // relative deviance change
  int max_iterations = 100;
  int max_halvings = 20;
  double rank_tolerance = 1e-9;
};

enum class FitState { Converged, NonConverged, RankDeficient };

struct FitStatus {
  FitState state = FitState::Converged;
  std::string reason;                     // NonConverged only
  std::vector<std::string> dropped;       // RankDeficient only
  std::vector<std::string> separation;    // may accompany Converged
  /// True when usable estimates exist (Converged or RankDeficient).
  bool usable() const { return state != FitState::NonConverged; }
  bool separation_suspected() const { return !separation.empty(); }
  std::string describe() const;
};

struct FitResult {
  Family family = Family::Binomial;
  Link link = Link::Logit;
  DesignLayout layout;
  std::vector<std::size_t> kept;  // indices into layout.labels
  std::vector<std::string> labels;  // labels of kept columns
  Eigen::VectorXd coefficients;     // kept columns only
  Eigen::MatrixXd model_covariance;
  std::optional<Eigen::MatrixXd> robust_covariance;
  double deviance = 0.0;
  double dispersion = 1.0;
  int iterations = 0;
  FitStatus status;
  Eigen::VectorXd fitted_means;
  std::vector<double> deviance_history;  // accepted iterates

  // Fitting data, retained for sandwich and stacked variance computations.
  Eigen::MatrixXd x;  // kept columns
  Eigen::VectorXd y;
  Eigen::VectorXd prior_weights;
  std::vector<std::size_t> rows;  // dataset rows used

  /// Index among kept coefficients; throws UnknownTerm if absent or dropped.
  std::size_t index_of(std::string_view label) const;
  double coefficient(std::string_view label) const;
  double model_se(std::string_view label) const;
};

FitResult fit(const ModelSpec& spec, const TrialDataset& dataset, const FitOptions& options = {});

/// Expected information X'WX (prior weights included, dispersion excluded).
Eigen::MatrixXd information(const FitResult& fit);

/// Per-row score contributions w_i (y_i - mu_i) mu'_i / V(mu_i) x_i.
Eigen::MatrixXd score_contributions(const FitResult& fit);

/// HC0 sandwich A^-1 B A^-1. Throws SingularInformation when the information
/// matrix cannot be inverted or there are no residual degrees of freedom.
Eigen::MatrixXd robust_covariance(const FitResult& fit);

enum class Scale { Linear, Response };

struct Prediction {
  Eigen::VectorXd values;                 // NaN where unscorable
  std::vector<std::size_t> unscorable;    // newdata rows
  Eigen::MatrixXd x;                      // kept-column design, zero rows where unscorable
};

/// Scores every newdata row it can: rows with missing covariates or a nonzero
/// entry in a dropped column are reported rather than guessed.
Prediction predict_partial(const FitResult& fit, const TrialDataset& newdata, Scale scale);

/// Throws PredictionGap if any row is unscorable, UnseenLevel for new levels.
Eigen::VectorXd predict(const FitResult& fit, const TrialDataset& newdata, Scale scale);

double inverse_link(Link link, double eta);
double link_function(Link link, double mu);
/// d mu / d eta
double mean_derivative(Link link, double eta);

struct Diagnostics {
  bool separation_suspected = false;
  std::vector<std::string> offending;  // labels with |beta * sd(x)| > 10
  std::size_t boundary_means = 0;      // fitted means within 1e-7 of the boundary
  double max_abs_coefficient = 0.0;
  std::vector<std::string> dropped;
  std::vector<double> deviance_history;
  std::string render() const;
};

/// Heuristic separation screen; see Diagnostics for thresholds.
Diagnostics diagnose(const FitResult& fit);

}  // namespace adjustkit
