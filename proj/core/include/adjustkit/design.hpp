#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "adjustkit/random.hpp"
#include "adjustkit/trialdata.hpp"

namespace adjustkit {

/// Running state of an allocation sequence: arm counts per factor level for
/// minimisation and the unused part of the current block in each stratum.
class AssignmentState {
 public:
  /// counts[factor][level][arm]
  std::map<std::string, std::map<std::string, std::array<int, 2>>> counts;
  std::map<std::string, std::deque<int>> blocks;
  std::array<int, 2> totals{0, 0};
  std::vector<std::string> warnings;
};

using Covariates = std::map<std::string, std::string>;

/// P(Z = 1) for the next participant given the state (before any draw).
/// Throws UnknownFactorLevel when a required factor is absent.
double probability_of_treatment(const DesignInfo& scheme, const Covariates& covariates,
                                const AssignmentState& state);

/// Assigns the next participant and updates the state. Minimisation levels
/// not seen before are accepted with a warning recorded in the state.
int assign(const DesignInfo& scheme, const Covariates& covariates, AssignmentState& state, SplitMix64& rng);

/// Per factor, the sum over its levels of |n1 - n0|; the largest such value.
int max_marginal_imbalance(const AssignmentState& state);

// ---------------------------------------------------------------------------
// Simulation scenarios

enum class CovariateLayout { Grid, Uniform };

/// Continuous outcome Y = alpha + theta Z + gamma x^2 (plus optional normal
/// noise). With the grid layout both arms share the same covariate values.
struct QuadraticScenario {
  double alpha = 0.0;
  double theta = 1.0;
  double gamma = 1.0;
  double lo = 0.0;
  double hi = 1.0;
  int n_per_arm = 100;
  CovariateLayout layout = CovariateLayout::Grid;
  double noise_sd = 0.0;
};

/// Binary outcome with logit P(Y=1) = b0 + bz Z + bx X. A binary X is stored
/// as a categorical covariate "x" with levels "0" and "1" so that it can act
/// as a stratifier or minimisation factor; a normal X is continuous.
struct LogisticScenario {
  double intercept = -1.0;
  double treatment = 0.5;
  double covariate = 1.0;
  bool binary_covariate = true;
  double covariate_p = 0.5;  // P(X = 1) when binary
  int n = 400;
  double missing_rate = 0.0;  // MCAR outcome missingness
  DesignInfo design = SimpleRandomisation{};
};

/// Throws InvalidArgument for out-of-range parameters.
void validate(const QuadraticScenario& scenario);
void validate(const LogisticScenario& scenario);

TrialDataset simulate_trial(const QuadraticScenario& scenario, std::uint64_t seed);
/// Arms come from assign() under scenario.design, so the dataset records the
/// scheme it was generated with.
TrialDataset simulate_trial(const LogisticScenario& scenario, std::uint64_t seed);

}  // namespace adjustkit
