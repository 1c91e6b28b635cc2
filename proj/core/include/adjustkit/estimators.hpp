#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjustkit/glm.hpp"
#include "adjustkit/inference.hpp"
#include "adjustkit/missingdata.hpp"
#include "adjustkit/trialdata.hpp"

namespace adjustkit {

enum class Summary { RiskDifference, LogRiskRatio, LogOddsRatio };
enum class Level { Marginal, Conditional };
enum class Population { CompleteCase, AllRandomised };
enum class Method { Direct, Standardisation, Iptw, Unadjusted };

std::string to_string(Summary s);
std::string to_string(Level l);
std::string to_string(Population p);
std::string to_string(Method m);
Summary parse_summary(std::string_view text);
Level parse_level(std::string_view text);
Population parse_population(std::string_view text);
Method parse_method(std::string_view text);

struct EstimandSpec {
  Summary summary = Summary::LogOddsRatio;
  Level level = Level::Marginal;
  Population population = Population::CompleteCase;
};

/// Rejects estimand/method/dataset combinations that cannot target the
/// estimand: conditional summaries only via direct adjustment, marginal
/// summaries never via direct adjustment, all-randomised targets only on data
/// that still holds the incomplete rows, and direct adjustment on the odds
/// ratio scale after single imputation of a model covariate.
void validate_estimand(const EstimandSpec& estimand, Method method, const TrialDataset& dataset,
                       std::span<const Term> covariate_terms = {});

struct EffectEstimate {
  EstimandSpec estimand;
  Method method = Method::Unadjusted;
  double estimate = 0.0;  // log scale for ratio summaries
  double se = 0.0;
  CI ci;
  double p = 1.0;
  double z = 0.0;
  std::string population_label;
  std::size_t n_analysed = 0;
  std::size_t n_population = 0;
  double risk1 = std::numeric_limits<double>::quiet_NaN();
  double risk0 = std::numeric_limits<double>::quiet_NaN();
  std::optional<FitStatus> fit_status;
  std::vector<std::string> diagnostics;
};

/// RD = p1 - p0, logRR = log(p1/p0), logOR = logit(p1) - logit(p0).
/// Throws DomainError for ratio summaries at boundary risks.
double transform_summary(double p1, double p0, Summary summary);
/// (d g / d p1, d g / d p0)
Eigen::Vector2d summary_gradient(double p1, double p0, Summary summary);

enum class RiskRatioEngine { LogBinomial, PoissonRobust };

struct DirectOptions {
  RiskRatioEngine risk_ratio_engine = RiskRatioEngine::LogBinomial;
  double level = 0.95;
  FitOptions fit;
};

/// Treatment coefficient of an outcome GLM with main-effect covariates on the
/// scale of the summary measure.
EffectEstimate direct_adjust(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                             const EstimandSpec& estimand, const DirectOptions& options = {});

struct StandardiseOptions {
  /// Drop unscorable population rows instead of failing; the population is
  /// then reported as almost-all-randomised.
  bool drop_unscorable = false;
  bool finite_difference = false;
  bool test_based_ci = false;
  double level = 0.95;
  FitOptions fit;
};

struct StandardisedRisks {
  double risk1 = 0.0;
  double risk0 = 0.0;
  Eigen::VectorXd gradient1;  // d risk1 / d beta
  Eigen::VectorXd gradient0;
  std::vector<std::size_t> unscorable;  // population rows
  std::size_t n = 0;
};

/// Average predicted risks over `population` with treatment set to 1 and to 0,
/// evaluated at `beta` (defaults to the fitted coefficients).
StandardisedRisks standardised_risks(const FitResult& fit, const TrialDataset& population,
                                     const std::optional<Eigen::VectorXd>& beta = std::nullopt);

/// G-computation: outcome model (treatment, covariate terms and optional
/// treat:x interactions) fitted on complete cases, predictions averaged over
/// the population named by the estimand, delta-method SE.
EffectEstimate standardize(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                           const EstimandSpec& estimand, const StandardiseOptions& options = {});

struct IptwOptions {
  /// When set, outcome rows are also weighted by 1/P(observed) and the
  /// estimand may target all randomised participants.
  std::optional<MissingnessModel> missingness;
  /// Treat weights as known (HC0 on the weighted fit) instead of the stacked
  /// sandwich over all estimating equations.
  bool weights_fixed = false;
  double extreme_weight_ratio = 50.0;
  double level = 0.95;
  FitOptions fit;
};

/// Weights 1 / P(Z = z_i | x_i) from a logistic treatment model.
WeightSet treatment_weights(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                            const FitOptions& options = {});

EffectEstimate iptw(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                    const EstimandSpec& estimand, const IptwOptions& options = {});

/// Arm proportions (means for continuous outcomes) contrasted on the summary
/// scale. Throws ZeroCells for ratio summaries when an arm has 0 or all events.
EffectEstimate unadjusted(const TrialDataset& dataset, const EstimandSpec& estimand, double level = 0.95);

/// Rubin's rules over per-imputation estimates on their estimation scale.
EffectEstimate combine_imputed(std::span<const EffectEstimate> per_imputation, double level = 0.95);

/// Standardisation after multiple imputation: outcome-model coefficients are
/// combined on the linear-predictor scale first, then standardised once over
/// all rows.
EffectEstimate standardize_imputed(std::span<const TrialDataset> imputed,
                                   std::span<const Term> covariate_terms, const EstimandSpec& estimand,
                                   const StandardiseOptions& options = {});

}  // namespace adjustkit
