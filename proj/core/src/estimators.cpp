#include "adjustkit/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "adjustkit/error.hpp"

namespace adjustkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<Term> with_treatment_terms(std::span<const Term> covariate_terms) {
  std::vector<Term> terms{Term::intercept(), Term::treatment()};
  for (const auto& t : covariate_terms) {
    if (t.kind == Term::Kind::Intercept || t.kind == Term::Kind::Treatment) continue;
    terms.push_back(t);
  }
  return terms;
}

std::vector<Term> covariates_only(std::span<const Term> covariate_terms) {
  std::vector<Term> terms{Term::intercept()};
  for (const auto& t : covariate_terms) {
    if (t.kind == Term::Kind::Main) terms.push_back(t);
    else if (t.kind == Term::Kind::TreatmentInteraction) {
      throw Error(ErrorCode::InvalidArgument, "treatment model cannot contain treatment terms");
    }
  }
  return terms;
}

std::string population_label(Population p) {
  return p == Population::AllRandomised ? "all-randomised" : "complete-case";
}

Link link_for(Summary s) {
  switch (s) {
    case Summary::RiskDifference: return Link::Identity;
    case Summary::LogRiskRatio: return Link::Log;
    case Summary::LogOddsRatio: return Link::Logit;
  }
  return Link::Logit;
}

void finish(EffectEstimate& e, double level) {
  e.z = e.se > 0.0 ? e.estimate / e.se : (e.estimate == 0.0 ? 0.0 : std::copysign(INFINITY, e.estimate));
  e.p = wald_p(e.estimate, e.se);
  e.ci = wald_ci(e.estimate, e.se, level);
}

void require_binary_or_rd(const TrialDataset& dataset, Summary summary) {
  if (dataset.outcome_type() == OutcomeType::Continuous && summary != Summary::RiskDifference) {
    throw Error(ErrorCode::InvalidEstimand, "continuous outcomes support only the mean difference (RD)");
  }
}

// Rows needing an observed outcome: whether all-randomised targeting is
// possible without a missing-data method.
void require_complete_outcome_for_all_randomised(const TrialDataset& dataset, const EstimandSpec& e,
                                                 const char* remedy) {
  if (e.population == Population::AllRandomised && dataset.has_missing_outcome()) {
    throw Error(ErrorCode::InvalidEstimand,
                std::string("all-randomised population with missing outcomes requires ") + remedy);
  }
}

void add_fit_diagnostics(EffectEstimate& e, const FitResult& f, const std::string& what) {
  e.fit_status = f.status;
  if (f.status.separation_suspected()) {
    const Diagnostics d = diagnose(f);
    e.diagnostics.push_back(what + ": SeparationSuspected (max |coefficient| " +
                            std::to_string(d.max_abs_coefficient) + ")");
  }
  if (!f.status.dropped.empty()) {
    std::string s = what + ": RankDeficient, dropped";
    for (const auto& l : f.status.dropped) s += " " + l;
    e.diagnostics.push_back(s);
  }
}

[[noreturn]] void throw_nonconverged(const FitResult& f, const std::string& what) {
  throw Error(ErrorCode::NonConverged, what + " (" + to_string(f.family) + "/" + to_string(f.link) +
                                           "): " + f.status.reason);
}

double student_quantile(double df, double p) {
  if (!std::isfinite(df)) return normal_quantile(p);
  return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

}  // namespace

std::string to_string(Summary s) {
  switch (s) {
    case Summary::RiskDifference: return "RD";
    case Summary::LogRiskRatio: return "logRR";
    case Summary::LogOddsRatio: return "logOR";
  }
  return "?";
}
std::string to_string(Level l) { return l == Level::Marginal ? "marginal" : "conditional"; }
std::string to_string(Population p) { return p == Population::AllRandomised ? "all_randomised" : "complete_case"; }
std::string to_string(Method m) {
  switch (m) {
    case Method::Direct: return "direct";
    case Method::Standardisation: return "standardisation";
    case Method::Iptw: return "iptw";
    case Method::Unadjusted: return "unadjusted";
  }
  return "?";
}

Summary parse_summary(std::string_view t) {
  if (t == "RD" || t == "rd") return Summary::RiskDifference;
  if (t == "logRR" || t == "RR" || t == "logrr") return Summary::LogRiskRatio;
  if (t == "logOR" || t == "OR" || t == "logor") return Summary::LogOddsRatio;
  throw Error(ErrorCode::ConfigError, "unknown summary '" + std::string(t) + "'");
}
Level parse_level(std::string_view t) {
  if (t == "marginal") return Level::Marginal;
  if (t == "conditional") return Level::Conditional;
  throw Error(ErrorCode::ConfigError, "unknown level '" + std::string(t) + "'");
}
Population parse_population(std::string_view t) {
  if (t == "complete_case" || t == "complete-case") return Population::CompleteCase;
  if (t == "all_randomised" || t == "all-randomised") return Population::AllRandomised;
  throw Error(ErrorCode::ConfigError, "unknown population '" + std::string(t) + "'");
}
Method parse_method(std::string_view t) {
  if (t == "direct") return Method::Direct;
  if (t == "standardisation" || t == "standardization") return Method::Standardisation;
  if (t == "iptw") return Method::Iptw;
  if (t == "unadjusted") return Method::Unadjusted;
  throw Error(ErrorCode::ConfigError, "unknown method '" + std::string(t) + "'");
}

void validate_estimand(const EstimandSpec& estimand, Method method, const TrialDataset& dataset,
                       std::span<const Term> covariate_terms) {
  if (estimand.level == Level::Conditional && method != Method::Direct) {
    throw Error(ErrorCode::InvalidEstimand, "conditional summaries are estimated by direct adjustment only");
  }
  if (estimand.level == Level::Marginal && method == Method::Direct) {
    throw Error(ErrorCode::InvalidEstimand, "direct adjustment targets a conditional summary");
  }
  if (estimand.population == Population::AllRandomised && dataset.provenance() == Provenance::CompleteCase) {
    throw Error(ErrorCode::InvalidEstimand,
                "all-randomised target requested on a dataset already reduced to complete cases");
  }
  if (method == Method::Direct && estimand.summary == Summary::LogOddsRatio) {
    const auto& audit = dataset.audit();
    for (const auto& var : term_variables(covariate_terms)) {
      const bool indicator = std::find(audit.indicator_columns.begin(), audit.indicator_columns.end(), var) !=
                             audit.indicator_columns.end();
      if (indicator || audit.imputed_cells.count(var)) {
        throw Error(ErrorCode::InvalidEstimand,
                    "single imputation / missing indicator of '" + var +
                        "' cannot target a conditional odds ratio; choose a marginal or collapsible summary");
      }
    }
  }
  require_binary_or_rd(dataset, estimand.summary);
}

double transform_summary(double p1, double p0, Summary summary) {
  switch (summary) {
    case Summary::RiskDifference:
      return p1 - p0;
    case Summary::LogRiskRatio:
      if (!(p1 > 0.0 && p0 > 0.0)) throw Error(ErrorCode::DomainError, "risk ratio needs positive risks");
      return std::log(p1 / p0);
    case Summary::LogOddsRatio:
      if (!(p1 > 0.0 && p1 < 1.0 && p0 > 0.0 && p0 < 1.0)) {
        throw Error(ErrorCode::DomainError, "odds ratio needs risks in (0,1)");
      }
      return std::log(p1 / (1.0 - p1)) - std::log(p0 / (1.0 - p0));
  }
  return kNaN;
}

Eigen::Vector2d summary_gradient(double p1, double p0, Summary summary) {
  switch (summary) {
    case Summary::RiskDifference: return {1.0, -1.0};
    case Summary::LogRiskRatio: return {1.0 / p1, -1.0 / p0};
    case Summary::LogOddsRatio: return {1.0 / (p1 * (1.0 - p1)), -1.0 / (p0 * (1.0 - p0))};
  }
  return {kNaN, kNaN};
}

// ---------------------------------------------------------------------------

EffectEstimate direct_adjust(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                             const EstimandSpec& estimand, const DirectOptions& options) {
  validate_estimand(estimand, Method::Direct, dataset, covariate_terms);
  for (const auto& t : covariate_terms) {
    if (t.kind == Term::Kind::TreatmentInteraction) {
      throw Error(ErrorCode::InvalidArgument, "direct adjustment excludes treatment-covariate interactions");
    }
  }
  require_complete_outcome_for_all_randomised(dataset, estimand, "multiple imputation by arm");

  ModelSpec spec;
  spec.terms = with_treatment_terms(covariate_terms);
  if (dataset.outcome_type() == OutcomeType::Continuous) {
    spec.family = Family::Gaussian;
    spec.link = Link::Identity;
  } else if (estimand.summary == Summary::LogRiskRatio &&
             options.risk_ratio_engine == RiskRatioEngine::PoissonRobust) {
    spec.family = Family::Poisson;
    spec.link = Link::Log;
    spec.robust = true;
  } else {
    spec.family = Family::Binomial;
    spec.link = link_for(estimand.summary);
  }
  const FitResult f = fit(spec, dataset, options.fit);
  if (!f.status.usable()) throw_nonconverged(f, "outcome model");

  EffectEstimate e;
  e.estimand = estimand;
  e.method = Method::Direct;
  e.population_label = population_label(estimand.population);
  e.n_analysed = f.rows.size();
  e.n_population = f.rows.size();
  add_fit_diagnostics(e, f, "outcome model");
  const auto j = static_cast<Eigen::Index>(f.index_of("treat"));
  e.estimate = f.coefficients[j];
  if (spec.robust) {
    if (!f.robust_covariance) throw Error(ErrorCode::SingularInformation, "robust covariance unavailable");
    e.se = std::sqrt((*f.robust_covariance)(j, j));
  } else {
    e.se = std::sqrt(f.model_covariance(j, j));
  }
  if (!std::isfinite(e.se)) throw Error(ErrorCode::SingularInformation, "treatment coefficient variance unavailable");
  finish(e, options.level);
  return e;
}

// ---------------------------------------------------------------------------

StandardisedRisks standardised_risks(const FitResult& fit, const TrialDataset& population,
                                     const std::optional<Eigen::VectorXd>& beta) {
  const Eigen::VectorXd& b = beta ? *beta : fit.coefficients;
  const Prediction p1 = predict_partial(fit, population.with_treatment(1), Scale::Linear);
  const Prediction p0 = predict_partial(fit, population.with_treatment(0), Scale::Linear);
  std::set<std::size_t> bad(p1.unscorable.begin(), p1.unscorable.end());
  bad.insert(p0.unscorable.begin(), p0.unscorable.end());

  StandardisedRisks out;
  out.unscorable.assign(bad.begin(), bad.end());
  const auto p = b.size();
  out.gradient1 = Eigen::VectorXd::Zero(p);
  out.gradient0 = Eigen::VectorXd::Zero(p);
  for (std::size_t r = 0; r < population.size(); ++r) {
    if (bad.count(r)) continue;
    const auto row = static_cast<Eigen::Index>(r);
    const double eta1 = p1.x.row(row).dot(b);
    const double eta0 = p0.x.row(row).dot(b);
    out.risk1 += inverse_link(fit.link, eta1);
    out.risk0 += inverse_link(fit.link, eta0);
    out.gradient1 += mean_derivative(fit.link, eta1) * p1.x.row(row).transpose();
    out.gradient0 += mean_derivative(fit.link, eta0) * p0.x.row(row).transpose();
    ++out.n;
  }
  if (out.n == 0) throw Error(ErrorCode::PredictionGap, "no population row can be scored");
  const double n = static_cast<double>(out.n);
  out.risk1 /= n;
  out.risk0 /= n;
  out.gradient1 /= n;
  out.gradient0 /= n;
  return out;
}

namespace {

ModelSpec standardisation_model(const TrialDataset& dataset, std::span<const Term> covariate_terms) {
  ModelSpec spec;
  spec.terms = with_treatment_terms(covariate_terms);
  if (dataset.outcome_type() == OutcomeType::Continuous) {
    spec.family = Family::Gaussian;
    spec.link = Link::Identity;
  } else {
    spec.family = Family::Binomial;
    spec.link = Link::Logit;
  }
  return spec;
}

// Population to standardise over, plus rows dropped as unscorable.
struct StandardisationTarget {
  TrialDataset population;
  std::string label;
};

StandardisationTarget standardisation_target(const TrialDataset& dataset, const FitResult& f,
                                             Population population, bool drop_unscorable) {
  TrialDataset pop = population == Population::CompleteCase ? dataset.subset(f.rows) : dataset;
  std::string label = population_label(population);
  const Prediction p1 = predict_partial(f, pop.with_treatment(1), Scale::Linear);
  const Prediction p0 = predict_partial(f, pop.with_treatment(0), Scale::Linear);
  std::set<std::size_t> bad(p1.unscorable.begin(), p1.unscorable.end());
  bad.insert(p0.unscorable.begin(), p0.unscorable.end());
  if (!bad.empty()) {
    if (!drop_unscorable) {
      throw Error(ErrorCode::PredictionGap,
                  std::to_string(bad.size()) + " participants in the " + label +
                      " population cannot be scored (missing covariates or collinear levels)");
    }
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < pop.size(); ++r) {
      if (!bad.count(r)) keep.push_back(r);
    }
    if (keep.empty()) throw Error(ErrorCode::PredictionGap, "no population row can be scored");
    pop = pop.subset(keep);
    label = population == Population::AllRandomised ? "almost-all-randomised" : "almost-complete-case";
  }
  return {std::move(pop), std::move(label)};
}

}  // namespace

EffectEstimate standardize(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                           const EstimandSpec& estimand, const StandardiseOptions& options) {
  validate_estimand(estimand, Method::Standardisation, dataset, covariate_terms);
  const ModelSpec spec = standardisation_model(dataset, covariate_terms);
  const FitResult f = fit(spec, dataset, options.fit);
  if (!f.status.usable()) throw_nonconverged(f, "outcome model");

  const auto target = standardisation_target(dataset, f, estimand.population, options.drop_unscorable);
  const StandardisedRisks risks = standardised_risks(f, target.population);

  EffectEstimate e;
  e.estimand = estimand;
  e.method = Method::Standardisation;
  e.population_label = target.label;
  e.n_analysed = f.rows.size();
  e.n_population = risks.n;
  e.risk1 = risks.risk1;
  e.risk0 = risks.risk0;
  add_fit_diagnostics(e, f, "outcome model");
  if (target.label.starts_with("almost")) {
    e.diagnostics.push_back("PredictionGap: " + std::to_string(target.population.size()) +
                            " of " + std::to_string(estimand.population == Population::CompleteCase
                                                        ? f.rows.size()
                                                        : dataset.size()) +
                            " participants standardised");
  }
  e.estimate = transform_summary(risks.risk1, risks.risk0, estimand.summary);

  Eigen::VectorXd gradient;
  if (options.finite_difference) {
    gradient = numeric_gradient(
        [&](const Eigen::VectorXd& b) {
          const auto r = standardised_risks(f, target.population, b);
          return transform_summary(r.risk1, r.risk0, estimand.summary);
        },
        f.coefficients, 1e-6);
  } else {
    const Eigen::Vector2d g = summary_gradient(risks.risk1, risks.risk0, estimand.summary);
    gradient = g[0] * risks.gradient1 + g[1] * risks.gradient0;
  }
  e.se = delta_method(gradient, f.model_covariance);
  finish(e, options.level);

  if (options.test_based_ci) {
    for (const auto& t : covariate_terms) {
      if (t.kind == Term::Kind::TreatmentInteraction) {
        throw Error(ErrorCode::InvalidArgument, "test-based interval needs a single treatment coefficient");
      }
    }
    const double z = f.coefficient("treat") / f.model_se("treat");
    e.ci = test_based_ci(e.estimate, z, options.level);
    e.z = z;
    e.p = 2.0 * normal_cdf(-std::abs(z));
  }
  return e;
}

// ---------------------------------------------------------------------------

WeightSet treatment_weights(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                            const FitOptions& options) {
  ModelSpec spec;
  spec.family = Family::Binomial;
  spec.link = Link::Logit;
  spec.response = Response::Treatment;
  spec.terms = covariates_only(covariate_terms);
  auto f = std::make_shared<FitResult>(fit(spec, dataset, options));
  if (!f->status.usable()) throw_nonconverged(*f, "treatment model");
  WeightSet ws;
  ws.source = WeightSource::TreatmentModel;
  ws.rows = f->rows;
  for (Eigen::Index i = 0; i < f->fitted_means.size(); ++i) {
    const double e = f->fitted_means[i];
    ws.weights.push_back(f->y[i] == 1.0 ? 1.0 / e : 1.0 / (1.0 - e));
  }
  ws.source_fits.push_back(std::move(f));
  return ws;
}

namespace {

// Score and derivative blocks of one nuisance logistic model in the stacked
// system, laid out on dataset rows.
struct NuisanceBlock {
  Eigen::MatrixXd scores;      // n x q, zero for rows outside the model
  Eigen::MatrixXd information; // q x q
  Eigen::MatrixXd weight_derivative;  // n x q: d w_i / d parameters
};

}  // namespace

EffectEstimate iptw(const TrialDataset& dataset, std::span<const Term> covariate_terms,
                    const EstimandSpec& estimand, const IptwOptions& options) {
  validate_estimand(estimand, Method::Iptw, dataset, covariate_terms);
  const bool ipmw = options.missingness.has_value();
  if (!ipmw) require_complete_outcome_for_all_randomised(dataset, estimand, "IPMW or multiple imputation");

  // Without IPMW, analysis rows are those with an observed outcome.
  const TrialDataset data = ipmw ? dataset : complete_cases(dataset, std::vector<std::string>{"outcome"});
  const auto n = static_cast<Eigen::Index>(data.size());

  const WeightSet tw = treatment_weights(data, covariate_terms, options.fit);
  const FitResult& tfit = *tw.source_fits.front();
  if (tw.rows.size() != data.size()) {
    throw Error(ErrorCode::InvalidArgument, "treatment-model covariates must be fully observed");
  }
  Eigen::VectorXd w_t = Eigen::Map<const Eigen::VectorXd>(tw.weights.data(), n);
  Eigen::VectorXd w_m = Eigen::VectorXd::Ones(n);
  std::optional<WeightSet> mw;
  if (ipmw) {
    mw = ipmw_weights(data, *options.missingness);
    w_m.setZero();
    for (std::size_t k = 0; k < mw->rows.size(); ++k) {
      w_m[static_cast<Eigen::Index>(mw->rows[k])] = mw->weights[k];
    }
  }

  std::vector<double> prior(static_cast<std::size_t>(n), 0.0);
  double wmin = INFINITY, wmax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!data.outcome()[static_cast<std::size_t>(i)]) continue;
    const double w = w_t[i] * w_m[i];
    prior[static_cast<std::size_t>(i)] = w;
    wmin = std::min(wmin, w);
    wmax = std::max(wmax, w);
  }

  ModelSpec ospec;
  ospec.terms = {Term::intercept(), Term::treatment()};
  ospec.prior_weights = prior;
  if (data.outcome_type() == OutcomeType::Continuous) {
    ospec.family = Family::Gaussian;
    ospec.link = Link::Identity;
  } else {
    ospec.family = Family::Binomial;
    ospec.link = link_for(estimand.summary);
  }
  const FitResult ofit = fit(ospec, data, options.fit);
  if (!ofit.status.usable()) throw_nonconverged(ofit, "weighted outcome model");
  if (ofit.labels.size() != 2) throw Error(ErrorCode::SingularInformation, "one arm has no weighted outcomes");

  EffectEstimate e;
  e.estimand = estimand;
  e.method = Method::Iptw;
  e.population_label = population_label(estimand.population);
  e.n_analysed = ofit.rows.size();
  e.n_population = data.size();
  e.estimate = ofit.coefficients[1];
  e.risk0 = inverse_link(ofit.link, ofit.coefficients[0]);
  e.risk1 = inverse_link(ofit.link, ofit.coefficients[0] + ofit.coefficients[1]);
  add_fit_diagnostics(e, tfit, "treatment model");
  if (mw) add_fit_diagnostics(e, *mw->source_fits.front(), "missingness model");
  e.fit_status = tfit.status;
  if (wmax / wmin > options.extreme_weight_ratio) {
    e.diagnostics.push_back("ExtremeWeights: max/min weight ratio " + std::to_string(wmax / wmin));
  }

  if (options.weights_fixed) {
    const Eigen::MatrixXd v = robust_covariance(ofit);
    e.se = std::sqrt(v(1, 1));
    finish(e, options.level);
    return e;
  }

  // Stacked estimating equations: nuisance models (treatment, missingness)
  // followed by the weighted outcome contrast. The Jacobian is block lower
  // triangular, so the outcome block of the sandwich uses scores corrected
  // for nuisance estimation: u_i = U_i - A_bn A_nn^+ U_n,i.
  std::vector<NuisanceBlock> blocks;
  {
    NuisanceBlock b;
    const Eigen::MatrixXd s = score_contributions(tfit);
    b.scores = Eigen::MatrixXd::Zero(n, s.cols());
    b.weight_derivative = Eigen::MatrixXd::Zero(n, s.cols());
    for (std::size_t k = 0; k < tfit.rows.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(tfit.rows[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      b.scores.row(r) = s.row(kk);
      const double z = data.treat()[tfit.rows[k]];
      b.weight_derivative.row(r) = -(2.0 * z - 1.0) * (w_t[r] - 1.0) * w_m[r] * tfit.x.row(kk);
    }
    b.information = information(tfit);
    blocks.push_back(std::move(b));
  }
  if (mw) {
    const FitResult& mfit = *mw->source_fits.front();
    NuisanceBlock b;
    const Eigen::MatrixXd s = score_contributions(mfit);
    b.scores = Eigen::MatrixXd::Zero(n, s.cols());
    b.weight_derivative = Eigen::MatrixXd::Zero(n, s.cols());
    for (std::size_t k = 0; k < mfit.rows.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(mfit.rows[k]);
      const auto kk = static_cast<Eigen::Index>(k);
      b.scores.row(r) = s.row(kk);
      if (w_m[r] > 0.0) b.weight_derivative.row(r) = -(w_m[r] - 1.0) * w_t[r] * mfit.x.row(kk);
    }
    b.information = information(mfit);
    blocks.push_back(std::move(b));
  }

  // Outcome scores per dataset row, unweighted (s_i) and weighted (U_i).
  Eigen::MatrixXd s_unweighted = Eigen::MatrixXd::Zero(n, 2);
  {
    FitResult unit = ofit;
    unit.prior_weights.setOnes();
    const Eigen::MatrixXd s = score_contributions(unit);
    for (std::size_t k = 0; k < ofit.rows.size(); ++k) {
      s_unweighted.row(static_cast<Eigen::Index>(ofit.rows[k])) = s.row(static_cast<Eigen::Index>(k));
    }
  }
  Eigen::VectorXd w_total(n);
  for (Eigen::Index i = 0; i < n; ++i) w_total[i] = prior[static_cast<std::size_t>(i)];
  Eigen::MatrixXd u = w_total.asDiagonal() * s_unweighted;

  Eigen::Index q = 0;
  for (const auto& b : blocks) q += b.scores.cols();
  Eigen::MatrixXd nuisance_scores(n, q);
  Eigen::MatrixXd a_nn = Eigen::MatrixXd::Zero(q, q);
  Eigen::MatrixXd a_bn(2, q);
  Eigen::Index off = 0;
  for (const auto& b : blocks) {
    const Eigen::Index c = b.scores.cols();
    nuisance_scores.middleCols(off, c) = b.scores;
    a_nn.block(off, off, c, c) = b.information;
    a_bn.middleCols(off, c) = -(s_unweighted.transpose() * b.weight_derivative);
    off += c;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a_nn);
  cod.setThreshold(1e-12);
  const Eigen::MatrixXd m = cod.solve(a_bn.transpose()).transpose();  // A_bn A_nn^+
  u -= nuisance_scores * m.transpose();

  const Eigen::MatrixXd a_bb = information(ofit);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a_bb);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::SingularInformation, "outcome information singular");
  const Eigen::MatrixXd bread = ldlt.solve(Eigen::MatrixXd::Identity(2, 2));
  const Eigen::MatrixXd v = bread * (u.transpose() * u) * bread;
  e.se = std::sqrt(v(1, 1));
  finish(e, options.level);
  return e;
}

// ---------------------------------------------------------------------------

EffectEstimate unadjusted(const TrialDataset& dataset, const EstimandSpec& estimand, double level) {
  validate_estimand(estimand, Method::Unadjusted, dataset);
  require_complete_outcome_for_all_randomised(dataset, estimand, "a missing-data method");
  double sum[2] = {0, 0}, sumsq[2] = {0, 0};
  double count[2] = {0, 0};
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const auto& y = dataset.outcome()[r];
    if (!y) continue;
    const int z = dataset.treat()[r];
    sum[z] += *y;
    sumsq[z] += *y * *y;
    count[z] += 1;
  }
  if (count[0] < 1 || count[1] < 1) throw Error(ErrorCode::EmptyDataset, "an arm has no observed outcomes");
  const double p1 = sum[1] / count[1];
  const double p0 = sum[0] / count[0];

  EffectEstimate e;
  e.estimand = estimand;
  e.method = Method::Unadjusted;
  e.population_label = population_label(estimand.population);
  e.n_analysed = static_cast<std::size_t>(count[0] + count[1]);
  e.n_population = e.n_analysed;
  e.risk1 = p1;
  e.risk0 = p0;
  if (dataset.outcome_type() == OutcomeType::Continuous) {
    auto var = [&](int z) {
      return count[z] > 1 ? (sumsq[z] - sum[z] * sum[z] / count[z]) / (count[z] - 1) : 0.0;
    };
    e.estimate = p1 - p0;
    e.se = std::sqrt(var(1) / count[1] + var(0) / count[0]);
    finish(e, level);
    return e;
  }
  if (estimand.summary != Summary::RiskDifference && (p1 <= 0.0 || p1 >= 1.0 || p0 <= 0.0 || p0 >= 1.0)) {
    throw Error(ErrorCode::ZeroCells, "an arm has no events or only events");
  }
  e.estimate = transform_summary(p1, p0, estimand.summary);
  switch (estimand.summary) {
    case Summary::RiskDifference:
      e.se = std::sqrt(p1 * (1 - p1) / count[1] + p0 * (1 - p0) / count[0]);
      break;
    case Summary::LogRiskRatio:
      e.se = std::sqrt((1 - p1) / (count[1] * p1) + (1 - p0) / (count[0] * p0));
      break;
    case Summary::LogOddsRatio:
      e.se = std::sqrt(1 / (count[1] * p1 * (1 - p1)) + 1 / (count[0] * p0 * (1 - p0)));
      break;
  }
  finish(e, level);
  return e;
}

// ---------------------------------------------------------------------------

EffectEstimate combine_imputed(std::span<const EffectEstimate> per_imputation, double level) {
  if (per_imputation.size() < 2) throw Error(ErrorCode::InvalidArgument, "at least two imputations required");
  std::vector<double> est, var;
  for (const auto& e : per_imputation) {
    est.push_back(e.estimate);
    var.push_back(e.se * e.se);
  }
  const MIResult mi = rubin_combine(est, var);
  EffectEstimate out = per_imputation.front();
  out.estimate = mi.combined;
  out.se = std::sqrt(mi.total);
  out.z = out.se > 0 ? out.estimate / out.se : 0.0;
  const double q = student_quantile(mi.df, 0.5 + level / 2.0);
  out.ci = {level, out.estimate - q * out.se, out.estimate + q * out.se, CIMethod::Wald};
  if (out.se > 0) {
    out.p = std::isfinite(mi.df)
                ? 2.0 * boost::math::cdf(boost::math::complement(
                            boost::math::students_t_distribution<double>(mi.df), std::abs(out.z)))
                : 2.0 * normal_cdf(-std::abs(out.z));
  }
  out.diagnostics.push_back("multiple imputation: m=" + std::to_string(mi.m) + ", W=" + std::to_string(mi.within) +
                            ", B=" + std::to_string(mi.between) + ", df=" + std::to_string(mi.df));
  if (out.method == Method::Iptw) {
    out.diagnostics.push_back(
        "warning: Rubin's variance after IPTW may be inconsistent (uncongenial imputation and analysis models)");
  }
  return out;
}

EffectEstimate standardize_imputed(std::span<const TrialDataset> imputed, std::span<const Term> covariate_terms,
                                   const EstimandSpec& estimand, const StandardiseOptions& options) {
  if (imputed.size() < 2) throw Error(ErrorCode::InvalidArgument, "at least two imputations required");
  validate_estimand(estimand, Method::Standardisation, imputed.front(), covariate_terms);
  const ModelSpec spec = standardisation_model(imputed.front(), covariate_terms);
  std::vector<FitResult> fits;
  std::vector<Eigen::VectorXd> betas;
  std::vector<Eigen::MatrixXd> covs;
  for (const auto& d : imputed) {
    fits.push_back(fit(spec, d, options.fit));
    const auto& f = fits.back();
    if (!f.status.usable()) throw_nonconverged(f, "outcome model (imputed data)");
    if (f.labels != fits.front().labels) {
      throw Error(ErrorCode::SingularInformation, "imputed datasets give different estimable coefficients");
    }
    betas.push_back(f.coefficients);
    covs.push_back(f.model_covariance);
  }
  const MIVectorResult mi = rubin_combine(betas, covs);
  const FitResult& ref = fits.front();
  const auto target = standardisation_target(imputed.front(), ref, Population::AllRandomised, options.drop_unscorable);
  const StandardisedRisks risks = standardised_risks(ref, target.population, mi.combined);

  EffectEstimate e;
  e.estimand = estimand;
  e.method = Method::Standardisation;
  e.population_label = target.label;
  e.n_analysed = imputed.front().size();
  e.n_population = risks.n;
  e.risk1 = risks.risk1;
  e.risk0 = risks.risk0;
  e.fit_status = ref.status;
  e.estimate = transform_summary(risks.risk1, risks.risk0, estimand.summary);
  const Eigen::Vector2d g = summary_gradient(risks.risk1, risks.risk0, estimand.summary);
  e.se = delta_method(g[0] * risks.gradient1 + g[1] * risks.gradient0, mi.total);
  finish(e, options.level);
  e.diagnostics.push_back("multiple imputation: m=" + std::to_string(mi.m) +
                          ", coefficients combined before standardisation");
  return e;
}

}  // namespace adjustkit
