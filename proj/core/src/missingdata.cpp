#include "adjustkit/missingdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "adjustkit/error.hpp"
#include "adjustkit/random.hpp"

namespace adjustkit {

namespace {

double observed_mean(const TrialDataset::Column& col) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : col) {
    if (c) {
      sum += *c;
      ++n;
    }
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(n);
}

const CovariateEntry& entry_or_throw(const TrialDataset& dataset, std::string_view var) {
  const CovariateEntry* e = dataset.schema().find(var);
  if (!e) throw Error(ErrorCode::UnknownTerm, "unknown covariate '" + std::string(var) + "'");
  return *e;
}

}  // namespace

TrialDataset mean_impute_covariate(const TrialDataset& dataset, std::string_view var) {
  const CovariateEntry& entry = entry_or_throw(dataset, var);
  if (entry.kind != CovariateKind::Continuous) {
    throw Error(ErrorCode::InvalidArgument, "mean imputation needs a continuous covariate");
  }
  const auto& col = dataset.column(var);
  const double mean = observed_mean(col);
  if (std::isnan(mean)) throw Error(ErrorCode::AllMissing, "'" + std::string(var) + "' is never observed");
  TrialDataset::Column filled = col;
  std::vector<bool> mask(col.size(), false);
  for (std::size_t i = 0; i < col.size(); ++i) {
    if (!col[i]) {
      filled[i] = mean;
      mask[i] = true;
    }
  }
  ImputationAudit audit = dataset.audit();
  audit.imputed_cells[entry.name] = std::move(mask);
  return dataset.with_column(entry, std::move(filled)).with_audit(std::move(audit));
}

TrialDataset missing_indicator(const TrialDataset& dataset, std::string_view var) {
  const CovariateEntry& entry = entry_or_throw(dataset, var);
  const auto& col = dataset.column(var);
  const double fill = entry.kind == CovariateKind::Categorical ? 0.0 : observed_mean(col);
  if (std::isnan(fill)) throw Error(ErrorCode::AllMissing, "'" + std::string(var) + "' is never observed");

  TrialDataset::Column filled = col;
  TrialDataset::Column indicator(col.size());
  std::vector<bool> mask(col.size(), false);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < col.size(); ++i) {
    indicator[i] = col[i] ? 0.0 : 1.0;
    if (!col[i]) {
      filled[i] = fill;
      mask[i] = true;
      ++missing;
    }
  }
  const std::string name = entry.name + "_missing";
  ImputationAudit audit = dataset.audit();
  audit.imputed_cells[entry.name] = std::move(mask);
  audit.indicator_columns.push_back(name);
  if (missing == 0 || missing == col.size()) audit.removable_columns.push_back(name);
  return dataset.with_column(entry, std::move(filled))
      .with_column(CovariateEntry{name, CovariateKind::Continuous, {}}, std::move(indicator))
      .with_audit(std::move(audit));
}

std::vector<Term> MissingnessModel::terms() const {
  std::vector<Term> t{Term::intercept(), Term::treatment()};
  for (const auto& c : covariates) t.push_back(Term::main(c));
  if (arm_interactions) {
    for (const auto& c : covariates) t.push_back(Term::by_treatment(c));
  }
  return t;
}

double WeightSet::max_ratio() const {
  if (weights.empty()) return 1.0;
  const auto [lo, hi] = std::minmax_element(weights.begin(), weights.end());
  return *hi / *lo;
}

WeightSet ipmw_weights(const TrialDataset& dataset, const MissingnessModel& model) {
  ModelSpec spec;
  spec.family = Family::Binomial;
  spec.link = Link::Logit;
  spec.response = Response::OutcomeObserved;
  spec.terms = model.terms();
  auto f = std::make_shared<FitResult>(fit(spec, dataset));

  if (f->status.usable()) {
    for (Eigen::Index i = 0; i < f->fitted_means.size(); ++i) {
      if (f->fitted_means[i] < 1e-6) {
        throw Error(ErrorCode::PerfectPredictionOfMissingness,
                    "a covariate pattern has (almost) no observed outcomes; inverse weights are unbounded");
      }
    }
  } else {
    throw Error(ErrorCode::NonConverged, "missingness model: " + f->status.reason);
  }

  WeightSet ws;
  ws.source = WeightSource::MissingnessModel;
  for (std::size_t k = 0; k < f->rows.size(); ++k) {
    const std::size_t r = f->rows[k];
    if (!dataset.outcome()[r]) continue;
    ws.rows.push_back(r);
    ws.weights.push_back(1.0 / f->fitted_means[static_cast<Eigen::Index>(k)]);
  }
  ws.source_fits.push_back(std::move(f));
  return ws;
}

WeightSet product(const WeightSet& a, const WeightSet& b) {
  std::map<std::size_t, double> bw;
  for (std::size_t k = 0; k < b.rows.size(); ++k) bw[b.rows[k]] = b.weights[k];
  WeightSet out;
  out.source = WeightSource::Product;
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    auto it = bw.find(a.rows[k]);
    if (it == bw.end()) continue;
    out.rows.push_back(a.rows[k]);
    out.weights.push_back(a.weights[k] * it->second);
  }
  out.source_fits = a.source_fits;
  out.source_fits.insert(out.source_fits.end(), b.source_fits.begin(), b.source_fits.end());
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// One imputation model and the rows it imputes.
struct ImputationModel {
  FitResult fit;
  Eigen::MatrixXd chol;            // lower Cholesky factor of the covariance
  std::vector<std::size_t> missing; // dataset rows
  Eigen::MatrixXd x_missing;        // their design rows
  std::uint64_t stream = 0;
};

ImputationModel build_model(const TrialDataset& dataset, const std::vector<Term>& terms,
                            const std::vector<std::size_t>& rows, std::uint64_t stream, const std::string& what) {
  const TrialDataset part = dataset.subset(rows);
  if (part.observed_outcomes() == 0) {
    throw Error(ErrorCode::NonConverged, what + ": no observed outcomes to fit the imputation model");
  }
  ModelSpec spec;
  spec.family = Family::Binomial;
  spec.link = Link::Logit;
  spec.terms = terms;
  ImputationModel m{fit(spec, part), {}, {}, {}, stream};
  if (!m.fit.status.usable()) throw Error(ErrorCode::NonConverged, what + ": " + m.fit.status.reason);
  if (m.fit.status.separation_suspected()) {
    throw Error(ErrorCode::SeparationSuspected,
                what + ": imputation model shows separation; coefficient draws would be unbounded");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m.fit.model_covariance);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::SingularInformation, what + ": imputation covariance is not positive definite");
  }
  m.chol = llt.matrixL();

  std::vector<std::size_t> local;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (!dataset.outcome()[rows[k]]) {
      m.missing.push_back(rows[k]);
      local.push_back(k);
    }
  }
  if (local.empty()) return m;
  const Prediction pred = predict_partial(m.fit, part.subset(local), Scale::Linear);
  if (!pred.unscorable.empty()) {
    throw Error(ErrorCode::PredictionGap,
                what + ": " + std::to_string(pred.unscorable.size()) +
                    " rows with missing outcome also miss an imputation-model covariate");
  }
  m.x_missing = pred.x;
  return m;
}

}  // namespace

std::vector<TrialDataset> mi_by_arm(const TrialDataset& dataset, const ImputationPlan& plan) {
  if (plan.m < 2) throw Error(ErrorCode::InvalidArgument, "at least two imputations required");
  if (dataset.outcome_type() != OutcomeType::Binary) {
    throw Error(ErrorCode::InvalidArgument, "outcome imputation supports binary outcomes");
  }
  if (!dataset.has_missing_outcome()) {
    return std::vector<TrialDataset>(static_cast<std::size_t>(plan.m), dataset);
  }

  std::vector<Term> main_terms{Term::intercept()};
  for (const auto& t : plan.terms) {
    if (t.kind == Term::Kind::Main) main_terms.push_back(t);
    else if (t.kind == Term::Kind::Treatment || t.kind == Term::Kind::TreatmentInteraction) {
      if (plan.by_arm) continue;  // implied by fitting each arm separately
      main_terms.push_back(t);
    }
  }

  std::vector<ImputationModel> models;
  if (plan.by_arm) {
    for (int arm = 0; arm < 2; ++arm) {
      std::vector<std::size_t> rows;
      for (std::size_t r = 0; r < dataset.size(); ++r) {
        if (dataset.treat()[r] == arm) rows.push_back(r);
      }
      models.push_back(build_model(dataset, main_terms, rows, static_cast<std::uint64_t>(arm),
                                   "arm " + std::to_string(arm)));
    }
  } else {
    if (std::find(main_terms.begin(), main_terms.end(), Term::treatment()) == main_terms.end()) {
      main_terms.insert(main_terms.begin() + 1, Term::treatment());
    }
    std::vector<std::size_t> rows(dataset.size());
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
    models.push_back(build_model(dataset, main_terms, rows, 0, "pooled"));
  }

  std::vector<TrialDataset> out;
  out.reserve(static_cast<std::size_t>(plan.m));
  for (int j = 0; j < plan.m; ++j) {
    TrialDataset::Column y = dataset.outcome();
    for (const auto& m : models) {
      SplitMix64 rng = derive_stream(plan.seed, static_cast<std::uint64_t>(j), m.stream);
      Eigen::VectorXd u(m.fit.coefficients.size());
      for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = standard_normal(rng);
      const Eigen::VectorXd beta = m.fit.coefficients + m.chol * u;
      for (std::size_t k = 0; k < m.missing.size(); ++k) {
        const double eta = m.x_missing.row(static_cast<Eigen::Index>(k)).dot(beta);
        y[m.missing[k]] = bernoulli(rng, inverse_link(Link::Logit, eta)) ? 1.0 : 0.0;
      }
    }
    out.push_back(dataset.with_outcome(std::move(y)));
  }
  return out;
}

// ---------------------------------------------------------------------------

MIResult rubin_combine(std::span<const double> estimates, std::span<const double> variances) {
  if (estimates.size() != variances.size() || estimates.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "Rubin's rules need at least two matched estimates");
  }
  MIResult r;
  r.m = static_cast<int>(estimates.size());
  r.estimates.assign(estimates.begin(), estimates.end());
  r.variances.assign(variances.begin(), variances.end());
  const double m = r.m;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    r.combined += estimates[i] / m;
    r.within += variances[i] / m;
  }
  for (double e : estimates) r.between += (e - r.combined) * (e - r.combined);
  r.between /= m - 1.0;
  const double inflated = (1.0 + 1.0 / m) * r.between;
  r.total = r.within + inflated;
  if (inflated > 0.0) {
    const double ratio = 1.0 + r.within / inflated;
    r.df = (m - 1.0) * ratio * ratio;
  } else {
    r.df = std::numeric_limits<double>::infinity();
  }
  return r;
}

MIVectorResult rubin_combine(std::span<const Eigen::VectorXd> estimates,
                             std::span<const Eigen::MatrixXd> covariances) {
  if (estimates.size() != covariances.size() || estimates.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "Rubin's rules need at least two matched estimates");
  }
  MIVectorResult r;
  r.m = static_cast<int>(estimates.size());
  const double m = r.m;
  const auto p = estimates.front().size();
  r.combined = Eigen::VectorXd::Zero(p);
  r.within = Eigen::MatrixXd::Zero(p, p);
  r.between = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].size() != p || covariances[i].rows() != p || covariances[i].cols() != p) {
      throw Error(ErrorCode::InvalidArgument, "imputation estimates differ in dimension");
    }
    r.combined += estimates[i] / m;
    r.within += covariances[i] / m;
  }
  for (const auto& e : estimates) {
    const Eigen::VectorXd d = e - r.combined;
    r.between += d * d.transpose();
  }
  r.between /= m - 1.0;
  r.total = r.within + (1.0 + 1.0 / m) * r.between;
  return r;
}

}  // namespace adjustkit
