#include "adjustkit/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "adjustkit/error.hpp"

namespace adjustkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kBoundaryTolerance = 1e-7;
constexpr double kStandardisedCoefficientLimit = 10.0;

bool canonical(Family family, Link link) {
  return (family == Family::Gaussian && link == Link::Identity) ||
         (family == Family::Binomial && link == Link::Logit) ||
         (family == Family::Poisson && link == Link::Log);
}

double variance(Family family, double mu) {
  switch (family) {
    case Family::Gaussian: return 1.0;
    case Family::Binomial: return mu * (1.0 - mu);
    case Family::Poisson: return mu;
  }
  return kNaN;
}

bool valid_mean(Family family, double mu) {
  if (!std::isfinite(mu)) return false;
  switch (family) {
    case Family::Gaussian: return true;
    case Family::Binomial: return mu > 0.0 && mu < 1.0;
    case Family::Poisson: return mu > 0.0;
  }
  return false;
}

double xlogx_ratio(double y, double mu) { return y > 0.0 ? y * std::log(y / mu) : 0.0; }

double deviance(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                const Eigen::VectorXd& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double d = 0.0;
    switch (family) {
      case Family::Gaussian: d = (y[i] - mu[i]) * (y[i] - mu[i]); break;
      case Family::Binomial:
        d = 2.0 * (xlogx_ratio(y[i], mu[i]) + xlogx_ratio(1.0 - y[i], 1.0 - mu[i]));
        break;
      case Family::Poisson: d = 2.0 * (xlogx_ratio(y[i], mu[i]) - (y[i] - mu[i])); break;
    }
    dev += w[i] * d;
  }
  return dev;
}

// Sequential rank screen on the weighted, column-normalised design: a column
// is kept only if it raises the rank of the columns kept so far.
std::vector<std::size_t> independent_columns(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                             double tolerance) {
  Eigen::MatrixXd xs = w.cwiseSqrt().asDiagonal() * x;
  std::vector<std::size_t> kept;
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index j = 0; j < xs.cols(); ++j) {
    const double norm = xs.col(j).norm();
    if (norm > 0.0) {
      xs.col(j) /= norm;
      candidates.push_back(j);
    }
  }
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    qr.setThreshold(tolerance);
    if (qr.rank() == xs.cols()) {
      kept.resize(static_cast<std::size_t>(xs.cols()));
      std::iota(kept.begin(), kept.end(), std::size_t{0});
      return kept;
    }
  }
  Eigen::MatrixXd basis(xs.rows(), 0);
  for (Eigen::Index j : candidates) {
    Eigen::MatrixXd trial(xs.rows(), basis.cols() + 1);
    trial << basis, xs.col(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(trial);
    qr.setThreshold(tolerance);
    if (qr.rank() == trial.cols()) {
      basis = std::move(trial);
      kept.push_back(static_cast<std::size_t>(j));
    }
  }
  return kept;
}

struct WorkingState {
  Eigen::VectorXd eta, mu, mu_eta, working_weights, z;
};

WorkingState working_state(Family family, Link link, const Eigen::VectorXd& eta,
                           const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  WorkingState s;
  const Eigen::Index n = eta.size();
  s.eta = eta;
  s.mu.resize(n);
  s.mu_eta.resize(n);
  s.working_weights.resize(n);
  s.z.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.mu[i] = inverse_link(link, eta[i]);
    s.mu_eta[i] = mean_derivative(link, eta[i]);
    const double v = variance(family, s.mu[i]);
    if (s.mu_eta[i] == 0.0 || !(v > 0.0)) {
      s.working_weights[i] = 0.0;
      s.z[i] = eta[i];
    } else {
      s.working_weights[i] = w[i] * s.mu_eta[i] * s.mu_eta[i] / v;
      s.z[i] = eta[i] + (y[i] - s.mu[i]) / s.mu_eta[i];
    }
  }
  return s;
}

std::optional<Eigen::VectorXd> weighted_least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& z,
                                                      const Eigen::VectorXd& ww) {
  const Eigen::VectorXd sw = ww.cwiseSqrt();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sw.asDiagonal() * x);
  if (qr.rank() < x.cols()) return std::nullopt;
  Eigen::VectorXd beta = qr.solve(sw.cwiseProduct(z));
  if (!beta.allFinite()) return std::nullopt;
  return beta;
}

bool all_valid(Family family, Link link, const Eigen::VectorXd& eta) {
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (!valid_mean(family, inverse_link(link, eta[i]))) return false;
  }
  return true;
}

Eigen::VectorXd means_of(Link link, const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = inverse_link(link, eta[i]);
  return mu;
}

std::optional<Eigen::MatrixXd> symmetric_inverse(const Eigen::MatrixXd& a) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
  const Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (!(dmax > 0.0) || d.minCoeff() <= dmax * 1e-14) return std::nullopt;
  Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
  return Eigen::MatrixXd(0.5 * (inv + inv.transpose()));
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::Gaussian: return "gaussian";
    case Family::Binomial: return "binomial";
    case Family::Poisson: return "poisson";
  }
  return "?";
}

std::string to_string(Link link) {
  switch (link) {
    case Link::Identity: return "identity";
    case Link::Logit: return "logit";
    case Link::Log: return "log";
  }
  return "?";
}

double inverse_link(Link link, double eta) {
  switch (link) {
    case Link::Identity: return eta;
    case Link::Logit: return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
    case Link::Log: return std::exp(eta);
  }
  return kNaN;
}

double link_function(Link link, double mu) {
  switch (link) {
    case Link::Identity: return mu;
    case Link::Logit: return std::log(mu / (1.0 - mu));
    case Link::Log: return std::log(mu);
  }
  return kNaN;
}

double mean_derivative(Link link, double eta) {
  switch (link) {
    case Link::Identity: return 1.0;
    case Link::Logit: {
      const double p = inverse_link(Link::Logit, eta);
      return p * (1.0 - p);
    }
    case Link::Log: return std::exp(eta);
  }
  return kNaN;
}

void validate(const ModelSpec& spec) {
  const bool ok = canonical(spec.family, spec.link) ||
                  (spec.family == Family::Binomial &&
                   (spec.link == Link::Log || spec.link == Link::Identity));
  if (!ok) {
    throw Error(ErrorCode::InvalidArgument,
                "unsupported family/link " + to_string(spec.family) + "/" + to_string(spec.link));
  }
  if (spec.terms.empty()) throw Error(ErrorCode::InvalidArgument, "model has no terms");
  if (spec.prior_weights) {
    for (double w : *spec.prior_weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(ErrorCode::InvalidArgument, "prior weights must be finite and nonnegative");
      }
    }
  }
}

std::string FitStatus::describe() const {
  std::string s;
  switch (state) {
    case FitState::Converged: s = "Converged"; break;
    case FitState::NonConverged: s = "NonConverged(" + reason + ")"; break;
    case FitState::RankDeficient: {
      s = "RankDeficient(";
      for (std::size_t i = 0; i < dropped.size(); ++i) s += (i ? ", " : "") + dropped[i];
      s += ")";
      break;
    }
  }
  if (!separation.empty()) {
    s += " SeparationSuspected(";
    for (std::size_t i = 0; i < separation.size(); ++i) s += (i ? ", " : "") + separation[i];
    s += ")";
  }
  return s;
}

std::size_t FitResult::index_of(std::string_view label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return i;
  }
  throw Error(ErrorCode::UnknownTerm, "no estimable coefficient '" + std::string(label) + "'");
}

double FitResult::coefficient(std::string_view label) const {
  return coefficients[static_cast<Eigen::Index>(index_of(label))];
}

double FitResult::model_se(std::string_view label) const {
  const auto i = static_cast<Eigen::Index>(index_of(label));
  return std::sqrt(model_covariance(i, i));
}

FitResult fit(const ModelSpec& spec, const TrialDataset& dataset, const FitOptions& options) {
  validate(spec);
  if (spec.prior_weights && spec.prior_weights->size() != dataset.size()) {
    throw Error(ErrorCode::InvalidArgument, "prior weights must align with dataset rows");
  }
  FitResult result;
  result.family = spec.family;
  result.link = spec.link;
  result.layout = make_layout(dataset, spec.terms);
  const DesignMatrix dm = design_matrix(dataset, result.layout);

  // Response and weights on design rows, dropping unusable rows.
  std::vector<Eigen::Index> use;
  std::vector<double> yv, wv;
  for (std::size_t i = 0; i < dm.rows.size(); ++i) {
    const std::size_t r = dm.rows[i];
    std::optional<double> y;
    switch (spec.response) {
      case Response::Outcome: y = dataset.outcome()[r]; break;
      case Response::Treatment: y = dataset.treat()[r]; break;
      case Response::OutcomeObserved: y = dataset.outcome()[r] ? 1.0 : 0.0; break;
    }
    const double w = spec.prior_weights ? (*spec.prior_weights)[r] : 1.0;
    if (!y || w == 0.0) continue;
    if (spec.family == Family::Binomial && (*y < 0.0 || *y > 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "binomial response outside [0,1]");
    }
    if (spec.family == Family::Poisson && *y < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "poisson response is negative");
    }
    use.push_back(static_cast<Eigen::Index>(i));
    yv.push_back(*y);
    wv.push_back(w);
    result.rows.push_back(r);
  }
  const auto n = static_cast<Eigen::Index>(use.size());
  if (n == 0) throw Error(ErrorCode::EmptyDataset, "no rows available for fitting");

  Eigen::MatrixXd x_full(n, dm.x.cols());
  for (Eigen::Index i = 0; i < n; ++i) x_full.row(i) = dm.x.row(use[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(yv.data(), n);
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(wv.data(), n);

  result.kept = independent_columns(x_full, w, options.rank_tolerance);
  for (std::size_t j = 0, k = 0; j < dm.labels.size(); ++j) {
    if (k < result.kept.size() && result.kept[k] == j) {
      result.labels.push_back(dm.labels[j]);
      ++k;
    } else {
      result.status.dropped.push_back(dm.labels[j]);
    }
  }
  const auto p = static_cast<Eigen::Index>(result.kept.size());
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index j = 0; j < p; ++j) x.col(j) = x_full.col(static_cast<Eigen::Index>(result.kept[static_cast<std::size_t>(j)]));
  result.x = x;
  result.y = y;
  result.prior_weights = w;

  auto fail = [&](std::string reason) {
    result.status.state = FitState::NonConverged;
    result.status.reason = std::move(reason);
    result.coefficients = Eigen::VectorXd::Constant(p, kNaN);
    result.model_covariance = Eigen::MatrixXd::Constant(p, p, kNaN);
    result.fitted_means = Eigen::VectorXd::Constant(n, kNaN);
    result.deviance = kNaN;
    return result;
  };
  if (p == 0) return fail("no estimable columns");

  const Family family = spec.family;
  const Link link = spec.link;
  const double ybar = w.dot(y) / w.sum();

  // Starting point. Canonical links start from adjusted responses; the
  // non-canonical binomial links start from the logistic fit's means mapped
  // through the target link, pulled back towards the intercept-only point if
  // that leaves the mean domain.
  std::optional<Eigen::VectorXd> beta;
  WorkingState state;
  if (canonical(family, link)) {
    Eigen::VectorXd mu0(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      switch (family) {
        case Family::Gaussian: mu0[i] = y[i]; break;
        case Family::Binomial: mu0[i] = (w[i] * y[i] + 0.5) / (w[i] + 1.0); break;
        case Family::Poisson: mu0[i] = y[i] + 0.1; break;
      }
    }
    Eigen::VectorXd eta0(n);
    for (Eigen::Index i = 0; i < n; ++i) eta0[i] = link_function(link, mu0[i]);
    state = working_state(family, link, eta0, y, w);
    // Treat the starting means as the current iterate.
    state.mu = mu0;
  } else {
    if (!(ybar > 0.0 && ybar < 1.0)) return fail("outcome is constant; no interior starting value");
    const auto intercept_col = std::find(result.labels.begin(), result.labels.end(), "(Intercept)");
    ModelSpec logit_spec = spec;
    logit_spec.link = Link::Logit;
    logit_spec.robust = false;
    const FitResult logit = fit(logit_spec, dataset, options);
    Eigen::VectorXd target(p);
    bool have_target = false;
    if (logit.status.usable() && logit.fitted_means.allFinite()) {
      Eigen::VectorXd eta0(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        eta0[i] = link_function(link, std::clamp(logit.fitted_means[i], 1e-6, 1.0 - 1e-6));
      }
      Eigen::VectorXd ww(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = std::clamp(logit.fitted_means[i], 1e-6, 1.0 - 1e-6);
        const double d = mean_derivative(link, eta0[i]);
        ww[i] = w[i] * d * d / variance(family, m);
      }
      if (auto b = weighted_least_squares(x, eta0, ww)) {
        target = *b;
        have_target = true;
      }
    }
    if (have_target && all_valid(family, link, x * target)) {
      beta = target;
    } else if (intercept_col != result.labels.end()) {
      Eigen::VectorXd feasible = Eigen::VectorXd::Zero(p);
      feasible[std::distance(result.labels.begin(), intercept_col)] = link_function(link, ybar);
      beta = feasible;
      if (have_target) {
        double t = 0.5;
        for (int h = 0; h < options.max_halvings; ++h, t *= 0.5) {
          Eigen::VectorXd trial = feasible + t * (target - feasible);
          if (all_valid(family, link, x * trial)) {
            beta = trial;
            break;
          }
        }
      }
    } else {
      return fail("no domain-feasible starting values");
    }
    state = working_state(family, link, x * *beta, y, w);
  }

  double dev_old = deviance(family, y, state.mu, w);
  bool converged = false;
  bool boundary_step = false;
  int iter = 0;
  for (iter = 1; iter <= options.max_iterations; ++iter) {
    auto proposal = weighted_least_squares(x, state.z, state.working_weights);
    if (!proposal) {
      if (beta) return fail("singular weighted least-squares system");
      return fail("singular weighted least-squares system at start");
    }
    Eigen::VectorXd candidate = *proposal;
    Eigen::VectorXd eta = x * candidate;
    bool valid = all_valid(family, link, eta);
    double dev = valid ? deviance(family, y, means_of(link, eta), w) : kNaN;
    boundary_step = false;
    if (beta) {
      int halvings = 0;
      auto worse = [&] { return !valid || !std::isfinite(dev) || dev > dev_old + 1e-10 * std::abs(dev_old); };
      while (worse()) {
        if (!valid) boundary_step = true;
        if (++halvings > options.max_halvings) {
          result.iterations = iter;
          return fail(valid ? "step-halving could not reduce the deviance"
                            : "no domain-feasible step; the maximum lies on the boundary");
        }
        candidate = 0.5 * (candidate + *beta);
        eta = x * candidate;
        valid = all_valid(family, link, eta);
        dev = valid ? deviance(family, y, means_of(link, eta), w) : kNaN;
      }
    } else if (!valid) {
      return fail("first iterate left the mean domain");
    }
    beta = candidate;
    state = working_state(family, link, eta, y, w);
    result.deviance_history.push_back(dev);
    const double change = std::abs(dev - dev_old) / (std::abs(dev) + 0.1);
    dev_old = dev;
    if (change < options.tolerance) {
      converged = true;
      break;
    }
  }
  result.iterations = std::min(iter, options.max_iterations);
  if (!converged) return fail("iteration limit reached");
  if (boundary_step) return fail("estimates pinned to the boundary of the mean domain");

  // The deviance criterion leaves coefficients accurate to roughly the square
  // root of the tolerance. Interior fits take further full Newton steps until
  // the coefficients settle; fits drifting towards separation are left where
  // the deviance criterion stopped them.
  auto interior = [&](const Eigen::VectorXd& mu) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      if (family != Family::Gaussian && mu[i] < 1e-7) return false;
      if (family == Family::Binomial && mu[i] > 1.0 - 1e-7) return false;
    }
    return true;
  };
  if (interior(state.mu)) {
    for (int extra = 0; extra < 25; ++extra) {
      auto proposal = weighted_least_squares(x, state.z, state.working_weights);
      if (!proposal) break;
      const Eigen::VectorXd eta = x * *proposal;
      if (!all_valid(family, link, eta)) break;
      const double dev = deviance(family, y, means_of(link, eta), w);
      if (!(dev <= dev_old + 1e-12 * (std::abs(dev_old) + 1.0))) break;
      const double step = (*proposal - *beta).cwiseAbs().maxCoeff();
      beta = *proposal;
      state = working_state(family, link, eta, y, w);
      dev_old = dev;
      if (step <= 1e-13 * (1.0 + beta->cwiseAbs().maxCoeff())) break;
    }
  }

  result.coefficients = *beta;
  result.fitted_means = state.mu;
  result.deviance = dev_old;
  if (family == Family::Gaussian) {
    const double rss = (w.array() * (y - state.mu).array().square()).sum();
    const double df = static_cast<double>(n - p);
    result.dispersion = df > 0 ? rss / df : kNaN;
  }
  const Eigen::MatrixXd info = information(result);
  if (auto inv = symmetric_inverse(info)) {
    result.model_covariance = result.dispersion * *inv;
  } else {
    result.model_covariance = Eigen::MatrixXd::Constant(p, p, kNaN);
  }
  result.status.state = result.status.dropped.empty() ? FitState::Converged : FitState::RankDeficient;

  const Diagnostics diag = diagnose(result);
  if (diag.separation_suspected) {
    result.status.separation = diag.offending;
    if (result.status.separation.empty()) result.status.separation.push_back("(fitted means at boundary)");
  }
  if (spec.robust) {
    try {
      result.robust_covariance = robust_covariance(result);
    } catch (const Error&) {
      result.robust_covariance.reset();
    }
  }
  return result;
}

Eigen::MatrixXd information(const FitResult& fit) {
  const Eigen::Index n = fit.x.rows();
  Eigen::VectorXd ww(n);
  const Eigen::VectorXd eta = fit.x * fit.coefficients;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = mean_derivative(fit.link, eta[i]);
    const double v = variance(fit.family, inverse_link(fit.link, eta[i]));
    ww[i] = v > 0.0 ? fit.prior_weights[i] * d * d / v : 0.0;
  }
  return fit.x.transpose() * ww.asDiagonal() * fit.x;
}

Eigen::MatrixXd score_contributions(const FitResult& fit) {
  const Eigen::Index n = fit.x.rows();
  const Eigen::VectorXd eta = fit.x * fit.coefficients;
  Eigen::VectorXd factor(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = inverse_link(fit.link, eta[i]);
    const double v = variance(fit.family, mu);
    factor[i] = v > 0.0 ? fit.prior_weights[i] * (fit.y[i] - mu) * mean_derivative(fit.link, eta[i]) / v : 0.0;
  }
  return factor.asDiagonal() * fit.x;
}

Eigen::MatrixXd robust_covariance(const FitResult& fit) {
  if (!fit.status.usable()) throw Error(ErrorCode::SingularInformation, "fit did not converge");
  const Eigen::Index positive = (fit.prior_weights.array() > 0.0).count();
  if (positive <= fit.x.cols()) {
    throw Error(ErrorCode::SingularInformation, "no residual degrees of freedom for the sandwich");
  }
  const auto bread = symmetric_inverse(information(fit));
  if (!bread) throw Error(ErrorCode::SingularInformation, "information matrix is singular");
  const Eigen::MatrixXd s = score_contributions(fit);
  const Eigen::MatrixXd meat = s.transpose() * s;
  Eigen::MatrixXd v = *bread * meat * *bread;
  return 0.5 * (v + v.transpose());
}

Prediction predict_partial(const FitResult& fit, const TrialDataset& newdata, Scale scale) {
  if (!fit.status.usable()) throw Error(ErrorCode::NonConverged, "cannot predict from a failed fit");
  const DesignMatrix dm = design_matrix(newdata, fit.layout);
  const auto n = static_cast<Eigen::Index>(newdata.size());
  const auto p = static_cast<Eigen::Index>(fit.kept.size());
  Prediction out;
  out.values = Eigen::VectorXd::Constant(n, kNaN);
  out.x = Eigen::MatrixXd::Zero(n, p);
  std::vector<bool> is_kept(dm.labels.size(), false);
  for (std::size_t k : fit.kept) is_kept[k] = true;
  out.unscorable = dm.excluded;
  for (std::size_t i = 0; i < dm.rows.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    bool scorable = true;
    for (std::size_t j = 0; j < is_kept.size(); ++j) {
      if (!is_kept[j] && dm.x(row, static_cast<Eigen::Index>(j)) != 0.0) {
        scorable = false;
        break;
      }
    }
    const auto r = static_cast<Eigen::Index>(dm.rows[i]);
    if (!scorable) {
      out.unscorable.push_back(dm.rows[i]);
      continue;
    }
    for (Eigen::Index j = 0; j < p; ++j) out.x(r, j) = dm.x(row, static_cast<Eigen::Index>(fit.kept[static_cast<std::size_t>(j)]));
    const double eta = out.x.row(r).dot(fit.coefficients);
    out.values[r] = scale == Scale::Linear ? eta : inverse_link(fit.link, eta);
  }
  std::sort(out.unscorable.begin(), out.unscorable.end());
  return out;
}

Eigen::VectorXd predict(const FitResult& fit, const TrialDataset& newdata, Scale scale) {
  Prediction p = predict_partial(fit, newdata, scale);
  if (!p.unscorable.empty()) {
    throw Error(ErrorCode::PredictionGap,
                std::to_string(p.unscorable.size()) + " rows cannot be scored by the fitted model");
  }
  return p.values;
}

Diagnostics diagnose(const FitResult& fit) {
  Diagnostics d;
  d.dropped = fit.status.dropped;
  d.deviance_history = fit.deviance_history;
  if (!fit.status.usable()) return d;
  for (Eigen::Index i = 0; i < fit.fitted_means.size(); ++i) {
    const double mu = fit.fitted_means[i];
    const bool near = (fit.family == Family::Binomial && (mu < kBoundaryTolerance || mu > 1.0 - kBoundaryTolerance)) ||
                      (fit.family == Family::Poisson && mu < kBoundaryTolerance);
    if (near) ++d.boundary_means;
  }
  for (Eigen::Index j = 0; j < fit.coefficients.size(); ++j) {
    const double b = fit.coefficients[j];
    if (fit.labels[static_cast<std::size_t>(j)] == "(Intercept)") continue;
    d.max_abs_coefficient = std::max(d.max_abs_coefficient, std::abs(b));
    const auto col = fit.x.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / std::max<Eigen::Index>(1, col.size() - 1));
    if (std::abs(b) * sd > kStandardisedCoefficientLimit) d.offending.push_back(fit.labels[static_cast<std::size_t>(j)]);
  }
  d.separation_suspected = d.boundary_means > 0 || !d.offending.empty();
  return d;
}

std::string Diagnostics::render() const {
  std::ostringstream os;
  os << "separation suspected: " << (separation_suspected ? "yes" : "no") << '\n';
  os << "fitted means at boundary: " << boundary_means << '\n';
  os << "max |coefficient| (excl. intercept): " << max_abs_coefficient << '\n';
  if (!offending.empty()) {
    os << "large standardised coefficients:";
    for (const auto& l : offending) os << ' ' << l;
    os << '\n';
  }
  if (!dropped.empty()) {
    os << "dropped (collinear):";
    for (const auto& l : dropped) os << ' ' << l;
    os << '\n';
  }
  os << "iterations: " << deviance_history.size() << '\n';
  return os.str();
}

}  // namespace adjustkit
