#include "adjustkit/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "adjustkit/error.hpp"
#include "adjustkit/random.hpp"

namespace adjustkit {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must lie in (0,1)");
  }
}

// Quantile type 7 (linear interpolation) of sorted values.
double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<std::vector<std::size_t>> resampling_cells(const TrialDataset& dataset,
                                                       const BootstrapPlan& plan) {
  if (plan.resampling == Resampling::Simple) {
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return {all};
  }
  std::vector<const TrialDataset::Column*> cols;
  for (const auto& s : plan.strata) cols.push_back(&dataset.column(s));
  std::map<std::vector<double>, std::vector<std::size_t>> cells;
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    std::vector<double> key;
    for (const auto* c : cols) {
      if (!(*c)[r]) throw Error(ErrorCode::DesignMismatch, "stratum variable missing for a row");
      key.push_back(*(*c)[r]);
    }
    if (plan.resampling == Resampling::WithinStratumBlock) key.push_back(dataset.treat()[r]);
    cells[key].push_back(r);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [key, rows] : cells) out.push_back(std::move(rows));
  return out;
}

}  // namespace

std::string to_string(CIMethod method) {
  switch (method) {
    case CIMethod::Wald: return "wald";
    case CIMethod::TestBased: return "test_based";
    case CIMethod::BootstrapPercentile: return "bootstrap_percentile";
  }
  return "?";
}

std::string to_string(Resampling r) {
  switch (r) {
    case Resampling::Simple: return "simple";
    case Resampling::WithinStratum: return "within_stratum";
    case Resampling::WithinStratumBlock: return "within_stratum_block";
  }
  return "?";
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

double delta_method(const Eigen::VectorXd& gradient, const Eigen::MatrixXd& covariance) {
  if (gradient.size() != covariance.rows() || covariance.rows() != covariance.cols()) {
    throw Error(ErrorCode::InvalidArgument, "gradient and covariance dimensions differ");
  }
  const double v = gradient.dot(covariance * gradient);
  const double scale = gradient.cwiseAbs().dot(covariance.cwiseAbs() * gradient.cwiseAbs());
  if (!std::isfinite(v)) throw Error(ErrorCode::NegativeVariance, "non-finite variance");
  if (v < 0.0) {
    if (v < -1e-12 * scale) throw Error(ErrorCode::NegativeVariance, "covariance is not positive semidefinite");
    return 0.0;
  }
  return std::sqrt(v);
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& g,
                                 const Eigen::VectorXd& at, double h) {
  Eigen::VectorXd grad(at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    Eigen::VectorXd up = at, down = at;
    up[j] += h;
    down[j] -= h;
    grad[j] = (g(up) - g(down)) / (2.0 * h);
  }
  return grad;
}

CI wald_ci(double estimate, double se, double level) {
  check_level(level);
  const double q = normal_quantile(0.5 + level / 2.0);
  return {level, estimate - q * se, estimate + q * se, CIMethod::Wald};
}

double wald_p(double estimate, double se) {
  if (se == 0.0) return estimate == 0.0 ? 1.0 : 0.0;
  return 2.0 * normal_cdf(-std::abs(estimate / se));
}

CI test_based_ci(double estimate, double z, double level) {
  check_level(level);
  if (z == 0.0 || estimate == 0.0 || !std::isfinite(z) || !std::isfinite(estimate)) {
    throw Error(ErrorCode::DegenerateInput, "test-based interval needs nonzero estimate and z");
  }
  const double q = normal_quantile(0.5 + level / 2.0);
  const double half = std::abs(q / z * estimate);
  return {level, estimate - half, estimate + half, CIMethod::TestBased};
}

void check_compatible(const BootstrapPlan& plan, const TrialDataset& dataset) {
  if (plan.replicates < 100) throw Error(ErrorCode::InvalidArgument, "at least 100 bootstrap replicates required");
  check_level(plan.level);
  if (plan.resampling != Resampling::Simple) {
    if (plan.strata.empty()) throw Error(ErrorCode::DesignMismatch, "stratified resampling needs stratum variables");
    for (const auto& s : plan.strata) {
      const auto* e = dataset.schema().find(s);
      if (!e) throw Error(ErrorCode::UnknownTerm, "unknown stratum variable '" + s + "'");
      if (e->kind != CovariateKind::Categorical) {
        throw Error(ErrorCode::DesignMismatch, "stratum variable '" + s + "' is not categorical");
      }
    }
  }
  if (const auto* m = std::get_if<Minimisation>(&dataset.design())) {
    (void)m;
    if (!plan.allow_minimisation_approximation) {
      throw Error(ErrorCode::DesignMismatch,
                  "resampling cannot mimic minimisation; pass the approximation flag to stratify instead");
    }
    if (plan.resampling == Resampling::Simple) {
      throw Error(ErrorCode::DesignMismatch, "the minimisation approximation requires stratified resampling");
    }
  }
  if (const auto* sb = std::get_if<StratifiedBlocks>(&dataset.design())) {
    if (plan.resampling != Resampling::Simple) {
      auto a = plan.strata, b = sb->strata;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) throw Error(ErrorCode::DesignMismatch, "stratum variables differ from the randomisation strata");
    }
  }
}

std::vector<std::size_t> resample_indices(const TrialDataset& dataset, const BootstrapPlan& plan, int r) {
  const auto cells = resampling_cells(dataset, plan);
  SplitMix64 rng = derive_stream(plan.seed, static_cast<std::uint64_t>(r));
  std::vector<std::size_t> idx;
  idx.reserve(dataset.size());
  for (const auto& cell : cells) {
    for (std::size_t k = 0; k < cell.size(); ++k) idx.push_back(cell[uniform_index(rng, cell.size())]);
  }
  return idx;
}

BootstrapResult bootstrap(const TrialDataset& dataset, const ScalarEstimator& estimator,
                          const BootstrapPlan& plan) {
  check_compatible(plan, dataset);
  const auto cells = resampling_cells(dataset, plan);
  BootstrapResult out;
  out.replicates.assign(static_cast<std::size_t>(plan.replicates), kNaN);

  auto run = [&](int r) {
    SplitMix64 rng = derive_stream(plan.seed, static_cast<std::uint64_t>(r));
    std::vector<std::size_t> idx;
    idx.reserve(dataset.size());
    for (const auto& cell : cells) {
      for (std::size_t k = 0; k < cell.size(); ++k) idx.push_back(cell[uniform_index(rng, cell.size())]);
    }
    try {
      const double v = estimator(dataset.subset(idx));
      if (std::isfinite(v)) out.replicates[static_cast<std::size_t>(r)] = v;
    } catch (const std::exception&) {
      // counted as a failure below
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(plan.threads ? plan.threads : worker_count(),
                                                           static_cast<unsigned>(plan.replicates)));
  if (threads == 1) {
    for (int r = 0; r < plan.replicates; ++r) run(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int r = next++; r < plan.replicates; r = next++) run(r);
      });
    }
  }

  std::vector<double> ok;
  for (double v : out.replicates) {
    if (std::isnan(v)) ++out.failures;
    else ok.push_back(v);
  }
  out.successes = static_cast<int>(ok.size());
  if (out.failures * 10 > plan.replicates || ok.size() < 2) {
    throw Error(ErrorCode::TooManyFailures, std::to_string(out.failures) + " of " +
                                                std::to_string(plan.replicates) + " replicates failed");
  }
  double mean = 0.0;
  for (double v : ok) mean += v;
  mean /= static_cast<double>(ok.size());
  double ss = 0.0;
  for (double v : ok) ss += (v - mean) * (v - mean);
  out.se = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  std::sort(ok.begin(), ok.end());
  const double alpha = 1.0 - plan.level;
  out.ci = {plan.level, quantile_sorted(ok, alpha / 2.0), quantile_sorted(ok, 1.0 - alpha / 2.0),
            CIMethod::BootstrapPercentile};
  return out;
}

}  // namespace adjustkit
