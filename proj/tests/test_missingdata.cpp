#include <doctest.h>

#include <algorithm>
#include <functional>
#include <random>

#include "adjustkit/error.hpp"
#include "adjustkit/estimators.hpp"
#include "adjustkit/missingdata.hpp"
#include "adjustkit/scenarios.hpp"
#include "oracle.hpp"

using namespace adjustkit;

namespace {

const std::vector<Term> kX{Term::main("x")};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an adjustkit::Error");
  return ErrorCode::ConfigError;
}

// Appendix trial with an extra continuous covariate "w".
TrialDataset with_w(const TrialDataset& base, TrialDataset::Column w) {
  return base.with_column({"w", CovariateKind::Continuous, {}}, std::move(w));
}

TrialDataset small(std::vector<TrialDataset::Cell> w, std::vector<int> treat) {
  std::vector<std::string> ids;
  TrialDataset::Column y;
  for (std::size_t i = 0; i < w.size(); ++i) {
    ids.push_back(std::to_string(i));
    y.push_back(static_cast<double>(i % 2));
  }
  return TrialDataset(ids, treat, y, OutcomeType::Binary, CovariateSchema({{"w", CovariateKind::Continuous, {}}}),
                      {std::move(w)});
}

}  // namespace

TEST_CASE("mean imputation uses the pooled observed mean") {
  const TrialDataset d = small({1.0, 2.0, std::nullopt, 3.0}, {0, 1, 0, 1});
  const TrialDataset m = mean_impute_covariate(d, "w");
  CHECK(*m.column("w")[2] == 2.0);
  CHECK(m.audit().imputed_cells.at("w") == std::vector<bool>{false, false, true, false});
  CHECK(d.column("w")[2] == std::nullopt);  // input untouched

  // Arm means 1 and 10; pooled mean over the five observed values.
  const TrialDataset e = small({1.0, 10.0, 1.0, 10.0, std::nullopt, 10.0}, {0, 1, 0, 1, 0, 1});
  CHECK(*mean_impute_covariate(e, "w").column("w")[4] == doctest::Approx(32.0 / 5.0));

  const TrialDataset full = small({1.0, 2.0}, {0, 1});
  CHECK(mean_impute_covariate(full, "w").column("w") == full.column("w"));

  const TrialDataset none = small({std::nullopt, std::nullopt}, {0, 1});
  CHECK(code_of([&] { mean_impute_covariate(none, "w"); }) == ErrorCode::AllMissing);
  CHECK(code_of([&] { mean_impute_covariate(appendix1_dataset(), "x"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("mean imputation of an unmodelled covariate leaves the unadjusted estimate unchanged") {
  const TrialDataset base = appendix1_dataset();
  TrialDataset::Column w(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (i % 9 != 0) w[i] = static_cast<double>(i % 13);
  }
  const TrialDataset d = with_w(base, w);
  const EstimandSpec e{Summary::RiskDifference, Level::Marginal, Population::CompleteCase};
  CHECK(unadjusted(mean_impute_covariate(d, "w"), e).estimate == unadjusted(d, e).estimate);
}

TEST_CASE("missing indicator") {
  const TrialDataset base = appendix1_dataset();
  TrialDataset::Column w(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) w[i] = 0.1 * static_cast<double>(i % 10);
  for (std::size_t i : {3u, 500u, 1999u}) w[i].reset();
  const TrialDataset d = missing_indicator(with_w(base, w), "w");
  double sum = 0.0;
  for (const auto& c : d.column("w_missing")) sum += *c;
  CHECK(sum == 3.0);
  CHECK(d.audit().removable_columns.empty());
  CHECK(d.column("w")[500].has_value());

  const TrialDataset clean = missing_indicator(base, "x");
  CHECK(clean.audit().removable_columns == std::vector<std::string>{"x_missing"});
  for (const auto& c : clean.column("x_missing")) CHECK(*c == 0.0);

  const std::vector<Term> terms{Term::main("w"), Term::main("w_missing")};
  CHECK(code_of([&] {
          direct_adjust(d, terms, {Summary::LogOddsRatio, Level::Conditional, Population::AllRandomised});
        }) == ErrorCode::InvalidEstimand);
  CHECK_NOTHROW(standardize(d, terms, {Summary::LogOddsRatio, Level::Marginal, Population::AllRandomised}));
}

TEST_CASE("inverse probability of missingness weights") {
  const MissingnessModel model{{"x"}, true};
  const WeightSet none = ipmw_weights(appendix1_dataset(), model);
  CHECK(none.weights.size() == 2000);
  for (double v : none.weights) CHECK(std::abs(v - 1.0) < 1e-12);

  const TrialDataset d = appendix1_dataset(Appendix1Variant::MissingOutcomes);
  const WeightSet w = ipmw_weights(d, model);
  REQUIRE(w.weights.size() == 1500);
  for (std::size_t k = 0; k < w.rows.size(); ++k) {
    const double expected = *d.column("x")[w.rows[k]] == 0.0 ? 2.0 : 1.0;
    // X=1 is always observed, so its fitted probability only approaches 1.
    CHECK(std::abs(w.weights[k] - expected) < 1e-8);
  }

  const WeightSet t = treatment_weights(d, kX);
  const WeightSet p = product(t, w);
  CHECK(p.source == WeightSource::Product);
  CHECK(p.rows.size() == 1500);

  // No observed outcome in the X=1, Z=1 cell.
  TrialDataset::Column y = appendix1_dataset().outcome();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (*appendix1_dataset().column("x")[i] == 1.0 && appendix1_dataset().treat()[i] == 1) y[i].reset();
  }
  const TrialDataset hole = appendix1_dataset().with_outcome(y);
  CHECK(code_of([&] { ipmw_weights(hole, model); }) == ErrorCode::PerfectPredictionOfMissingness);
}

TEST_CASE("Rubin's rules") {
  const std::vector<double> est{1.0, 3.0}, var{1.0, 1.0};
  const MIResult r = rubin_combine(est, var);
  CHECK(r.combined == 2.0);
  CHECK(r.within == 1.0);
  CHECK(r.between == 2.0);
  CHECK(r.total == 4.0);
  CHECK(r.m == 2);
  CHECK(r.df == doctest::Approx(1.0 * std::pow(1.0 + 1.0 / 3.0, 2)));

  const std::vector<double> same{0.5, 0.5, 0.5}, v3{0.2, 0.3, 0.4};
  const MIResult s = rubin_combine(same, v3);
  CHECK(s.between == 0.0);
  CHECK(s.total == s.within);
  CHECK(std::isinf(s.df));

  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> e(12), v(12);
  for (int i = 0; i < 12; ++i) {
    e[i] = nd(gen);
    v[i] = std::abs(nd(gen));
  }
  const MIResult a = rubin_combine(e, v);
  CHECK(a.total == a.within + (1.0 + 1.0 / 12.0) * a.between);
  std::vector<int> perm(12);
  for (int i = 0; i < 12; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<double> pe(12), pv(12);
  for (int i = 0; i < 12; ++i) {
    pe[i] = e[perm[i]];
    pv[i] = v[perm[i]];
  }
  const MIResult b = rubin_combine(pe, pv);
  CHECK(b.combined == doctest::Approx(a.combined).epsilon(1e-15));
  CHECK(b.total == doctest::Approx(a.total).epsilon(1e-15));

  const std::vector<Eigen::VectorXd> ve{Eigen::Vector2d(1, 0), Eigen::Vector2d(3, 2)};
  const std::vector<Eigen::MatrixXd> vc{Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
  const MIVectorResult vr = rubin_combine(ve, vc);
  CHECK(vr.combined[0] == 2.0);
  CHECK(vr.total(0, 0) == 4.0);
  CHECK(vr.total(0, 1) == doctest::Approx(1.5 * 2.0));

  const std::vector<double> one{1.0};
  CHECK(code_of([&] { rubin_combine(one, one); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("multiple imputation with nothing missing is the complete-data analysis") {
  const TrialDataset d = appendix1_dataset();
  ImputationPlan plan;
  plan.m = 5;
  plan.terms = kX;
  const auto imp = mi_by_arm(d, plan);
  REQUIRE(imp.size() == 5);
  const EstimandSpec e{Summary::LogOddsRatio, Level::Marginal, Population::AllRandomised};
  std::vector<EffectEstimate> per;
  for (const auto& x : imp) {
    CHECK(x.outcome() == d.outcome());
    per.push_back(standardize(x, kX, e));
  }
  const auto c = combine_imputed(per);
  const auto direct = standardize(d, kX, e);
  CHECK(c.estimate == direct.estimate);
  CHECK(c.se == doctest::Approx(direct.se).epsilon(1e-14));

  std::vector<double> est, var;
  for (const auto& p : per) {
    est.push_back(p.estimate);
    var.push_back(p.se * p.se);
  }
  CHECK(rubin_combine(est, var).between == 0.0);
}

TEST_CASE("multiple imputation by arm recovers the all-randomised odds ratio") {
  const TrialDataset d = appendix1_dataset(Appendix1Variant::MissingOutcomes);
  ImputationPlan plan;
  plan.m = 50;
  plan.terms = kX;
  plan.seed = 2718;
  const auto imp = mi_by_arm(d, plan);
  REQUIRE(imp.size() == 50);
  const EstimandSpec e{Summary::LogOddsRatio, Level::Marginal, Population::AllRandomised};
  std::vector<double> est, var;
  for (const auto& x : imp) {
    CHECK_FALSE(x.has_missing_outcome());
    const auto s = standardize(x, kX, e);
    est.push_back(s.estimate);
    var.push_back(s.se * s.se);
  }
  const MIResult r = rubin_combine(est, var);
  const double mc = std::sqrt(r.between / r.m);
  // Full-data marginal odds ratio: (166/834) / (222/778).
  const double target = std::log((166.0 / 834.0) / (222.0 / 778.0));
  CHECK(std::abs(std::exp(target) - 0.698) < 5e-4);
  CHECK(std::abs(r.combined - target) < 2 * mc);
  CHECK(r.between > 0.0);

  // Same seed, same datasets.
  const auto again = mi_by_arm(d, plan);
  CHECK(again[7].outcome() == imp[7].outcome());

  // Coefficients combined first, then standardised once.
  const auto si = standardize_imputed(imp, kX, e);
  CHECK(std::abs(si.estimate - target) < 3 * mc);
}

TEST_CASE("imputation failures") {
  TrialDataset::Column y = appendix1_dataset().outcome();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (appendix1_dataset().treat()[i] == 1) y[i].reset();
  }
  const TrialDataset d = appendix1_dataset().with_outcome(y);
  ImputationPlan plan;
  plan.terms = kX;
  CHECK(code_of([&] { mi_by_arm(d, plan); }) == ErrorCode::NonConverged);
  plan.m = 1;
  CHECK(code_of([&] { mi_by_arm(appendix1_dataset(), plan); }) == ErrorCode::InvalidArgument);
}
