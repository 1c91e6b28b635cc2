#include <doctest.h>

#include <random>

#include "adjustkit/error.hpp"
#include "adjustkit/glm.hpp"
#include "adjustkit/random.hpp"
#include "adjustkit/scenarios.hpp"
#include "oracle.hpp"

using namespace adjustkit;

namespace {

ModelSpec spec(Family f, Link l, std::vector<Term> terms) {
  ModelSpec s;
  s.family = f;
  s.link = l;
  s.terms = std::move(terms);
  return s;
}

const std::vector<Term> kZX{Term::intercept(), Term::treatment(), Term::main("x")};

// Continuous covariates x1, x2 with logistic outcome.
TrialDataset random_logistic(std::uint64_t seed, int n, double b0, double bz, double b1, double b2) {
  SplitMix64 rng = derive_stream(seed, 0);
  std::vector<std::string> ids;
  std::vector<int> z;
  TrialDataset::Column y, x1, x2;
  for (int i = 0; i < n; ++i) {
    const double a = standard_normal(rng), b = uniform01(rng);
    const int t = bernoulli(rng, 0.5);
    ids.push_back(std::to_string(i));
    z.push_back(t);
    x1.push_back(a);
    x2.push_back(b);
    y.push_back(bernoulli(rng, oracle::expit(b0 + bz * t + b1 * a + b2 * b)) ? 1.0 : 0.0);
  }
  CovariateSchema schema({{"x1", CovariateKind::Continuous, {}}, {"x2", CovariateKind::Continuous, {}}});
  return TrialDataset(ids, z, y, OutcomeType::Binary, schema, {x1, x2});
}

}  // namespace

TEST_CASE("intercept-only logistic at 10 of 20 events") {
  std::vector<oracle::CellCount> cells{{0, 0, 5, 5}, {0, 1, 5, 5}};
  const TrialDataset d = oracle::from_cells(cells, 1);
  const FitResult f = fit(spec(Family::Binomial, Link::Logit, {Term::intercept()}), d);
  CHECK(f.status.state == FitState::Converged);
  CHECK(std::abs(f.coefficients[0]) < 1e-12);
}

TEST_CASE("logistic Z + X on the embedded trial gives conditional OR 0.670") {
  const FitResult f = fit(spec(Family::Binomial, Link::Logit, kZX), appendix1_dataset());
  CHECK(f.status.state == FitState::Converged);
  CHECK(std::abs(std::exp(f.coefficient("treat")) - 0.670) < 1e-3);
}

TEST_CASE("agrees with an independent Newton solver and satisfies the score equations") {
  const TrialDataset d = random_logistic(11, 800, -0.5, 0.7, 0.9, -1.2);
  const std::vector<Term> terms{Term::intercept(), Term::treatment(), Term::main("x1"), Term::main("x2")};
  const FitResult f = fit(spec(Family::Binomial, Link::Logit, terms), d);
  const auto ref = oracle::newton_logistic(f.x, f.y);
  CHECK((f.coefficients - ref.beta).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((f.model_covariance - ref.covariance).cwiseAbs().maxCoeff() < 1e-9);
  const Eigen::VectorXd score = f.x.transpose() * (f.y - f.fitted_means);
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
  for (std::size_t k = 1; k < f.deviance_history.size(); ++k) {
    CHECK(f.deviance_history[k] <= f.deviance_history[k - 1] + 1e-12);
  }
}

TEST_CASE("poisson log link score equations") {
  const TrialDataset d = random_logistic(12, 600, -1.0, 0.4, 0.3, 0.5);
  const std::vector<Term> terms{Term::intercept(), Term::treatment(), Term::main("x1")};
  const FitResult f = fit(spec(Family::Poisson, Link::Log, terms), d);
  CHECK(f.status.usable());
  const Eigen::VectorXd score = f.x.transpose() * (f.y - f.fitted_means);
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("saturated logistic reproduces cell proportions") {
  SplitMix64 rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<oracle::CellCount> cells;
    for (int x = 0; x < 2; ++x) {
      for (int z = 0; z < 2; ++z) {
        cells.push_back({x, z, 1 + static_cast<int>(uniform_index(rng, 60)), 1 + static_cast<int>(uniform_index(rng, 60))});
      }
    }
    const TrialDataset d = oracle::from_cells(cells);
    const std::vector<Term> sat{Term::intercept(), Term::treatment(), Term::main("x"), Term::by_treatment("x")};
    const FitResult f = fit(spec(Family::Binomial, Link::Logit, sat), d);
    REQUIRE(f.status.state == FitState::Converged);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int x = static_cast<int>(*d.column("x")[i]);
      const auto& c = cells[static_cast<std::size_t>(x * 2 + d.treat()[i])];
      const double p = static_cast<double>(c.events) / (c.events + c.non_events);
      CHECK(std::abs(f.fitted_means[static_cast<Eigen::Index>(i)] - p) < 1e-8);
    }
  }
}

TEST_CASE("gaussian model covariance equals the closed form") {
  SplitMix64 rng(5);
  std::vector<std::string> ids;
  std::vector<int> z;
  TrialDataset::Column y, x;
  for (int i = 0; i < 300; ++i) {
    const double a = standard_normal(rng);
    const int t = i % 2;
    ids.push_back(std::to_string(i));
    z.push_back(t);
    x.push_back(a);
    y.push_back(1.0 + 0.5 * t + 2.0 * a + standard_normal(rng));
  }
  const TrialDataset d(ids, z, y, OutcomeType::Continuous, CovariateSchema({{"x", CovariateKind::Continuous, {}}}), {x});
  const FitResult f = fit(spec(Family::Gaussian, Link::Identity, kZX), d);
  const Eigen::MatrixXd& X = f.x;
  const Eigen::VectorXd beta = (X.transpose() * X).ldlt().solve(X.transpose() * f.y);
  const double s2 = (f.y - X * beta).squaredNorm() / static_cast<double>(X.rows() - X.cols());
  const Eigen::MatrixXd v = (X.transpose() * X).inverse() * s2;
  CHECK((f.coefficients - beta).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(((f.model_covariance - v).array().abs() / v.array().abs()).maxCoeff() < 1e-10);
}

TEST_CASE("robust SEs match model SEs under homoskedasticity") {
  SplitMix64 rng(21);
  std::vector<std::string> ids;
  std::vector<int> z;
  TrialDataset::Column y, x;
  for (int i = 0; i < 10000; ++i) {
    const double a = standard_normal(rng);
    const int t = bernoulli(rng, 0.5);
    ids.push_back(std::to_string(i));
    z.push_back(t);
    x.push_back(a);
    y.push_back(0.3 * t + a + standard_normal(rng));
  }
  const TrialDataset d(ids, z, y, OutcomeType::Continuous, CovariateSchema({{"x", CovariateKind::Continuous, {}}}), {x});
  ModelSpec s = spec(Family::Gaussian, Link::Identity, kZX);
  s.robust = true;
  const FitResult f = fit(s, d);
  REQUIRE(f.robust_covariance);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double model = std::sqrt(f.model_covariance(j, j));
    const double robust = std::sqrt((*f.robust_covariance)(j, j));
    CHECK(std::abs(robust / model - 1.0) < 0.05);
  }
}

TEST_CASE("robust covariance matches an independent sandwich for poisson") {
  const TrialDataset d = random_logistic(3, 500, -1.0, 0.6, 0.4, 0.0);
  const std::vector<Term> terms{Term::intercept(), Term::treatment(), Term::main("x1")};
  const FitResult f = fit(spec(Family::Poisson, Link::Log, terms), d);
  const Eigen::MatrixXd r = robust_covariance(f);
  auto psi = [&](const Eigen::VectorXd& b, Eigen::Index i) -> Eigen::VectorXd {
    return (f.y[i] - std::exp(f.x.row(i).dot(b))) * f.x.row(i).transpose();
  };
  const Eigen::MatrixXd ref = oracle::m_estimator_covariance(psi, f.x.rows(), f.coefficients);
  CHECK(((r - ref).array().abs()).maxCoeff() < 1e-7);
}

TEST_CASE("single-row fit has no robust covariance") {
  std::vector<oracle::CellCount> cells{{0, 1, 1, 0}};
  const TrialDataset d = oracle::from_cells(cells, 1);
  const FitResult f = fit(spec(Family::Gaussian, Link::Identity, {Term::intercept()}), d);
  CHECK_THROWS_AS(robust_covariance(f), Error);
  try {
    robust_covariance(f);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularInformation);
  }
}

TEST_CASE("predictions") {
  const TrialDataset d = appendix1_dataset();
  const FitResult f = fit(spec(Family::Binomial, Link::Logit, kZX), d);
  // Reference covariate level and control arm.
  const std::vector<std::size_t> first{0};
  const Eigen::VectorXd p0 = predict(f, d.subset(first).with_treatment(0), Scale::Response);
  CHECK(p0[0] == doctest::Approx(oracle::expit(f.coefficient("(Intercept)"))).epsilon(1e-14));
  const Eigen::VectorXd lin = predict(f, d.subset(first).with_treatment(0), Scale::Linear);
  CHECK(lin[0] == doctest::Approx(f.coefficient("(Intercept)")).epsilon(1e-14));

  const std::vector<Term> sat{Term::intercept(), Term::treatment(), Term::main("x"), Term::by_treatment("x")};
  const FitResult fs = fit(spec(Family::Binomial, Link::Logit, sat), d);
  CHECK(predict(fs, d.with_treatment(1), Scale::Response).mean() == doctest::Approx(0.166).epsilon(1e-9));

  const TrialDataset other = collapsibility_dataset();  // levels "A", "B"
  CHECK_THROWS_AS(predict(f, other, Scale::Response), Error);
}

TEST_CASE("identity-link binomial with the optimum outside the mean domain is NonConverged") {
  // Risks 0.02, 0.5, 0.98 along x with no treatment effect: the linear-risk
  // maximum sits on the boundary.
  std::vector<std::string> ids;
  std::vector<int> z;
  TrialDataset::Column y, x;
  const double xs[] = {0.0, 1.0, 2.0, 6.0};
  const int events[] = {1, 25, 49, 50};
  for (int k = 0; k < 4; ++k) {
    for (int arm = 0; arm < 2; ++arm) {
      for (int i = 0; i < 50; ++i) {
        ids.push_back(std::to_string(ids.size()));
        z.push_back(arm);
        x.push_back(xs[k]);
        y.push_back(i < events[k] ? 1.0 : 0.0);
      }
    }
  }
  const TrialDataset d(ids, z, y, OutcomeType::Binary, CovariateSchema({{"x", CovariateKind::Continuous, {}}}), {x});
  const FitResult f = fit(spec(Family::Binomial, Link::Identity, kZX), d);
  CHECK(f.status.state == FitState::NonConverged);
  CHECK_FALSE(f.status.reason.empty());
}

TEST_CASE("diagnostics") {
  SUBCASE("balanced toy fit raises no flags") {
    std::vector<oracle::CellCount> cells{{0, 0, 10, 10}, {0, 1, 12, 8}, {1, 0, 6, 14}, {1, 1, 9, 11}};
    const FitResult f = fit(spec(Family::Binomial, Link::Logit, kZX), oracle::from_cells(cells));
    const Diagnostics dg = diagnose(f);
    CHECK_FALSE(dg.separation_suspected);
    CHECK(dg.dropped.empty());
  }
  SUBCASE("complete separation is flagged") {
    std::vector<oracle::CellCount> cells{{0, 0, 0, 20}, {0, 1, 0, 20}, {1, 0, 20, 0}, {1, 1, 20, 0}};
    const FitResult f = fit(spec(Family::Binomial, Link::Logit, kZX), oracle::from_cells(cells));
    const Diagnostics dg = diagnose(f);
    CHECK(dg.separation_suspected);
    CHECK(dg.boundary_means > 0);
    CHECK(f.status.separation_suspected());
    CHECK_FALSE(dg.render().empty());
  }
  SUBCASE("duplicated covariate column is dropped and listed") {
    const TrialDataset base = appendix1_dataset();
    const CovariateEntry copy{"x_copy", CovariateKind::Continuous, {}};
    const TrialDataset d = base.with_column(copy, base.column("x"));
    const std::vector<Term> terms{Term::intercept(), Term::treatment(), Term::main("x"), Term::main("x_copy")};
    const FitResult f = fit(spec(Family::Binomial, Link::Logit, terms), d);
    CHECK(f.status.state == FitState::RankDeficient);
    CHECK(f.status.dropped == std::vector<std::string>{"x_copy"});
    CHECK(diagnose(f).dropped == std::vector<std::string>{"x_copy"});
    CHECK(std::abs(std::exp(f.coefficient("treat")) - 0.670) < 1e-3);
  }
}

TEST_CASE("model specification validation") {
  CHECK_THROWS_AS(validate(spec(Family::Poisson, Link::Logit, kZX)), Error);
  CHECK_THROWS_AS(validate(spec(Family::Gaussian, Link::Log, kZX)), Error);
  ModelSpec s = spec(Family::Binomial, Link::Logit, kZX);
  s.prior_weights = std::vector<double>{1.0, -1.0};
  CHECK_THROWS_AS(validate(s), Error);
  s.prior_weights = std::vector<double>{1.0, NAN};
  CHECK_THROWS_AS(validate(s), Error);
}

TEST_CASE("log-binomial starting from logistic means converges on interior data") {
  const FitResult f = fit(spec(Family::Binomial, Link::Log, kZX), appendix1_dataset());
  CHECK(f.status.state == FitState::Converged);
  CHECK((f.fitted_means.array() > 0.0).all());
  CHECK((f.fitted_means.array() < 1.0).all());
}
