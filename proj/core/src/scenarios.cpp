#include "adjustkit/scenarios.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "adjustkit/error.hpp"
#include "adjustkit/estimators.hpp"
#include "adjustkit/glm.hpp"
#include "adjustkit/random.hpp"

namespace adjustkit {

std::string to_string(Comparison c) {
  switch (c) {
    case Comparison::Info: return "info";
    case Comparison::Near: return "near";
    case Comparison::Above: return "above";
    case Comparison::Below: return "below";
    case Comparison::AtMost: return "at_most";
  }
  return "?";
}

void ScenarioReport::add(std::string label, double value, std::optional<double> reference, std::string provenance,
                         double tolerance, Comparison comparison) {
  ScenarioRow row{std::move(label), value, reference, std::move(provenance), tolerance, comparison, true};
  if (!reference) row.comparison = Comparison::Info;
  if (!std::isfinite(value) && row.comparison != Comparison::Info) row.pass = false;
  switch (row.comparison) {
    case Comparison::Info: break;
    case Comparison::Near: row.pass = row.pass && std::abs(value - *reference) <= tolerance; break;
    case Comparison::Above: row.pass = row.pass && value > *reference; break;
    case Comparison::Below: row.pass = row.pass && value < *reference; break;
    case Comparison::AtMost:
      row.pass = row.pass && value <= *reference + tolerance * std::abs(*reference);
      break;
  }
  rows.push_back(std::move(row));
}

bool ScenarioReport::passed() const {
  return std::all_of(rows.begin(), rows.end(), [](const ScenarioRow& r) { return r.pass; });
}

std::string ScenarioReport::render_text() const {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream out;
  out << "scenario: " << name << "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %14s %14s %-9s %-9s %s\n", static_cast<int>(width), "label", "value",
                "reference", "check", "source", "status");
  out << buf;
  for (const auto& r : rows) {
    std::string ref = r.reference ? "" : "-";
    if (r.reference) {
      char rb[32];
      std::snprintf(rb, sizeof rb, "%.6g", *r.reference);
      ref = rb;
    }
    std::string check = to_string(r.comparison);
    if (r.comparison == Comparison::Near || r.comparison == Comparison::AtMost) {
      char tb[32];
      std::snprintf(tb, sizeof tb, "(%.0e)", r.tolerance);
      check += tb;
    }
    std::snprintf(buf, sizeof buf, "%-*s %14.8g %14s %-9s %-9s %s\n", static_cast<int>(width), r.label.c_str(),
                  r.value, ref.c_str(), check.c_str(), r.provenance.empty() ? "-" : r.provenance.c_str(),
                  r.comparison == Comparison::Info ? "" : (r.pass ? "PASS" : "FAIL"));
    out << buf;
  }
  for (const auto& n : notes) out << "note: " << n << "\n";
  out << "overall: " << (passed() ? "PASS" : "FAIL") << "\n";
  return out.str();
}

nlohmann::json ScenarioReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"label", r.label}, {"value", r.value}, {"comparison", to_string(r.comparison)}, {"pass", r.pass}};
    if (r.reference) {
      j["reference"] = *r.reference;
      j["provenance"] = r.provenance;
      j["tolerance"] = r.tolerance;
    }
    rs.push_back(std::move(j));
  }
  return {{"scenario", name}, {"passed", passed()}, {"rows", rs}, {"notes", notes}};
}

// ---------------------------------------------------------------------------
// Embedded tables

namespace {

struct Cell {
  int x;  // level index
  int z;
  int events;
  int non_events;
  int missing_events = 0;  // of `events`, how many have the outcome unrecorded
  int missing_non_events = 0;
};

TrialDataset build(const std::vector<Cell>& cells, std::vector<std::string> levels, DesignInfo design) {
  std::vector<std::string> ids;
  std::vector<int> treat;
  TrialDataset::Column y, x;
  auto push = [&](const Cell& c, double outcome, bool missing) {
    ids.push_back(std::to_string(ids.size() + 1));
    treat.push_back(c.z);
    x.push_back(static_cast<double>(c.x));
    y.push_back(missing ? TrialDataset::Cell{} : TrialDataset::Cell{outcome});
  };
  for (const auto& c : cells) {
    for (int i = 0; i < c.events; ++i) push(c, 1.0, i >= c.events - c.missing_events);
    for (int i = 0; i < c.non_events; ++i) push(c, 0.0, i >= c.non_events - c.missing_non_events);
  }
  CovariateSchema schema({CovariateEntry{"x", CovariateKind::Categorical, std::move(levels)}});
  return TrialDataset(std::move(ids), std::move(treat), std::move(y), OutcomeType::Binary, std::move(schema),
                      {std::move(x)}, std::move(design));
}

}  // namespace

TrialDataset collapsibility_dataset(int k) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "stratum multiplier must be >= 1");
  // stratum A: intervention 9 dead / 1 alive, control 5 / 5
  // stratum B: intervention 5 / 5, control 1 / 9
  const std::vector<Cell> cells{
      {0, 1, 9 * k, 1 * k}, {0, 0, 5 * k, 5 * k}, {1, 1, 5, 5}, {1, 0, 1, 9}};
  return build(cells, {"A", "B"}, StratifiedBlocks{{"x"}, 2});
}

TrialDataset appendix1_dataset(Appendix1Variant variant) {
  const bool missing = variant != Appendix1Variant::Full;
  const std::vector<Cell> cells{
      {0, 0, 42, 458, missing ? 21 : 0, missing ? 229 : 0},
      {0, 1, 26, 474, missing ? 13 : 0, missing ? 237 : 0},
      {1, 0, 180, 320},
      {1, 1, 140, 360},
  };
  TrialDataset d = build(cells, {"0", "1"}, StratifiedBlocks{{"x"}, 4});
  if (variant == Appendix1Variant::CompleteCases) {
    const std::vector<std::string> vars{"outcome"};
    return complete_cases(d, vars);
  }
  return d;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kReference = 5e-4;  // printed to three decimals

std::vector<Term> main_x() { return {Term::main("x")}; }
std::vector<Term> interacted_x() { return {Term::main("x"), Term::by_treatment("x")}; }

double stratum_or(int d1, int a1, int d0, int a0) {
  return (static_cast<double>(d1) / a1) / (static_cast<double>(d0) / a0);
}

}  // namespace

ScenarioReport run_collapsibility_demo() {
  ScenarioReport r;
  r.name = "collapsibility";
  const EstimandSpec cond{Summary::LogOddsRatio, Level::Conditional, Population::AllRandomised};
  const EstimandSpec marg{Summary::LogOddsRatio, Level::Marginal, Population::AllRandomised};

  r.add("stratum A odds ratio", stratum_or(9, 1, 5, 5), 9.0, "reference", 1e-6);
  r.add("stratum B odds ratio", stratum_or(5, 5, 1, 9), 9.0, "reference", 1e-6);
  const double pooled = stratum_or(9 + 5, 1 + 5, 5 + 1, 5 + 9);
  r.add("marginal odds ratio", pooled, 49.0 / 9.0, "exact", 1e-6);
  r.add("marginal odds ratio, 1 d.p.", std::round(pooled * 10.0) / 10.0, 5.4, "reference", 1e-6);

  const TrialDataset d = collapsibility_dataset();
  const auto terms = main_x();
  r.add("conditional odds ratio (direct adjustment)", std::exp(direct_adjust(d, terms, cond).estimate), 9.0,
        "reference", 1e-6);
  r.add("marginal odds ratio (standardisation)", std::exp(standardize(d, terms, marg).estimate), 49.0 / 9.0,
        "exact", 1e-6);
  r.add("marginal odds ratio (IPTW)", std::exp(iptw(d, terms, marg).estimate), 49.0 / 9.0, "exact", 1e-6);

  const TrialDataset tripled = collapsibility_dataset(3);
  r.add("stratum A tripled: marginal odds ratio", stratum_or(27 + 5, 3 + 5, 15 + 1, 15 + 9), 6.0, "reference",
        1e-6);
  r.add("stratum A tripled: conditional odds ratio (direct adjustment)",
        std::exp(direct_adjust(tripled, terms, cond).estimate), 9.0, "reference", 1e-6);
  r.add("stratum A tripled: marginal odds ratio (standardisation)",
        std::exp(standardize(tripled, terms, marg).estimate), 6.0, "reference", 1e-6);
  r.notes.push_back("the exact pooled odds ratio is 49/9; the reference value 5.4 is that ratio to one decimal");
  return r;
}

ScenarioReport run_appendix1_demo() {
  ScenarioReport r;
  r.name = "appendix1";
  const TrialDataset full = appendix1_dataset(Appendix1Variant::Full);
  const TrialDataset incomplete = appendix1_dataset(Appendix1Variant::MissingOutcomes);
  const TrialDataset cc = appendix1_dataset(Appendix1Variant::CompleteCases);
  const auto terms = main_x();

  struct Column {
    const char* name;
    const TrialDataset* data;
    Population population;
    std::array<double, 4> reference;  // conditional OR, marginal OR, RR, RD
  };
  const std::array<Column, 2> columns{{
      {"all-randomised", &full, Population::AllRandomised, {0.670, 0.698, 0.748, -0.056}},
      {"complete-case", &cc, Population::CompleteCase, {0.679, 0.700, 0.761, -0.064}},
  }};
  std::array<double, 3> all_randomised{};  // marginal OR, RR, RD on full data
  for (const auto& c : columns) {
    const std::string p = c.name;
    const double cor =
        std::exp(direct_adjust(*c.data, terms, {Summary::LogOddsRatio, Level::Conditional, c.population}).estimate);
    r.add(p + ": conditional OR (direct adjustment)", cor, c.reference[0], "reference", kReference);
    const std::array<Summary, 3> summaries{Summary::LogOddsRatio, Summary::LogRiskRatio, Summary::RiskDifference};
    const std::array<const char*, 3> names{"marginal OR", "RR", "RD"};
    for (std::size_t k = 0; k < 3; ++k) {
      const EstimandSpec e{summaries[k], Level::Marginal, c.population};
      const double s = standardize(*c.data, terms, e).estimate;
      const double w = iptw(*c.data, terms, e).estimate;
      const bool ratio = summaries[k] != Summary::RiskDifference;
      const double sv = ratio ? std::exp(s) : s;
      const double wv = ratio ? std::exp(w) : w;
      r.add(p + ": " + names[k] + " (standardisation)", sv, c.reference[k + 1], "reference", kReference);
      r.add(p + ": " + names[k] + " (IPTW)", wv, sv, "derived", 1e-8);
      if (c.population == Population::AllRandomised) all_randomised[k] = sv;
    }
  }

  // Within-stratum contrasts on the full data.
  const std::array<std::array<double, 3>, 2> within{{{0.598, 0.619, -0.032}, {0.691, 0.778, -0.080}}};
  for (std::size_t level = 0; level < 2; ++level) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < full.size(); ++i) {
      if (*full.column("x")[i] == static_cast<double>(level)) rows.push_back(i);
    }
    const TrialDataset s = full.subset(rows);
    const std::string p = "X=" + std::to_string(level) + ": ";
    const EstimandSpec base{Summary::LogOddsRatio, Level::Marginal, Population::AllRandomised};
    EstimandSpec e = base;
    r.add(p + "OR", std::exp(unadjusted(s, e).estimate), within[level][0], "reference", kReference);
    e.summary = Summary::LogRiskRatio;
    r.add(p + "RR", std::exp(unadjusted(s, e).estimate), within[level][1], "reference", kReference);
    e.summary = Summary::RiskDifference;
    r.add(p + "RD", unadjusted(s, e).estimate, within[level][2], "reference", kReference);
  }

  // Recovering the all-randomised column from the incomplete trial.
  const std::array<Summary, 3> summaries{Summary::LogOddsRatio, Summary::LogRiskRatio, Summary::RiskDifference};
  const std::array<const char*, 3> names{"marginal OR", "RR", "RD"};
  IptwOptions weighted;
  weighted.missingness = MissingnessModel{{"x"}, true};
  for (std::size_t k = 0; k < 3; ++k) {
    const EstimandSpec e{summaries[k], Level::Marginal, Population::AllRandomised};
    const bool ratio = summaries[k] != Summary::RiskDifference;
    auto scale = [&](double v) { return ratio ? std::exp(v) : v; };
    r.add(std::string("recovered ") + names[k] + " (standardisation, treat:x model)",
          scale(standardize(incomplete, interacted_x(), e).estimate), all_randomised[k], "derived", 1e-3);
    r.add(std::string("recovered ") + names[k] + " (IPTW x IPMW)", scale(iptw(incomplete, terms, e, weighted).estimate),
          all_randomised[k], "derived", 1e-3);
    r.add(std::string("main-effects standardisation to all-randomised: ") + names[k],
          scale(standardize(incomplete, terms, e).estimate));
  }
  r.notes.push_back(
      "missingness depends on x and the arm-specific risks differ by stratum, so the standardisation route needs the "
      "treat:x interaction to reproduce the all-randomised values");
  return r;
}

// ---------------------------------------------------------------------------

std::vector<Interval> default_misspecification_intervals() { return {{-0.5, 0.5}, {0.0, 1.0}, {0.5, 1.5}}; }

ScenarioReport run_misspecification_demo(const std::vector<Interval>& intervals, const QuadraticScenario& scenario) {
  ScenarioReport r;
  r.name = "misspecification";
  ModelSpec adjusted;
  adjusted.family = Family::Gaussian;
  adjusted.link = Link::Identity;
  adjusted.terms = {Term::intercept(), Term::treatment(), Term::main("x")};
  ModelSpec plain = adjusted;
  plain.terms = {Term::intercept(), Term::treatment()};
  for (const auto& iv : intervals) {
    QuadraticScenario s = scenario;
    s.lo = iv.lo;
    s.hi = iv.hi;
    const TrialDataset d = simulate_trial(s, 1);
    const FitResult fa = fit(adjusted, d);
    const FitResult fu = fit(plain, d);
    if (!fa.status.usable() || !fu.status.usable()) {
      throw Error(ErrorCode::NonConverged, "linear model failed on the quadratic scenario");
    }
    const double n = static_cast<double>(d.size());
    // Maximum-likelihood residual variance: RSS / n.
    auto ml_se = [n](const FitResult& f) {
      const double p = static_cast<double>(f.coefficients.size());
      return f.model_se("treat") * std::sqrt((n - p) / n);
    };
    char tag[64];
    std::snprintf(tag, sizeof tag, "(%g, %g) ", iv.lo, iv.hi);
    const std::string t = tag;
    const double lambda = fa.coefficient("x");
    // The slope of x^2 on x has the sign of gamma * mean(x) for a symmetric grid.
    const double direction = s.gamma * (iv.lo + iv.hi);
    if (direction == 0.0) r.add(t + "lambda", lambda, 0.0, "reference", 1e-10);
    else if (direction > 0.0) r.add(t + "lambda", lambda, 0.0, "reference", 0.0, Comparison::Above);
    else r.add(t + "lambda", lambda, 0.0, "derived", 0.0, Comparison::Below);
    r.add(t + "theta (adjusted)", fa.coefficient("treat"));
    r.add(t + "theta (unadjusted)", fu.coefficient("treat"));
    r.add(t + "SE theta (unadjusted)", ml_se(fu));
    r.add(t + "SE theta (adjusted)", ml_se(fa), ml_se(fu), "reference", 1e-12, Comparison::AtMost);
  }
  r.notes.push_back("outcomes are alpha + theta z + gamma x^2 with no residual error; both arms share the x grid");
  r.notes.push_back("standard errors use the maximum-likelihood residual variance RSS/n");
  return r;
}

// ---------------------------------------------------------------------------

TrialDataset balance_dataset(int n, double coefficient, std::uint64_t seed) {
  if (n < 8 || n % 4 != 0) throw Error(ErrorCode::InvalidArgument, "balance demo needs n divisible by 4 and >= 8");
  const int m = n / 4;  // participants per arm-by-covariate cell
  const double b0 = -1.0, bz = 0.5;
  struct Row {
    int z;
    double x;
    double y;
  };
  std::vector<Row> rows;
  SplitMix64 rng = derive_stream(seed, 0);
  for (int z = 0; z < 2; ++z) {
    for (int x = 0; x < 2; ++x) {
      const double p = 1.0 / (1.0 + std::exp(-(b0 + bz * z + coefficient * x)));
      const int events = static_cast<int>(std::lround(m * p));
      std::vector<double> ys(static_cast<std::size_t>(m), 0.0);
      std::fill(ys.begin(), ys.begin() + events, 1.0);
      std::shuffle(ys.begin(), ys.end(), rng);
      for (double y : ys) rows.push_back({z, static_cast<double>(x), y});
    }
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<std::string> ids;
  std::vector<int> treat;
  TrialDataset::Column y, x;
  for (const auto& row : rows) {
    ids.push_back(std::to_string(ids.size() + 1));
    treat.push_back(row.z);
    x.push_back(row.x);
    y.push_back(row.y);
  }
  return TrialDataset(std::move(ids), std::move(treat), std::move(y), OutcomeType::Binary,
                      CovariateSchema({CovariateEntry{"x", CovariateKind::Categorical, {"0", "1"}}}), {std::move(x)},
                      StratifiedBlocks{{"x"}, 4});
}

ScenarioReport run_balance_demo(int n, double coefficient, std::uint64_t seed) {
  ScenarioReport r;
  r.name = "balance";
  const TrialDataset d = balance_dataset(n, coefficient, seed);
  const EstimandSpec e{Summary::RiskDifference, Level::Marginal, Population::AllRandomised};
  const auto terms = main_x();
  const EffectEstimate u = unadjusted(d, e);
  const EffectEstimate w = iptw(d, terms, e);
  const EffectEstimate s = standardize(d, terms, e);
  r.add("RD (unadjusted)", u.estimate);
  r.add("RD (IPTW)", w.estimate);
  r.add("|RD IPTW - RD unadjusted|", std::abs(w.estimate - u.estimate), 0.0, "exact", 1e-10);
  r.add("SE (unadjusted)", u.se);
  r.add("SE (standardisation)", s.se);
  if (coefficient != 0.0) {
    r.add("SE (IPTW)", w.se, u.se, "reference", 0.0, Comparison::Below);
  } else {
    r.add("SE (IPTW)", w.se);
    r.add("relative SE difference", std::abs(w.se - u.se) / u.se, 0.0, "exact", 1e-6);
  }
  r.notes.push_back("event counts per arm-by-covariate cell are round(n/4 * expit(-1 + 0.5 z + b x))");
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::string> scenario_names() { return {"collapsibility", "appendix1", "misspecification", "balance"}; }

ScenarioReport run_scenario(std::string_view name, std::uint64_t seed) {
  if (name == "collapsibility") return run_collapsibility_demo();
  if (name == "appendix1") return run_appendix1_demo();
  if (name == "misspecification") return run_misspecification_demo();
  if (name == "balance") return run_balance_demo(2000, 1.5, seed);
  std::string known;
  for (const auto& n : scenario_names()) known += (known.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::UnknownScenario, "unknown scenario '" + std::string(name) + "' (known: " + known + ")");
}

}  // namespace adjustkit
