#include "cli.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "adjustkit/design.hpp"
#include "adjustkit/error.hpp"
#include "adjustkit/missingdata.hpp"
#include "adjustkit/random.hpp"
#include "adjustkit/scenarios.hpp"

namespace adjustkit::cli {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) config_error("unknown key '" + key + "' in " + where);
  }
}

std::string strategy_name(MissingStrategy s) {
  switch (s) {
    case MissingStrategy::CompleteCase: return "complete_case";
    case MissingStrategy::MeanImpute: return "mean_impute";
    case MissingStrategy::MissingIndicator: return "missing_indicator";
    case MissingStrategy::Ipmw: return "ipmw";
    case MissingStrategy::MiByArm: return "mi_by_arm";
  }
  return "?";
}

MissingStrategy parse_strategy(const std::string& s) {
  for (auto m : {MissingStrategy::CompleteCase, MissingStrategy::MeanImpute, MissingStrategy::MissingIndicator,
                 MissingStrategy::Ipmw, MissingStrategy::MiByArm}) {
    if (strategy_name(m) == s) return m;
  }
  config_error("unknown missing-data strategy '" + s + "'");
}

std::string inference_name(InferenceKind k) {
  switch (k) {
    case InferenceKind::Wald: return "wald";
    case InferenceKind::TestBased: return "test_based";
    case InferenceKind::Bootstrap: return "bootstrap";
  }
  return "?";
}

Resampling parse_resampling(const std::string& s) {
  if (s == "simple") return Resampling::Simple;
  if (s == "within_stratum" || s == "stratified") return Resampling::WithinStratum;
  if (s == "within_stratum_block") return Resampling::WithinStratumBlock;
  config_error("unknown resampling scheme '" + s + "'");
}

std::vector<Method> parse_methods(const json& j) {
  std::vector<Method> out;
  if (j.is_string()) out.push_back(parse_method(j.get<std::string>()));
  else if (j.is_array()) {
    for (const auto& m : j) out.push_back(parse_method(m.get<std::string>()));
  } else {
    config_error("'method' must be a string or a list of strings");
  }
  if (out.empty()) config_error("no analysis method given");
  return out;
}

EstimandSpec parse_estimand(const json& j) {
  reject_unknown_keys(j, {"summary", "level", "population"}, "estimand");
  EstimandSpec e;
  e.summary = parse_summary(j.value("summary", std::string{"logOR"}));
  e.level = parse_level(j.value("level", std::string{"marginal"}));
  e.population = parse_population(j.value("population", std::string{"complete_case"}));
  return e;
}

json estimand_json(const EstimandSpec& e) {
  return {{"summary", to_string(e.summary)}, {"level", to_string(e.level)}, {"population", to_string(e.population)}};
}

bool is_ratio(Summary s) { return s != Summary::RiskDifference; }

std::string fmt(double v, int decimals = 3) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", decimals, v);
  return b;
}

std::string fmt_g(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Analysis configuration

AnalysisConfig parse_analysis_config(const json& j, const std::string& base_dir) {
  try {
    if (!j.is_object()) config_error("analysis config must be a JSON object");
    reject_unknown_keys(j,
                        {"dataset", "builtin", "schema", "estimand", "method", "terms", "model", "missing",
                         "inference", "allow_prediction_gap", "iptw", "level"},
                        "analysis config");
    AnalysisConfig c;
    c.dataset = j.value("dataset", std::string{});
    if (!c.dataset.empty() && std::filesystem::path(c.dataset).is_relative()) {
      c.dataset = (std::filesystem::path(base_dir) / c.dataset).string();
    }
    c.builtin = j.value("builtin", std::string{});
    if (!c.dataset.empty() && !c.builtin.empty()) config_error("give either 'dataset' or 'builtin', not both");
    if (j.contains("schema")) {
      const json& s = j.at("schema");
      if (s.is_string()) {
        std::filesystem::path p = s.get<std::string>();
        if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
        c.schema = load_schema_config(p);
      } else {
        c.schema = schema_config_from_json(s);
      }
    }
    if (j.contains("estimand")) c.estimand = parse_estimand(j.at("estimand"));
    c.methods = parse_methods(j.value("method", json("standardisation")));
    c.terms = j.value("terms", std::vector<std::string>{});
    (void)parse_terms(c.terms);  // syntax check
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown_keys(m, {"logrr_engine"}, "model");
      const std::string engine = m.value("logrr_engine", std::string{"log_binomial"});
      if (engine == "log_binomial") c.logrr_engine = RiskRatioEngine::LogBinomial;
      else if (engine == "poisson_robust" || engine == "poisson") c.logrr_engine = RiskRatioEngine::PoissonRobust;
      else config_error("unknown logrr_engine '" + engine + "'");
    }
    if (j.contains("missing")) {
      const json& m = j.at("missing");
      if (m.is_string()) {
        c.missing = parse_strategy(m.get<std::string>());
      } else {
        reject_unknown_keys(m, {"strategy", "vars", "m", "seed", "arm_interactions"}, "missing");
        c.missing = parse_strategy(m.value("strategy", std::string{"complete_case"}));
        c.missing_vars = m.value("vars", std::vector<std::string>{});
        c.imputations = m.value("m", 10);
        c.imputation_seed = m.value("seed", std::uint64_t{1});
        c.missingness_arm_interactions = m.value("arm_interactions", true);
      }
    }
    if (j.contains("inference")) {
      const json& inf = j.at("inference");
      const json obj = inf.is_string() ? json{{"type", inf}} : inf;
      reject_unknown_keys(obj, {"type", "replicates", "resampling", "strata", "seed", "allow_minimisation_approximation"},
                          "inference");
      const std::string type = obj.value("type", std::string{"wald"});
      if (type == "wald") c.inference = InferenceKind::Wald;
      else if (type == "test_based") c.inference = InferenceKind::TestBased;
      else if (type == "bootstrap") c.inference = InferenceKind::Bootstrap;
      else config_error("unknown inference type '" + type + "'");
      c.bootstrap.replicates = obj.value("replicates", 1999);
      c.bootstrap.resampling = parse_resampling(obj.value("resampling", std::string{"simple"}));
      c.bootstrap.strata = obj.value("strata", std::vector<std::string>{});
      c.bootstrap.seed = obj.value("seed", std::uint64_t{20240101});
      c.bootstrap.allow_minimisation_approximation = obj.value("allow_minimisation_approximation", false);
    }
    c.allow_prediction_gap = j.value("allow_prediction_gap", false);
    if (j.contains("iptw")) {
      reject_unknown_keys(j.at("iptw"), {"weights_fixed"}, "iptw");
      c.weights_fixed = j.at("iptw").value("weights_fixed", false);
    }
    c.level = j.value("level", 0.95);

    // Cross-field rules.
    if (!(c.level > 0.0 && c.level < 1.0)) config_error("confidence level must lie in (0,1)");
    for (Method m : c.methods) {
      if (c.estimand.level == Level::Conditional && m != Method::Direct) {
        throw Error(ErrorCode::InvalidEstimand, "conditional summaries are estimated by direct adjustment only");
      }
      if (c.estimand.level == Level::Marginal && m == Method::Direct) {
        throw Error(ErrorCode::InvalidEstimand, "direct adjustment targets a conditional summary; set level=conditional");
      }
      if (c.missing == MissingStrategy::Ipmw && m != Method::Iptw) {
        throw Error(ErrorCode::InvalidEstimand, "IPMW weighting applies to the IPTW method only");
      }
    }
    if ((c.missing == MissingStrategy::MissingIndicator || c.missing == MissingStrategy::MeanImpute) &&
        c.estimand.level == Level::Conditional && c.estimand.summary == Summary::LogOddsRatio) {
      throw Error(ErrorCode::InvalidEstimand,
                  "single imputation or missing indicators cannot target a conditional odds ratio");
    }
    if ((c.missing == MissingStrategy::MeanImpute || c.missing == MissingStrategy::MissingIndicator) &&
        c.missing_vars.empty()) {
      config_error("strategy '" + strategy_name(c.missing) + "' needs 'vars'");
    }
    if (c.missing == MissingStrategy::CompleteCase && c.estimand.population == Population::AllRandomised) {
      // Allowed only when nothing is missing; checked against the data at run time.
    }
    if (c.missing == MissingStrategy::MiByArm) {
      if (c.imputations < 2) config_error("mi_by_arm needs m >= 2");
      if (c.inference == InferenceKind::Bootstrap) config_error("bootstrap inference is not combined with multiple imputation");
    }
    if (c.inference == InferenceKind::Bootstrap && c.bootstrap.replicates < 100) {
      config_error("bootstrap needs at least 100 replicates");
    }
    return c;
  } catch (const json::exception& e) {
    config_error(std::string("analysis config: ") + e.what());
  }
}

json to_json(const AnalysisConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json j{{"estimand", estimand_json(c.estimand)},
         {"method", methods},
         {"terms", c.terms},
         {"model", {{"logrr_engine", c.logrr_engine == RiskRatioEngine::LogBinomial ? "log_binomial" : "poisson_robust"}}},
         {"missing",
          {{"strategy", strategy_name(c.missing)},
           {"vars", c.missing_vars},
           {"m", c.imputations},
           {"seed", c.imputation_seed},
           {"arm_interactions", c.missingness_arm_interactions}}},
         {"allow_prediction_gap", c.allow_prediction_gap},
         {"iptw", {{"weights_fixed", c.weights_fixed}}},
         {"level", c.level}};
  json inf{{"type", inference_name(c.inference)}};
  if (c.inference == InferenceKind::Bootstrap) {
    inf["replicates"] = c.bootstrap.replicates;
    inf["resampling"] = to_string(c.bootstrap.resampling);
    inf["strata"] = c.bootstrap.strata;
    inf["seed"] = c.bootstrap.seed;
    inf["allow_minimisation_approximation"] = c.bootstrap.allow_minimisation_approximation;
  }
  j["inference"] = inf;
  if (!c.dataset.empty()) j["dataset"] = c.dataset;
  if (!c.builtin.empty()) j["builtin"] = c.builtin;
  else j["schema"] = adjustkit::to_json(c.schema);
  return j;
}

TrialDataset load_dataset(const AnalysisConfig& c) {
  if (!c.builtin.empty()) {
    if (c.builtin == "appendix1") return appendix1_dataset(Appendix1Variant::Full);
    if (c.builtin == "appendix1_missing") return appendix1_dataset(Appendix1Variant::MissingOutcomes);
    if (c.builtin == "collapsibility") return collapsibility_dataset();
    config_error("unknown builtin dataset '" + c.builtin +
                 "' (known: appendix1, appendix1_missing, collapsibility)");
  }
  if (c.dataset.empty()) config_error("no dataset: give 'dataset', 'builtin' or --data");
  return load_csv(c.dataset, c.schema);
}

// ---------------------------------------------------------------------------
// Analysis pipeline

namespace {

json estimate_json(const EffectEstimate& e) {
  json j{{"method", to_string(e.method)},
         {"estimand", estimand_json(e.estimand)},
         {"population_label", e.population_label},
         {"estimate", e.estimate},
         {"se", e.se},
         {"ci", {{"level", e.ci.level}, {"lower", e.ci.lower}, {"upper", e.ci.upper}, {"method", to_string(e.ci.method)}}},
         {"z", e.z},
         {"p", e.p},
         {"n_analysed", e.n_analysed},
         {"n_population", e.n_population},
         {"diagnostics", e.diagnostics}};
  if (is_ratio(e.estimand.summary)) {
    j["exp_estimate"] = std::exp(e.estimate);
    j["exp_ci"] = {std::exp(e.ci.lower), std::exp(e.ci.upper)};
  }
  if (std::isfinite(e.risk1)) j["risk1"] = e.risk1;
  if (std::isfinite(e.risk0)) j["risk0"] = e.risk0;
  if (e.fit_status) j["fit_status"] = e.fit_status->describe();
  return j;
}

json failure_json(Method m, const Error& e) {
  return {{"method", to_string(m)},
          {"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}};
}

struct Prepared {
  TrialDataset data;
  std::vector<Term> terms;
  std::vector<TrialDataset> imputations;  // mi_by_arm only
  std::vector<std::string> notes;
};

Prepared prepare(const AnalysisConfig& c, const TrialDataset& dataset) {
  Prepared p{dataset, parse_terms(c.terms), {}, {}};
  const auto vars = term_variables(p.terms);
  switch (c.missing) {
    case MissingStrategy::CompleteCase:
      if (c.estimand.population == Population::CompleteCase) {
        std::vector<std::string> needed = vars;
        needed.push_back("outcome");
        p.data = complete_cases(dataset, needed);
        if (p.data.size() != dataset.size()) {
          p.notes.push_back("complete cases: " + std::to_string(p.data.size()) + " of " +
                            std::to_string(dataset.size()) + " rows");
        }
      }
      break;
    case MissingStrategy::MeanImpute:
      for (const auto& v : c.missing_vars) p.data = mean_impute_covariate(p.data, v);
      break;
    case MissingStrategy::MissingIndicator:
      for (const auto& v : c.missing_vars) {
        p.data = missing_indicator(p.data, v);
        const std::string ind = v + "_missing";
        const auto& removable = p.data.audit().removable_columns;
        if (std::find(removable.begin(), removable.end(), ind) == removable.end()) {
          p.terms.push_back(Term::main(ind));
        } else {
          p.notes.push_back("indicator '" + ind + "' is constant and was left out of the model");
        }
      }
      break;
    case MissingStrategy::Ipmw:
      break;
    case MissingStrategy::MiByArm: {
      ImputationPlan plan;
      plan.m = c.imputations;
      plan.seed = c.imputation_seed;
      plan.terms = p.terms;
      p.imputations = mi_by_arm(p.data, plan);
      p.notes.push_back("multiple imputation by arm: m=" + std::to_string(plan.m) +
                        ", seed=" + std::to_string(plan.seed));
      break;
    }
  }
  return p;
}

EffectEstimate estimate_once(const AnalysisConfig& c, Method method, const TrialDataset& d,
                             const std::vector<Term>& terms) {
  const bool test_based = c.inference == InferenceKind::TestBased;
  switch (method) {
    case Method::Direct: {
      DirectOptions o;
      o.risk_ratio_engine = c.logrr_engine;
      o.level = c.level;
      return direct_adjust(d, terms, c.estimand, o);
    }
    case Method::Standardisation: {
      StandardiseOptions o;
      o.drop_unscorable = c.allow_prediction_gap;
      o.test_based_ci = test_based;
      o.level = c.level;
      return standardize(d, terms, c.estimand, o);
    }
    case Method::Iptw: {
      IptwOptions o;
      o.weights_fixed = c.weights_fixed;
      o.level = c.level;
      if (c.missing == MissingStrategy::Ipmw) {
        MissingnessModel m;
        m.covariates = c.missing_vars.empty() ? term_variables(terms) : c.missing_vars;
        m.arm_interactions = c.missingness_arm_interactions;
        o.missingness = m;
      }
      return iptw(d, terms, c.estimand, o);
    }
    case Method::Unadjusted:
      return unadjusted(d, c.estimand, c.level);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown method");
}

EffectEstimate estimate_method(const AnalysisConfig& c, Method method, const Prepared& p) {
  EffectEstimate e;
  if (!p.imputations.empty()) {
    if (method == Method::Standardisation) {
      StandardiseOptions o;
      o.drop_unscorable = c.allow_prediction_gap;
      o.level = c.level;
      e = standardize_imputed(p.imputations, p.terms, c.estimand, o);
    } else {
      std::vector<EffectEstimate> per;
      for (const auto& d : p.imputations) per.push_back(estimate_once(c, method, d, p.terms));
      e = combine_imputed(per, c.level);
    }
  } else {
    e = estimate_once(c, method, p.data, p.terms);
  }
  if (c.inference == InferenceKind::TestBased && method != Method::Standardisation) {
    e.ci = test_based_ci(e.estimate, e.z, c.level);
  } else if (c.inference == InferenceKind::Bootstrap) {
    BootstrapPlan plan = c.bootstrap;
    plan.level = c.level;
    const BootstrapResult b =
        bootstrap(p.data, [&](const TrialDataset& d) { return estimate_once(c, method, d, p.terms).estimate; }, plan);
    e.se = b.se;
    e.ci = b.ci;
    e.z = e.se > 0 ? e.estimate / e.se : 0.0;
    e.p = wald_p(e.estimate, e.se);
    e.diagnostics.push_back("bootstrap: " + std::to_string(b.successes) + " of " +
                            std::to_string(plan.replicates) + " replicates succeeded (" +
                            to_string(plan.resampling) + ")");
  }
  return e;
}

}  // namespace

json run_analysis(const AnalysisConfig& c, const TrialDataset& dataset) {
  const Prepared p = prepare(c, dataset);
  json results = json::array();
  for (Method m : c.methods) {
    try {
      results.push_back(estimate_json(estimate_method(c, m, p)));
    } catch (const Error& e) {
      if (category(e.code()) != ErrorCategory::Estimation) throw;
      results.push_back(failure_json(m, e));
    }
  }
  return {{"results", results}, {"notes", p.notes}, {"n_rows", dataset.size()}};
}

// ---------------------------------------------------------------------------
// Simulation

SimulationConfig parse_simulation_config(const json& j) {
  try {
    reject_unknown_keys(j, {"generator", "parameters", "estimand", "methods", "terms", "replications", "seed", "level"},
                        "simulation config");
    SimulationConfig c;
    c.generator = j.value("generator", c.generator);
    if (c.generator != "logistic" && c.generator != "quadratic") config_error("unknown generator '" + c.generator + "'");
    c.parameters = j.value("parameters", json::object());
    if (j.contains("estimand")) c.estimand = parse_estimand(j.at("estimand"));
    if (c.generator == "quadratic") c.estimand.summary = Summary::RiskDifference;
    if (j.contains("methods")) c.methods = parse_methods(j.at("methods"));
    c.terms = j.value("terms", c.terms);
    (void)parse_terms(c.terms);
    c.replications = j.value("replications", c.replications);
    c.seed = j.value("seed", c.seed);
    c.level = j.value("level", c.level);
    if (c.replications < 1) config_error("replications must be at least 1");
    if (!(c.level > 0.0 && c.level < 1.0)) config_error("confidence level must lie in (0,1)");
    return c;
  } catch (const json::exception& e) {
    config_error(std::string("simulation config: ") + e.what());
  }
}

namespace {

LogisticScenario logistic_from(const json& p) {
  reject_unknown_keys(p, {"intercept", "treatment", "covariate", "binary_covariate", "covariate_p", "n", "missing_rate", "design"},
                      "logistic parameters");
  LogisticScenario s;
  s.intercept = p.value("intercept", s.intercept);
  s.treatment = p.value("treatment", s.treatment);
  s.covariate = p.value("covariate", s.covariate);
  s.binary_covariate = p.value("binary_covariate", s.binary_covariate);
  s.covariate_p = p.value("covariate_p", s.covariate_p);
  s.n = p.value("n", s.n);
  s.missing_rate = p.value("missing_rate", s.missing_rate);
  if (p.contains("design")) s.design = design_from_json(p.at("design"));
  validate(s);
  return s;
}

QuadraticScenario quadratic_from(const json& p) {
  QuadraticScenario s;
  s.alpha = p.value("alpha", s.alpha);
  s.theta = p.value("theta", s.theta);
  s.gamma = p.value("gamma", s.gamma);
  s.lo = p.value("lo", s.lo);
  s.hi = p.value("hi", s.hi);
  s.n_per_arm = p.value("n_per_arm", s.n_per_arm);
  const std::string layout = p.value("layout", std::string{"grid"});
  if (layout == "grid") s.layout = CovariateLayout::Grid;
  else if (layout == "uniform") s.layout = CovariateLayout::Uniform;
  else config_error("unknown layout '" + layout + "'");
  s.noise_sd = p.value("noise_sd", s.noise_sd);
  validate(s);
  return s;
}

double expit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// True marginal risk in arm z under the logistic generator.
double marginal_risk(const LogisticScenario& s, int z) {
  const double base = s.intercept + s.treatment * z;
  if (s.binary_covariate) {
    return (1.0 - s.covariate_p) * expit(base) + s.covariate_p * expit(base + s.covariate);
  }
  auto f = [&](double x) { return expit(base + s.covariate * x) * std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, -12.0, 12.0, 10, 1e-12);
}

double true_value(const SimulationConfig& c, Method m, const json& params) {
  if (c.generator == "quadratic") return quadratic_from(params).theta;
  const LogisticScenario s = logistic_from(params);
  if (m == Method::Direct) {
    return c.estimand.summary == Summary::LogOddsRatio ? s.treatment : std::numeric_limits<double>::quiet_NaN();
  }
  return transform_summary(marginal_risk(s, 1), marginal_risk(s, 0), c.estimand.summary);
}

struct Draw {
  bool ok = false;
  double estimate = 0.0;
  double se = 0.0;
  bool covered = false;
  std::string failure;
};

json simulate_one_setting(const SimulationConfig& c, const json& params) {
  const auto terms = parse_terms(c.terms);
  const std::size_t nm = c.methods.size();
  const auto reps = static_cast<std::size_t>(c.replications);
  std::vector<double> truth(nm);
  for (std::size_t k = 0; k < nm; ++k) truth[k] = true_value(c, c.methods[k], params);
  const bool quadratic = c.generator == "quadratic";
  const QuadraticScenario qs = quadratic ? quadratic_from(params) : QuadraticScenario{};
  const LogisticScenario ls = quadratic ? LogisticScenario{} : logistic_from(params);

  std::vector<Draw> draws(reps * nm);
  auto run = [&](std::size_t r) {
    const TrialDataset d = quadratic ? simulate_trial(qs, derive_stream(c.seed, r)())
                                     : simulate_trial(ls, derive_stream(c.seed, r)());
    for (std::size_t k = 0; k < nm; ++k) {
      Draw& out = draws[r * nm + k];
      EstimandSpec e = c.estimand;
      e.level = c.methods[k] == Method::Direct ? Level::Conditional : Level::Marginal;
      try {
        EffectEstimate est;
        switch (c.methods[k]) {
          case Method::Direct: est = direct_adjust(d, terms, e, {RiskRatioEngine::LogBinomial, c.level, {}}); break;
          case Method::Standardisation: {
            StandardiseOptions o;
            o.level = c.level;
            est = standardize(d, terms, e, o);
            break;
          }
          case Method::Iptw: {
            IptwOptions o;
            o.level = c.level;
            est = iptw(d, terms, e, o);
            break;
          }
          case Method::Unadjusted: est = unadjusted(d, e, c.level); break;
        }
        out.ok = std::isfinite(est.estimate) && std::isfinite(est.se);
        out.estimate = est.estimate;
        out.se = est.se;
        out.covered = est.ci.lower <= truth[k] && truth[k] <= est.ci.upper;
      } catch (const Error& err) {
        out.failure = std::string(to_string(err.code()));
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(worker_count(), static_cast<unsigned>(reps)));
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t r; (r = next.fetch_add(1)) < reps;) run(r);
      });
    }
  }

  json rows = json::array();
  for (std::size_t k = 0; k < nm; ++k) {
    double sum = 0, sumsq = 0, sum_se = 0;
    std::size_t ok = 0, covered = 0;
    std::map<std::string, int> failures;
    for (std::size_t r = 0; r < reps; ++r) {
      const Draw& d = draws[r * nm + k];
      if (!d.ok) {
        failures[d.failure.empty() ? "NonFinite" : d.failure] += 1;
        continue;
      }
      ++ok;
      sum += d.estimate;
      sumsq += d.estimate * d.estimate;
      sum_se += d.se;
      covered += d.covered ? 1 : 0;
    }
    json row{{"method", to_string(c.methods[k])},
             {"level", c.methods[k] == Method::Direct ? "conditional" : "marginal"},
             {"replications", reps},
             {"successes", ok},
             {"failure_rate", static_cast<double>(reps - ok) / static_cast<double>(reps)},
             {"failures", failures}};
    if (std::isfinite(truth[k])) row["true_value"] = truth[k];
    if (ok > 0) {
      const double n = static_cast<double>(ok);
      const double mean = sum / n;
      row["mean_estimate"] = mean;
      row["empirical_se"] = ok > 1 ? std::sqrt(std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0))) : 0.0;
      row["mean_model_se"] = sum_se / n;
      if (std::isfinite(truth[k])) row["coverage"] = static_cast<double>(covered) / n;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

json run_simulation(const SimulationConfig& c) {
  json results = json::array();
  if (c.generator == "quadratic" && c.parameters.contains("intervals")) {
    for (const auto& iv : c.parameters.at("intervals")) {
      json params = c.parameters;
      params.erase("intervals");
      params["lo"] = iv.at(0).get<double>();
      params["hi"] = iv.at(1).get<double>();
      results.push_back({{"setting", params}, {"methods", simulate_one_setting(c, params)}});
    }
  } else {
    results.push_back({{"setting", c.parameters}, {"methods", simulate_one_setting(c, c.parameters)}});
  }
  return results;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    config_error(path + ": " + e.what());
  }
}

int exit_code(ErrorCode code) {
  switch (category(code)) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Estimation: return 4;
  }
  return 1;
}

std::string category_name(ErrorCode code) {
  switch (category(code)) {
    case ErrorCategory::Config: return "configuration";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Estimation: return "estimation";
  }
  return "?";
}

std::string render_results_text(const json& results) {
  std::ostringstream o;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-16s %-6s %-12s %-20s %-22s %-10s %s\n", "method", "summary", "level",
                "estimate (SE)", "CI", "p", "population");
  o << buf;
  for (const auto& r : results) {
    if (r.contains("error")) {
      std::snprintf(buf, sizeof buf, "%-16s FAILED %s: %s\n", r.at("method").get<std::string>().c_str(),
                    r.at("error").at("code").get<std::string>().c_str(),
                    r.at("error").at("message").get<std::string>().c_str());
      o << buf;
      continue;
    }
    const auto& e = r.at("estimand");
    const std::string est = fmt(r.at("estimate").get<double>()) + " (" + fmt(r.at("se").get<double>()) + ")";
    const std::string ci =
        "(" + fmt(r.at("ci").at("lower").get<double>()) + ", " + fmt(r.at("ci").at("upper").get<double>()) + ")";
    const std::string pop = r.at("population_label").get<std::string>() + ", n=" +
                            std::to_string(r.at("n_population").get<std::size_t>());
    std::snprintf(buf, sizeof buf, "%-16s %-6s %-12s %-20s %-22s %-10s %s\n", r.at("method").get<std::string>().c_str(),
                  e.at("summary").get<std::string>().c_str(), e.at("level").get<std::string>().c_str(), est.c_str(),
                  ci.c_str(), fmt_g(r.at("p").get<double>()).c_str(), pop.c_str());
    o << buf;
    if (r.contains("exp_estimate")) {
      o << "    exp: " << fmt(r.at("exp_estimate").get<double>()) << " (" << fmt(r.at("exp_ci").at(0).get<double>())
        << ", " << fmt(r.at("exp_ci").at(1).get<double>()) << ")\n";
    }
    for (const auto& d : r.at("diagnostics")) o << "    " << d.get<std::string>() << "\n";
  }
  return o.str();
}

std::string render_simulation_text(const json& results) {
  std::ostringstream o;
  char buf[512];
  for (const auto& s : results) {
    o << "setting: " << s.at("setting").dump() << "\n";
    std::snprintf(buf, sizeof buf, "  %-16s %-12s %10s %10s %10s %10s %9s %9s\n", "method", "level", "truth", "mean est",
                  "emp SE", "model SE", "coverage", "failures");
    o << buf;
    for (const auto& m : s.at("methods")) {
      auto num = [&](const char* k) { return m.contains(k) ? fmt(m.at(k).get<double>(), 4) : std::string("-"); };
      std::snprintf(buf, sizeof buf, "  %-16s %-12s %10s %10s %10s %10s %9s %9s\n",
                    m.at("method").get<std::string>().c_str(), m.at("level").get<std::string>().c_str(),
                    num("true_value").c_str(), num("mean_estimate").c_str(), num("empirical_se").c_str(),
                    num("mean_model_se").c_str(), num("coverage").c_str(), num("failure_rate").c_str());
      o << buf;
    }
  }
  return o.str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"adjustkit: covariate adjustment for randomised trials"};
  app.require_subcommand(1);
  std::string format = "text";
  std::string out_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--format", format, "output format")->check(CLI::IsMember({"text", "json"}));
  app.add_option("--out", out_path, "write output to this file instead of stdout");
  app.add_option("--seed", seed, "seed for imputation, bootstrap and simulation");

  std::string config_path, data_path, builtin;
  auto* analyze = app.add_subcommand("analyze", "run an analysis from a config file");
  analyze->add_option("--config", config_path, "analysis config (JSON)");
  analyze->add_option("--data", data_path, "CSV dataset (overrides the config)");
  analyze->add_option("--builtin", builtin, "embedded dataset: appendix1, appendix1_missing, collapsibility");
  analyze->fallthrough();

  std::string scenario;
  auto* demo = app.add_subcommand("demo", "run a built-in scenario report");
  demo->add_option("name", scenario, "collapsibility, appendix1, misspecification or balance")->required();
  demo->fallthrough();

  std::string sim_config;
  int replications = -1;
  auto* simulate = app.add_subcommand("simulate", "run a simulation study");
  simulate->add_option("--config", sim_config, "simulation config (JSON)");
  simulate->add_option("--replications", replications, "override the number of replications");
  simulate->fallthrough();

  auto* validate_cmd = app.add_subcommand("validate-config", "check an analysis config without running it");
  validate_cmd->add_option("--config", config_path, "analysis config (JSON)")->required();
  validate_cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::string command = app.get_subcommands().front()->get_name();
  json echo = json::object();
  auto emit = [&](const std::string& text, const json& body) {
    std::ofstream file;
    std::ostream* dst = &out;
    if (!out_path.empty()) {
      file.open(out_path);
      if (!file) throw Error(ErrorCode::ConfigError, "cannot write " + out_path);
      dst = &file;
    }
    if (format == "json") *dst << body.dump(2) << "\n";
    else *dst << text;
  };
  auto envelope = [&](json results, json diagnostics) {
    return json{{"command", command},
                {"config", echo},
                {"results", std::move(results)},
                {"diagnostics", std::move(diagnostics)},
                {"seed", seed ? json(*seed) : json(nullptr)}};
  };

  try {
    if (command == "analyze" || command == "validate-config") {
      json raw = json::object();
      std::string base = ".";
      if (!config_path.empty()) {
        raw = read_json_file(config_path);
        base = std::filesystem::path(config_path).parent_path().string();
        if (base.empty()) base = ".";
      } else if (command == "analyze" && builtin.empty()) {
        config_error("analyze needs --config or --builtin");
      }
      if (!builtin.empty()) {
        raw.erase("dataset");
        raw["builtin"] = builtin;
      }
      if (!data_path.empty()) {
        raw.erase("builtin");
        raw["dataset"] = std::filesystem::absolute(data_path).string();
      }
      AnalysisConfig cfg = parse_analysis_config(raw, base);
      if (seed) {
        cfg.imputation_seed = *seed;
        cfg.bootstrap.seed = *seed;
      }
      echo = to_json(cfg);
      if (command == "validate-config") {
        emit("config OK\n", envelope(json::array(), json::array()));
        return 0;
      }
      const TrialDataset data = load_dataset(cfg);
      const json res = run_analysis(cfg, data);
      json diagnostics = json::array();
      int code = 0;
      for (const auto& r : res.at("results")) {
        if (r.contains("error")) {
          diagnostics.push_back({{"method", r.at("method")},
                                 {"code", r.at("error").at("code")},
                                 {"category", "estimation"},
                                 {"message", r.at("error").at("message")}});
          code = 4;
        }
      }
      for (const auto& n : res.at("notes")) diagnostics.push_back({{"note", n}});
      std::string text = "dataset: " + std::to_string(data.size()) + " rows, " +
                         std::to_string(data.observed_outcomes()) + " observed outcomes\n";
      for (const auto& n : res.at("notes")) text += "note: " + n.get<std::string>() + "\n";
      text += render_results_text(res.at("results"));
      emit(text, envelope(res.at("results"), diagnostics));
      return code;
    }
    if (command == "demo") {
      echo = {{"scenario", scenario}};
      const ScenarioReport report = run_scenario(scenario, seed.value_or(1));
      emit(report.render_text(), envelope(json::array({report.to_json()}), report.notes));
      return report.passed() ? 0 : 4;
    }
    if (command == "simulate") {
      json raw = sim_config.empty() ? json::object() : read_json_file(sim_config);
      if (replications >= 0) raw["replications"] = replications;
      if (seed) raw["seed"] = *seed;
      const SimulationConfig cfg = parse_simulation_config(raw);
      echo = raw;
      const json res = run_simulation(cfg);
      emit(render_simulation_text(res), envelope(res, json::array()));
      return 0;
    }
  } catch (const Error& e) {
    const int code = exit_code(e.code());
    if (format == "json") {
      out << envelope(json::array(), json::array({{{"code", std::string(to_string(e.code()))},
                                                   {"category", category_name(e.code())},
                                                   {"message", e.what()}}}))
                 .dump(2)
          << "\n";
    }
    err << "error [" << category_name(e.code()) << "] " << e.what() << "\n";
    return code;
  } catch (const json::exception& e) {
    err << "error [configuration] " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace adjustkit::cli
