#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "adjustkit/design.hpp"
#include "adjustkit/trialdata.hpp"

namespace adjustkit {

/// How a computed value is judged against its reference.
enum class Comparison {
  Info,    // no reference, always passes
  Near,    // |value - reference| <= tolerance
  Above,   // value > reference
  Below,   // value < reference
  AtMost,  // value <= reference * (1 + tolerance)
};

std::string to_string(Comparison c);

struct ScenarioRow {
  std::string label;
  double value = 0.0;
  std::optional<double> reference;
  /// "reference" (printed value from the source tables), "derived" (worked
  /// out independently) or "exact" (closed form); empty for Info rows.
  std::string provenance;
  double tolerance = 0.0;
  Comparison comparison = Comparison::Info;
  bool pass = true;
};

struct ScenarioReport {
  std::string name;
  std::vector<ScenarioRow> rows;
  std::vector<std::string> notes;

  /// Adds a row and evaluates it.
  void add(std::string label, double value, std::optional<double> reference = std::nullopt,
           std::string provenance = {}, double tolerance = 0.0, Comparison comparison = Comparison::Near);
  bool passed() const;
  std::string render_text() const;
  nlohmann::json to_json() const;
};

// Embedded example trials. Both use a categorical covariate "x" and a binary
// outcome; the Appendix 1 trial records a stratified permuted-block design.

/// 2x2x2 table with strata A and B (outcome = death). The stratum A cells are
/// repeated `stratum_a_multiplier` times.
TrialDataset collapsibility_dataset(int stratum_a_multiplier = 1);

enum class Appendix1Variant {
  Full,             // all 2,000 outcomes observed
  MissingOutcomes,  // half of every X=0 cell has its outcome missing
  CompleteCases,    // MissingOutcomes restricted to observed outcomes
};

TrialDataset appendix1_dataset(Appendix1Variant variant = Appendix1Variant::Full);

ScenarioReport run_collapsibility_demo();
ScenarioReport run_appendix1_demo();

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

std::vector<Interval> default_misspecification_intervals();

/// Fits Y ~ Z + x and Y ~ Z to noise-free quadratic outcomes on each interval.
/// Standard errors use the maximum-likelihood residual variance (RSS / n).
ScenarioReport run_misspecification_demo(const std::vector<Interval>& intervals = default_misspecification_intervals(),
                                         const QuadraticScenario& scenario = {});

/// Exactly balanced binary covariate; event counts per arm-by-covariate cell
/// are fixed by the prognostic coefficient and the seed permutes rows.
ScenarioReport run_balance_demo(int n = 2000, double prognostic_coefficient = 1.5, std::uint64_t seed = 1);

/// Builds the balance demo's trial (exposed for tests and the CLI).
TrialDataset balance_dataset(int n, double prognostic_coefficient, std::uint64_t seed);

std::vector<std::string> scenario_names();
/// Runs a named scenario with default arguments; throws UnknownScenario.
ScenarioReport run_scenario(std::string_view name, std::uint64_t seed = 1);

}  // namespace adjustkit
