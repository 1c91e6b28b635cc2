#include "adjustkit/design.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include "adjustkit/error.hpp"

namespace adjustkit {

namespace {

const std::string& factor_level(const Covariates& covariates, const std::string& factor) {
  auto it = covariates.find(factor);
  if (it == covariates.end()) {
    throw Error(ErrorCode::UnknownFactorLevel, "participant has no value for design factor '" + factor + "'");
  }
  return it->second;
}

std::string stratum_key(const StratifiedBlocks& d, const Covariates& covariates) {
  std::string key;
  for (const auto& s : d.strata) {
    key += factor_level(covariates, s);
    key += '\x1f';
  }
  return key;
}

// Weighted count of this participant's levels already in each arm.
std::array<double, 2> minimisation_scores(const Minimisation& d, const Covariates& covariates,
                                          const AssignmentState& state) {
  std::array<double, 2> score{0.0, 0.0};
  for (std::size_t f = 0; f < d.factors.size(); ++f) {
    const std::string& level = factor_level(covariates, d.factors[f]);
    const double w = d.weights.empty() ? 1.0 : d.weights[f];
    auto fit = state.counts.find(d.factors[f]);
    if (fit == state.counts.end()) continue;
    auto lit = fit->second.find(level);
    if (lit == fit->second.end()) continue;
    score[0] += w * lit->second[0];
    score[1] += w * lit->second[1];
  }
  return score;
}

std::deque<int> permuted_block(int size, SplitMix64& rng) {
  std::vector<int> block(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) block[static_cast<std::size_t>(i)] = i < size / 2 ? 1 : 0;
  for (std::size_t i = block.size(); i > 1; --i) {
    std::swap(block[i - 1], block[uniform_index(rng, i)]);
  }
  return {block.begin(), block.end()};
}

}  // namespace

double probability_of_treatment(const DesignInfo& scheme, const Covariates& covariates,
                                const AssignmentState& state) {
  return std::visit(
      [&](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, SimpleRandomisation>) {
          return d.allocation;
        } else if constexpr (std::is_same_v<T, StratifiedBlocks>) {
          auto it = state.blocks.find(stratum_key(d, covariates));
          if (it == state.blocks.end() || it->second.empty()) return 0.5;
          const auto ones = std::count(it->second.begin(), it->second.end(), 1);
          return static_cast<double>(ones) / static_cast<double>(it->second.size());
        } else {
          const auto s = minimisation_scores(d, covariates, state);
          if (s[1] < s[0]) return d.favoured_probability;
          if (s[0] < s[1]) return 1.0 - d.favoured_probability;
          return 0.5;
        }
      },
      scheme);
}

int assign(const DesignInfo& scheme, const Covariates& covariates, AssignmentState& state, SplitMix64& rng) {
  int arm = 0;
  if (const auto* blocks = std::get_if<StratifiedBlocks>(&scheme)) {
    auto& queue = state.blocks[stratum_key(*blocks, covariates)];
    if (queue.empty()) queue = permuted_block(blocks->block_size, rng);
    arm = queue.front();
    queue.pop_front();
  } else {
    arm = bernoulli(rng, probability_of_treatment(scheme, covariates, state)) ? 1 : 0;
  }
  if (const auto* m = std::get_if<Minimisation>(&scheme)) {
    for (const auto& f : m->factors) {
      const std::string& level = factor_level(covariates, f);
      auto& levels = state.counts[f];
      if (!levels.count(level) && !levels.empty()) {
        state.warnings.push_back("factor '" + f + "': new level '" + level + "' starts at zero counts");
      }
      levels[level][static_cast<std::size_t>(arm)] += 1;
    }
  }
  state.totals[static_cast<std::size_t>(arm)] += 1;
  return arm;
}

int max_marginal_imbalance(const AssignmentState& state) {
  int worst = 0;
  for (const auto& [factor, levels] : state.counts) {
    int sum = 0;
    for (const auto& [level, c] : levels) sum += std::abs(c[1] - c[0]);
    worst = std::max(worst, sum);
  }
  return worst;
}

// ---------------------------------------------------------------------------

void validate(const QuadraticScenario& s) {
  if (!std::isfinite(s.alpha) || !std::isfinite(s.theta) || !std::isfinite(s.gamma) || !std::isfinite(s.lo) ||
      !std::isfinite(s.hi) || !std::isfinite(s.noise_sd)) {
    throw Error(ErrorCode::InvalidArgument, "scenario parameters must be finite");
  }
  if (!(s.lo < s.hi)) throw Error(ErrorCode::InvalidArgument, "covariate interval needs lo < hi");
  if (s.n_per_arm < 2) throw Error(ErrorCode::InvalidArgument, "at least 2 participants per arm");
  if (s.noise_sd < 0.0) throw Error(ErrorCode::InvalidArgument, "noise sd must be >= 0");
}

void validate(const LogisticScenario& s) {
  if (!std::isfinite(s.intercept) || !std::isfinite(s.treatment) || !std::isfinite(s.covariate)) {
    throw Error(ErrorCode::InvalidArgument, "scenario parameters must be finite");
  }
  if (!(s.covariate_p > 0.0 && s.covariate_p < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "covariate probability must lie in (0,1)");
  }
  if (!(s.missing_rate >= 0.0 && s.missing_rate < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "missing rate must lie in [0,1)");
  }
  if (s.n < 4) throw Error(ErrorCode::InvalidArgument, "at least 4 participants");
  validate(s.design);
  if (!s.binary_covariate && !std::holds_alternative<SimpleRandomisation>(s.design)) {
    throw Error(ErrorCode::InvalidArgument, "stratified designs need the binary covariate");
  }
  auto check_factor = [](const std::vector<std::string>& names) {
    for (const auto& f : names) {
      if (f != "x") throw Error(ErrorCode::InvalidArgument, "simulated trials only have the factor 'x'");
    }
  };
  if (const auto* b = std::get_if<StratifiedBlocks>(&s.design)) check_factor(b->strata);
  if (const auto* m = std::get_if<Minimisation>(&s.design)) check_factor(m->factors);
}

TrialDataset simulate_trial(const QuadraticScenario& s, std::uint64_t seed) {
  validate(s);
  SplitMix64 rng = derive_stream(seed, 0);
  const auto n = static_cast<std::size_t>(s.n_per_arm);
  std::vector<std::string> ids;
  std::vector<int> treat;
  TrialDataset::Column y, x;
  for (int arm = 0; arm < 2; ++arm) {
    for (std::size_t k = 0; k < n; ++k) {
      const double xv = s.layout == CovariateLayout::Grid
                            ? s.lo + (static_cast<double>(k) + 0.5) * (s.hi - s.lo) / static_cast<double>(n)
                            : s.lo + uniform01(rng) * (s.hi - s.lo);
      double yv = s.alpha + s.theta * arm + s.gamma * xv * xv;
      if (s.noise_sd > 0.0) yv += s.noise_sd * standard_normal(rng);
      ids.push_back(std::to_string(ids.size() + 1));
      treat.push_back(arm);
      x.push_back(xv);
      y.push_back(yv);
    }
  }
  CovariateSchema schema({CovariateEntry{"x", CovariateKind::Continuous, {}}});
  return TrialDataset(std::move(ids), std::move(treat), std::move(y), OutcomeType::Continuous, std::move(schema),
                      {std::move(x)}, SimpleRandomisation{0.5});
}

TrialDataset simulate_trial(const LogisticScenario& s, std::uint64_t seed) {
  validate(s);
  SplitMix64 rng = derive_stream(seed, 0);
  AssignmentState state;
  std::vector<std::string> ids;
  std::vector<int> treat;
  TrialDataset::Column y, x;
  for (int i = 0; i < s.n; ++i) {
    const double xv = s.binary_covariate ? (bernoulli(rng, s.covariate_p) ? 1.0 : 0.0) : standard_normal(rng);
    const Covariates cov{{"x", s.binary_covariate ? std::to_string(static_cast<int>(xv)) : std::string{}}};
    const int z = assign(s.design, cov, state, rng);
    const double p = 1.0 / (1.0 + std::exp(-(s.intercept + s.treatment * z + s.covariate * xv)));
    const bool event = bernoulli(rng, p);
    const bool missing = s.missing_rate > 0.0 && bernoulli(rng, s.missing_rate);
    ids.push_back(std::to_string(i + 1));
    treat.push_back(z);
    x.push_back(xv);
    y.push_back(missing ? TrialDataset::Cell{} : TrialDataset::Cell{event ? 1.0 : 0.0});
  }
  CovariateEntry entry = s.binary_covariate ? CovariateEntry{"x", CovariateKind::Categorical, {"0", "1"}}
                                            : CovariateEntry{"x", CovariateKind::Continuous, {}};
  return TrialDataset(std::move(ids), std::move(treat), std::move(y), OutcomeType::Binary,
                      CovariateSchema({std::move(entry)}), {std::move(x)}, s.design);
}

}  // namespace adjustkit
