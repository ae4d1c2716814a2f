// Copyright 2026 The boed-bandits Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Multi-armed bandit designs, behavioural data containers, priors and the
// three stochastic choice models (WSLTS, AEG, GLS).
//
// Arms are 1-based in every public container (BlockTrajectory::actions,
// wire formats). The simulators work 0-based internally.
//
// Randomness is addressed, not consumed: every trial of every block of
// every simulated sample draws from its own Stream keyed by
// (seed, sample, block, trial). Trial key 0 is reserved for per-block
// initialisation (the GLS latent state).

#ifndef BOED_BANDIT_HPP
#define BOED_BANDIT_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "boed/rng.hpp"

namespace boed {

inline constexpr int kCaseStudyArms = 3;
inline constexpr int kCaseStudyTrials = 30;

// ---------------------------------------------------------------------------
// Designs and data

/// Per-block Bernoulli reward probabilities. blocks[b][k] is arm k+1 of block b.
struct Design {
  std::vector<std::vector<double>> blocks;

  std::size_t block_count() const noexcept { return blocks.size(); }
  std::size_t arms() const noexcept { return blocks.empty() ? 0 : blocks.front().size(); }
  std::size_t dimension() const noexcept { return block_count() * arms(); }

  void validate() const {
    if (blocks.empty()) throw std::invalid_argument("design has no blocks");
    const auto k = blocks.front().size();
    if (k < 2) throw std::invalid_argument("design blocks need at least two arms");
    for (const auto& block : blocks) {
      if (block.size() != k) throw std::invalid_argument("design blocks differ in arm count");
      for (double p : block)
        if (!(p >= 0.0 && p <= 1.0))
          throw std::invalid_argument("reward probability outside [0,1]");
    }
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(dimension());
    for (const auto& block : blocks) out.insert(out.end(), block.begin(), block.end());
    return out;
  }

  static Design from_flat(std::span<const double> flat, std::size_t arms) {
    if (arms == 0 || flat.size() % arms != 0)
      throw std::invalid_argument("flat design length is not a multiple of the arm count");
    Design d;
    for (std::size_t i = 0; i < flat.size(); i += arms)
      d.blocks.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i),
                            flat.begin() + static_cast<std::ptrdiff_t>(i + arms));
    return d;
  }

  friend bool operator==(const Design&, const Design&) = default;
};

struct BlockTrajectory {
  std::vector<int> actions;  // arms, 1..K
  std::vector<int> rewards;  // 0 or 1

  std::size_t trials() const noexcept { return actions.size(); }
  friend bool operator==(const BlockTrajectory&, const BlockTrajectory&) = default;
};

struct ExperimentData {
  std::vector<BlockTrajectory> blocks;
  friend bool operator==(const ExperimentData&, const ExperimentData&) = default;
};

// ---------------------------------------------------------------------------
// Models and parameters

enum class Model : int { wslts = 1, aeg = 2, gls = 3 };

inline constexpr std::array<Model, 3> kModels{Model::wslts, Model::aeg, Model::gls};

inline std::string_view to_string(Model m) {
  switch (m) {
    case Model::wslts: return "WSLTS";
    case Model::aeg: return "AEG";
    case Model::gls: return "GLS";
  }
  throw std::invalid_argument("unknown model indicator");
}

inline Model model_from_string(std::string_view s) {
  for (auto m : kModels)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown model name: " + std::string(s));
}

inline Model model_from_index(int one_based) {
  if (one_based < 1 || one_based > 3)
    throw std::invalid_argument("unknown model indicator " + std::to_string(one_based));
  return static_cast<Model>(one_based);
}

/// 0-based position of a model in kModels.
inline std::size_t model_slot(Model m) { return static_cast<std::size_t>(m) - 1; }

inline std::size_t parameter_count(Model m) {
  switch (m) {
    case Model::wslts: return 3;
    case Model::aeg: return 2;
    case Model::gls: return 5;
  }
  throw std::invalid_argument("unknown model indicator");
}

/// WSLTS: (win-stay, lose-shift, temperature).
/// AEG:   (epsilon, stickiness).
/// GLS:   (execution accuracy, pi(0,0), pi(0,1), pi(1,0), pi(1,1)) where
///        pi(l, r) is the probability of entering the exploit state given
///        previous latent state l and previous reward r.
struct ModelParams {
  Model model = Model::wslts;
  std::vector<double> theta;

  void validate() const {
    if (theta.size() != parameter_count(model))
      throw std::invalid_argument(std::string(to_string(model)) + " expects " +
                                  std::to_string(parameter_count(model)) + " parameters");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double x = theta[i];
      if (model == Model::wslts && i == 2) {
        if (!(x > 0.0) || !std::isfinite(x))
          throw std::invalid_argument("WSLTS temperature must be positive and finite");
      } else if (!(x >= 0.0 && x <= 1.0)) {
        throw std::invalid_argument("probability parameter outside [0,1]");
      }
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Pseudo-counts of observed successes (alpha) and failures (beta) per arm.
struct Counts {
  std::vector<int> alpha;
  std::vector<int> beta;

  explicit Counts(std::size_t arms) : alpha(arms, 1), beta(arms, 1) {}

  void record(std::size_t arm, int reward) {
    if (reward == 1)
      ++alpha[arm];
    else
      ++beta[arm];
  }

  std::size_t arms() const noexcept { return alpha.size(); }
};

// ---------------------------------------------------------------------------
// Priors

struct PriorSpec {
  std::array<double, 3> model_probs{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  double model_prob(Model m) const { return model_probs[model_slot(m)]; }
};

inline double lognormal_pdf(double x, double mu = 0.0, double sigma = 1.0) {
  if (x <= 0.0) return 0.0;
  const double z = (std::log(x) - mu) / sigma;
  return std::exp(-0.5 * z * z) / (x * sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Independent U(0,1) priors for probabilities, LogNormal(0,1) for the
/// WSLTS temperature.
inline ModelParams sample_prior(Model model, Stream& rng) {
  ModelParams p{model, std::vector<double>(parameter_count(model))};
  for (std::size_t i = 0; i < p.theta.size(); ++i)
    p.theta[i] = (model == Model::wslts && i == 2) ? std::exp(rng.normal()) : rng.uniform();
  return p;
}

inline double prior_density(Model model, std::span<const double> theta) {
  double d = 1.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (model == Model::wslts && i == 2)
      d *= lognormal_pdf(theta[i]);
    else if (theta[i] < 0.0 || theta[i] > 1.0)
      return 0.0;
  }
  return d;
}

inline Model sample_model(const PriorSpec& prior, Stream& rng) {
  double u = rng.uniform();
  for (auto m : kModels) {
    u -= prior.model_prob(m);
    if (u < 0.0) return m;
  }
  return kModels.back();
}

/// Baseline designs: every probability i.i.d. Beta(2,2).
inline Design sample_baseline_design(std::size_t blocks, std::size_t arms, Stream& rng) {
  Design d;
  d.blocks.assign(blocks, std::vector<double>(arms));
  for (auto& block : d.blocks)
    for (auto& p : block) p = rng.beta(2.0, 2.0);
  return d;
}

// ---------------------------------------------------------------------------
// Simulators

/// Address of one simulated block; trial(t) yields that trial's stream.
struct BlockKey {
  std::uint64_t seed = 0;
  std::uint64_t sample = 0;
  std::uint64_t block = 0;

  Stream trial(std::uint64_t t) const { return Stream::keyed(seed, {sample, block, t}); }
};

namespace detail {

/// Uniform over all arms except `excluded`.
inline std::size_t uniform_other(std::size_t arms, std::size_t excluded, Stream& rng) {
  const std::size_t j = rng.index(arms - 1);
  return j < excluded ? j : j + 1;
}

/// Uniform over the given candidates except `excluded` (which must be a member
/// of a set with at least two elements).
inline std::size_t uniform_other_in(const std::vector<std::size_t>& set, std::size_t excluded,
                                    Stream& rng) {
  std::vector<std::size_t> rest;
  rest.reserve(set.size());
  for (auto a : set)
    if (a != excluded) rest.push_back(a);
  return rest[rng.index(rest.size())];
}

template <class T, class Cmp>
std::vector<std::size_t> extreme_set(const std::vector<T>& values, Cmp better) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (out.empty() || better(values[k], values[out.front()])) {
      out.assign(1, k);
    } else if (!better(values[out.front()], values[k])) {
      out.push_back(k);
    }
  }
  return out;
}

inline std::vector<std::size_t> argmax_set(const std::vector<double>& v) {
  return extreme_set(v, std::greater<>{});
}
inline std::vector<std::size_t> argmax_set(const std::vector<int>& v) {
  return extreme_set(v, std::greater<>{});
}
inline std::vector<std::size_t> argmin_set(const std::vector<int>& v) {
  return extreme_set(v, std::less<>{});
}

inline bool contains(const std::vector<std::size_t>& set, std::size_t x) {
  return std::find(set.begin(), set.end(), x) != set.end();
}

inline void check_block_design(std::span<const double> block) {
  if (block.size() < 2) throw std::invalid_argument("a block needs at least two arms");
  for (double p : block)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("reward probability outside [0,1]");
}

/// Draws the reward, updates counts and appends to the trajectory.
inline void finish_trial(std::span<const double> block, std::size_t arm, Stream& rng,
                         Counts& counts, BlockTrajectory& out) {
  const int r = rng.bernoulli(block[arm]) ? 1 : 0;
  counts.record(arm, r);
  out.actions.push_back(static_cast<int>(arm) + 1);
  out.rewards.push_back(r);
}

// Shapes above this (in log space) make Beta(a, b) numerically a point mass
// at a/(a+b); the variance is below 1e-7.
inline constexpr double kConcentratedLogShape = 16.0;

}  // namespace detail

/// One draw of the temperature-reshaped Thompson posterior
/// Beta(alpha^(1/temp), beta^(1/temp)); exponents are formed in log space.
inline double reshaped_beta_draw(int alpha, int beta, double temperature, Stream& rng) {
  const double t = std::clamp(temperature, 1e-6, 1e9);
  const double la = std::log(static_cast<double>(alpha)) / t;
  const double lb = std::log(static_cast<double>(beta)) / t;
  if (std::max(la, lb) > detail::kConcentratedLogShape) return 1.0 / (1.0 + std::exp(lb - la));
  return rng.beta(std::exp(la), std::exp(lb));
}

/// Thompson step that never returns `previous`.
inline std::size_t wslts_thompson(const Counts& counts, std::size_t previous, double temperature,
                                  Stream& rng) {
  std::vector<double> omega(counts.arms(), 0.0);
  for (std::size_t k = 0; k < counts.arms(); ++k)
    if (k != previous) omega[k] = reshaped_beta_draw(counts.alpha[k], counts.beta[k], temperature, rng);
  // omega[previous] = 0 can still tie with a concentrated draw of exactly 0.
  std::vector<std::size_t> best;
  for (auto k : detail::argmax_set(omega))
    if (k != previous) best.push_back(k);
  if (best.empty()) return detail::uniform_other(counts.arms(), previous, rng);
  return best[rng.index(best.size())];
}

inline BlockTrajectory simulate_wslts(const ModelParams& params, std::span<const double> block,
                                      std::size_t trials, const BlockKey& key) {
  if (params.model != Model::wslts) throw std::invalid_argument("parameters are not WSLTS");
  params.validate();
  detail::check_block_design(block);
  const std::size_t arms = block.size();
  const double stay_after_win = params.theta[0];
  const double shift_after_loss = params.theta[1];
  const double temperature = params.theta[2];

  Counts counts(arms);
  BlockTrajectory out;
  out.actions.reserve(trials);
  out.rewards.reserve(trials);
  for (std::size_t t = 1; t <= trials; ++t) {
    Stream rng = key.trial(t);
    const double u = rng.uniform();
    std::size_t arm;
    if (t == 1) {
      arm = rng.index(arms);
    } else {
      const auto prev = static_cast<std::size_t>(out.actions.back() - 1);
      const bool won = out.rewards.back() == 1;
      const bool thompson = won ? !(u < stay_after_win) : (u < shift_after_loss);
      arm = thompson ? wslts_thompson(counts, prev, temperature, rng) : prev;
    }
    detail::finish_trial(block, arm, rng, counts, out);
  }
  return out;
}

inline BlockTrajectory simulate_aeg(const ModelParams& params, std::span<const double> block,
                                    std::size_t trials, const BlockKey& key) {
  if (params.model != Model::aeg) throw std::invalid_argument("parameters are not AEG");
  params.validate();
  detail::check_block_design(block);
  const std::size_t arms = block.size();
  const double epsilon = params.theta[0];
  const double stickiness = params.theta[1];

  Counts counts(arms);
  BlockTrajectory out;
  out.actions.reserve(trials);
  out.rewards.reserve(trials);
  std::vector<double> estimate(arms);
  for (std::size_t t = 1; t <= trials; ++t) {
    Stream rng = key.trial(t);
    const double u = rng.uniform();
    const double v = rng.uniform();
    for (std::size_t k = 0; k < arms; ++k)
      estimate[k] = static_cast<double>(counts.alpha[k]) / (counts.alpha[k] + counts.beta[k]);
    const auto greedy = detail::argmax_set(estimate);

    std::size_t arm;
    if (t == 1) {
      arm = rng.index(arms);
    } else {
      const auto prev = static_cast<std::size_t>(out.actions.back() - 1);
      if (u < epsilon) {
        arm = v < stickiness + (1.0 - stickiness) / static_cast<double>(arms)
                  ? prev
                  : detail::uniform_other(arms, prev, rng);
      } else if (detail::contains(greedy, prev)) {
        arm = v < stickiness + (1.0 - stickiness) / static_cast<double>(greedy.size())
                  ? prev
                  : detail::uniform_other_in(greedy, prev, rng);
      } else {
        arm = greedy[rng.index(greedy.size())];
      }
    }
    detail::finish_trial(block, arm, rng, counts, out);
  }
  return out;
}

inline BlockTrajectory simulate_gls(const ModelParams& params, std::span<const double> block,
                                    std::size_t trials, const BlockKey& key) {
  if (params.model != Model::gls) throw std::invalid_argument("parameters are not GLS");
  params.validate();
  detail::check_block_design(block);
  const std::size_t arms = block.size();
  const double accuracy = params.theta[0];
  // pi(l, r) -> theta[1 + 2l + r]
  auto exploit_prob = [&](int l, int r) { return params.theta[1 + 2 * l + r]; };

  Counts counts(arms);
  BlockTrajectory out;
  out.actions.reserve(trials);
  out.rewards.reserve(trials);
  int latent = key.trial(0).bernoulli(0.5) ? 1 : 0;

  // With probability `accuracy` pick uniformly in `targets`; otherwise pick
  // uniformly among the arms other than the (would-be) target.
  auto execute = [&](const std::vector<std::size_t>& targets, double u, Stream& rng) {
    const std::size_t target = targets[rng.index(targets.size())];
    return u < accuracy ? target : detail::uniform_other(arms, target, rng);
  };

  for (std::size_t t = 1; t <= trials; ++t) {
    const auto most_rewarded = detail::argmax_set(counts.alpha);
    const auto least_failed = detail::argmin_set(counts.beta);
    std::vector<std::size_t> both;
    for (auto k : most_rewarded)
      if (detail::contains(least_failed, k)) both.push_back(k);

    Stream rng = key.trial(t);
    const double u = rng.uniform();
    const double v = rng.uniform();
    std::size_t arm;
    if (t == 1) {
      arm = rng.index(arms);
    } else if (both.size() > 1) {
      arm = both[rng.index(both.size())];
    } else if (both.size() == 1) {
      arm = execute(both, u, rng);
    } else if (v < exploit_prob(latent, out.rewards.back())) {
      latent = 1;
      std::vector<int> failures;
      for (auto k : most_rewarded) failures.push_back(counts.beta[k]);
      std::vector<std::size_t> targets;
      for (auto i : detail::argmin_set(failures)) targets.push_back(most_rewarded[i]);
      arm = execute(targets, u, rng);
    } else {
      latent = 0;
      std::vector<int> rewards;
      for (auto k : least_failed) rewards.push_back(counts.alpha[k]);
      std::vector<std::size_t> targets;
      for (auto i : detail::argmax_set(rewards)) targets.push_back(least_failed[i]);
      arm = execute(targets, u, rng);
    }
    detail::finish_trial(block, arm, rng, counts, out);
  }
  return out;
}

inline BlockTrajectory simulate_block(const ModelParams& params, std::span<const double> block,
                                      std::size_t trials, const BlockKey& key) {
  switch (params.model) {
    case Model::wslts: return simulate_wslts(params, block, trials, key);
    case Model::aeg: return simulate_aeg(params, block, trials, key);
    case Model::gls: return simulate_gls(params, block, trials, key);
  }
  throw std::invalid_argument("unknown model indicator");
}

/// Blocks are simulated independently: counts reset at every block boundary.
inline ExperimentData simulate_experiment(const ModelParams& params, const Design& design,
                                          std::size_t trials, std::uint64_t seed,
                                          std::uint64_t sample = 0) {
  if (design.block_count() == 0) throw std::invalid_argument("design has no blocks");
  ExperimentData data;
  data.blocks.reserve(design.block_count());
  for (std::size_t b = 0; b < design.block_count(); ++b)
    data.blocks.push_back(simulate_block(params, design.blocks[b], trials, {seed, sample, b}));
  return data;
}

}  // namespace boed

#endif  // BOED_BANDIT_HPP
