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

#ifndef BOED_ANALYSIS_HPP
#define BOED_ANALYSIS_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "boed/bandit.hpp"
#include "boed/critic.hpp"
#include "boed/grid.hpp"
#include "boed/rng.hpp"

namespace boed {

/// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. The
/// first exception (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Entropy

inline double shannon_entropy(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("empty distribution");
  double sum = 0.0, h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("negative or non-finite probability");
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("probabilities do not sum to 1");
  return h;
}

/// -sum_i w_i p_i ln p_i for a density normalised under the weights.
inline double differential_entropy(std::span<const double> density, std::span<const double> weights) {
  if (density.size() != weights.size() || density.empty()) throw std::invalid_argument("density and weights differ in length");
  double mass = 0.0, h = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double p = density[i];
    if (!(p >= 0.0)) throw std::invalid_argument("negative or non-finite density");
    mass += weights[i] * p;
    if (p > 0.0) h -= weights[i] * p * std::log(p);
  }
  if (std::abs(mass - 1.0) > 1e-6) throw std::invalid_argument("density is not normalised (integral " + std::to_string(mass) + ")");
  return h;
}

inline double differential_entropy(const GridPosterior& posterior, const ParameterGrid& grid) {
  const auto w = grid.weights();
  return differential_entropy(posterior.density, w);
}

enum class EntropyKind { shannon, differential };

struct EntropyReport {
  EntropyKind kind = EntropyKind::shannon;
  std::string condition;  // "optimal" or "baseline"
  std::vector<double> values;

  double mean() const {
    if (values.empty()) throw std::logic_error("empty entropy report");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }

  void write_csv(std::ostream& os) const {
    os << "condition,kind,entropy\n";
    for (double v : values)
      os << condition << "," << (kind == EntropyKind::shannon ? "shannon" : "differential") << "," << v << "\n";
  }
};

// ---------------------------------------------------------------------------
// Model recovery

/// Rows: true model; columns: inferred (MAP) model.
class ConfusionMatrix {
 public:
  void add(Model truth, Model inferred) { ++counts_[model_slot(truth)][model_slot(inferred)]; }

  std::size_t count(Model truth, Model inferred) const { return counts_[model_slot(truth)][model_slot(inferred)]; }

  std::size_t row_total(Model truth) const {
    const auto& r = counts_[model_slot(truth)];
    return std::accumulate(r.begin(), r.end(), std::size_t{0});
  }

  /// Row-normalised proportions; empty rows stay zero.
  std::array<std::array<double, 3>, 3> normalized() const {
    std::array<std::array<double, 3>, 3> out{};
    for (auto m : kModels) {
      const double n = static_cast<double>(row_total(m));
      for (auto c : kModels) out[model_slot(m)][model_slot(c)] = n > 0 ? static_cast<double>(count(m, c)) / n : 0.0;
    }
    return out;
  }

  double mean_diagonal() const {
    const auto p = normalized();
    return (p[0][0] + p[1][1] + p[2][2]) / 3.0;
  }

  void write_csv(std::ostream& os) const {
    os << "true\\inferred,WSLTS,AEG,GLS\n";
    for (auto m : kModels) {
      os << to_string(m);
      for (auto c : kModels) os << "," << count(m, c);
      os << "\n";
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json counts = nlohmann::json::array(), props = nlohmann::json::array();
    const auto p = normalized();
    for (std::size_t i = 0; i < 3; ++i) {
      counts.push_back(counts_[i]);
      props.push_back(p[i]);
    }
    return {{"models", {"WSLTS", "AEG", "GLS"}}, {"counts", counts}, {"proportions", props}, {"mean_diagonal", mean_diagonal()}};
  }

 private:
  std::array<std::array<std::size_t, 3>, 3> counts_{};
};

/// MAP model; exact ties are broken uniformly with `rng`.
inline Model map_model(std::span<const double> probs, Stream& rng) {
  const std::vector<double> p(probs.begin(), probs.end());
  const auto best = detail::argmax_set(p);
  return kModels[best.size() == 1 ? best.front() : best[rng.index(best.size())]];
}

struct RecoveryResult {
  ConfusionMatrix confusion;
  EntropyReport entropy;
  std::size_t map_ties = 0;
};

/// Posterior over the three models given simulated data.
using ModelPosteriorFn = std::function<std::array<double, 3>(const ExperimentData&)>;

/// Draws n_sims (m, theta) from the prior, simulates at `design`, and scores
/// the MAP of `posterior` against the truth.
inline RecoveryResult recovery_study(const Design& design, std::size_t trials, const PriorSpec& prior, std::size_t n_sims,
                                     const ModelPosteriorFn& posterior, std::uint64_t seed) {
  design.validate();
  std::vector<Model> truth(n_sims), inferred(n_sims);
  std::vector<double> entropy(n_sims);
  std::vector<char> tie(n_sims, 0);
  parallel_for(n_sims, [&](std::size_t i) {
    Stream rng = Stream::keyed(seed, {i, kPriorKey});
    truth[i] = sample_model(prior, rng);
    const auto params = sample_prior(truth[i], rng);
    const auto data = simulate_experiment(params, design, trials, seed, i);
    const auto p = posterior(data);
    Stream tie_rng = Stream::keyed(seed, {i, 0x7135ULL});
    const std::vector<double> pv(p.begin(), p.end());
    tie[i] = detail::argmax_set(pv).size() > 1;
    inferred[i] = map_model(p, tie_rng);
    entropy[i] = shannon_entropy(p);
  });
  RecoveryResult out;
  out.entropy.kind = EntropyKind::shannon;
  for (std::size_t i = 0; i < n_sims; ++i) {
    out.confusion.add(truth[i], inferred[i]);
    out.map_ties += static_cast<std::size_t>(tie[i]);
  }
  out.entropy.values = std::move(entropy);
  return out;
}

inline RecoveryResult recovery_study(const Design& design, std::size_t trials, const PriorSpec& prior, std::size_t n_sims,
                                     const Ensemble& ensemble, std::uint64_t seed) {
  return recovery_study(
      design, trials, prior, n_sims,
      [&](const ExperimentData& data) {
        const auto post = posterior_models(ensemble, data, design.arms(), prior);
        return std::array<double, 3>{post.probs[0], post.probs[1], post.probs[2]};
      },
      seed);
}

// ---------------------------------------------------------------------------
// Parameter recovery

struct ParameterRecovery {
  std::vector<double> truth;
  std::vector<std::vector<double>> marginals;  // per axis, averaged over simulations
  std::vector<double> posterior_mean;          // averaged over simulations
  std::vector<double> mean_abs_error;          // |E[theta | y] - theta| averaged over simulations
  double mean_entropy = 0.0;                   // differential, averaged over simulations
};

using DensityPosteriorFn = std::function<GridPosterior(const ExperimentData&)>;

inline ParameterRecovery parameter_recovery(const Design& design, std::size_t trials, const ModelParams& truth,
                                            std::size_t n_sims, const ParameterGrid& grid,
                                            const DensityPosteriorFn& posterior, std::uint64_t seed) {
  truth.validate();
  if (prior_density(truth.model, truth.theta) <= 0.0) throw std::invalid_argument("true parameters outside prior support");
  if (grid.dimension() != truth.theta.size()) throw std::invalid_argument("grid dimension does not match the model");
  if (n_sims == 0) throw std::invalid_argument("parameter recovery needs at least one simulation");
  const std::size_t dim = grid.dimension();
  std::vector<std::vector<std::vector<double>>> marg(n_sims);
  std::vector<std::vector<double>> means(n_sims);
  std::vector<double> entropy(n_sims);
  const auto w = grid.weights();
  parallel_for(n_sims, [&](std::size_t i) {
    const auto data = simulate_experiment(truth, design, trials, seed, i);
    const auto post = posterior(data);
    for (std::size_t a = 0; a < dim; ++a) marg[i].push_back(post.marginal(grid, a));
    means[i] = post.mean(grid);
    entropy[i] = differential_entropy(post.density, w);
  });
  ParameterRecovery out;
  out.truth = truth.theta;
  out.posterior_mean.assign(dim, 0.0);
  out.mean_abs_error.assign(dim, 0.0);
  for (std::size_t a = 0; a < dim; ++a) out.marginals.emplace_back(grid.axis(a).size(), 0.0);
  const double inv = 1.0 / static_cast<double>(n_sims);
  for (std::size_t i = 0; i < n_sims; ++i) {
    for (std::size_t a = 0; a < dim; ++a) {
      for (std::size_t k = 0; k < marg[i][a].size(); ++k) out.marginals[a][k] += inv * marg[i][a][k];
      out.posterior_mean[a] += inv * means[i][a];
      out.mean_abs_error[a] += inv * std::abs(means[i][a] - truth.theta[a]);
    }
    out.mean_entropy += inv * entropy[i];
  }
  return out;
}

/// Differential entropy of the grid posterior for n_sims participants whose
/// parameters are drawn from the model's prior.
inline EntropyReport entropy_study(const Design& design, std::size_t trials, Model model, std::size_t n_sims,
                                   const ParameterGrid& grid, const DensityPosteriorFn& posterior, std::uint64_t seed) {
  design.validate();
  if (grid.dimension() != parameter_count(model)) throw std::invalid_argument("grid dimension does not match the model");
  const auto w = grid.weights();
  EntropyReport out;
  out.kind = EntropyKind::differential;
  out.values.resize(n_sims);
  parallel_for(n_sims, [&](std::size_t i) {
    Stream rng = Stream::keyed(seed, {i, kPriorKey});
    const auto params = sample_prior(model, rng);
    const auto data = simulate_experiment(params, design, trials, seed, i);
    out.values[i] = differential_entropy(posterior(data).density, w);
  });
  return out;
}

inline EntropyReport entropy_study(const Design& design, std::size_t trials, Model model, std::size_t n_sims,
                                   const ParameterGrid& grid, const Ensemble& ensemble, std::uint64_t seed) {
  return entropy_study(
      design, trials, model, n_sims, grid,
      [&](const ExperimentData& data) { return posterior_density(ensemble, data, design.arms(), grid); }, seed);
}

// ---------------------------------------------------------------------------
// Correlations and hypothesis tests

struct CorrelationResult {
  Eigen::MatrixXd r;
  std::vector<bool> degenerate;  // zero-variance marginal; its correlations are reported as 0
};

/// Weighted Pearson correlations of the parameters under a grid posterior
/// (moments in parameter units).
inline CorrelationResult posterior_correlations(const GridPosterior& post, const ParameterGrid& grid) {
  const std::size_t dim = grid.dimension();
  if (post.density.size() != grid.size()) throw std::invalid_argument("posterior does not match the grid");
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
  Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  double mass = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = grid.weight(i) * post.density[i];
    if (w == 0.0) continue;
    const auto x = grid.node(i);
    const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(dim));
    mass += w;
    mu += w * xv;
    m2 += w * xv * xv.transpose();
  }
  if (!(mass > 0.0)) throw std::invalid_argument("posterior has no mass");
  mu /= mass;
  const Eigen::MatrixXd cov = m2 / mass - mu * mu.transpose();
  CorrelationResult out{Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)),
                        std::vector<bool>(dim, false)};
  for (std::size_t a = 0; a < dim; ++a)
    out.degenerate[a] = !(cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) > 1e-14);
  for (Eigen::Index a = 0; a < static_cast<Eigen::Index>(dim); ++a)
    for (Eigen::Index b = 0; b < a; ++b) {
      double r = 0.0;
      if (!out.degenerate[static_cast<std::size_t>(a)] && !out.degenerate[static_cast<std::size_t>(b)])
        r = std::clamp(cov(a, b) / std::sqrt(cov(a, a) * cov(b, b)), -1.0, 1.0);
      out.r(a, b) = out.r(b, a) = r;
    }
  return out;
}

inline double fisher_z(double r) {
  if (!(std::abs(r) < 1.0)) throw std::invalid_argument("fisher_z needs |r| < 1");
  return std::atanh(r);
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("Welch test needs at least two values per group");
  auto moments = [](std::span<const double> x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::make_pair(m, ss / static_cast<double>(x.size() - 1));
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  if (!(va > 0.0) || !(vb > 0.0)) throw std::invalid_argument("Welch test needs positive variance in each group");
  const double sa = va / static_cast<double>(a.size()), sb = vb / static_cast<double>(b.size());
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) /
         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

struct ChiSquareResult {
  double statistic = 0.0;
  int df = 0;
  double p = 1.0;
};

/// Pearson chi-square test of independence on an R x C count table.
inline ChiSquareResult chi_square_test(const std::vector<std::vector<double>>& table) {
  if (table.size() < 2 || table.front().size() < 2) throw std::invalid_argument("chi-square needs at least a 2x2 table");
  const std::size_t rows = table.size(), cols = table.front().size();
  std::vector<double> rs(rows, 0.0), cs(cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (table[i].size() != cols) throw std::invalid_argument("ragged count table");
    for (std::size_t j = 0; j < cols; ++j) {
      if (!(table[i][j] >= 0.0)) throw std::invalid_argument("negative count");
      rs[i] += table[i][j];
      cs[j] += table[i][j];
      total += table[i][j];
    }
  }
  ChiSquareResult r;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = rs[i] * cs[j] / total;
      if (!(e > 0.0)) throw std::invalid_argument("zero expected count");
      r.statistic += (table[i][j] - e) * (table[i][j] - e) / e;
    }
  r.df = static_cast<int>((rows - 1) * (cols - 1));
  boost::math::chi_squared dist(r.df);
  r.p = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

/// Pearson goodness-of-fit of observed counts against category probabilities.
inline ChiSquareResult chi_square_gof(std::span<const double> observed, std::span<const double> probs) {
  if (observed.size() != probs.size() || observed.size() < 2) throw std::invalid_argument("goodness-of-fit needs >= 2 matching categories");
  const double n = std::accumulate(observed.begin(), observed.end(), 0.0);
  ChiSquareResult r;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double e = n * probs[k];
    if (!(e > 0.0)) throw std::invalid_argument("zero expected count");
    r.statistic += (observed[k] - e) * (observed[k] - e) / e;
  }
  r.df = static_cast<int>(observed.size()) - 1;
  boost::math::chi_squared dist(r.df);
  r.p = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

struct DisentanglementReport {
  std::vector<double> optimal;   // per participant mean |z| below the diagonal
  std::vector<double> baseline;
  WelchResult test;
};

/// Mean |fisher_z| over the strictly lower triangle. Correlations of
/// magnitude 1 are pulled to 1 - 1e-12 so that z stays finite.
inline double mean_abs_z(const Eigen::MatrixXd& r) {
  if (r.rows() != r.cols() || r.rows() < 2) throw std::invalid_argument("correlation matrix must be square with dim >= 2");
  double s = 0.0;
  int n = 0;
  for (Eigen::Index a = 0; a < r.rows(); ++a)
    for (Eigen::Index b = 0; b < a; ++b) {
      s += std::abs(fisher_z(std::clamp(r(a, b), -1.0 + 1e-12, 1.0 - 1e-12)));
      ++n;
    }
  return s / n;
}

inline DisentanglementReport disentanglement_comparison(const std::vector<Eigen::MatrixXd>& optimal,
                                                        const std::vector<Eigen::MatrixXd>& baseline) {
  if (optimal.empty() || baseline.empty()) throw std::invalid_argument("disentanglement comparison needs two non-empty groups");
  DisentanglementReport out;
  for (const auto& r : optimal) out.optimal.push_back(mean_abs_z(r));
  for (const auto& r : baseline) out.baseline.push_back(mean_abs_z(r));
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (out.optimal == out.baseline || (constant(out.optimal) && constant(out.baseline) && out.optimal.front() == out.baseline.front()))
    out.test = {0.0, static_cast<double>(out.optimal.size() + out.baseline.size() - 2), 1.0};
  else
    out.test = welch_t_test(out.optimal, out.baseline);
  return out;
}

}  // namespace boed

#endif  // BOED_ANALYSIS_HPP
