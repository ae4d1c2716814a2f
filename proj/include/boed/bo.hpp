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

// Bayesian optimisation over the unit cube of flattened designs, and the
// post-hoc tools that read the final surrogate: 2-D slices and ranked local
// optima of the GP mean.

#ifndef BOED_BO_HPP
#define BOED_BO_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/sobol.hpp>
#include <nlohmann/json.hpp>

#include "boed/bandit.hpp"
#include "boed/critic.hpp"
#include "boed/gp.hpp"
#include "boed/rng.hpp"

namespace boed {

// ---------------------------------------------------------------------------
// Box-projected gradient ascent

struct AscentOptions {
  int max_iterations = 200;
  double tolerance = 1e-4;  // on the projected-gradient norm
  double initial_step = 0.1;
};

struct AscentResult {
  std::vector<double> x;
  double value = 0.0;
  double projected_gradient_norm = 0.0;
  bool converged = false;
};

/// Gradient components that would push a coordinate out of [0,1] are zeroed.
inline double projected_gradient_norm(std::span<const double> x, const Eigen::VectorXd& g) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double gj = g[static_cast<Eigen::Index>(j)];
    if ((x[j] <= 0.0 && gj < 0.0) || (x[j] >= 1.0 && gj > 0.0)) continue;
    s += gj * gj;
  }
  return std::sqrt(s);
}

/// Maximises f over [0,1]^n with Armijo backtracking along the projected arc.
/// f returns (value, gradient).
inline AscentResult projected_ascent(const std::function<std::pair<double, Eigen::VectorXd>(std::span<const double>)>& f,
                                     std::vector<double> x, const AscentOptions& opt = {}) {
  for (auto& xi : x) xi = std::clamp(xi, 0.0, 1.0);
  auto [fx, g] = f(x);
  double step = opt.initial_step;
  AscentResult out;
  std::vector<double> trial(x.size());
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.projected_gradient_norm = projected_gradient_norm(x, g);
    if (out.projected_gradient_norm <= opt.tolerance) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      double dir = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) {
        trial[j] = std::clamp(x[j] + step * g[static_cast<Eigen::Index>(j)], 0.0, 1.0);
        dir += g[static_cast<Eigen::Index>(j)] * (trial[j] - x[j]);
      }
      auto [ft, gt] = f(trial);
      if (std::isfinite(ft) && ft >= fx + 1e-4 * dir && dir > 0.0) {
        x = trial;
        fx = ft;
        g = std::move(gt);
        accepted = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  out.projected_gradient_norm = projected_gradient_norm(x, g);
  out.converged = out.projected_gradient_norm <= opt.tolerance;
  out.x = std::move(x);
  out.value = fx;
  return out;
}

// ---------------------------------------------------------------------------
// Initial designs

/// n points of the Sobol sequence in [0,1)^dim with a seeded random shift
/// modulo 1 (Cranley-Patterson rotation).
inline std::vector<std::vector<double>> sobol_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("Sobol points need a positive dimension");
  boost::random::sobol engine(dim);
  Stream rng = Stream::keyed(seed, {0x50b01ULL});
  std::vector<double> shift(dim);
  for (auto& s : shift) s = rng.uniform();
  const double scale = 1.0 / (static_cast<double>(engine.max()) + 1.0);
  // The engine starts at index 1; index 0 is the origin.
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      const double u = (i == 0 ? 0.0 : static_cast<double>(engine()) * scale) + shift[d];
      out[i][d] = u - std::floor(u);
    }
  return out;
}

// ---------------------------------------------------------------------------
// BO loop

struct BOConfig {
  std::size_t budget = 400;
  std::size_t initial = 80;
  int acquisition_starts = 64;
  AscentOptions acquisition{100, 1e-6, 0.05};
  GPFitOptions gp;
  std::uint64_t seed = 0;

  void validate() const {
    if (initial < 2) throw std::invalid_argument("BO needs at least two initial evaluations");
    if (budget < initial) throw std::invalid_argument("BO budget must be at least the initial-point count");
    if (acquisition_starts < 1) throw std::invalid_argument("acquisition needs at least one start");
  }
};

struct BOEvaluation {
  std::size_t iteration = 0;
  std::vector<double> design;
  double utility = 0.0;
  double std_error = 0.0;
  bool initial = false;
  std::optional<GPHyperparameters> hyperparameters;  // surrogate that proposed this point
};

inline nlohmann::json to_json(const BOEvaluation& e) {
  nlohmann::json j{{"iteration", e.iteration}, {"design", e.design}, {"mi", e.utility},
                   {"mi_std_error", e.std_error}, {"initial", e.initial}};
  j["hyperparameters"] = e.hyperparameters ? nlohmann::json(*e.hyperparameters) : nlohmann::json(nullptr);
  return j;
}

inline BOEvaluation evaluation_from_json(const nlohmann::json& j) {
  BOEvaluation e;
  e.iteration = j.at("iteration").get<std::size_t>();
  e.design = j.at("design").get<std::vector<double>>();
  e.utility = j.at("mi").get<double>();
  e.std_error = j.value("mi_std_error", 0.0);
  e.initial = j.value("initial", false);
  if (j.contains("hyperparameters") && !j["hyperparameters"].is_null())
    e.hyperparameters = j["hyperparameters"].get<GPHyperparameters>();
  return e;
}

class BOState {
 public:
  explicit BOState(std::size_t budget = 0) : budget_(budget) {}

  void record(BOEvaluation e) {
    if (evaluations_.size() >= budget_) throw std::logic_error("BO evaluation budget exhausted");
    if (!std::isfinite(e.utility)) throw std::invalid_argument("BO utility must be finite");
    if (!incumbent_ || e.utility > evaluations_[*incumbent_].utility) incumbent_ = evaluations_.size();
    evaluations_.push_back(std::move(e));
  }

  const std::vector<BOEvaluation>& evaluations() const { return evaluations_; }
  std::size_t budget() const { return budget_; }
  std::size_t count() const { return evaluations_.size(); }
  bool exhausted() const { return evaluations_.size() >= budget_; }
  bool empty() const { return evaluations_.empty(); }

  const BOEvaluation& incumbent() const {
    if (!incumbent_) throw std::logic_error("no evaluations recorded");
    return evaluations_[*incumbent_];
  }
  std::size_t incumbent_index() const { return incumbent().iteration; }

  /// Best utility after each evaluation; non-decreasing by construction.
  std::vector<double> incumbent_trace() const {
    std::vector<double> out;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& e : evaluations_) out.push_back(best = std::max(best, e.utility));
    return out;
  }

 private:
  std::size_t budget_;
  std::vector<BOEvaluation> evaluations_;
  std::optional<std::size_t> incumbent_;
};

inline GPSurrogate fit_surrogate(const BOState& state, const GPFitOptions& options) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& e : state.evaluations()) {
    x.push_back(e.design);
    y.push_back(e.utility);
  }
  return gp_fit(x, y, options);
}

/// Maximises EI from the incumbent plus (starts - 1) uniform points.
inline std::vector<double> maximise_acquisition(const GPSurrogate& gp, const BOState& state, const BOConfig& config,
                                                std::uint64_t key) {
  const double best = state.incumbent().utility;
  const std::size_t dim = gp.dimension();
  auto ei = [&](std::span<const double> x) {
    auto a = expected_improvement(gp, x, best, true);
    return std::make_pair(a.value, a.gradient);
  };
  Stream rng = Stream::keyed(config.seed, {0xac9ULL, key});
  std::vector<double> best_x = state.incumbent().design;
  double best_ei = -1.0;
  for (int s = 0; s < config.acquisition_starts; ++s) {
    std::vector<double> x0(dim);
    if (s == 0)
      x0 = state.incumbent().design;
    else
      for (auto& xi : x0) xi = rng.uniform();
    const auto r = projected_ascent(ei, x0, config.acquisition);
    if (r.value > best_ei) {
      best_ei = r.value;
      best_x = r.x;
    }
  }
  return best_x;
}

/// Utility of one design: value and (optional) standard error.
struct UtilityValue {
  double value = 0.0;
  double std_error = 0.0;
};

using UtilityFunction = std::function<UtilityValue(std::span<const double> design, std::size_t iteration)>;
using TraceCallback = std::function<void(const BOEvaluation&)>;

struct BOResult {
  BOState state;
  std::optional<GPSurrogate> surrogate;  // fitted to every evaluation
};

/// Sobol initial designs, then EI-guided evaluations until the budget is spent.
inline BOResult run_bo(std::size_t dim, const UtilityFunction& utility, const BOConfig& config,
                       const TraceCallback& on_evaluation = {}) {
  config.validate();
  BOResult out{BOState(config.budget), std::nullopt};
  auto evaluate = [&](std::vector<double> d, bool initial, std::optional<GPHyperparameters> hyper) {
    const std::size_t it = out.state.count();
    const auto u = utility(d, it);
    BOEvaluation e{it, std::move(d), u.value, u.std_error, initial, std::move(hyper)};
    if (on_evaluation) on_evaluation(e);
    out.state.record(std::move(e));
  };
  for (auto& d : sobol_points(config.initial, dim, config.seed)) evaluate(std::move(d), true, std::nullopt);

  GPFitOptions gp_opts = config.gp;
  while (!out.state.exhausted()) {
    gp_opts.seed = stream_key(config.seed, {0x9f17ULL, out.state.count()});
    auto gp = fit_surrogate(out.state, gp_opts);
    gp_opts.warm_start = gp.hyperparameters();
    auto next = maximise_acquisition(gp, out.state, config, out.state.count());
    evaluate(std::move(next), false, gp.hyperparameters());
  }
  gp_opts.seed = stream_key(config.seed, {0x9f17ULL, out.state.count()});
  out.surrogate = fit_surrogate(out.state, gp_opts);
  return out;
}

// ---------------------------------------------------------------------------
// Full design search with critic training at every evaluation

/// Builds the simulator that draws (v, y) pairs at a design.
using GeneratorFactory = std::function<SampleGenerator(const Design& design, std::uint64_t seed)>;

struct DesignProblem {
  std::size_t blocks = 2;
  std::size_t arms = kCaseStudyArms;
  NetworkArchitecture architecture;
  TrainingConfig training;
  GeneratorFactory generator;

  static DesignProblem for_task(Task task, const TrainingConfig& training, std::size_t trials = kCaseStudyTrials,
                                const PriorSpec& prior = {}) {
    DesignProblem p;
    p.blocks = task_blocks(task);
    p.arms = kCaseStudyArms;
    p.architecture = NetworkArchitecture::for_task(task, static_cast<int>(trials));
    p.training = training;
    p.generator = [task, trials, prior](const Design& d, std::uint64_t seed) {
      return task_generator(task, d, trials, seed, prior);
    };
    return p;
  }
};

struct BOEDResult {
  BOState state;
  Design optimum;
  CriticNetwork critic;  // trained at the optimum
  std::optional<GPSurrogate> surrogate;
};

inline BOEDResult run_boed(const DesignProblem& problem, const BOConfig& config, const TraceCallback& on_evaluation = {}) {
  problem.training.validate();
  std::optional<CriticNetwork> best_critic;
  double best = -std::numeric_limits<double>::infinity();
  const UtilityFunction utility = [&](std::span<const double> flat, std::size_t it) {
    const auto design = Design::from_flat(flat, problem.arms);
    const std::uint64_t data_seed = stream_key(config.seed, {0xda7aULL, it});
    const auto data = simulate_dataset(problem.training.sample_budget, problem.architecture.y_width(),
                                       problem.architecture.variable, problem.generator(design, data_seed));
    auto trained = train_critic(problem.architecture, problem.training, data, stream_key(config.seed, {0xc7171cULL, it}));
    const auto& mi = trained.report.validation;
    if (mi.value > best) {
      best = mi.value;
      best_critic = std::move(trained.network);
    }
    return UtilityValue{mi.value, mi.std_error};
  };
  auto r = run_bo(problem.blocks * problem.arms, utility, config, on_evaluation);
  BOEDResult out{std::move(r.state), {}, std::move(*best_critic), std::move(r.surrogate)};
  out.optimum = Design::from_flat(out.state.incumbent().design, problem.arms);
  return out;
}

// ---------------------------------------------------------------------------
// Surface exploration

struct UtilitySlice {
  std::size_t axis_a = 0, axis_b = 1;
  std::vector<double> values;  // lattice coordinates along each free axis
  Eigen::MatrixXd mean;        // mean(i, j) at (values[i], values[j])
  Eigen::MatrixXd stddev;

  std::size_t nodes() const { return static_cast<std::size_t>(mean.size()); }

  /// CSV: one row per lattice node.
  void write_csv(std::ostream& os) const {
    os << "d" << axis_a + 1 << ",d" << axis_b + 1 << ",mean,std\n";
    for (Eigen::Index i = 0; i < mean.rows(); ++i)
      for (Eigen::Index j = 0; j < mean.cols(); ++j)
        os << values[static_cast<std::size_t>(i)] << "," << values[static_cast<std::size_t>(j)] << "," << mean(i, j)
           << "," << stddev(i, j) << "\n";
  }
};

/// GP mean and standard deviation on a resolution x resolution lattice over
/// two free axes; all other coordinates are taken from `fixed`.
inline UtilitySlice slice_utility(const GPSurrogate& gp, std::span<const double> fixed, std::size_t axis_a,
                                  std::size_t axis_b, std::size_t resolution) {
  const std::size_t dim = gp.dimension();
  if (fixed.size() != dim) throw std::invalid_argument("slice base point has the wrong dimension");
  if (axis_a >= dim || axis_b >= dim || axis_a == axis_b) throw std::invalid_argument("slice axes out of range");
  if (resolution < 2) throw std::invalid_argument("slice resolution must be at least 2");
  UtilitySlice s;
  s.axis_a = axis_a;
  s.axis_b = axis_b;
  for (std::size_t i = 0; i < resolution; ++i) s.values.push_back(static_cast<double>(i) / static_cast<double>(resolution - 1));
  const auto n = static_cast<Eigen::Index>(resolution);
  s.mean.resize(n, n);
  s.stddev.resize(n, n);
  std::vector<double> x(fixed.begin(), fixed.end());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      x[axis_a] = s.values[static_cast<std::size_t>(i)];
      x[axis_b] = s.values[static_cast<std::size_t>(j)];
      const auto p = gp.predict(x);
      s.mean(i, j) = p.mean;
      s.stddev(i, j) = p.stddev();
    }
  return s;
}

struct LocalOptimum {
  std::vector<double> design;
  double mean = 0.0;
  double stddev = 0.0;
  double projected_gradient_norm = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct LocalOptimaOptions {
  std::size_t restarts = 20;
  AscentOptions ascent{5000, 1e-4, 0.05};
  double dedupe_distance = 0.02;  // l-infinity
  std::uint64_t seed = 0;
};

/// Gradient ascent on the GP mean from uniform starts; converged points are
/// deduplicated (l-infinity) and ranked by mean, best first. Starts that do
/// not converge are dropped and counted in *dropped.
inline std::vector<LocalOptimum> find_local_optima(const GPSurrogate& gp, const LocalOptimaOptions& options = {},
                                                   std::size_t* dropped = nullptr) {
  const std::size_t dim = gp.dimension();
  auto mean = [&](std::span<const double> x) {
    auto p = gp.predict(x, true);
    return std::make_pair(p.mean, p.mean_gradient);
  };
  Stream rng = Stream::keyed(options.seed, {0x0971ULL});
  std::vector<LocalOptimum> found;
  std::size_t failed = 0;
  for (std::size_t s = 0; s < options.restarts; ++s) {
    std::vector<double> x0(dim);
    for (auto& xi : x0) xi = rng.uniform();
    const auto r = projected_ascent(mean, x0, options.ascent);
    if (!r.converged) {
      ++failed;
      continue;
    }
    found.push_back({r.x, r.value, gp.predict(r.x).stddev(), r.projected_gradient_norm, 0});
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  std::vector<LocalOptimum> unique;
  for (auto& c : found) {
    const bool duplicate = std::any_of(unique.begin(), unique.end(), [&](const LocalOptimum& u) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d = std::max(d, std::abs(u.design[j] - c.design[j]));
      return d <= options.dedupe_distance;
    });
    if (!duplicate) unique.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < unique.size(); ++i) unique[i].rank = i + 1;
  if (dropped) *dropped = failed;
  return unique;
}

/// CSV table: rank, MI, d1..dn.
inline void write_optima_csv(std::ostream& os, const std::vector<LocalOptimum>& optima) {
  os << "rank,MI";
  const std::size_t dim = optima.empty() ? 0 : optima.front().design.size();
  for (std::size_t j = 0; j < dim; ++j) os << ",d" << j + 1;
  os << "\n";
  for (const auto& o : optima) {
    os << o.rank << "," << o.mean;
    for (double d : o.design) os << "," << d;
    os << "\n";
  }
}

}  // namespace boed

#endif  // BOED_BO_HPP
