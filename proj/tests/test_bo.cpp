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

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "boed/bo.hpp"
#include "toy.hpp"

namespace boed {
namespace {

UtilityFunction noisy_bowl(double centre, double noise, std::uint64_t seed) {
  return [=](std::span<const double> d, std::size_t it) {
    Stream rng = Stream::keyed(seed, {it});
    double v = 0.0;
    for (double x : d) v -= (x - centre) * (x - centre);
    return UtilityValue{v + noise * rng.normal(), noise};
  };
}

GPSurrogate fit_on_grid(const std::function<double(double, double)>& f, int n) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double a = i / (n - 1.0), b = j / (n - 1.0);
      x.push_back({a, b});
      y.push_back(f(a, b));
    }
  return gp_fit(x, y);
}

TEST(Sobol, UnitCubeAndSeeded) {
  const auto a = sobol_points(64, 6, 1), b = sobol_points(64, 6, 1), c = sobol_points(64, 6, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto& p : a)
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  // Shifted Sobol nets stratify every axis: each of 64 bins holds one point.
  for (std::size_t d = 0; d < 6; ++d) {
    std::vector<int> bins(64, 0);
    for (const auto& p : a) ++bins[static_cast<std::size_t>(p[d] * 64)];
    for (int n : bins) EXPECT_EQ(n, 1);
  }
}

TEST(ProjectedAscent, FindsBoxConstrainedMaximum) {
  // max -(x - 1.4)^2 - (y - 0.3)^2 over the unit square is at (1, 0.3).
  auto f = [](std::span<const double> x) {
    Eigen::VectorXd g(2);
    g << -2 * (x[0] - 1.4), -2 * (x[1] - 0.3);
    return std::make_pair(-(x[0] - 1.4) * (x[0] - 1.4) - (x[1] - 0.3) * (x[1] - 0.3), g);
  };
  const auto r = projected_ascent(f, {0.2, 0.9}, {500, 1e-8, 0.1});
  EXPECT_TRUE(r.converged);
  EXPECT_DOUBLE_EQ(r.x[0], 1.0);
  EXPECT_NEAR(r.x[1], 0.3, 1e-8);
}

TEST(BOState, IncumbentAndBudget) {
  BOState s(3);
  s.record({0, {0.1}, 0.5, 0, true, std::nullopt});
  s.record({1, {0.2}, 0.2, 0, true, std::nullopt});
  EXPECT_EQ(s.incumbent().utility, 0.5);
  s.record({2, {0.3}, 0.9, 0, false, std::nullopt});
  EXPECT_EQ(s.incumbent_index(), 2u);
  EXPECT_TRUE(s.exhausted());
  EXPECT_THROW(s.record({3, {0.4}, 1.0, 0, false, std::nullopt}), std::logic_error);
  EXPECT_EQ(s.incumbent_trace(), (std::vector<double>{0.5, 0.5, 0.9}));
}

TEST(BOConfig, Validation) {
  BOConfig c;
  c.budget = 10;
  c.initial = 20;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(BOConfig{}.budget, 400u);
  EXPECT_EQ(BOConfig{}.initial, 80u);
}

TEST(RunBo, IncumbentIsMonotoneAndTraceComplete) {
  BOConfig c;
  c.budget = 20;
  c.initial = 8;
  c.seed = 4;
  std::vector<std::size_t> seen;
  const auto r = run_bo(2, noisy_bowl(0.3, 1e-3, 4), c, [&](const BOEvaluation& e) { seen.push_back(e.iteration); });
  ASSERT_EQ(r.state.count(), 20u);
  ASSERT_EQ(seen.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(seen[i], i);
  const auto trace = r.state.incumbent_trace();
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1]);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_TRUE(r.state.evaluations()[i].initial);
  EXPECT_TRUE(r.state.evaluations()[8].hyperparameters.has_value());
  EXPECT_TRUE(r.surrogate.has_value());
}

TEST(RunBo, FindsKnownOptimum) {
  BOConfig c;
  c.budget = 60;
  c.initial = 12;
  c.seed = 1;
  const auto r = run_bo(6, noisy_bowl(0.3, 1e-3, 1), c);
  for (double x : r.state.incumbent().design) EXPECT_NEAR(x, 0.3, 0.05);
}

TEST(RunBo, TraceJsonRoundTrip) {
  const BOEvaluation e{3, {0.1, 0.2}, 0.42, 0.01, false, GPHyperparameters{1.5, {0.2, 0.3}, 1e-4}};
  const auto back = evaluation_from_json(nlohmann::json::parse(to_json(e).dump()));
  EXPECT_EQ(back.iteration, 3u);
  EXPECT_EQ(back.design, e.design);
  EXPECT_EQ(back.utility, 0.42);
  ASSERT_TRUE(back.hyperparameters);
  EXPECT_EQ(back.hyperparameters->lengthscales, e.hyperparameters->lengthscales);
}

TEST(RunBoed, ToyLandscapeOptimum) {
  const auto problem = toy::two_trial();
  double grid_max = 0.0;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) grid_max = std::max(grid_max, problem.mutual_information({i / 20.0, j / 20.0}));

  DesignProblem dp;
  dp.blocks = 1;
  dp.arms = 2;
  dp.architecture = problem.architecture();
  dp.training.epochs = 20;
  dp.training.sample_budget = 10000;
  dp.training.heldout = 3000;
  dp.training.weight_decay = 1e-4;
  dp.generator = [&](const Design& d, std::uint64_t seed) { return problem.generator(d.blocks[0], seed); };
  BOConfig c;
  c.budget = 20;
  c.initial = 6;
  c.seed = 3;
  const auto r = run_boed(dp, c);
  EXPECT_GE(problem.mutual_information(r.optimum.blocks[0]), 0.95 * grid_max);
  EXPECT_EQ(r.critic.architecture(), dp.architecture);
}

TEST(Slice, LatticeAndConsistency) {
  const auto gp = fit_on_grid([](double a, double b) { return std::sin(3 * a) + b * b; }, 6);
  const std::vector<double> base{0.2, 0.4};
  const auto s = slice_utility(gp, base, 0, 1, 50);
  EXPECT_EQ(s.nodes(), 2500u);
  const auto p = gp.predict(std::vector<double>{s.values[7], s.values[31]});
  EXPECT_DOUBLE_EQ(s.mean(7, 31), p.mean);
  EXPECT_DOUBLE_EQ(s.stddev(7, 31), p.stddev());
  EXPECT_THROW(slice_utility(gp, base, 0, 2, 10), std::invalid_argument);
  EXPECT_THROW(slice_utility(gp, base, 1, 1, 10), std::invalid_argument);
  std::ostringstream csv;
  s.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, 15), "d1,d2,mean,std\n");
}

TEST(LocalOptima, UnimodalSurfaceHasOneOptimum) {
  const auto gp = fit_on_grid([](double a, double b) { return -(a - 0.6) * (a - 0.6) - (b - 0.4) * (b - 0.4); }, 7);
  const auto optima = find_local_optima(gp);
  ASSERT_EQ(optima.size(), 1u);
  EXPECT_NEAR(optima[0].design[0], 0.6, 0.02);
  EXPECT_NEAR(optima[0].design[1], 0.4, 0.02);
  EXPECT_LE(optima[0].projected_gradient_norm, 1e-4);
  EXPECT_EQ(optima[0].rank, 1u);
}

/// Concave across the diagonal, bimodal along it: maxima near (0.25, 0.25)
/// and (0.75, 0.75), no flat regions and no boundary maxima.
double ridge(double a, double b) {
  const double s = 0.5 * (a + b);
  auto bump = [](double x, double c) { return std::exp(-(x - c) * (x - c) / (2 * 0.15 * 0.15)); };
  return -2.0 * (a - b) * (a - b) + bump(s, 0.25) + 0.7 * bump(s, 0.75);
}

TEST(LocalOptima, BimodalSurfaceRankedAndSeparated) {
  const auto gp = fit_on_grid(ridge, 21);
  std::size_t dropped = 0;
  const auto optima = find_local_optima(gp, {}, &dropped);
  ASSERT_EQ(optima.size(), 2u);
  EXPECT_GT(optima[0].mean, optima[1].mean);
  EXPECT_NEAR(optima[0].design[0], 0.25, 0.05);
  EXPECT_NEAR(optima[1].design[0], 0.75, 0.05);
  for (const auto& o : optima) EXPECT_LE(o.projected_gradient_norm, 1e-4);
  double sep = 0.0;
  for (std::size_t j = 0; j < 2; ++j) sep = std::max(sep, std::abs(optima[0].design[j] - optima[1].design[j]));
  EXPECT_GT(sep, 0.02);
  std::ostringstream csv;
  write_optima_csv(csv, optima);
  EXPECT_EQ(csv.str().substr(0, 14), "rank,MI,d1,d2\n");
}

}  // namespace
}  // namespace boed
