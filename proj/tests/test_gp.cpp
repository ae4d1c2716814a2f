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
#include <numeric>
#include <random>

#include "boed/gp.hpp"

namespace boed {
namespace {

// (1 + sqrt5 + 5/3) exp(-sqrt5), evaluated independently and frozen.
constexpr double kMaternAtOne = 0.5239941088318203;
// phi(0) = 1 / sqrt(2 pi)
constexpr double kPhiZero = 0.3989422804014327;

std::vector<std::vector<double>> random_points(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Stream rng(seed);
  std::vector<std::vector<double>> x(n, std::vector<double>(dim));
  for (auto& p : x)
    for (auto& c : p) c = rng.uniform();
  return x;
}

double bumpy(const std::vector<double>& x) {
  return std::sin(5.0 * x[0]) * std::cos(3.0 * x[1]) + 0.5 * x[0];
}

TEST(Matern52, KnownValues) {
  const std::vector<double> a{0.3, 0.7}, ls{1.0, 1.0};
  EXPECT_DOUBLE_EQ(matern52(a, a, ls, 2.5), 2.5);
  EXPECT_NEAR(matern52(std::vector<double>{0.0}, std::vector<double>{1.0}, std::vector<double>{1.0}, 1.0), kMaternAtOne, 1e-12);
  EXPECT_NEAR(matern52_r(1.0, 1.0), 0.52400, 1e-5);
}

TEST(Matern52, SymmetricAndScaled) {
  const std::vector<double> a{0.1, 0.9, 0.4}, b{0.6, 0.2, 0.5}, ls{0.3, 1.2, 0.7};
  EXPECT_DOUBLE_EQ(matern52(a, b, ls, 1.7), matern52(b, a, ls, 1.7));
  // Doubling all lengthscales and all offsets leaves r unchanged.
  const std::vector<double> a2{0.2, 1.8, 0.8}, b2{1.2, 0.4, 1.0}, ls2{0.6, 2.4, 1.4};
  EXPECT_NEAR(matern52(a, b, ls, 1.7), matern52(a2, b2, ls2, 1.7), 1e-14);
}

TEST(Matern52, RejectsBadHyperparameters) {
  const std::vector<double> a{0.1}, b{0.2};
  EXPECT_THROW(matern52(a, b, std::vector<double>{0.0}, 1.0), std::invalid_argument);
  EXPECT_THROW(matern52(a, b, std::vector<double>{1.0}, -1.0), std::invalid_argument);
  EXPECT_THROW(matern52(a, std::vector<double>{0.1, 0.2}, std::vector<double>{1.0}, 1.0), std::invalid_argument);
}

TEST(GaussianProcess, LmlGradientMatchesFiniteDifferences) {
  const auto pts = random_points(15, 2, 3);
  Eigen::MatrixXd x(15, 2);
  Eigen::VectorXd y(15);
  for (int i = 0; i < 15; ++i) {
    x(i, 0) = pts[static_cast<std::size_t>(i)][0];
    x(i, 1) = pts[static_cast<std::size_t>(i)][1];
    y[i] = bumpy(pts[static_cast<std::size_t>(i)]);
  }
  GPHyperparameters h{0.8, {0.3, 0.5}, 0.01};
  const auto [lml, grad] = *GPSurrogate::lml_and_gradient(x, y, h);
  EXPECT_NEAR(lml, GPSurrogate(x, y, h).log_marginal_likelihood(), 1e-9);
  auto at = [&](int k, double delta) {
    auto g = h;
    if (k == 0) g.signal_variance *= std::exp(delta);
    else if (k == 3) g.noise_variance *= std::exp(delta);
    else g.lengthscales[static_cast<std::size_t>(k - 1)] *= std::exp(delta);
    return GPSurrogate::lml_and_gradient(x, y, g)->first;
  };
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(grad[k], (at(k, 1e-6) - at(k, -1e-6)) / 2e-6, 1e-5) << "parameter " << k;
}

TEST(GaussianProcess, PredictionGradientsMatchFiniteDifferences) {
  const auto pts = random_points(12, 3, 5);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(p[0] * p[1] - p[2]);
  Eigen::MatrixXd x(12, 3);
  for (int i = 0; i < 12; ++i)
    for (int d = 0; d < 3; ++d) x(i, d) = pts[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
  const GPSurrogate gp(x, Eigen::Map<Eigen::VectorXd>(y.data(), 12), {1.3, {0.4, 0.6, 0.5}, 1e-3});
  const std::vector<double> q{0.33, 0.61, 0.12};
  const auto p = gp.predict(q, true);
  for (std::size_t d = 0; d < 3; ++d) {
    auto up = q, down = q;
    up[d] += 1e-6;
    down[d] -= 1e-6;
    const auto pu = gp.predict(up), pd = gp.predict(down);
    EXPECT_NEAR(p.mean_gradient[static_cast<Eigen::Index>(d)], (pu.mean - pd.mean) / 2e-6, 1e-6);
    EXPECT_NEAR(p.variance_gradient[static_cast<Eigen::Index>(d)], (pu.variance - pd.variance) / 2e-6, 1e-6);
  }
}

TEST(GaussianProcess, FitIsDeterministic) {
  const auto pts = random_points(20, 2, 7);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(bumpy(p));
  GPFitOptions opts;
  opts.restarts = 4;
  opts.seed = 9;
  const auto a = gp_fit(pts, y, opts);
  const auto b = gp_fit(pts, y, opts);
  EXPECT_EQ(a.hyperparameters().signal_variance, b.hyperparameters().signal_variance);
  EXPECT_EQ(a.hyperparameters().lengthscales, b.hyperparameters().lengthscales);
  EXPECT_EQ(a.hyperparameters().noise_variance, b.hyperparameters().noise_variance);
  EXPECT_GE(a.hyperparameters().noise_variance, 1e-6);
}

TEST(GaussianProcess, InterpolatesNoiselessData) {
  const auto pts = random_points(25, 2, 11);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(bumpy(p));
  const auto gp = gp_fit(pts, y);
  const double tol = 10.0 * std::sqrt(gp.hyperparameters().noise_variance + gp.jitter()) + 1e-3;
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(gp.predict(pts[i]).mean, y[i], tol);
}

TEST(GaussianProcess, BeatsConstantPredictorOnSine) {
  std::vector<std::vector<double>> train, test;
  std::vector<double> ytrain, ytest;
  Stream rng(13);
  for (int i = 0; i < 30; ++i) {
    const double x = rng.uniform();
    train.push_back({x});
    ytrain.push_back(std::sin(2.0 * M_PI * x) + 0.05 * rng.normal());
  }
  for (int i = 0; i < 200; ++i) {
    const double x = (i + 0.5) / 200.0;
    test.push_back({x});
    ytest.push_back(std::sin(2.0 * M_PI * x));
  }
  const auto gp = gp_fit(train, ytrain);
  const double mean = std::accumulate(ytrain.begin(), ytrain.end(), 0.0) / 30.0;
  double se_gp = 0.0, se_const = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    se_gp += std::pow(gp.predict(test[i]).mean - ytest[i], 2);
    se_const += std::pow(mean - ytest[i], 2);
  }
  EXPECT_LT(std::sqrt(se_gp / 200), 0.5 * std::sqrt(se_const / 200));
}

TEST(GaussianProcess, PredictionsInvariantToPointOrder) {
  auto pts = random_points(18, 2, 17);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(bumpy(p));
  const GPHyperparameters h{0.7, {0.25, 0.4}, 1e-4};
  auto to_matrix = [](const std::vector<std::vector<double>>& p) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(p.size()), 2);
    for (std::size_t i = 0; i < p.size(); ++i) x.row(static_cast<Eigen::Index>(i)) << p[i][0], p[i][1];
    return x;
  };
  const GPSurrogate a(to_matrix(pts), Eigen::Map<Eigen::VectorXd>(y.data(), 18), h);
  std::vector<std::size_t> perm(18);
  std::iota(perm.begin(), perm.end(), 0);
  Stream rng(3);
  rng.shuffle(perm);
  std::vector<std::vector<double>> pp;
  std::vector<double> yp;
  for (auto i : perm) {
    pp.push_back(pts[i]);
    yp.push_back(y[i]);
  }
  const GPSurrogate b(to_matrix(pp), Eigen::Map<Eigen::VectorXd>(yp.data(), 18), h);
  for (const auto& q : random_points(10, 2, 19)) {
    EXPECT_NEAR(a.predict(q).mean, b.predict(q).mean, 1e-9);
    EXPECT_NEAR(a.predict(q).variance, b.predict(q).variance, 1e-9);
  }
}

TEST(GaussianProcess, RejectsDegenerateInput) {
  EXPECT_THROW(gp_fit(std::vector<std::vector<double>>{{0.5}}, std::vector<double>{1.0}), std::invalid_argument);
  Eigen::MatrixXd x(3, 1);
  x << 0.5, 0.5, 0.5;
  const Eigen::VectorXd y = Eigen::VectorXd::Ones(3);
  // Identical rows under a huge signal variance defeat every jitter level.
  EXPECT_THROW(GPSurrogate(x, y, {1e30, {1.0}, 1e-6}), std::runtime_error);
}

TEST(ExpectedImprovement, ClosedFormCases) {
  EXPECT_EQ(expected_improvement(1.0, 0.0, 0.5), 0.0);
  EXPECT_NEAR(expected_improvement(0.3, 1.0, 0.3), kPhiZero, 1e-12);
  EXPECT_NEAR(expected_improvement(0.3, 1.0, 0.3), 0.39894, 1e-4);
  for (double m : {-3.0, -1.0, 0.0, 2.0}) EXPECT_GE(expected_improvement(m, 0.5, 0.0), 0.0);
}

TEST(ExpectedImprovement, MatchesMonteCarloOracle) {
  const auto pts = random_points(6, 2, 23);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(bumpy(p));
  const auto gp = gp_fit(pts, y);
  const double best = *std::max_element(y.begin(), y.end());
  std::mt19937_64 eng(29);
  std::normal_distribution<double> z;
  for (const auto& q : random_points(5, 2, 31)) {
    const auto p = gp.predict(q);
    double acc = 0.0;
    for (int i = 0; i < 1000000; ++i) acc += std::max(p.mean + p.stddev() * z(eng) - best, 0.0);
    const double mc = acc / 1e6;
    EXPECT_NEAR(expected_improvement(gp, q, best).value, mc, 0.01 * mc);
  }
}

TEST(ExpectedImprovement, GradientMatchesFiniteDifferences) {
  const auto pts = random_points(10, 2, 37);
  std::vector<double> y;
  for (const auto& p : pts) y.push_back(bumpy(p));
  const auto gp = gp_fit(pts, y);
  const double best = *std::max_element(y.begin(), y.end());
  for (const auto& q : random_points(5, 2, 41)) {
    const auto a = expected_improvement(gp, q, best, true);
    for (std::size_t d = 0; d < 2; ++d) {
      auto up = q, down = q;
      up[d] += 1e-6;
      down[d] -= 1e-6;
      const double fd = (expected_improvement(gp, up, best).value - expected_improvement(gp, down, best).value) / 2e-6;
      EXPECT_NEAR(a.gradient[static_cast<Eigen::Index>(d)], fd, 1e-5 + 1e-4 * std::abs(fd));
    }
  }
}

}  // namespace
}  // namespace boed
