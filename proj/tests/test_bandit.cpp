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

#include <array>
#include <cmath>
#include <set>

#include "boed/analysis.hpp"
#include "boed/bandit.hpp"

namespace boed {
namespace {

ModelParams wslts(double stay, double shift, double temp) { return {Model::wslts, {stay, shift, temp}}; }
ModelParams aeg(double eps, double stick) { return {Model::aeg, {eps, stick}}; }
ModelParams gls(double acc, double p00, double p01, double p10, double p11) {
  return {Model::gls, {acc, p00, p01, p10, p11}};
}

TEST(Design, ValidatesShapeAndRange) {
  EXPECT_THROW((Design{{}}).validate(), std::invalid_argument);
  EXPECT_THROW((Design{{{0.5}}}).validate(), std::invalid_argument);
  EXPECT_THROW((Design{{{0.5, 0.5}, {0.5, 0.5, 0.5}}}).validate(), std::invalid_argument);
  EXPECT_THROW((Design{{{0.5, 1.5}}}).validate(), std::invalid_argument);
  EXPECT_NO_THROW((Design{{{0, 0, 0.6}, {1, 1, 0}}}).validate());
}

TEST(Design, FlattenRoundTrip) {
  const Design d{{{0, 0, 0.6}, {1, 1, 0}}};
  EXPECT_EQ(d.dimension(), 6u);
  const auto flat = d.flatten();
  EXPECT_EQ(Design::from_flat(flat, 3), d);
  EXPECT_THROW(Design::from_flat(flat, 4), std::invalid_argument);
}

TEST(Params, Validation) {
  EXPECT_THROW(wslts(0.5, 0.5, 0.0).validate(), std::invalid_argument);
  EXPECT_THROW(aeg(1.2, 0.1).validate(), std::invalid_argument);
  EXPECT_THROW((ModelParams{Model::gls, {0.5}}).validate(), std::invalid_argument);
  EXPECT_NO_THROW(wslts(0.5, 0.5, 30.0).validate());
  EXPECT_EQ(parameter_count(Model::gls), 5u);
  EXPECT_EQ(model_from_string("AEG"), Model::aeg);
  EXPECT_THROW(model_from_index(4), std::invalid_argument);
}

TEST(Simulators, TrajectoryShapeAndRange) {
  const Design d{{{0.2, 0.5, 0.8}, {0.9, 0.1, 0.4}, {0.3, 0.3, 0.3}}};
  for (const auto& p : {wslts(0.7, 0.6, 1.3), aeg(0.3, 0.4), gls(0.8, 0.2, 0.4, 0.6, 0.8)}) {
    const auto data = simulate_experiment(p, d, kCaseStudyTrials, 7, 3);
    ASSERT_EQ(data.blocks.size(), 3u);
    for (const auto& b : data.blocks) {
      ASSERT_EQ(b.trials(), 30u);
      for (std::size_t t = 0; t < b.trials(); ++t) {
        EXPECT_GE(b.actions[t], 1);
        EXPECT_LE(b.actions[t], 3);
        EXPECT_TRUE(b.rewards[t] == 0 || b.rewards[t] == 1);
      }
    }
  }
}

TEST(Simulators, DeterministicPerAddress) {
  const Design d{{{0.2, 0.5, 0.8}, {0.9, 0.1, 0.4}}};
  const auto p = gls(0.8, 0.2, 0.4, 0.6, 0.8);
  EXPECT_EQ(simulate_experiment(p, d, 30, 11, 5), simulate_experiment(p, d, 30, 11, 5));
  EXPECT_NE(simulate_experiment(p, d, 30, 11, 5), simulate_experiment(p, d, 30, 11, 6));
  // Blocks are independent: block 1 depends only on its own address.
  EXPECT_EQ(simulate_experiment(p, d, 30, 11, 5).blocks[1], simulate_block(p, d.blocks[1], 30, {11, 5, 1}));
}

TEST(Simulators, ModelMismatchThrows) {
  EXPECT_THROW(simulate_wslts(aeg(0.1, 0.1), std::vector<double>{0.5, 0.5}, 5, {}), std::invalid_argument);
  EXPECT_THROW(simulate_block(wslts(0.5, 0.5, 1.0), std::vector<double>{0.5}, 5, {}), std::invalid_argument);
}

TEST(Simulators, ZeroTrialsGiveEmptyBlock) {
  EXPECT_EQ(simulate_block(aeg(0.2, 0.2), std::vector<double>{0.5, 0.5, 0.5}, 0, {}).trials(), 0u);
}

TEST(Wslts, AlwaysStaysAfterWinWhenStayIsOne) {
  const std::vector<double> block{1.0, 1.0, 1.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_wslts(wslts(1.0, 0.5, 1.0), block, 30, {3, s, 0});
    for (std::size_t t = 1; t < 30; ++t) ASSERT_EQ(b.actions[t], b.actions[0]);
  }
}

TEST(Wslts, NeverShiftsAfterLossWhenShiftIsZero) {
  const std::vector<double> block{0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_wslts(wslts(0.3, 0.0, 1.0), block, 30, {3, s, 0});
    for (std::size_t t = 1; t < 30; ++t) ASSERT_EQ(b.actions[t], b.actions[0]);
  }
}

TEST(Wslts, ThompsonNeverRepeatsPrevious) {
  const std::vector<double> block{0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_wslts(wslts(0.5, 1.0, 0.7), block, 30, {9, s, 0});
    for (std::size_t t = 1; t < 30; ++t) ASSERT_NE(b.actions[t], b.actions[t - 1]);
  }
}

TEST(Wslts, HotLoseShiftIsUniformOverOtherArms) {
  // theta2 -> infinity flattens every reshaped Beta to U(0,1).
  std::array<double, 2> counts{};
  const std::vector<double> block{0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 20000; ++s) {
    const auto b = simulate_wslts(wslts(0.5, 1.0, 1e6), block, 2, {21, s, 0});
    const int a1 = b.actions[0], a2 = b.actions[1];
    ASSERT_NE(a1, a2);
    // rank of a2 among the arms other than a1
    counts[static_cast<std::size_t>((a2 - a1 + 3) % 3 - 1)] += 1.0;
  }
  EXPECT_GT(chi_square_gof(counts, std::array<double, 2>{0.5, 0.5}).p, 0.001);
}

TEST(Wslts, ColdThompsonIsGreedyOnCounts) {
  Counts c(3);
  c.alpha = {5, 2, 1};
  c.beta = {1, 2, 5};
  Stream rng(1);
  // previous = 0 excluded; arm 1 has the better posterior mean of the rest.
  for (int i = 0; i < 100; ++i) EXPECT_EQ(wslts_thompson(c, 0, 1e-3, rng), 1u);
}

TEST(Wslts, ReshapedBetaLimits) {
  Stream rng(5);
  EXPECT_DOUBLE_EQ(reshaped_beta_draw(3, 1, 1e-6, rng), 1.0);
  EXPECT_NEAR(reshaped_beta_draw(4, 4, 1e-3, rng), 0.5, 1e-12);
  double m = 0.0;
  for (int i = 0; i < 20000; ++i) m += reshaped_beta_draw(9, 2, 1e6, rng);
  EXPECT_NEAR(m / 20000, 0.5, 0.01);
}

TEST(Aeg, GreedyTieBreakingIsUniformOverArgmax) {
  // After a loss on the first pull the two untouched arms share the
  // maximal estimate 1/2; with epsilon = stickiness = 0 the pick is uniform.
  std::array<double, 2> counts{};
  const std::vector<double> block{0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 20000; ++s) {
    const auto b = simulate_aeg(aeg(0.0, 0.0), block, 2, {4, s, 0});
    const int a1 = b.actions[0], a2 = b.actions[1];
    ASSERT_NE(a1, a2);
    counts[static_cast<std::size_t>((a2 - a1 + 3) % 3 - 1)] += 1.0;
  }
  EXPECT_GT(chi_square_gof(counts, std::array<double, 2>{0.5, 0.5}).p, 0.001);
}

TEST(Aeg, StickyExplorationRepeatsForever) {
  const std::vector<double> block{0.3, 0.6, 0.9};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_aeg(aeg(1.0, 1.0), block, 30, {8, s, 0});
    for (std::size_t t = 1; t < 30; ++t) ASSERT_EQ(b.actions[t], b.actions[0]);
  }
}

TEST(Aeg, PureGreedyFollowsEstimates) {
  const std::vector<double> block{1.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_aeg(aeg(0.0, 0.0), block, 30, {10, s, 0});
    // Once arm 1 pays it has the unique top estimate and is kept.
    bool paid = false;
    for (std::size_t t = 0; t < 30; ++t) {
      if (paid) {
        ASSERT_EQ(b.actions[t], 1);
      }
      paid = paid || b.actions[t] == 1;
    }
  }
}

TEST(Gls, FirstTrialIsUniform) {
  std::array<double, 3> counts{};
  const std::vector<double> block{0.1, 0.5, 0.9};
  for (std::uint64_t s = 0; s < 30000; ++s)
    counts[static_cast<std::size_t>(simulate_gls(gls(0.9, 0.5, 0.5, 0.5, 0.5), block, 1, {6, s, 0}).actions[0] - 1)] += 1;
  EXPECT_GT(chi_square_gof(counts, std::array<double, 3>{1.0 / 3, 1.0 / 3, 1.0 / 3}).p, 0.001);
}

TEST(Gls, PerfectExecutionWinStays) {
  // A single win makes that arm both most-rewarded and least-failed.
  const std::vector<double> block{1.0, 1.0, 1.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_gls(gls(1.0, 0.3, 0.3, 0.3, 0.3), block, 30, {12, s, 0});
    for (std::size_t t = 1; t < 30; ++t) ASSERT_EQ(b.actions[t], b.actions[0]);
  }
}

TEST(Gls, ZeroAccuracyAvoidsTarget) {
  const std::vector<double> block{1.0, 1.0, 1.0};
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto b = simulate_gls(gls(0.0, 0.3, 0.3, 0.3, 0.3), block, 2, {13, s, 0});
    ASSERT_NE(b.actions[1], b.actions[0]);
  }
}

TEST(Priors, MomentsMatchDefinitions) {
  Stream rng(99);
  double s0 = 0.0, logt = 0.0, logt2 = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_prior(Model::wslts, rng);
    s0 += p.theta[0];
    const double l = std::log(p.theta[2]);
    logt += l;
    logt2 += l * l;
  }
  EXPECT_NEAR(s0 / n, 0.5, 0.01);
  EXPECT_NEAR(logt / n, 0.0, 0.02);
  EXPECT_NEAR(logt2 / n, 1.0, 0.03);
  EXPECT_NEAR(lognormal_pdf(1.0), 1.0 / std::sqrt(2.0 * M_PI), 1e-12);
  EXPECT_EQ(prior_density(Model::aeg, std::vector<double>{0.5, 1.5}), 0.0);
}

TEST(Priors, ModelPriorFrequencies) {
  Stream rng(3);
  std::array<double, 3> counts{};
  PriorSpec prior{{0.2, 0.3, 0.5}};
  for (int i = 0; i < 30000; ++i) counts[model_slot(sample_model(prior, rng))] += 1;
  EXPECT_GT(chi_square_gof(counts, prior.model_probs).p, 0.001);
}

TEST(Priors, BaselineDesignsAreBeta22) {
  Stream rng(17);
  double m = 0.0, m2 = 0.0;
  int n = 0;
  for (int i = 0; i < 5000; ++i)
    for (const auto& block : sample_baseline_design(2, 3, rng).blocks)
      for (double p : block) {
        m += p;
        m2 += p * p;
        ++n;
      }
  m /= n;
  EXPECT_NEAR(m, 0.5, 0.01);
  EXPECT_NEAR(m2 / n - m * m, 0.05, 0.003);  // Beta(2,2) variance = 1/20
}

}  // namespace
}  // namespace boed
