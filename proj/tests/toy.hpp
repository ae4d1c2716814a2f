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

// Enumerable two-arm, two-model toy problems with exact Bayes oracles.
// Outcomes are enumerated exhaustively, so MI and posteriors are exact.

#ifndef BOED_TESTS_TOY_HPP
#define BOED_TESTS_TOY_HPP

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "boed/critic.hpp"

namespace toy {

/// Probability of choosing `arm` (1 or 2) given the history so far.
using Policy = std::function<double(const std::vector<int>& actions, const std::vector<int>& rewards, int arm)>;

inline double always_arm_one(const std::vector<int>&, const std::vector<int>&, int arm) { return arm == 1 ? 1.0 : 0.0; }

inline double uniform_choice(const std::vector<int>&, const std::vector<int>&, int) { return 0.5; }

/// First choice uniform, then deterministic win-stay lose-shift.
inline double win_stay_lose_shift(const std::vector<int>& a, const std::vector<int>& r, int arm) {
  if (a.empty()) return 0.5;
  const int keep = a.back();
  const int next = r.back() == 1 ? keep : 3 - keep;
  return arm == next ? 1.0 : 0.0;
}

struct Outcome {
  std::vector<int> actions;
  std::vector<int> rewards;
  bool operator<(const Outcome& o) const {
    return std::tie(actions, rewards) < std::tie(o.actions, o.rewards);
  }
};

struct Problem {
  std::vector<Policy> models;
  std::vector<double> prior;
  int trials = 1;

  /// p(y | m, d) for every outcome with positive probability under some model.
  std::map<Outcome, std::vector<double>> likelihoods(const std::vector<double>& d) const {
    std::map<Outcome, std::vector<double>> out;
    std::function<void(Outcome&, std::vector<double>&)> rec = [&](Outcome& y, std::vector<double>& p) {
      if (static_cast<int>(y.actions.size()) == trials) {
        auto& slot = out[y];
        slot.resize(models.size(), 0.0);
        for (std::size_t m = 0; m < models.size(); ++m) slot[m] += p[m];
        return;
      }
      for (int arm = 1; arm <= 2; ++arm)
        for (int r = 0; r <= 1; ++r) {
          const double pr = r ? d[static_cast<std::size_t>(arm - 1)] : 1.0 - d[static_cast<std::size_t>(arm - 1)];
          std::vector<double> q(models.size());
          bool any = false;
          for (std::size_t m = 0; m < models.size(); ++m) {
            q[m] = p[m] * models[m](y.actions, y.rewards, arm) * pr;
            any = any || q[m] > 0.0;
          }
          if (!any) continue;
          y.actions.push_back(arm);
          y.rewards.push_back(r);
          rec(y, q);
          y.actions.pop_back();
          y.rewards.pop_back();
        }
    };
    Outcome y;
    std::vector<double> p(models.size(), 1.0);
    rec(y, p);
    return out;
  }

  /// sum_m p(m) sum_y p(y|m) log(p(y|m) / p(y))
  double mutual_information(const std::vector<double>& d) const {
    double mi = 0.0;
    for (const auto& [y, lik] : likelihoods(d)) {
      double py = 0.0;
      for (std::size_t m = 0; m < lik.size(); ++m) py += prior[m] * lik[m];
      for (std::size_t m = 0; m < lik.size(); ++m)
        if (lik[m] > 0.0) mi += prior[m] * lik[m] * std::log(lik[m] / py);
    }
    return mi;
  }

  std::vector<double> posterior(const std::vector<double>& d, const Outcome& y) const {
    const auto lik = likelihoods(d).at(y);
    std::vector<double> post(lik.size());
    double z = 0.0;
    for (std::size_t m = 0; m < lik.size(); ++m) z += post[m] = prior[m] * lik[m];
    for (auto& p : post) p /= z;
    return post;
  }

  /// Draws (m, y) for sample `index`.
  std::pair<std::size_t, Outcome> sample(const std::vector<double>& d, std::uint64_t seed, std::uint64_t index) const {
    boed::Stream rng = boed::Stream::keyed(seed, {index, 0xbeefULL});
    double u = rng.uniform();
    std::size_t m = 0;
    while (m + 1 < prior.size() && (u -= prior[m]) >= 0.0) ++m;
    Outcome y;
    for (int t = 0; t < trials; ++t) {
      const int arm = rng.uniform() < models[m](y.actions, y.rewards, 1) ? 1 : 2;
      y.actions.push_back(arm);
      y.rewards.push_back(rng.bernoulli(d[static_cast<std::size_t>(arm - 1)]) ? 1 : 0);
    }
    return {m, y};
  }

  std::vector<double> encode(const Outcome& y) const {
    return boed::encode_block({y.actions, y.rewards}, 2);
  }

  boed::SampleGenerator generator(std::vector<double> d, std::uint64_t seed) const {
    return [this, d = std::move(d), seed](std::uint64_t i, std::span<double> y, std::span<double> v) {
      const auto [m, out] = sample(d, seed, i);
      const auto e = encode(out);
      std::copy(e.begin(), e.end(), y.begin());
      std::fill(v.begin(), v.end(), 0.0);
      v[m] = 1.0;
    };
  }

  boed::NetworkArchitecture architecture() const {
    boed::NetworkArchitecture a;
    a.blocks = 1;
    a.block_input = 2 * trials;
    a.block_hidden = {32, 16};
    a.summary = 4;
    a.head_hidden = {32, 32};
    a.variable = static_cast<int>(models.size());
    return a;
  }

  boed::Matrix candidates() const {
    return boed::Matrix::Identity(static_cast<Eigen::Index>(models.size()), static_cast<Eigen::Index>(models.size()));
  }
};

/// K=2, T=1: one model always picks arm 1, the other picks uniformly; equal prior.
inline Problem single_trial() { return {{always_arm_one, uniform_choice}, {0.5, 0.5}, 1}; }

/// K=2, T=2: always-arm-1 versus win-stay lose-shift; MI varies with d.
inline Problem two_trial() { return {{always_arm_one, win_stay_lose_shift}, {0.5, 0.5}, 2}; }

}  // namespace toy

#endif  // BOED_TESTS_TOY_HPP
