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

// Multi-stage steps shared by the command-line tool and the acceptance run:
// ensembles at a fixed design, baseline pools, and optimal-versus-baseline
// validation.

#ifndef BOED_WORKFLOW_HPP
#define BOED_WORKFLOW_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boed/analysis.hpp"
#include "boed/config.hpp"
#include "boed/critic.hpp"

namespace boed {

/// Simulates config.training.sample_budget pairs at `design` and trains
/// config.ensemble_size critics on them.
inline Ensemble train_at_design(const RunConfig& config, const Design& design, std::uint64_t seed) {
  config.validate();
  if (design.block_count() != task_blocks(config.task) || design.arms() != config.arms)
    throw std::invalid_argument("design shape does not match task " + std::string(to_string(config.task)));
  const auto& arch = config.architecture;
  const auto data = simulate_dataset(config.training.sample_budget, arch.y_width(), arch.variable,
                                     task_generator(config.task, design, config.trials, stream_key(seed, {0xda7aULL}), config.prior));
  return train_ensemble(config.ensemble_size, arch, config.training, data, stream_key(seed, {0xe45eULL}));
}

/// Baseline pool: every probability drawn i.i.d. from Beta(2, 2).
inline std::vector<Design> baseline_designs(std::size_t count, std::size_t blocks, std::size_t arms, std::uint64_t seed) {
  std::vector<Design> out;
  for (std::size_t b = 0; b < count; ++b) {
    Stream rng = Stream::keyed(seed, {0xba5eULL, b});
    out.push_back(sample_baseline_design(blocks, arms, rng));
  }
  return out;
}

struct ConditionSummary {
  Design design;
  std::optional<ConfusionMatrix> confusion;  // model discrimination only
  EntropyReport entropy;
  std::size_t map_ties = 0;
};

struct DesignComparison {
  Task task = Task::md;
  std::size_t n_sims = 0;
  ConditionSummary optimal;
  std::vector<ConditionSummary> baselines;

  /// Baseline entropies pooled over designs.
  EntropyReport pooled_baseline_entropy() const {
    EntropyReport r{optimal.entropy.kind, "baseline", {}};
    for (const auto& b : baselines) r.values.insert(r.values.end(), b.entropy.values.begin(), b.entropy.values.end());
    return r;
  }

  /// Mean over baseline designs of each design's mean confusion diagonal.
  double baseline_mean_diagonal() const {
    if (baselines.empty()) throw std::logic_error("no baselines");
    double s = 0.0;
    for (const auto& b : baselines) s += b.confusion.value().mean_diagonal();
    return s / static_cast<double>(baselines.size());
  }

  /// Summed baseline counts.
  ConfusionMatrix pooled_baseline_confusion() const {
    ConfusionMatrix c;
    for (const auto& b : baselines)
      for (auto t : kModels)
        for (auto m : kModels)
          for (std::size_t k = 0; k < b.confusion.value().count(t, m); ++k) c.add(t, m);
    return c;
  }

  nlohmann::json to_json() const {
    auto summary = [](const ConditionSummary& c) {
      nlohmann::json j{{"design", c.design.blocks}, {"mean_entropy", c.entropy.mean()}, {"n", c.entropy.values.size()}};
      if (c.confusion) {
        j["confusion"] = c.confusion->to_json();
        j["map_ties"] = c.map_ties;
      }
      return j;
    };
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& b : baselines) bs.push_back(summary(b));
    nlohmann::json j{{"schema", "boed-validation/1"},
                     {"task", std::string(to_string(task))},
                     {"entropy_kind", optimal.entropy.kind == EntropyKind::shannon ? "shannon" : "differential"},
                     {"n_sims", n_sims},
                     {"optimal", summary(optimal)},
                     {"baselines", bs}};
    if (!baselines.empty()) {
      const auto pooled = pooled_baseline_entropy();
      j["baseline_mean_entropy"] = pooled.mean();
      j["entropy_difference"] = optimal.entropy.mean() - pooled.mean();
      if (optimal.confusion) {
        j["baseline_mean_diagonal"] = baseline_mean_diagonal();
        j["diagonal_difference"] = optimal.confusion->mean_diagonal() - baseline_mean_diagonal();
      }
    }
    return j;
  }
};

/// Called with (index, design, ensemble) after each baseline ensemble is
/// trained, e.g. to save it or report progress.
using BaselineHook = std::function<void(std::size_t, const Design&, const Ensemble&)>;

/// Scores one design with its ensemble: MAP recovery and Shannon entropy for
/// model discrimination, differential entropy of prior-drawn participants for
/// parameter estimation.
inline ConditionSummary evaluate_condition(const RunConfig& config, const Design& design, const Ensemble& ensemble,
                                           std::size_t n_sims, std::uint64_t seed, std::string condition) {
  ConditionSummary out{design, std::nullopt, {}, 0};
  if (is_model_discrimination(config.task)) {
    auto r = recovery_study(design, config.trials, config.prior, n_sims, ensemble, seed);
    out.confusion = r.confusion;
    out.entropy = std::move(r.entropy);
    out.map_ties = r.map_ties;
  } else {
    const Model m = task_model(config.task);
    out.entropy = entropy_study(design, config.trials, m, n_sims, default_grid(m), ensemble, seed);
  }
  out.entropy.condition = std::move(condition);
  return out;
}

/// Optimal design against config.validation.baselines Beta(2,2) designs, each
/// with its own ensemble trained under `config`. Baselines split n_sims
/// between them (at least one simulation each).
inline DesignComparison compare_designs(const RunConfig& config, const Design& optimal, const Ensemble& optimal_ensemble,
                                        std::size_t n_sims, std::uint64_t seed, const BaselineHook& on_baseline = {},
                                        std::size_t baseline_sims = 0) {
  DesignComparison out;
  out.task = config.task;
  out.n_sims = n_sims;
  out.optimal = evaluate_condition(config, optimal, optimal_ensemble, n_sims, stream_key(seed, {0x0971ULL}), "optimal");
  const std::size_t nb = config.validation.baselines;
  if (nb == 0) return out;
  if (baseline_sims == 0) baseline_sims = std::max<std::size_t>(1, (n_sims + nb - 1) / nb);
  const auto designs = baseline_designs(nb, task_blocks(config.task), config.arms, stream_key(seed, {0xba5eULL}));
  for (std::size_t b = 0; b < nb; ++b) {
    const auto ens = train_at_design(config, designs[b], stream_key(seed, {0xba5eULL, b}));
    if (on_baseline) on_baseline(b, designs[b], ens);
    out.baselines.push_back(evaluate_condition(config, designs[b], ens, baseline_sims, stream_key(seed, {0xba5e5ULL, b}), "baseline"));
  }
  return out;
}

}  // namespace boed

#endif  // BOED_WORKFLOW_HPP
