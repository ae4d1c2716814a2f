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

// The `boed` command line: simulate, train, optimize, validate, explore,
// infer, serve.
//
// Every command except serve writes into a fresh --out directory and finishes
// with manifest.json, which lists each file it produced with its SHA-256.
// A directory that already holds a manifest is refused, so outputs are never
// overwritten. Numeric outputs depend only on the resolved config and seed.
//
// Exit codes: 0 ok, 1 user error (bad flags, config, or input files),
// 2 internal error.

#ifndef BOED_CLI_HPP
#define BOED_CLI_HPP

#include <CLI11.hpp>

#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "boed/analysis.hpp"
#include "boed/bo.hpp"
#include "boed/config.hpp"
#include "boed/critic.hpp"
#include "boed/io.hpp"
#include "boed/study.hpp"
#include "boed/study_http.hpp"
#include "boed/svg.hpp"
#include "boed/workflow.hpp"

namespace boed::cli {

namespace fs = std::filesystem;

class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string profile;  // empty: from the config, else desk
  std::string task;     // empty: from the config, else MD
  bool quiet = false;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline RunConfig load_run_config(const GlobalOptions& g) {
  nlohmann::json j = nlohmann::json::object();
  if (!g.config.empty()) {
    if (!fs::is_regular_file(g.config)) throw UserError("config not found: " + g.config);
    j = read_json_file(g.config);
  }
  std::optional<Task> task;
  std::optional<RunProfile> profile;
  if (!g.task.empty()) task = task_from_string(g.task);
  if (!g.profile.empty()) profile = profile_from_string(g.profile);
  RunConfig c = run_config_from_json(j, task, profile);
  if (g.seed) c.set_seed(*g.seed);
  return c;
}

/// Creates the output directory; refuses one that already has a manifest.
inline fs::path prepare_output(const GlobalOptions& g) {
  if (g.out.empty()) throw UserError("--out is required");
  const fs::path dir = g.out;
  if (fs::exists(dir / RunManifest::kFileName))
    throw UserError(dir.string() + " already holds a manifest; outputs are immutable, choose a new --out");
  fs::create_directories(dir);
  return dir;
}

inline RunManifest start_manifest(const std::string& command, const RunConfig& c, const GlobalOptions& g, const fs::path& dir) {
  RunManifest m;
  m.command = command;
  m.task = c.task;
  m.seeds = {{"seed", c.seed}, {"bo", c.bo.seed}};
  m.config = c;
  if (!g.config.empty()) m.config_paths.push_back(fs::absolute(g.config).lexically_normal().string());
  m.output_dir = dir;
  return m;
}

/// Checksums everything under the output directory and writes the manifest.
inline void finish_manifest(RunManifest& m) {
  m.add_tree(m.output_dir);
  m.write();
}

/// Inline JSON ("[[0,0,0.6],[1,1,0]]"), a design file, or a design.json
/// written by `boed optimize` ({"design": ...}).
inline Design read_design(const std::string& arg) {
  if (arg.empty()) throw UserError("--design is required");
  nlohmann::json j;
  const auto first = arg.find_first_not_of(" \t");
  if (first != std::string::npos && (arg[first] == '[' || arg[first] == '{')) {
    try {
      j = nlohmann::json::parse(arg);
    } catch (const nlohmann::json::parse_error& e) {
      throw UserError(std::string("design is not valid JSON: ") + e.what());
    }
  } else {
    if (!fs::is_regular_file(arg)) throw UserError("design file not found: " + arg);
    j = read_json_file(arg);
  }
  if (j.is_object()) {
    if (!j.contains("design")) throw UserError("design object has no \"design\" key");
    j = j["design"];
  }
  return j.get<Design>();
}

inline void check_design_shape(const Design& d, const RunConfig& c) {
  if (d.block_count() != task_blocks(c.task) || d.arms() != c.arms)
    throw UserError("task " + std::string(to_string(c.task)) + " needs a " + std::to_string(task_blocks(c.task)) + "x" +
                    std::to_string(c.arms) + " design (" + std::to_string(c.design_dimension()) + " dimensions)");
}

inline std::pair<Ensemble, EnsembleInfo> read_ensemble(const std::string& dir) {
  if (dir.empty()) throw UserError("--ensemble is required");
  if (!fs::is_regular_file(fs::path(dir) / "ensemble.json")) throw UserError("missing ensemble: no ensemble.json in " + dir);
  return load_ensemble(dir);
}

/// The run config adapted to a trained ensemble: its task, trials and
/// architecture win over the config file.
inline RunConfig config_for_ensemble(RunConfig c, const GlobalOptions& g, const Ensemble& ens, const EnsembleInfo& info) {
  if (!g.task.empty() && task_from_string(g.task) != info.task)
    throw UserError("--task " + g.task + " does not match the ensemble's task " + std::string(to_string(info.task)));
  if (c.task != info.task) {
    const auto seed = c.seed;
    c = RunConfig::defaults(info.task, c.profile);
    c.set_seed(seed);
  }
  c.trials = info.trials;
  c.architecture = ens.architecture();
  c.validate();
  return c;
}

inline void write_csv(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ostringstream os;
  os.precision(10);
  body(os);
  write_text_file(path, os.str());
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string design;
  std::size_t n = 100;
  std::string model;  // MD only: fix the generating model instead of drawing it
};

inline nlohmann::json simulated_record(std::size_t i, const ModelParams& truth, const Design& d, const ExperimentData& data,
                                       bool md) {
  char id[32];
  std::snprintf(id, sizeof id, "sim%06zu", i);
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t b = 0; b < data.blocks.size(); ++b)
    blocks.push_back({{"phase", md ? "MD" : "PE"},
                      {"design_block", b},
                      {"presented", b + (md ? 0 : study::kMdBlocks)},
                      {"probs", d.blocks[b]},
                      {"actions", data.blocks[b].actions},
                      {"rewards", data.blocks[b].rewards}});
  nlohmann::json r{{"id", id},
                   {"condition", "simulated"},
                   {"truth", {{"model", truth.model}, {"theta", truth.theta}}},
                   {md ? "md_design" : "pe_design", d},
                   {"blocks", blocks}};
  if (!md) r["pe_model"] = truth.model;
  return r;
}

inline int cmd_simulate(const GlobalOptions& g, const SimulateOptions& o, Streams io) {
  const RunConfig c = load_run_config(g);
  const Design d = read_design(o.design);
  check_design_shape(d, c);
  const bool md = is_model_discrimination(c.task);
  std::optional<Model> fixed;
  if (!o.model.empty()) {
    if (!md) throw UserError("--model applies to MD only; PE tasks simulate their own model");
    fixed = model_from_string(o.model);
  }
  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("simulate", c, g, dir);
  manifest.seeds["simulate"] = c.seed;

  std::vector<nlohmann::json> records(o.n);
  parallel_for(o.n, [&](std::size_t i) {
    Stream rng = Stream::keyed(c.seed, {i, kPriorKey});
    const Model m = md ? (fixed ? *fixed : sample_model(c.prior, rng)) : task_model(c.task);
    const auto params = sample_prior(m, rng);
    records[i] = simulated_record(i, params, d, simulate_experiment(params, d, c.trials, c.seed, i), md);
  });
  write_json_file(dir / "dataset.json", {{"schema", "boed-dataset/1"},
                                         {"trials", c.trials},
                                         {"records", records},
                                         {"incomplete", nlohmann::json::array()},
                                         {"errors", nlohmann::json::array()}});
  finish_manifest(manifest);
  if (!g.quiet) io.out << "simulated " << o.n << " participants -> " << (dir / "dataset.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const GlobalOptions& g, const std::string& design_arg, Streams io) {
  const RunConfig c = load_run_config(g);
  const Design d = read_design(design_arg);
  check_design_shape(d, c);
  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("train", c, g, dir);
  const auto seed = stream_key(c.seed, {0x7a1eULL});
  manifest.seeds["ensemble"] = seed;
  const auto ens = train_at_design(c, d, seed);
  save_ensemble(ens, {c.task, d, c.trials}, dir / "ensemble");
  nlohmann::json members = nlohmann::json::array();
  for (const auto& v : ens.validation) members.push_back({{"mi", v.value}, {"std_error", v.std_error}});
  write_json_file(dir / "training.json", {{"task", std::string(to_string(c.task))}, {"design", d}, {"members", members}});
  finish_manifest(manifest);
  if (!g.quiet) io.out << "trained " << ens.size() << " critics -> " << (dir / "ensemble").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// optimize

inline int cmd_optimize(const GlobalOptions& g, Streams io) {
  const RunConfig c = load_run_config(g);
  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("optimize", c, g, dir);
  write_json_file(dir / "config.json", c);

  DesignProblem problem = DesignProblem::for_task(c.task, c.training, c.trials, c.prior);
  problem.architecture = c.architecture;
  problem.arms = c.arms;

  std::ofstream trace_log(dir / "trace.jsonl");
  const auto result = run_boed(problem, c.bo, [&](const BOEvaluation& e) {
    trace_log << to_json(e).dump() << "\n" << std::flush;
    if (!g.quiet)
      io.err << "[" << e.iteration + 1 << "/" << c.bo.budget << "] MI " << e.utility << " +- " << e.std_error
             << (e.initial ? " (initial)" : "") << "\n";
  });
  trace_log.close();

  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : result.state.evaluations()) evals.push_back(to_json(e));
  write_json_file(dir / "trace.json", {{"schema", "boed-trace/1"},
                                       {"task", std::string(to_string(c.task))},
                                       {"dimension", c.design_dimension()},
                                       {"arms", c.arms},
                                       {"bo_seed", c.bo.seed},
                                       {"incumbent", result.state.incumbent_index()},
                                       {"evaluations", evals}});
  const auto& best = result.state.incumbent();
  write_json_file(dir / "design.json", {{"schema", "boed-design/1"},
                                        {"task", std::string(to_string(c.task))},
                                        {"design", result.optimum},
                                        {"flat", best.design},
                                        {"mi", best.utility},
                                        {"mi_std_error", best.std_error},
                                        {"iteration", best.iteration}});
  if (result.surrogate) write_json_file(dir / "gp.json", result.surrogate->hyperparameters());
  fs::create_directories(dir / "critic");
  result.critic.save(dir / "critic" / "incumbent.critic");

  const auto ens_seed = stream_key(c.seed, {0xe45eULL});
  manifest.seeds["ensemble"] = ens_seed;
  const auto ens = train_at_design(c, result.optimum, ens_seed);
  save_ensemble(ens, {c.task, result.optimum, c.trials}, dir / "ensemble");
  finish_manifest(manifest);
  if (!g.quiet) {
    io.out << "optimal " << to_string(c.task) << " design " << nlohmann::json(result.optimum).dump() << " MI " << best.utility
           << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// validate

struct ValidateOptions {
  std::string ensemble;
  std::optional<std::size_t> n_sims;
  std::optional<std::size_t> baselines;
  std::size_t baseline_sims = 0;  // 0 splits n_sims across the baselines
};

inline int cmd_validate(const GlobalOptions& g, const ValidateOptions& o, Streams io) {
  auto [ens, info] = read_ensemble(o.ensemble);
  RunConfig c = config_for_ensemble(load_run_config(g), g, ens, info);
  if (o.n_sims) c.validation.n_sims = *o.n_sims;
  if (o.baselines) c.validation.baselines = *o.baselines;
  if (c.validation.n_sims == 0) throw UserError("--n-sims must be positive");
  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("validate", c, g, dir);
  manifest.seeds["validate"] = stream_key(c.seed, {0x7a11ULL});
  manifest.config_paths.push_back(fs::absolute(o.ensemble).lexically_normal().string());

  const auto cmp = compare_designs(
      c, info.design, ens, c.validation.n_sims, manifest.seeds["validate"],
      [&](std::size_t b, const Design& d, const Ensemble& e) {
        char name[16];
        std::snprintf(name, sizeof name, "b%02zu", b);
        save_ensemble(e, {c.task, d, c.trials}, dir / "baselines" / name);
        if (!g.quiet) io.err << "baseline " << b + 1 << "/" << c.validation.baselines << " trained\n";
      },
      o.baseline_sims);

  write_json_file(dir / "report.json", cmp.to_json());
  const bool md = is_model_discrimination(c.task);
  const std::string kind = md ? "Shannon entropy (nats)" : "differential entropy (nats)";
  write_csv(dir / "entropy_optimal.csv", [&](std::ostream& os) { cmp.optimal.entropy.write_csv(os); });
  std::vector<svg::Series> series{{"optimal", cmp.optimal.entropy.values}};
  double lo = *std::min_element(cmp.optimal.entropy.values.begin(), cmp.optimal.entropy.values.end());
  double hi = *std::max_element(cmp.optimal.entropy.values.begin(), cmp.optimal.entropy.values.end());
  if (!cmp.baselines.empty()) {
    const auto pooled = cmp.pooled_baseline_entropy();
    write_csv(dir / "entropy_baseline.csv", [&](std::ostream& os) { pooled.write_csv(os); });
    series.push_back({"baseline", pooled.values});
    lo = std::min(lo, *std::min_element(pooled.values.begin(), pooled.values.end()));
    hi = std::max(hi, *std::max_element(pooled.values.begin(), pooled.values.end()));
  }
  if (md) {
    lo = 0.0;
    hi = std::log(3.0);
  } else if (!(hi > lo)) {
    hi = lo + 1.0;
  }
  write_text_file(dir / "entropy.svg", svg::histograms(std::string(to_string(c.task)) + " posterior entropy", kind, series, lo, hi));

  if (md) {
    const std::vector<std::string> names{"WSLTS", "AEG", "GLS"};
    auto plot = [&](const ConfusionMatrix& m, const std::string& stem, const std::string& title) {
      write_csv(dir / (stem + ".csv"), [&](std::ostream& os) { m.write_csv(os); });
      const auto p = m.normalized();
      std::vector<std::vector<double>> rows;
      for (const auto& r : p) rows.emplace_back(r.begin(), r.end());
      write_text_file(dir / (stem + ".svg"), svg::heatmap(title, names, names, rows, "true model", "inferred (MAP) model"));
    };
    plot(*cmp.optimal.confusion, "confusion_optimal", "Model recovery, optimal design");
    if (!cmp.baselines.empty()) plot(cmp.pooled_baseline_confusion(), "confusion_baseline", "Model recovery, baseline designs");
  }
  finish_manifest(manifest);

  if (!g.quiet) {
    const auto j = cmp.to_json();
    io.out << "optimal mean entropy " << j["optimal"]["mean_entropy"].get<double>();
    if (j.contains("baseline_mean_entropy")) io.out << ", baseline " << j["baseline_mean_entropy"].get<double>();
    io.out << "\n";
    if (md) {
      io.out << "optimal mean diagonal " << cmp.optimal.confusion->mean_diagonal();
      if (j.contains("baseline_mean_diagonal")) io.out << ", baseline " << j["baseline_mean_diagonal"].get<double>();
      io.out << "\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer

/// Blocks of one phase in design order; throws UserError on schema problems.
inline ExperimentData record_data(const nlohmann::json& record, const std::string& phase, std::size_t blocks,
                                  std::size_t trials, std::size_t arms) {
  if (!record.is_object() || !record.contains("blocks") || !record["blocks"].is_array())
    throw UserError("schema mismatch: record without a blocks array");
  std::vector<std::pair<std::size_t, BlockTrajectory>> found;
  for (const auto& b : record["blocks"]) {
    if (b.value("phase", "") != phase) continue;
    BlockTrajectory t = b.get<BlockTrajectory>();
    if (t.actions.size() != trials) throw UserError("schema mismatch: block length differs from the ensemble's trials");
    for (std::size_t k = 0; k < trials; ++k)
      if (t.actions[k] < 1 || static_cast<std::size_t>(t.actions[k]) > arms || (t.rewards[k] != 0 && t.rewards[k] != 1))
        throw UserError("schema mismatch: actions must be 1..K and rewards 0/1");
    found.emplace_back(b.at("design_block").get<std::size_t>(), std::move(t));
  }
  if (found.size() != blocks)
    throw UserError("schema mismatch: record " + record.value("id", std::string("?")) + " has " + std::to_string(found.size()) + " " +
                    phase + " blocks, the ensemble expects " + std::to_string(blocks));
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  ExperimentData data;
  for (std::size_t i = 0; i < found.size(); ++i) {
    if (found[i].first != i) throw UserError("schema mismatch: design_block indices must be 0..n-1");
    data.blocks.push_back(std::move(found[i].second));
  }
  return data;
}

inline int cmd_infer(const GlobalOptions& g, const std::string& dataset_path, const std::string& ensemble_dir, Streams io) {
  if (dataset_path.empty()) throw UserError("--dataset is required");
  if (!fs::is_regular_file(dataset_path)) throw UserError("dataset not found: " + dataset_path);
  auto [ens, info] = read_ensemble(ensemble_dir);
  const RunConfig c = config_for_ensemble(load_run_config(g), g, ens, info);
  const auto dataset = read_json_file(dataset_path);
  if (!dataset.is_object() || dataset.value("schema", "") != "boed-dataset/1" || !dataset.contains("records") ||
      !dataset["records"].is_array())
    throw UserError("schema mismatch: expected a boed-dataset/1 document with a records array");
  if (dataset.contains("trials") && dataset["trials"].get<std::size_t>() != info.trials)
    throw UserError("schema mismatch: dataset has " + dataset["trials"].dump() + " trials per block, the ensemble " +
                    std::to_string(info.trials));

  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("infer", c, g, dir);
  manifest.config_paths.push_back(fs::absolute(dataset_path).lexically_normal().string());
  manifest.config_paths.push_back(fs::absolute(ensemble_dir).lexically_normal().string());

  const bool md = is_model_discrimination(info.task);
  const std::size_t arms = info.design.arms();
  const auto& records = dataset["records"];
  const std::size_t n = records.size();
  std::vector<ExperimentData> data(n);
  std::vector<bool> skip(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (!md && records[i].contains("pe_model") && !records[i]["pe_model"].is_null() &&
        model_from_string(records[i]["pe_model"].get<std::string>()) != task_model(info.task)) {
      skip[i] = true;  // another model's parameter-estimation data
      continue;
    }
    data[i] = record_data(records[i], md ? "MD" : "PE", task_blocks(info.task), info.trials, arms);
  }

  std::optional<ParameterGrid> grid;
  if (!md) grid = default_grid(task_model(info.task));
  std::vector<nlohmann::json> rows(n);
  parallel_for(n, [&](std::size_t i) {
    nlohmann::json row{{"id", records[i].value("id", std::to_string(i))}};
    if (skip[i]) {
      row["status"] = "skipped";
      row["reason"] = "pe_model differs from the ensemble's model";
    } else if (md) {
      const auto post = posterior_models(ens, data[i], arms, c.prior);
      Stream tie = Stream::keyed(c.seed, {i, 0x7135ULL});
      row["status"] = "ok";
      row["probs"] = {{"WSLTS", post.probs[0]}, {"AEG", post.probs[1]}, {"GLS", post.probs[2]}};
      row["map"] = map_model(post.probs, tie);
      row["entropy"] = shannon_entropy(post.probs);
    } else {
      const auto post = posterior_density(ens, data[i], arms, *grid);
      const auto corr = posterior_correlations(post, *grid);
      nlohmann::json r = nlohmann::json::array();
      for (Eigen::Index a = 0; a < corr.r.rows(); ++a) {
        std::vector<double> rowv(static_cast<std::size_t>(corr.r.cols()));
        for (Eigen::Index b = 0; b < corr.r.cols(); ++b) rowv[static_cast<std::size_t>(b)] = corr.r(a, b);
        r.push_back(rowv);
      }
      row["status"] = "ok";
      row["mean"] = post.mean(*grid);
      row["entropy"] = differential_entropy(post, *grid);
      row["correlations"] = r;
      row["degenerate"] = corr.degenerate;
    }
    rows[i] = std::move(row);
  });

  write_json_file(dir / "posteriors.json", {{"schema", "boed-posteriors/1"},
                                            {"task", std::string(to_string(info.task))},
                                            {"records", rows}});
  const std::size_t dim = md ? 0 : parameter_count(task_model(info.task));
  write_csv(dir / "posteriors.csv", [&](std::ostream& os) {
    if (md) {
      os << "id,status,p_WSLTS,p_AEG,p_GLS,map,entropy\n";
    } else {
      os << "id,status";
      for (std::size_t a = 0; a < dim; ++a) os << ",mean_theta" << a;
      os << ",entropy\n";
    }
    for (const auto& r : rows) {
      os << r["id"].get<std::string>() << "," << r["status"].get<std::string>();
      if (r["status"] != "ok") {
        os << std::string(md ? 5 : dim + 1, ',') << "\n";
        continue;
      }
      if (md)
        os << "," << r["probs"]["WSLTS"].get<double>() << "," << r["probs"]["AEG"].get<double>() << ","
           << r["probs"]["GLS"].get<double>() << "," << r["map"].get<std::string>();
      else
        for (double m : r["mean"]) os << "," << m;
      os << "," << r["entropy"].get<double>() << "\n";
    }
  });
  finish_manifest(manifest);
  if (!g.quiet) io.out << "inferred " << n << " records -> " << (dir / "posteriors.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// explore

struct ExploreOptions {
  std::string trace;
  std::optional<std::size_t> restarts;
  std::optional<std::size_t> resolution;
  std::string slice;  // e.g. "0,*,*,1,1,0": '*' marks the two free axes
};

struct SliceSpec {
  std::vector<double> fixed;
  std::size_t axis_a = 0, axis_b = 1;
};

inline SliceSpec parse_slice(const std::string& s, std::size_t dim) {
  SliceSpec spec;
  std::vector<std::size_t> free;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok == "*") {
      free.push_back(spec.fixed.size());
      spec.fixed.push_back(0.0);
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty() || !(v >= 0.0 && v <= 1.0))
      throw UserError("--slice entries must be numbers in [0,1] or '*', got '" + tok + "'");
    spec.fixed.push_back(v);
  }
  if (spec.fixed.size() != dim) throw UserError("--slice needs " + std::to_string(dim) + " entries");
  if (free.size() != 2) throw UserError("--slice needs exactly two '*' entries");
  spec.axis_a = free[0];
  spec.axis_b = free[1];
  return spec;
}

inline int cmd_explore(const GlobalOptions& g, const ExploreOptions& o, Streams io) {
  if (o.trace.empty()) throw UserError("--trace is required");
  fs::path trace_path = o.trace;
  if (fs::is_directory(trace_path)) trace_path /= "trace.json";
  if (!fs::is_regular_file(trace_path)) throw UserError("missing trace: " + trace_path.string());
  const auto trace = read_json_file(trace_path);
  if (trace.value("schema", "") != "boed-trace/1") throw UserError("not a BO trace: " + trace_path.string());

  GlobalOptions gt = g;
  if (gt.task.empty()) gt.task = trace.at("task").get<std::string>();
  RunConfig c = load_run_config(gt);
  if (o.restarts) c.explore.restarts = *o.restarts;
  if (o.resolution) c.explore.resolution = *o.resolution;
  if (c.explore.restarts < 1 || c.explore.resolution < 2) throw UserError("need --restarts >= 1 and --resolution >= 2");

  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& e : trace.at("evaluations")) {
    const auto ev = evaluation_from_json(e);
    x.push_back(ev.design);
    y.push_back(ev.utility);
  }
  if (x.size() < 2) throw UserError("trace needs at least two evaluations");
  const std::size_t dim = x.front().size();
  const bool has_slice = !o.slice.empty();
  const SliceSpec user_slice = has_slice ? parse_slice(o.slice, dim) : SliceSpec{};

  const fs::path dir = prepare_output(g);
  auto manifest = start_manifest("explore", c, g, dir);
  manifest.config_paths.push_back(fs::absolute(trace_path).lexically_normal().string());
  GPFitOptions fit;
  fit.seed = stream_key(trace.value("bo_seed", c.bo.seed), {0x9f17ULL, x.size()});
  manifest.seeds["gp"] = fit.seed;
  const auto gp = gp_fit(x, y, fit);
  write_json_file(dir / "gp.json", gp.hyperparameters());

  LocalOptimaOptions lo;
  lo.restarts = c.explore.restarts;
  lo.seed = stream_key(c.seed, {0x0971ULL});
  manifest.seeds["optima"] = lo.seed;
  std::size_t dropped = 0;
  const auto optima = find_local_optima(gp, lo, &dropped);
  write_csv(dir / "optima.csv", [&](std::ostream& os) { write_optima_csv(os, optima); });
  nlohmann::json oj = nlohmann::json::array();
  for (const auto& op : optima)
    oj.push_back({{"rank", op.rank}, {"mi", op.mean}, {"std", op.stddev}, {"design", op.design},
                  {"projected_gradient_norm", op.projected_gradient_norm}});
  write_json_file(dir / "optima.json", {{"restarts", lo.restarts}, {"unconverged", dropped}, {"optima", oj}});

  // Slices through the best optimum for every pair of axes, plus the
  // requested one.
  const std::vector<double> base = optima.empty() ? x[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())]
                                                  : optima.front().design;
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = a + 1; b < dim; ++b) {
      const auto s = slice_utility(gp, base, a, b, c.explore.resolution);
      write_csv(dir / "slices" / ("slice_d" + std::to_string(a + 1) + "_d" + std::to_string(b + 1) + ".csv"),
                [&](std::ostream& os) { s.write_csv(os); });
    }
  if (has_slice) {
    const auto s = slice_utility(gp, user_slice.fixed, user_slice.axis_a, user_slice.axis_b, c.explore.resolution);
    write_csv(dir / "slice.csv", [&](std::ostream& os) { s.write_csv(os); });
  }
  finish_manifest(manifest);
  if (!g.quiet) {
    io.out << optima.size() << " local optima";
    if (!optima.empty()) io.out << "; best MI " << optima.front().mean << " at " << nlohmann::json(optima.front().design).dump();
    io.out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeOptions {
  std::size_t threads = 64;  // one per open keep-alive connection
  bool check = false;  // validate the setup and exit without listening
};

inline std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

inline bool same_design(const Design& a, const Design& b) {
  if (a.block_count() != b.block_count() || a.arms() != b.arms()) return false;
  for (std::size_t i = 0; i < a.block_count(); ++i)
    for (std::size_t k = 0; k < a.arms(); ++k)
      if (std::abs(a.blocks[i][k] - b.blocks[i][k]) > 1e-9) return false;
  return true;
}

/// Environment: BOED_BIND (host:port, default 127.0.0.1:8080), BOED_DATA_DIR
/// (default ./study-data; --out overrides), BOED_ENSEMBLE_DIR (MD ensemble,
/// required), BOED_OPERATOR_TOKEN (export is disabled without it). --config
/// names a study config (boed-study/1).
inline int cmd_serve(const GlobalOptions& g, const ServeOptions& o, Streams io) {
  study::StudyConfig config = study::StudyConfig::defaults();
  if (!g.config.empty()) {
    if (!fs::is_regular_file(g.config)) throw UserError("study config not found: " + g.config);
    config = read_json_file(g.config).get<study::StudyConfig>();
  }
  config.validate();
  const auto [host, port] = study::parse_bind(env_or("BOED_BIND", "127.0.0.1:8080"));
  const std::string data_dir = g.out.empty() ? env_or("BOED_DATA_DIR", "study-data") : g.out;
  const std::string ensemble_dir = env_or("BOED_ENSEMBLE_DIR", "");
  if (ensemble_dir.empty()) throw UserError("BOED_ENSEMBLE_DIR must name the MD ensemble directory");
  auto [ens, info] = read_ensemble(ensemble_dir);
  if (info.task != Task::md) throw UserError("BOED_ENSEMBLE_DIR holds a " + std::string(to_string(info.task)) + " ensemble, not MD");
  if (!same_design(info.design, config.md_design))
    throw UserError("the ensemble was trained at " + nlohmann::json(info.design).dump() + " but the study's MD design is " +
                    nlohmann::json(config.md_design).dump());
  if (info.trials != config.trials) throw UserError("ensemble and study disagree on trials per block");
  if (!config.pe_designs_configured)
    io.err << "warning: PE designs are placeholders; set pe_designs in the study config from `boed optimize` output\n";
  const std::string token = env_or("BOED_OPERATOR_TOKEN", "");
  if (token.empty()) io.err << "warning: BOED_OPERATOR_TOKEN is unset; GET /export is disabled\n";
  if (o.check) {
    io.out << "ok: " << host << ":" << port << ", data in " << data_dir << ", " << ens.size() << " critics\n";
    return 0;
  }

  // Block the signals before any thread starts so that only the waiter
  // below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto shared = std::make_shared<const Ensemble>(std::move(ens));
  study::ServiceOptions opts;
  opts.data_dir = data_dir;
  opts.seed = g.seed.value_or(0);
  study::StudyService service(config, opts, study::ensemble_inference(shared, config.arms(), config.prior));
  for (const auto& e : service.recovery_errors()) io.err << "recovery: " << e << "\n";
  study::StudyHttpServer server(service, token, o.threads);
  const int bound = server.bind(host, port);
  io.out << "listening on " << host << ":" << bound << " (" << service.session_ids().size() << " sessions recovered)\n"
         << std::flush;
  std::atomic<bool> done{false};
  std::thread waiter([&] {
    const timespec tick{0, 200'000'000};
    while (!done) {
      if (sigtimedwait(&signals, nullptr, &tick) > 0) {
        server.stop();
        return;
      }
    }
  });
  server.listen();
  done = true;  // listen() also returns on a server error
  waiter.join();
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Bayesian optimal experimental design for bandit tasks"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON config (boed-run/1; boed-study/1 for serve)");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory (serve: data directory)");
  app.add_option("--profile", g.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--task", g.task, "MD, PE-WSLTS, PE-AEG or PE-GLS")
      ->check(CLI::IsMember({"MD", "PE-WSLTS", "PE-AEG", "PE-GLS"}));
  app.add_flag("--quiet", g.quiet, "only errors");

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "simulate participants at a design");
  simulate->add_option("--design", sim.design, "design JSON, file, or design.json")->required();
  simulate->add_option("-n,--n", sim.n, "participants");
  simulate->add_option("--model", sim.model, "MD only: generating model (default: drawn from the prior)")
      ->check(CLI::IsMember({"WSLTS", "AEG", "GLS"}));

  std::string train_design;
  auto* train = app.add_subcommand("train", "train a critic ensemble at a fixed design");
  train->add_option("--design", train_design, "design JSON, file, or design.json")->required();

  auto* optimize = app.add_subcommand("optimize", "Bayesian optimisation of the design");

  ValidateOptions val;
  auto* validate = app.add_subcommand("validate", "model recovery / entropy against baseline designs");
  validate->add_option("--ensemble", val.ensemble, "ensemble directory")->required();
  validate->add_option("--n-sims", val.n_sims, "simulated participants per condition (default 1000)");
  validate->add_option("--baselines", val.baselines, "Beta(2,2) baseline designs (default 10)");
  validate->add_option("--baseline-sims", val.baseline_sims, "simulations per baseline design (default n-sims / baselines)");

  std::string dataset, infer_ensemble;
  auto* infer = app.add_subcommand("infer", "posteriors for a dataset");
  infer->add_option("--dataset", dataset, "boed-dataset/1 file (export or simulate output)")->required();
  infer->add_option("--ensemble", infer_ensemble, "ensemble directory")->required();

  ExploreOptions exp;
  auto* explore = app.add_subcommand("explore", "slices and local optima of the fitted utility surface");
  explore->add_option("--trace", exp.trace, "trace.json or an optimize output directory")->required();
  explore->add_option("--restarts", exp.restarts, "gradient-ascent restarts (default 20)");
  explore->add_option("--resolution", exp.resolution, "slice lattice nodes per axis (default 41)");
  explore->add_option("--slice", exp.slice, "base point with two free axes, e.g. 0,*,*,1,1,0");

  ServeOptions srv;
  auto* serve = app.add_subcommand("serve", "run the study service");
  serve->add_option("--threads", srv.threads, "HTTP worker threads");
  serve->add_flag("--check", srv.check, "validate the setup and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const Streams io{out, err};
  try {
    if (*simulate) return cmd_simulate(g, sim, io);
    if (*train) return cmd_train(g, train_design, io);
    if (*optimize) return cmd_optimize(g, io);
    if (*validate) return cmd_validate(g, val, io);
    if (*infer) return cmd_infer(g, dataset, infer_ensemble, io);
    if (*explore) return cmd_explore(g, exp, io);
    if (*serve) return cmd_serve(g, srv, io);
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace boed::cli

#endif  // BOED_CLI_HPP
