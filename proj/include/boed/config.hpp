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

// Run configuration and artifact manifests for the command-line tool.
//
// A bare config ({"schema": "boed-run/1"}) resolves to the case-study
// settings of the chosen profile; any key present overrides that default.

#ifndef BOED_CONFIG_HPP
#define BOED_CONFIG_HPP

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boed/bo.hpp"
#include "boed/critic.hpp"
#include "boed/io.hpp"

namespace boed {

inline constexpr std::string_view kRunSchema = "boed-run/1";
inline constexpr std::string_view kManifestSchema = "boed-manifest/1";

enum class RunProfile { desk, paper };

inline std::string_view to_string(RunProfile p) { return p == RunProfile::desk ? "desk" : "paper"; }

inline RunProfile profile_from_string(std::string_view s) {
  if (s == "desk") return RunProfile::desk;
  if (s == "paper") return RunProfile::paper;
  throw std::invalid_argument("unknown profile: " + std::string(s));
}

struct ValidationConfig {
  std::size_t n_sims = 1000;
  std::size_t baselines = 10;
};

struct ExploreConfig {
  std::size_t restarts = 20;
  std::size_t resolution = 41;
};

struct RunConfig {
  Task task = Task::md;
  RunProfile profile = RunProfile::desk;
  std::size_t trials = kCaseStudyTrials;
  std::size_t arms = kCaseStudyArms;
  NetworkArchitecture architecture;
  TrainingConfig training;
  BOConfig bo;
  std::size_t ensemble_size = 5;
  ValidationConfig validation;
  ExploreConfig explore;
  PriorSpec prior;
  std::uint64_t seed = 0;

  std::size_t design_dimension() const { return task_blocks(task) * arms; }

  /// All stochastic stages key off this one seed.
  void set_seed(std::uint64_t s) {
    seed = s;
    bo.seed = stream_key(s, {0xb0ULL});
  }

  /// Paper profile: 400 BO evaluations of which 80 are initial. Desk
  /// profile: 40 of which 12 are initial, with the desk training preset.
  static RunConfig defaults(Task task, RunProfile profile) {
    RunConfig c;
    c.task = task;
    c.profile = profile;
    c.set_seed(0);
    c.architecture = NetworkArchitecture::for_task(task, static_cast<int>(c.trials));
    c.training = profile == RunProfile::paper ? TrainingConfig::paper(task) : TrainingConfig::desk(task);
    if (profile == RunProfile::desk) {
      c.bo.budget = 40;
      c.bo.initial = 12;
    }
    return c;
  }

  void validate() const {
    training.validate();
    bo.validate();
    if (trials < 1) throw std::invalid_argument("trials must be at least 1");
    if (arms != static_cast<std::size_t>(kCaseStudyArms)) throw std::invalid_argument("the simulators are configured for 3 arms");
    if (architecture.blocks != static_cast<int>(task_blocks(task)) || architecture.block_input != 2 * static_cast<int>(trials) ||
        architecture.variable != (is_model_discrimination(task) ? 3 : static_cast<int>(parameter_count(task_model(task)))))
      throw std::invalid_argument("network architecture does not match the task's blocks, trials or variable width");
    if (ensemble_size < 1) throw std::invalid_argument("ensemble size must be at least 1");
    if (validation.n_sims < 1) throw std::invalid_argument("validation needs at least one simulation");
    if (explore.restarts < 1 || explore.resolution < 2) throw std::invalid_argument("explore needs restarts >= 1, resolution >= 2");
    double total = 0.0;
    for (double p : prior.model_probs) {
      if (!(p >= 0.0)) throw std::invalid_argument("model prior probabilities must be non-negative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("model prior probabilities must sum to 1");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"schema", kRunSchema},
       {"task", std::string(to_string(c.task))},
       {"profile", std::string(to_string(c.profile))},
       {"design_dimension", c.design_dimension()},
       {"trials", c.trials},
       {"arms", c.arms},
       {"architecture", c.architecture},
       {"training", c.training},
       {"bo", {{"budget", c.bo.budget}, {"initial", c.bo.initial}, {"acquisition_starts", c.bo.acquisition_starts}}},
       {"ensemble_size", c.ensemble_size},
       {"validation", {{"n_sims", c.validation.n_sims}, {"baselines", c.validation.baselines}}},
       {"explore", {{"restarts", c.explore.restarts}, {"resolution", c.explore.resolution}}},
       {"prior", {{"model_probs", c.prior.model_probs}}},
       {"seed", c.seed}};
}

/// Resolves a config document. Task and profile come from the document
/// unless overridden; every other key overlays the profile defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j, std::optional<Task> task = std::nullopt,
                                      std::optional<RunProfile> profile = std::nullopt) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  if (j.value("schema", std::string(kRunSchema)) != kRunSchema)
    throw std::invalid_argument("unsupported run config schema: " + j["schema"].dump());
  const Task t = task ? *task : task_from_string(j.value("task", std::string("MD")));
  const RunProfile p = profile ? *profile : profile_from_string(j.value("profile", std::string("desk")));
  RunConfig c = RunConfig::defaults(t, p);
  c.trials = j.value("trials", c.trials);
  c.arms = j.value("arms", c.arms);
  c.architecture = NetworkArchitecture::for_task(t, static_cast<int>(c.trials));
  if (j.contains("architecture")) {
    nlohmann::json a = c.architecture;
    a.update(j["architecture"]);
    c.architecture = a.get<NetworkArchitecture>();
  }
  if (j.contains("training")) from_json(j["training"], c.training);
  if (j.contains("bo")) {
    const auto& b = j["bo"];
    c.bo.budget = b.value("budget", c.bo.budget);
    c.bo.initial = b.value("initial", c.bo.initial);
    c.bo.acquisition_starts = b.value("acquisition_starts", c.bo.acquisition_starts);
  }
  c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
  if (j.contains("validation")) {
    c.validation.n_sims = j["validation"].value("n_sims", c.validation.n_sims);
    c.validation.baselines = j["validation"].value("baselines", c.validation.baselines);
  }
  if (j.contains("explore")) {
    c.explore.restarts = j["explore"].value("restarts", c.explore.restarts);
    c.explore.resolution = j["explore"].value("resolution", c.explore.resolution);
  }
  if (j.contains("prior")) c.prior.model_probs = j["prior"].value("model_probs", c.prior.model_probs);
  c.set_seed(j.value("seed", c.seed));
  if (j.contains("design_dimension") && j["design_dimension"].get<std::size_t>() != c.design_dimension())
    throw std::invalid_argument("design_dimension " + j["design_dimension"].dump() + " does not match task " +
                                std::string(to_string(t)));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Checksums and manifests

inline std::string sha256_hex(std::istream& is) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    if (is.gcount() > 0 && EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount())) != 1)
      throw std::runtime_error("SHA-256 update failed");
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md;
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw std::runtime_error("SHA-256 final failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return sha256_hex(is);
}

inline std::string sha256_string(const std::string& s) {
  std::istringstream is(s);
  return sha256_hex(is);
}

struct Artifact {
  std::string path;  // relative to the output directory, '/' separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Record of one command run. Written once; a second write to the same
/// place is refused.
struct RunManifest {
  std::string command;
  std::optional<Task> task;
  std::map<std::string, std::uint64_t> seeds;
  nlohmann::json config;  // resolved config, or null
  std::vector<std::string> config_paths;
  std::filesystem::path output_dir;
  std::vector<Artifact> artifacts;

  static constexpr const char* kFileName = "manifest.json";

  /// Checksums a file under output_dir; later additions of the same path
  /// replace the earlier entry.
  void add_artifact(const std::filesystem::path& file) {
    const auto rel = std::filesystem::relative(file, output_dir).generic_string();
    if (rel.empty() || rel.starts_with("..")) throw std::invalid_argument("artifact outside the output directory: " + file.string());
    Artifact a{rel, sha256_file(file), std::filesystem::file_size(file)};
    for (auto& existing : artifacts)
      if (existing.path == rel) {
        existing = std::move(a);
        return;
      }
    artifacts.push_back(std::move(a));
  }

  /// Every file under dir (recursively), in path order.
  void add_tree(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add_artifact(f);
  }

  nlohmann::json to_json() const {
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    return {{"schema", kManifestSchema},
            {"command", command},
            {"task", task ? nlohmann::json(std::string(to_string(*task))) : nlohmann::json(nullptr)},
            {"seeds", seeds},
            {"config", config},
            {"config_paths", config_paths},
            {"output_dir", output_dir.generic_string()},
            {"artifacts", arts}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != kManifestSchema) throw std::invalid_argument("not a run manifest");
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    if (!j.at("task").is_null()) m.task = task_from_string(j["task"].get<std::string>());
    m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
    m.config = j.value("config", nlohmann::json());
    m.config_paths = j.value("config_paths", std::vector<std::string>{});
    m.output_dir = j.at("output_dir").get<std::string>();
    for (const auto& a : j.at("artifacts"))
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(), a.at("bytes").get<std::uintmax_t>()});
    return m;
  }

  /// Writes output_dir/manifest.json with exclusive creation; an existing
  /// manifest is never replaced.
  std::filesystem::path write() const {
    const auto path = output_dir / kFileName;
    std::filesystem::create_directories(output_dir);
    std::unique_ptr<std::FILE, decltype(&std::fclose)> f(std::fopen(path.c_str(), "wx"), &std::fclose);
    if (!f) {
      if (std::filesystem::exists(path)) throw std::invalid_argument("manifest already exists: " + path.string());
      throw std::runtime_error("cannot create " + path.string());
    }
    const std::string text = to_json().dump(2) + "\n";
    if (std::fwrite(text.data(), 1, text.size(), f.get()) != text.size()) throw std::runtime_error("write failed: " + path.string());
    return path;
  }

  static RunManifest read(const std::filesystem::path& dir) { return from_json(read_json_file(dir / kFileName)); }

  /// Paths whose checksum or size no longer matches (missing files included).
  std::vector<std::string> verify() const {
    std::vector<std::string> bad;
    for (const auto& a : artifacts) {
      const auto p = output_dir / a.path;
      if (!std::filesystem::is_regular_file(p) || std::filesystem::file_size(p) != a.bytes || sha256_file(p) != a.sha256)
        bad.push_back(a.path);
    }
    return bad;
  }
};

}  // namespace boed

#endif  // BOED_CONFIG_HPP
