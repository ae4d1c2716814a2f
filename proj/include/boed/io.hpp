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

// JSON conversions for the simulator types and small file helpers shared by
// the service and the command-line tool.

#ifndef BOED_IO_HPP
#define BOED_IO_HPP

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "boed/bandit.hpp"

namespace boed {

inline void to_json(nlohmann::json& j, const Design& d) { j = d.blocks; }

inline void from_json(const nlohmann::json& j, Design& d) {
  d.blocks = j.get<std::vector<std::vector<double>>>();
  d.validate();
}

inline void to_json(nlohmann::json& j, const BlockTrajectory& b) {
  j = nlohmann::json{{"actions", b.actions}, {"rewards", b.rewards}};
}

inline void from_json(const nlohmann::json& j, BlockTrajectory& b) {
  b.actions = j.at("actions").get<std::vector<int>>();
  b.rewards = j.at("rewards").get<std::vector<int>>();
  if (b.actions.size() != b.rewards.size()) throw std::invalid_argument("actions and rewards differ in length");
}

inline void to_json(nlohmann::json& j, const ExperimentData& d) { j = d.blocks; }
inline void from_json(const nlohmann::json& j, ExperimentData& d) { d.blocks = j.get<std::vector<BlockTrajectory>>(); }

inline void to_json(nlohmann::json& j, const Model& m) { j = std::string(to_string(m)); }
inline void from_json(const nlohmann::json& j, Model& m) { m = model_from_string(j.get<std::string>()); }

/// Malformed JSON is the caller's input error: std::invalid_argument.
inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os.flush()) throw std::runtime_error("write failed: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace boed

#endif  // BOED_IO_HPP
