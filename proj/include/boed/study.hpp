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

// The live two-phase study: sessions are event-sourced. Every mutation is an
// Event appended to the session's JSON-lines log and then folded into the
// in-memory Session by apply(), so replaying a log reproduces the state.
//
// Phases run instructions -> quiz -> MD (2 blocks) -> PE (3 blocks) -> done.
// Rewards are drawn server-side from a stream keyed by (session seed,
// presented block, trial), so the same choices always earn the same rewards.

#ifndef BOED_STUDY_HPP
#define BOED_STUDY_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "boed/bandit.hpp"
#include "boed/critic.hpp"
#include "boed/io.hpp"
#include "boed/rng.hpp"

namespace boed::study {

inline constexpr std::size_t kMdBlocks = 2;
inline constexpr std::size_t kPeBlocks = 3;
inline constexpr std::size_t kBlocks = kMdBlocks + kPeBlocks;
inline constexpr std::size_t kQuizItems = 5;
inline constexpr std::size_t kBaselinePool = 10;

// ---------------------------------------------------------------------------
// Errors

enum class ErrorCode {
  wrong_phase,
  invalid_arm,
  session_not_found,
  inference_unavailable,
  out_of_order,
  invalid_request,
  unauthorized,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::wrong_phase: return "wrong_phase";
    case ErrorCode::invalid_arm: return "invalid_arm";
    case ErrorCode::session_not_found: return "session_not_found";
    case ErrorCode::inference_unavailable: return "inference_unavailable";
    case ErrorCode::out_of_order: return "out_of_order";
    case ErrorCode::invalid_request: return "invalid_request";
    case ErrorCode::unauthorized: return "unauthorized";
  }
  return "invalid_request";
}

class StudyError : public std::runtime_error {
 public:
  StudyError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A log that cannot be folded: gap in sequence numbers, an event that is
/// illegal in the current phase, or a reward that disagrees with the stream.
class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct QuizItem {
  std::string statement;
  bool answer = true;
};

struct StudyConfig {
  Design md_design{{{0.0, 0.0, 0.6}, {1.0, 1.0, 0.0}}};
  std::array<Design, 3> pe_designs;  // indexed by model_slot
  bool pe_designs_configured = false;
  std::vector<Design> baseline_pool;  // kBlocks blocks each: MD uses the first two, PE the rest
  double optimal_fraction = 0.5;
  std::size_t trials = kCaseStudyTrials;
  std::string instructions;
  std::vector<QuizItem> quiz;
  int max_bonus_cents = 100;
  PriorSpec prior;
  double inference_timeout_ms = 2000.0;

  std::size_t arms() const { return md_design.arms(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("study config: " + m); };
    md_design.validate();
    if (md_design.block_count() != kMdBlocks) fail("MD design needs 2 blocks");
    for (const auto& d : pe_designs) {
      d.validate();
      if (d.block_count() != kPeBlocks || d.arms() != arms()) fail("each PE design needs 3 blocks of the MD arm count");
    }
    if (baseline_pool.size() != kBaselinePool) fail("baseline pool needs 10 designs");
    for (const auto& d : baseline_pool) {
      d.validate();
      if (d.block_count() != kBlocks || d.arms() != arms()) fail("baseline designs need 5 blocks of the MD arm count");
    }
    if (!(optimal_fraction >= 0.0 && optimal_fraction <= 1.0)) fail("allocation ratio outside [0,1]");
    if (trials == 0) fail("trials per block must be positive");
    if (quiz.size() != kQuizItems) fail("exactly 5 quiz items are required");
    if (max_bonus_cents < 0) fail("negative bonus");
    if (!(inference_timeout_ms > 0.0)) fail("inference timeout must be positive");
  }

  /// Case-study defaults. PE designs are placeholders (all 0.5) until the
  /// output of `boed optimize` for each PE task is configured.
  static StudyConfig defaults() {
    StudyConfig c;
    const Design flat{std::vector<std::vector<double>>(kPeBlocks, std::vector<double>(3, 0.5))};
    c.pe_designs = {flat, flat, flat};
    Stream rng = Stream::keyed(20260101, {0xba5e});
    for (std::size_t i = 0; i < kBaselinePool; ++i) c.baseline_pool.push_back(sample_baseline_design(kBlocks, 3, rng));
    c.instructions =
        "You will play a game with three slot machines over five rounds of 30 turns. On each turn pick one "
        "machine; it pays out a point or nothing. Each machine has a fixed chance of paying out within a round, "
        "and the chances change between rounds. Your bonus grows with the points you collect.";
    c.quiz = {{"Each round has 30 turns.", true},
              {"The chance that a machine pays out changes from turn to turn within a round.", false},
              {"Your bonus depends on the number of points you collect.", true},
              {"There are five rounds in total.", true},
              {"You must pick the same machine on every turn.", false}};
    return c;
  }
};

inline void to_json(nlohmann::json& j, const StudyConfig& c) {
  nlohmann::json pe;
  for (auto m : kModels) pe[std::string(to_string(m))] = c.pe_designs[model_slot(m)];
  nlohmann::json quiz = nlohmann::json::array();
  for (const auto& q : c.quiz) quiz.push_back({{"statement", q.statement}, {"answer", q.answer}});
  j = nlohmann::json{{"schema", "boed-study/1"},
                     {"md_design", c.md_design},
                     {"pe_designs", pe},
                     {"baseline_pool", c.baseline_pool},
                     {"optimal_fraction", c.optimal_fraction},
                     {"trials", c.trials},
                     {"instructions", c.instructions},
                     {"quiz", quiz},
                     {"max_bonus_cents", c.max_bonus_cents},
                     {"model_prior", c.prior.model_probs},
                     {"inference_timeout_ms", c.inference_timeout_ms}};
}

/// Missing keys keep their defaults().
inline void from_json(const nlohmann::json& j, StudyConfig& c) {
  c = StudyConfig::defaults();
  if (j.contains("md_design")) c.md_design = j["md_design"].get<Design>();
  if (j.contains("pe_designs")) {
    for (auto m : kModels) c.pe_designs[model_slot(m)] = j["pe_designs"].at(std::string(to_string(m))).get<Design>();
    c.pe_designs_configured = true;
  }
  if (j.contains("baseline_pool")) c.baseline_pool = j["baseline_pool"].get<std::vector<Design>>();
  c.optimal_fraction = j.value("optimal_fraction", c.optimal_fraction);
  c.trials = j.value("trials", c.trials);
  c.instructions = j.value("instructions", c.instructions);
  if (j.contains("quiz")) {
    c.quiz.clear();
    for (const auto& q : j["quiz"]) c.quiz.push_back({q.at("statement").get<std::string>(), q.at("answer").get<bool>()});
  }
  c.max_bonus_cents = j.value("max_bonus_cents", c.max_bonus_cents);
  if (j.contains("model_prior")) c.prior.model_probs = j["model_prior"].get<std::array<double, 3>>();
  c.inference_timeout_ms = j.value("inference_timeout_ms", c.inference_timeout_ms);
}

// ---------------------------------------------------------------------------
// Session state and events

enum class Condition { optimal, baseline };
enum class Phase { instructions, quiz, md, pe, done };

inline std::string_view to_string(Condition c) { return c == Condition::optimal ? "optimal" : "baseline"; }
inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::instructions: return "instructions";
    case Phase::quiz: return "quiz";
    case Phase::md: return "MD";
    case Phase::pe: return "PE";
    case Phase::done: return "done";
  }
  return "?";
}

inline Condition condition_from_string(std::string_view s) {
  if (s == "optimal") return Condition::optimal;
  if (s == "baseline") return Condition::baseline;
  throw std::invalid_argument("unknown condition: " + std::string(s));
}

inline Phase phase_from_string(std::string_view s) {
  for (auto p : {Phase::instructions, Phase::quiz, Phase::md, Phase::pe, Phase::done})
    if (to_string(p) == s) return p;
  throw std::invalid_argument("unknown phase: " + std::string(s));
}

struct Session {
  std::string id;
  std::uint64_t seed = 0;
  Condition condition = Condition::optimal;
  Phase phase = Phase::instructions;
  bool paused = false;  // MD finished but the MAP model is not yet known

  std::size_t block = 0;  // presented block, 0-based across both phases
  std::size_t trial = 0;  // trials completed in the presented block

  Design md_design;
  Design pe_design;  // empty until allocated
  std::optional<std::size_t> md_pool_index, pe_pool_index;
  std::vector<std::size_t> md_order, pe_order;  // presentation position -> design block
  std::vector<BlockTrajectory> md_data, pe_data;  // indexed by design block

  std::optional<Model> pe_model;        // model whose PE design was allocated (optimal only)
  std::optional<Model> inferred_model;  // MAP after MD (optimal only)
  std::array<double, 3> posterior{};
  bool map_tie = false;
  double inference_latency_ms = 0.0;

  std::size_t quiz_attempts = 0;
  std::size_t total_reward = 0;
  std::optional<int> last_reward;
  std::optional<int> bonus_cents;
  std::uint64_t seq = 0;  // sequence number of the last applied event
  std::int64_t created_ms = 0, completed_ms = 0;

  friend bool operator==(const Session&, const Session&) = default;

  /// Design block shown at presentation position `block`.
  std::size_t design_block() const { return block < kMdBlocks ? md_order.at(block) : pe_order.at(block - kMdBlocks); }
  const std::vector<double>& current_probs() const {
    return block < kMdBlocks ? md_design.blocks.at(design_block()) : pe_design.blocks.at(design_block());
  }
  std::size_t choices() const {
    std::size_t n = 0;
    for (const auto& b : md_data) n += b.trials();
    for (const auto& b : pe_data) n += b.trials();
    return n;
  }
};

enum class EventKind { created, quiz_attempt, choice, reward, phase_change, inference, completed };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::created: return "created";
    case EventKind::quiz_attempt: return "quiz_attempt";
    case EventKind::choice: return "choice";
    case EventKind::reward: return "reward";
    case EventKind::phase_change: return "phase_change";
    case EventKind::inference: return "inference";
    case EventKind::completed: return "completed";
  }
  return "?";
}

inline EventKind event_kind_from_string(std::string_view s) {
  for (auto k : {EventKind::created, EventKind::quiz_attempt, EventKind::choice, EventKind::reward,
                 EventKind::phase_change, EventKind::inference, EventKind::completed})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown event kind: " + std::string(s));
}

struct Event {
  std::string session;
  std::uint64_t seq = 0;
  std::int64_t time_ms = 0;
  EventKind kind = EventKind::created;
  nlohmann::json payload;

  friend bool operator==(const Event&, const Event&) = default;
};

inline nlohmann::json to_json(const Event& e) {
  return {{"session", e.session}, {"seq", e.seq}, {"time_ms", e.time_ms}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

inline Event event_from_json(const nlohmann::json& j) {
  return {j.at("session").get<std::string>(), j.at("seq").get<std::uint64_t>(), j.at("time_ms").get<std::int64_t>(),
          event_kind_from_string(j.at("kind").get<std::string>()), j.at("payload")};
}

// Stream coordinates under the session seed.
inline constexpr std::uint64_t kAllocationKey = 0xa110c;
inline constexpr std::uint64_t kPoolKey = 0x9001;
inline constexpr std::uint64_t kOrderKey = 0x0bde5;
inline constexpr std::uint64_t kRewardKey = 0x5e3d;
inline constexpr std::uint64_t kTieKey = 0x7135;

/// Reward for choosing `arm` (1-based) at (presented block, trial).
inline int draw_reward(std::uint64_t seed, std::size_t block, std::size_t trial, double p) {
  return Stream::keyed(seed, {kRewardKey, block, trial}).bernoulli(p) ? 1 : 0;
}

inline int bonus_cents(std::size_t rewards, std::size_t max_rewards, int max_bonus_cents) {
  return static_cast<int>(static_cast<std::int64_t>(max_bonus_cents) * static_cast<std::int64_t>(rewards) /
                          static_cast<std::int64_t>(max_rewards));
}

/// Folds one event into the session. Throws ReplayError if the event cannot
/// follow the current state.
inline void apply(Session& s, const Event& e, std::size_t trials) {
  auto fail = [&](const std::string& m) {
    throw ReplayError("session " + e.session + " event " + std::to_string(e.seq) + " (" + std::string(to_string(e.kind)) + "): " + m);
  };
  if (e.seq != s.seq + 1) fail("expected sequence number " + std::to_string(s.seq + 1));
  if (e.kind != EventKind::created && e.session != s.id) fail("belongs to another session");
  const auto& p = e.payload;
  try {
    switch (e.kind) {
      case EventKind::created: {
        if (s.seq != 0) fail("created must be the first event");
        s = Session{};
        s.id = e.session;
        s.seed = p.at("seed").get<std::uint64_t>();
        s.condition = condition_from_string(p.at("condition").get<std::string>());
        s.md_design = p.at("md_design").get<Design>();
        if (!p.at("md_pool_index").is_null()) s.md_pool_index = p["md_pool_index"].get<std::size_t>();
        s.md_order = p.at("md_order").get<std::vector<std::size_t>>();
        s.md_data.assign(kMdBlocks, {});
        s.created_ms = e.time_ms;
        break;
      }
      case EventKind::phase_change: {
        const auto from = phase_from_string(p.at("from").get<std::string>());
        const auto to = phase_from_string(p.at("to").get<std::string>());
        if (from != s.phase || static_cast<int>(to) <= static_cast<int>(from)) fail("illegal transition");
        if (to == Phase::md && !(from == Phase::quiz)) fail("MD must follow the quiz");
        if (to == Phase::pe) {
          if (s.block != kMdBlocks || s.trial != 0) fail("MD blocks are not complete");
          if (s.condition == Condition::optimal && !s.inferred_model) fail("PE allocation before inference");
          s.pe_design = p.at("pe_design").get<Design>();
          s.pe_order = p.at("pe_order").get<std::vector<std::size_t>>();
          if (!p.at("pe_model").is_null()) s.pe_model = p["pe_model"].get<Model>();
          if (!p.at("pe_pool_index").is_null()) s.pe_pool_index = p["pe_pool_index"].get<std::size_t>();
          s.pe_data.assign(kPeBlocks, {});
          s.paused = false;
        }
        if (to == Phase::done && s.block != kBlocks) fail("blocks remain");
        s.phase = to;
        break;
      }
      case EventKind::quiz_attempt: {
        if (s.phase != Phase::quiz) fail("quiz outside the quiz phase");
        ++s.quiz_attempts;
        // A failed attempt sends the participant back to the instructions.
        if (!p.at("passed").get<bool>()) s.phase = Phase::instructions;
        break;
      }
      case EventKind::choice: {
        if (s.phase != Phase::md && s.phase != Phase::pe) fail("choice outside the task phases");
        if (s.paused) fail("choice while paused");
        if (p.at("block").get<std::size_t>() != s.block || p.at("trial").get<std::size_t>() != s.trial) fail("out of order");
        const int arm = p.at("arm").get<int>();
        if (arm < 1 || static_cast<std::size_t>(arm) > s.md_design.arms()) fail("invalid arm");
        auto& data = s.block < kMdBlocks ? s.md_data : s.pe_data;
        data.at(s.design_block()).actions.push_back(arm);
        break;
      }
      case EventKind::reward: {
        auto& data = s.block < kMdBlocks ? s.md_data : s.pe_data;
        auto& traj = data.at(s.design_block());
        if (traj.actions.size() != traj.rewards.size() + 1) fail("reward without a pending choice");
        const int r = p.at("reward").get<int>();
        const int arm = traj.actions.back();
        if (r != draw_reward(s.seed, s.block, s.trial, s.current_probs().at(static_cast<std::size_t>(arm - 1))))
          fail("reward disagrees with the session stream");
        traj.rewards.push_back(r);
        s.total_reward += static_cast<std::size_t>(r);
        s.last_reward = r;
        if (++s.trial == trials) {
          s.trial = 0;
          ++s.block;
        }
        break;
      }
      case EventKind::inference: {
        if (s.condition != Condition::optimal) fail("inference in the baseline condition");
        if (s.phase != Phase::md || s.block != kMdBlocks) fail("inference before MD is complete");
        if (p.at("status").get<std::string>() == "ok") {
          s.posterior = p.at("posterior").get<std::array<double, 3>>();
          s.inferred_model = p.at("model").get<Model>();
          s.map_tie = p.at("tie").get<bool>();
          s.inference_latency_ms = p.at("latency_ms").get<double>();
          s.paused = false;
        } else {
          s.paused = true;
        }
        break;
      }
      case EventKind::completed: {
        if (s.phase != Phase::done) fail("completion before the task ends");
        s.bonus_cents = p.at("bonus_cents").get<int>();
        s.completed_ms = e.time_ms;
        break;
      }
    }
  } catch (const ReplayError&) {
    throw;
  } catch (const std::exception& ex) {
    fail(std::string("malformed payload: ") + ex.what());
  }
  s.seq = e.seq;
}

inline Session replay(std::span<const Event> events, std::size_t trials) {
  Session s;
  for (const auto& e : events) apply(s, e, trials);
  return s;
}

/// Participant-facing view: no designs, seeds or condition labels.
inline nlohmann::json participant_view(const Session& s, std::size_t trials) {
  nlohmann::json j{{"id", s.id},
                   {"phase", to_string(s.phase)},
                   {"paused", s.paused},
                   {"blocks", kBlocks},
                   {"trials_per_block", trials},
                   {"block", std::min(s.block + 1, kBlocks)},
                   {"trial", s.trial + 1},
                   {"total_reward", s.total_reward},
                   {"quiz_attempts", s.quiz_attempts}};
  j["last_reward"] = s.last_reward ? nlohmann::json(*s.last_reward) : nlohmann::json(nullptr);
  if (s.phase == Phase::done) j["trial"] = trials;
  return j;
}

/// Complete operator-side state, used for snapshots and exports.
inline nlohmann::json to_json(const Session& s) {
  auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  return {{"id", s.id},
          {"seed", s.seed},
          {"condition", to_string(s.condition)},
          {"phase", to_string(s.phase)},
          {"paused", s.paused},
          {"block", s.block},
          {"trial", s.trial},
          {"md_design", s.md_design},
          {"pe_design", s.pe_design.blocks.empty() ? nlohmann::json(nullptr) : nlohmann::json(s.pe_design)},
          {"md_pool_index", opt(s.md_pool_index)},
          {"pe_pool_index", opt(s.pe_pool_index)},
          {"md_order", s.md_order},
          {"pe_order", s.pe_order},
          {"md_data", s.md_data},
          {"pe_data", s.pe_data},
          {"pe_model", opt(s.pe_model)},
          {"inferred_model", opt(s.inferred_model)},
          {"posterior", s.posterior},
          {"map_tie", s.map_tie},
          {"inference_latency_ms", s.inference_latency_ms},
          {"quiz_attempts", s.quiz_attempts},
          {"total_reward", s.total_reward},
          {"last_reward", opt(s.last_reward)},
          {"bonus_cents", opt(s.bonus_cents)},
          {"seq", s.seq},
          {"created_ms", s.created_ms},
          {"completed_ms", s.completed_ms}};
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/events/<id>.jsonl (append-only) and
// <dir>/snapshots/<id>.json (rewritten at every phase change).

class EventStore {
 public:
  EventStore() = default;  // in memory only
  explicit EventStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_ / "events");
      std::filesystem::create_directories(dir_ / "snapshots");
    }
  }

  bool persistent() const { return !dir_.empty(); }
  const std::filesystem::path& directory() const { return dir_; }

  std::filesystem::path log_path(const std::string& id) const { return dir_ / "events" / (id + ".jsonl"); }
  std::filesystem::path snapshot_path(const std::string& id) const { return dir_ / "snapshots" / (id + ".json"); }

  /// Appends and flushes. Callers serialise appends per session.
  void append(const std::string& id, std::span<const Event> events) const {
    if (!persistent() || events.empty()) return;
    std::string text;
    for (const auto& e : events) text += to_json(e).dump() + "\n";
    std::ofstream os(log_path(id), std::ios::binary | std::ios::app);
    if (!os || !(os << text) || !os.flush()) throw std::runtime_error("event log write failed for session " + id);
  }

  void snapshot(const Session& s) const {
    if (persistent()) write_json_file(snapshot_path(s.id), to_json(s));
  }

  /// Events of one session; throws ReplayError on an unparsable line.
  std::vector<Event> load(const std::string& id) const {
    std::ifstream is(log_path(id));
    if (!is) throw ReplayError("no event log for session " + id);
    std::vector<Event> out;
    std::string line;
    for (std::size_t n = 1; std::getline(is, line); ++n) {
      if (line.empty()) continue;
      try {
        out.push_back(event_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw ReplayError("session " + id + " line " + std::to_string(n) + ": " + e.what());
      }
    }
    return out;
  }

  /// Session ids with a log on disk, sorted.
  std::vector<std::string> session_ids() const {
    std::vector<std::string> ids;
    if (!persistent()) return ids;
    for (const auto& f : std::filesystem::directory_iterator(dir_ / "events"))
      if (f.path().extension() == ".jsonl") ids.push_back(f.path().stem().string());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Service

/// Posterior over (WSLTS, AEG, GLS) from the two MD blocks in design order.
using ModelInference = std::function<std::array<double, 3>(const ExperimentData&)>;

/// Inference backed by a loaded ensemble, shared read-only across sessions.
inline ModelInference ensemble_inference(std::shared_ptr<const Ensemble> ensemble, std::size_t arms, PriorSpec prior = {}) {
  return [ensemble = std::move(ensemble), arms, prior](const ExperimentData& data) {
    const auto post = posterior_models(*ensemble, data, arms, prior);
    return std::array<double, 3>{post.probs[0], post.probs[1], post.probs[2]};
  };
}

struct ServiceOptions {
  std::filesystem::path data_dir;  // empty keeps everything in memory
  std::uint64_t seed = 0;
  std::function<std::int64_t()> clock;  // epoch milliseconds; defaults to the system clock
};

struct ChoiceOutcome {
  int reward = 0;
  Session state;
};

struct Debrief {
  std::size_t total_reward = 0;
  std::size_t max_reward = 0;
  int bonus_cents = 0;
};

struct ExportResult {
  nlohmann::json dataset;  // {"schema", "records", "incomplete", "errors"}
  std::size_t records = 0;
  std::vector<std::string> errors;
};

/// Analysis-ready record of a completed session: blocks in design order,
/// MD first.
inline nlohmann::json export_record(const Session& s) {
  nlohmann::json blocks = nlohmann::json::array();
  auto add = [&](std::string_view phase, const Design& d, const std::vector<BlockTrajectory>& data,
                 const std::vector<std::size_t>& order, std::size_t offset) {
    for (std::size_t b = 0; b < data.size(); ++b) {
      const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), b) - order.begin());
      blocks.push_back({{"phase", phase}, {"design_block", b}, {"presented", offset + pos}, {"probs", d.blocks[b]},
                        {"actions", data[b].actions}, {"rewards", data[b].rewards}});
    }
  };
  add("MD", s.md_design, s.md_data, s.md_order, 0);
  add("PE", s.pe_design, s.pe_data, s.pe_order, kMdBlocks);
  auto opt = [](const auto& o) { return o ? nlohmann::json(*o) : nlohmann::json(nullptr); };
  nlohmann::json r{{"id", s.id},
                   {"condition", to_string(s.condition)},
                   {"md_design", s.md_design},
                   {"pe_design", s.pe_design},
                   {"md_pool_index", opt(s.md_pool_index)},
                   {"pe_pool_index", opt(s.pe_pool_index)},
                   {"pe_model", opt(s.pe_model)},
                   {"inferred_model", opt(s.inferred_model)},
                   {"blocks", blocks},
                   {"total_reward", s.total_reward},
                   {"bonus_cents", opt(s.bonus_cents)},
                   {"quiz_attempts", s.quiz_attempts},
                   {"created_ms", s.created_ms},
                   {"completed_ms", s.completed_ms}};
  if (s.inferred_model) {
    r["posterior"] = s.posterior;
    r["map_tie"] = s.map_tie;
    r["inference_latency_ms"] = s.inference_latency_ms;
  }
  return r;
}

class StudyService {
 public:
  StudyService(StudyConfig config, ServiceOptions options, ModelInference inference)
      : config_(std::move(config)), options_(std::move(options)), inference_(std::move(inference)), store_(options_.data_dir) {
    config_.validate();
    if (!options_.clock)
      options_.clock = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
      };
    recover();
  }

  const StudyConfig& config() const { return config_; }
  const EventStore& store() const { return store_; }
  /// Logs found on disk at start-up that could not be replayed.
  const std::vector<std::string>& recovery_errors() const { return recovery_errors_; }

  /// Allocates the condition and the MD design; phase = instructions.
  Session create_session() {
    const std::uint64_t n = next_.fetch_add(1);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%07llu", static_cast<unsigned long long>(n));
    const std::string id = buf;
    const std::uint64_t seed = stream_key(options_.seed, {0x5e55, n});

    Stream alloc = Stream::keyed(seed, {kAllocationKey});
    const bool optimal = alloc.uniform() < config_.optimal_fraction;
    nlohmann::json p{{"seed", seed}, {"condition", optimal ? "optimal" : "baseline"}};
    if (optimal) {
      p["md_design"] = config_.md_design;
      p["md_pool_index"] = nullptr;
    } else {
      Stream pool = Stream::keyed(seed, {kPoolKey, 0});
      const auto i = pool.index(kBaselinePool);
      p["md_design"] = phase_blocks(config_.baseline_pool[i], Phase::md);
      p["md_pool_index"] = i;
    }
    p["md_order"] = block_order(seed, 0, kMdBlocks);

    auto slot = std::make_shared<Slot>();
    std::lock_guard lock(slot->mutex);
    {
      std::unique_lock map_lock(map_mutex_);
      sessions_.emplace(id, slot);
    }
    commit(*slot, id, {make(id, 1, EventKind::created, std::move(p))}, true);
    return slot->state;
  }

  Session state(const std::string& id) const {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return slot->state;
  }

  std::vector<Event> events(const std::string& id) const {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    return slot->events;
  }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(map_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, _] : sessions_) ids.push_back(id);
    return ids;
  }

  /// instructions -> quiz.
  Session acknowledge_instructions(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    require_phase(slot->state, Phase::instructions);
    commit(*slot, id, {transition(slot->state, Phase::quiz)}, false);
    return slot->state;
  }

  /// All correct -> MD; otherwise back to the instructions. Unlimited attempts.
  bool submit_quiz(const std::string& id, const std::vector<bool>& answers) {
    if (answers.size() != config_.quiz.size()) throw StudyError(ErrorCode::invalid_request, "the quiz has 5 items");
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    require_phase(slot->state, Phase::quiz);
    bool passed = true;
    for (std::size_t i = 0; i < answers.size(); ++i) passed = passed && answers[i] == config_.quiz[i].answer;
    std::vector<Event> evs{make(id, slot->state.seq + 1, EventKind::quiz_attempt, {{"answers", answers}, {"passed", passed}})};
    if (passed) {
      Session after = slot->state;
      apply(after, evs.back(), config_.trials);
      evs.push_back(transition(after, Phase::md));
    }
    commit(*slot, id, std::move(evs), passed);
    return passed;
  }

  /// Records a choice and its reward. `block`/`trial` (1-based, as shown to
  /// the participant) guard against duplicated or reordered submissions.
  ChoiceOutcome submit_choice(const std::string& id, int arm, std::optional<std::size_t> block = std::nullopt,
                              std::optional<std::size_t> trial = std::nullopt) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    Session& s = slot->state;
    if (s.phase != Phase::md && s.phase != Phase::pe)
      throw StudyError(ErrorCode::wrong_phase, "session " + id + " is in phase " + std::string(to_string(s.phase)));
    if (s.paused) throw StudyError(ErrorCode::inference_unavailable, "session " + id + " is waiting for model inference");
    if (arm < 1 || static_cast<std::size_t>(arm) > config_.arms())
      throw StudyError(ErrorCode::invalid_arm, "arm must be in 1.." + std::to_string(config_.arms()));
    if ((block && *block != s.block + 1) || (trial && *trial != s.trial + 1))
      throw StudyError(ErrorCode::out_of_order, "expected block " + std::to_string(s.block + 1) + " trial " + std::to_string(s.trial + 1));

    const int reward = draw_reward(s.seed, s.block, s.trial, s.current_probs()[static_cast<std::size_t>(arm - 1)]);
    std::vector<Event> evs{make(id, s.seq + 1, EventKind::choice, {{"block", s.block}, {"trial", s.trial}, {"arm", arm}}),
                           make(id, s.seq + 2, EventKind::reward, {{"reward", reward}})};
    Session after = s;
    for (const auto& e : evs) apply(after, e, config_.trials);
    bool snapshot = false;
    if (after.block == kMdBlocks && after.trial == 0 && after.phase == Phase::md) {
      snapshot = true;
      if (after.condition == Condition::optimal) {
        evs.push_back(infer(after));
        apply(after, evs.back(), config_.trials);
        if (!after.paused) evs.push_back(allocate_pe(after));
      } else {
        evs.push_back(allocate_pe(after));
      }
    } else if (after.block == kBlocks) {
      snapshot = true;
      evs.push_back(transition(after, Phase::done));
      evs.push_back(make(id, after.seq + 2, EventKind::completed,
                         {{"bonus_cents", bonus_cents(after.total_reward, kBlocks * config_.trials, config_.max_bonus_cents)}}));
    }
    commit(*slot, id, std::move(evs), snapshot);
    return {reward, slot->state};
  }

  /// Retries inference for a paused session.
  Session resume(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lock(slot->mutex);
    if (!slot->state.paused) throw StudyError(ErrorCode::wrong_phase, "session " + id + " is not paused");
    Session after = slot->state;
    std::vector<Event> evs{infer(after)};
    apply(after, evs.back(), config_.trials);
    if (!after.paused) evs.push_back(allocate_pe(after));
    commit(*slot, id, std::move(evs), true);
    if (slot->state.paused) throw StudyError(ErrorCode::inference_unavailable, "model inference is still unavailable");
    return slot->state;
  }

  Debrief debrief(const std::string& id) const {
    const auto s = state(id);
    if (s.phase != Phase::done || !s.bonus_cents) throw StudyError(ErrorCode::wrong_phase, "session " + id + " is not complete");
    return {s.total_reward, kBlocks * config_.trials, *s.bonus_cents};
  }

  /// Completed sessions ordered by id. Reads the on-disk logs when
  /// persistent, so a damaged log shows up as an error rather than a record.
  ExportResult export_dataset() const {
    ExportResult out;
    nlohmann::json records = nlohmann::json::array(), incomplete = nlohmann::json::array(), errors = nlohmann::json::array();
    for (const auto& id : session_ids()) {
      Session s;
      try {
        auto slot = find(id);
        std::lock_guard lock(slot->mutex);
        s = store_.persistent() ? replay(store_.load(id), config_.trials) : slot->state;
      } catch (const std::exception& e) {
        errors.push_back({{"session", id}, {"error", e.what()}});
        out.errors.push_back(e.what());
        continue;
      }
      if (s.phase == Phase::done && s.bonus_cents)
        records.push_back(export_record(s));
      else
        incomplete.push_back(id);
    }
    for (const auto& e : recovery_errors_) {
      errors.push_back({{"session", nullptr}, {"error", e}});
      out.errors.push_back(e);
    }
    out.records = records.size();
    out.dataset = {{"schema", "boed-dataset/1"},
                   {"trials", config_.trials},
                   {"records", std::move(records)},
                   {"incomplete", std::move(incomplete)},
                   {"errors", std::move(errors)}};
    return out;
  }

 private:
  struct Slot {
    mutable std::mutex mutex;
    Session state;
    std::vector<Event> events;
  };

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::shared_lock lock(map_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw StudyError(ErrorCode::session_not_found, "no session " + id);
    return it->second;
  }

  static void require_phase(const Session& s, Phase p) {
    if (s.phase != p)
      throw StudyError(ErrorCode::wrong_phase, "session " + s.id + " is in phase " + std::string(to_string(s.phase)) +
                                                   ", not " + std::string(to_string(p)));
  }

  Event make(const std::string& id, std::uint64_t seq, EventKind kind, nlohmann::json payload) const {
    return {id, seq, options_.clock(), kind, std::move(payload)};
  }

  Event transition(const Session& s, Phase to, nlohmann::json extra = nlohmann::json::object()) const {
    extra["from"] = to_string(s.phase);
    extra["to"] = to_string(to);
    return make(s.id, s.seq + 1, EventKind::phase_change, std::move(extra));
  }

  static Design phase_blocks(const Design& d, Phase phase) {
    Design out;
    if (phase == Phase::md)
      out.blocks.assign(d.blocks.begin(), d.blocks.begin() + kMdBlocks);
    else
      out.blocks.assign(d.blocks.begin() + kMdBlocks, d.blocks.end());
    return out;
  }

  static std::vector<std::size_t> block_order(std::uint64_t seed, std::uint64_t phase, std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Stream rng = Stream::keyed(seed, {kOrderKey, phase});
    rng.shuffle(order);
    return order;
  }

  /// Inference event for a session whose MD blocks are complete. Fails
  /// closed: an error or a slow answer yields status "unavailable".
  Event infer(const Session& s) const {
    nlohmann::json p;
    const auto start = std::chrono::steady_clock::now();
    try {
      if (!inference_) throw std::runtime_error("no model-discrimination ensemble is loaded");
      const auto probs = inference_(ExperimentData{s.md_data});
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (ms > config_.inference_timeout_ms) throw std::runtime_error("inference took " + std::to_string(ms) + " ms");
      const std::vector<double> pv(probs.begin(), probs.end());
      const auto best = detail::argmax_set(pv);
      Stream tie = Stream::keyed(s.seed, {kTieKey, s.seq});
      const auto pick = best.size() == 1 ? best.front() : best[tie.index(best.size())];
      p = {{"status", "ok"}, {"posterior", probs}, {"model", kModels[pick]}, {"tie", best.size() > 1}, {"latency_ms", ms}};
    } catch (const std::exception& e) {
      p = {{"status", "unavailable"}, {"error", e.what()}};
    }
    return make(s.id, s.seq + 1, EventKind::inference, std::move(p));
  }

  Event allocate_pe(const Session& s) const {
    nlohmann::json p;
    if (s.condition == Condition::optimal) {
      p["pe_design"] = config_.pe_designs[model_slot(*s.inferred_model)];
      p["pe_model"] = *s.inferred_model;
      p["pe_pool_index"] = nullptr;
    } else {
      // Baseline participants are re-drawn from the pool for the PE phase.
      Stream pool = Stream::keyed(s.seed, {kPoolKey, 1});
      const auto i = pool.index(kBaselinePool);
      p["pe_design"] = phase_blocks(config_.baseline_pool[i], Phase::pe);
      p["pe_model"] = nullptr;
      p["pe_pool_index"] = i;
    }
    p["pe_order"] = block_order(s.seed, 1, kPeBlocks);
    return transition(s, Phase::pe, std::move(p));
  }

  /// Validates by folding into a copy, persists, then publishes. The caller
  /// holds the slot mutex, which orders events within the session.
  void commit(Slot& slot, const std::string& id, std::vector<Event> evs, bool snapshot) {
    Session next = slot.state;
    for (const auto& e : evs) apply(next, e, config_.trials);
    store_.append(id, evs);
    slot.state = std::move(next);
    slot.events.insert(slot.events.end(), std::make_move_iterator(evs.begin()), std::make_move_iterator(evs.end()));
    if (snapshot) store_.snapshot(slot.state);
  }

  /// Rebuilds sessions from the logs on disk.
  void recover() {
    std::uint64_t next = 1;
    for (const auto& id : store_.session_ids()) {
      try {
        auto evs = store_.load(id);
        auto slot = std::make_shared<Slot>();
        slot->state = replay(evs, config_.trials);
        slot->events = std::move(evs);
        sessions_.emplace(id, std::move(slot));
      } catch (const std::exception& e) {
        recovery_errors_.push_back(e.what());
      }
      if (id.size() > 1 && id[0] == 's') next = std::max<std::uint64_t>(next, std::stoull(id.substr(1)) + 1);
    }
    next_ = next;
  }

  StudyConfig config_;
  ServiceOptions options_;
  ModelInference inference_;
  EventStore store_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::atomic<std::uint64_t> next_{1};
  std::vector<std::string> recovery_errors_;
};

}  // namespace boed::study

#endif  // BOED_STUDY_HPP
