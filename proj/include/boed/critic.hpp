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

// Block-structured critic T(v, y) trained on simulated (v, y) pairs by
// maximising the NWJ lower bound on mutual information
//
//   U = E_joint[T(v, y)] - E_marginal[exp(T(v, y) - 1)],
//
// and the amortised posterior it implies, p(v | y) = p(v) exp(T(v, y) - 1).
//
// Each experimental block is reduced by its own sub-network to a small
// vector of learned summary statistics; the head sees all summaries
// concatenated with the encoding of v.

#ifndef BOED_CRITIC_HPP
#define BOED_CRITIC_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "boed/bandit.hpp"
#include "boed/grid.hpp"
#include "boed/nn.hpp"
#include "boed/rng.hpp"

namespace boed {

using nn::Matrix;

// ---------------------------------------------------------------------------
// Tasks

enum class Task { md, pe_wslts, pe_aeg, pe_gls };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::md: return "MD";
    case Task::pe_wslts: return "PE-WSLTS";
    case Task::pe_aeg: return "PE-AEG";
    case Task::pe_gls: return "PE-GLS";
  }
  throw std::invalid_argument("unknown task");
}

inline Task task_from_string(std::string_view s) {
  for (auto t : {Task::md, Task::pe_wslts, Task::pe_aeg, Task::pe_gls})
    if (to_string(t) == s) return t;
  throw std::invalid_argument("unknown task: " + std::string(s));
}

inline bool is_model_discrimination(Task t) { return t == Task::md; }

inline Model task_model(Task t) {
  switch (t) {
    case Task::pe_wslts: return Model::wslts;
    case Task::pe_aeg: return Model::aeg;
    case Task::pe_gls: return Model::gls;
    case Task::md: break;
  }
  throw std::invalid_argument("model discrimination has no single model");
}

inline Task pe_task(Model m) {
  switch (m) {
    case Model::wslts: return Task::pe_wslts;
    case Model::aeg: return Task::pe_aeg;
    case Model::gls: return Task::pe_gls;
  }
  throw std::invalid_argument("unknown model indicator");
}

/// Block count of the case-study design for a task (2 for MD, 3 for PE).
inline std::size_t task_blocks(Task t) { return is_model_discrimination(t) ? 2 : 3; }

// ---------------------------------------------------------------------------
// Architecture

struct NetworkArchitecture {
  int blocks = 2;
  int block_input = 2 * kCaseStudyTrials;
  std::vector<int> block_hidden{64, 32};
  int summary = 6;
  std::vector<int> head_hidden{32, 32};
  int variable = 3;

  int y_width() const { return blocks * block_input; }
  int head_input() const { return blocks * summary + variable; }

  void validate() const {
    if (blocks < 1 || block_input < 1 || summary < 1 || variable < 1)
      throw std::invalid_argument("network widths must be positive");
  }

  /// Case-study architecture: summaries 6 (MD), 8/6/8 (PE WSLTS/AEG/GLS);
  /// head 32-32 for MD, 64-32 for PE.
  static NetworkArchitecture for_task(Task task, int trials = kCaseStudyTrials) {
    NetworkArchitecture a;
    a.blocks = static_cast<int>(task_blocks(task));
    a.block_input = 2 * trials;
    switch (task) {
      case Task::md:
        a.summary = 6;
        a.head_hidden = {32, 32};
        a.variable = 3;
        break;
      case Task::pe_wslts:
      case Task::pe_aeg:
      case Task::pe_gls:
        a.summary = task == Task::pe_aeg ? 6 : 8;
        a.head_hidden = {64, 32};
        a.variable = static_cast<int>(parameter_count(task_model(task)));
        break;
    }
    return a;
  }

  friend bool operator==(const NetworkArchitecture&, const NetworkArchitecture&) = default;
};

inline void to_json(nlohmann::json& j, const NetworkArchitecture& a) {
  j = {{"blocks", a.blocks},         {"block_input", a.block_input}, {"block_hidden", a.block_hidden},
       {"summary", a.summary},       {"head_hidden", a.head_hidden}, {"variable", a.variable}};
}

inline void from_json(const nlohmann::json& j, NetworkArchitecture& a) {
  j.at("blocks").get_to(a.blocks);
  j.at("block_input").get_to(a.block_input);
  j.at("block_hidden").get_to(a.block_hidden);
  j.at("summary").get_to(a.summary);
  j.at("head_hidden").get_to(a.head_hidden);
  j.at("variable").get_to(a.variable);
}

// ---------------------------------------------------------------------------
// Input encoding

/// T action values (a-1)/(K-1) followed by T raw rewards.
inline std::vector<double> encode_block(const BlockTrajectory& block, std::size_t arms) {
  if (block.actions.size() != block.rewards.size())
    throw std::invalid_argument("actions and rewards differ in length");
  if (arms < 2) throw std::invalid_argument("encoding needs at least two arms");
  std::vector<double> out;
  out.reserve(2 * block.trials());
  for (int a : block.actions) out.push_back(static_cast<double>(a - 1) / static_cast<double>(arms - 1));
  for (int r : block.rewards) out.push_back(static_cast<double>(r));
  return out;
}

inline std::vector<double> encode_data(const ExperimentData& data, std::size_t arms) {
  std::vector<double> out;
  for (const auto& b : data.blocks) {
    auto e = encode_block(b, arms);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

inline ExperimentData decode_data(std::span<const double> y, std::size_t blocks, std::size_t trials,
                                  std::size_t arms) {
  if (y.size() != blocks * 2 * trials) throw std::invalid_argument("encoded data has the wrong length");
  ExperimentData data;
  for (std::size_t b = 0; b < blocks; ++b) {
    BlockTrajectory t;
    const auto base = b * 2 * trials;
    for (std::size_t i = 0; i < trials; ++i) {
      t.actions.push_back(static_cast<int>(std::lround(y[base + i] * static_cast<double>(arms - 1))) + 1);
      t.rewards.push_back(static_cast<int>(std::lround(y[base + trials + i])));
    }
    data.blocks.push_back(std::move(t));
  }
  return data;
}

inline std::vector<double> encode_model(Model m) {
  std::vector<double> v(kModels.size(), 0.0);
  v[model_slot(m)] = 1.0;
  return v;
}

/// Raw parameters; the WSLTS temperature enters as its logarithm.
inline std::vector<double> encode_parameters(const ModelParams& p) {
  std::vector<double> v = p.theta;
  if (p.model == Model::wslts) v[2] = std::log(v[2]);
  return v;
}

/// Network input for one sample: encoded data followed by encoded v.
inline std::vector<double> encode_input(std::span<const double> v, const ExperimentData& data, std::size_t arms,
                                        const NetworkArchitecture& arch) {
  if (static_cast<int>(data.blocks.size()) != arch.blocks)
    throw std::invalid_argument("data has " + std::to_string(data.blocks.size()) + " blocks, network expects " +
                                std::to_string(arch.blocks));
  auto y = encode_data(data, arms);
  if (static_cast<int>(y.size()) != arch.y_width())
    throw std::invalid_argument("encoded data length does not match the network input");
  if (static_cast<int>(v.size()) != arch.variable)
    throw std::invalid_argument("encoded variable length does not match the network input");
  y.insert(y.end(), v.begin(), v.end());
  return y;
}

// ---------------------------------------------------------------------------
// Simulated datasets

/// Column i holds sample i.
struct Dataset {
  Matrix y;
  Matrix v;

  std::size_t size() const { return static_cast<std::size_t>(y.cols()); }

  Dataset subset(const std::vector<Eigen::Index>& idx) const { return {y(Eigen::all, idx), v(Eigen::all, idx)}; }
};

/// Writes sample `index` into (y, v).
using SampleGenerator = std::function<void(std::uint64_t index, std::span<double> y, std::span<double> v)>;

inline Dataset simulate_dataset(std::size_t n, int y_width, int v_width, const SampleGenerator& gen) {
  Dataset d{Matrix(y_width, static_cast<Eigen::Index>(n)), Matrix(v_width, static_cast<Eigen::Index>(n))};
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    gen(i, {d.y.col(col).data(), static_cast<std::size_t>(y_width)},
        {d.v.col(col).data(), static_cast<std::size_t>(v_width)});
  }
  return d;
}

inline constexpr std::uint64_t kPriorKey = 0xb0edULL << 48;

/// Model-discrimination samples: m ~ prior, theta ~ p(theta | m), y ~ simulator.
inline SampleGenerator md_generator(Design design, std::size_t trials, PriorSpec prior, std::uint64_t seed) {
  design.validate();
  return [design = std::move(design), trials, prior, seed](std::uint64_t i, std::span<double> y, std::span<double> v) {
    Stream rng = Stream::keyed(seed, {i, kPriorKey});
    const Model m = sample_model(prior, rng);
    const auto params = sample_prior(m, rng);
    const auto e = encode_data(simulate_experiment(params, design, trials, seed, i), design.arms());
    std::copy(e.begin(), e.end(), y.begin());
    const auto onehot = encode_model(m);
    std::copy(onehot.begin(), onehot.end(), v.begin());
  };
}

/// Parameter-estimation samples for one model.
inline SampleGenerator pe_generator(Model model, Design design, std::size_t trials, std::uint64_t seed) {
  design.validate();
  return [model, design = std::move(design), trials, seed](std::uint64_t i, std::span<double> y, std::span<double> v) {
    Stream rng = Stream::keyed(seed, {i, kPriorKey});
    const auto params = sample_prior(model, rng);
    const auto e = encode_data(simulate_experiment(params, design, trials, seed, i), design.arms());
    std::copy(e.begin(), e.end(), y.begin());
    const auto th = encode_parameters(params);
    std::copy(th.begin(), th.end(), v.begin());
  };
}

inline SampleGenerator task_generator(Task task, const Design& design, std::size_t trials, std::uint64_t seed,
                                      const PriorSpec& prior = {}) {
  if (is_model_discrimination(task)) return md_generator(design, trials, prior, seed);
  return pe_generator(task_model(task), design, trials, seed);
}

// ---------------------------------------------------------------------------
// NWJ bound

inline constexpr double kExpClamp = 20.0;

inline double clamped_exp_m1(double t) { return std::exp(std::min(t - 1.0, kExpClamp)); }

struct NwjEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Sample-average NWJ bound from critic scores on joint and marginal pairs.
/// The standard error pairs joint i with marginal i.
inline NwjEstimate nwj_from_scores(std::span<const double> joint, std::span<const double> marginal) {
  if (joint.empty() || marginal.empty()) throw std::invalid_argument("NWJ objective needs non-empty batches");
  double sj = 0.0, sm = 0.0;
  for (double t : joint) sj += t;
  for (double t : marginal) sm += clamped_exp_m1(t);
  NwjEstimate est;
  est.samples = joint.size();
  est.value = sj / static_cast<double>(joint.size()) - sm / static_cast<double>(marginal.size());
  if (joint.size() == marginal.size() && joint.size() > 1) {
    double ss = 0.0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
      const double d = joint[i] - clamped_exp_m1(marginal[i]) - est.value;
      ss += d * d;
    }
    est.std_error = std::sqrt(ss / static_cast<double>(joint.size() - 1) / static_cast<double>(joint.size()));
  }
  return est;
}

// ---------------------------------------------------------------------------
// Critic network

class CriticNetwork {
 public:
  CriticNetwork() = default;

  CriticNetwork(NetworkArchitecture arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
    arch_.validate();
    Stream rng = Stream::keyed(init_seed, {0x1417ULL});
    for (int b = 0; b < arch_.blocks; ++b) {
      std::vector<int> w{arch_.block_input};
      w.insert(w.end(), arch_.block_hidden.begin(), arch_.block_hidden.end());
      w.push_back(arch_.summary);
      blocks_.emplace_back(w, rng);
    }
    std::vector<int> w{arch_.head_input()};
    w.insert(w.end(), arch_.head_hidden.begin(), arch_.head_hidden.end());
    w.push_back(1);
    head_ = nn::Mlp(w, rng);
  }

  const NetworkArchitecture& architecture() const { return arch_; }

  /// Learned summary statistics, (blocks * summary) x n.
  Matrix summaries(const Matrix& y) const {
    check_y(y);
    Matrix s(arch_.blocks * arch_.summary, y.cols());
    for (int b = 0; b < arch_.blocks; ++b)
      s.middleRows(b * arch_.summary, arch_.summary) =
          blocks_[static_cast<std::size_t>(b)].predict(y.middleRows(b * arch_.block_input, arch_.block_input));
    return s;
  }

  /// T(v_i, y_i) for every column i.
  Eigen::RowVectorXd evaluate(const Matrix& y, const Matrix& v) const {
    if (v.rows() != arch_.variable || v.cols() != y.cols())
      throw std::invalid_argument("variable batch does not match the network input");
    Matrix z(arch_.head_input(), y.cols());
    z.topRows(arch_.blocks * arch_.summary) = summaries(y);
    z.bottomRows(arch_.variable) = v;
    return head_.predict(z).row(0);
  }

  /// T(v_j, y) for one data vector y and every candidate column v_j. The
  /// summaries and the y-part of the first head layer are computed once.
  Eigen::RowVectorXd evaluate_candidates(std::span<const double> y, const Matrix& candidates) const {
    if (static_cast<int>(y.size()) != arch_.y_width()) throw std::invalid_argument("data length does not match the network");
    if (candidates.rows() != arch_.variable) throw std::invalid_argument("candidate width does not match the network");
    const Matrix ycol = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
    const Eigen::VectorXd s = summaries(ycol).col(0);
    const auto& first = head_.layers().front();
    const int ns = arch_.blocks * arch_.summary;
    const Eigen::VectorXd offset = first.weight.leftCols(ns) * s + first.bias;
    Matrix h = first.weight.rightCols(arch_.variable) * candidates;
    h.colwise() += offset;
    if (head_.layers().size() > 1) {
      h = h.cwiseMax(0.0);
      return head_.predict_from(1, h).row(0);
    }
    return h.row(0);
  }

  /// Zeroes and fills the parameter gradients of -NWJ on a batch; returns
  /// the batch NWJ value. v_marginal must be decoupled from y.
  double accumulate_gradients(const Matrix& y, const Matrix& v_joint, const Matrix& v_marginal) {
    const Eigen::Index n = y.cols();
    const int ns = arch_.blocks * arch_.summary;
    for (auto* l : parameters()) l->zero_grad();

    // One head pass over [joint | marginal] columns sharing the summaries.
    Matrix z(arch_.head_input(), 2 * n);
    for (int b = 0; b < arch_.blocks; ++b) {
      const Matrix& s =
          blocks_[static_cast<std::size_t>(b)].forward(y.middleRows(b * arch_.block_input, arch_.block_input));
      z.block(b * arch_.summary, 0, arch_.summary, n) = s;
      z.block(b * arch_.summary, n, arch_.summary, n) = s;
    }
    z.block(ns, 0, arch_.variable, n) = v_joint;
    z.block(ns, n, arch_.variable, n) = v_marginal;

    const Matrix t = head_.forward(z);
    Matrix grad(1, 2 * n);
    double joint = 0.0, marginal = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      joint += t(0, i);
      const double tm = t(0, n + i);
      const double e = clamped_exp_m1(tm);
      marginal += e;
      grad(0, i) = -inv_n;
      grad(0, n + i) = (tm - 1.0 < kExpClamp) ? e * inv_n : 0.0;
    }
    const double objective = (joint - marginal) * inv_n;
    if (!std::isfinite(objective)) return objective;

    const Matrix dz = head_.backward(grad);
    for (int b = 0; b < arch_.blocks; ++b) {
      Matrix ds = dz.block(b * arch_.summary, 0, arch_.summary, n) + dz.block(b * arch_.summary, n, arch_.summary, n);
      blocks_[static_cast<std::size_t>(b)].backward(ds);
    }
    return objective;
  }

  /// One Adam step on -NWJ for a batch; returns the batch NWJ value.
  double train_step(const Matrix& y, const Matrix& v_joint, const Matrix& v_marginal, nn::Adam& opt) {
    const double objective = accumulate_gradients(y, v_joint, v_marginal);
    if (std::isfinite(objective)) opt.step(parameters());
    return objective;
  }

  std::vector<nn::Dense*> parameters() {
    std::vector<nn::Dense*> out;
    for (auto& m : blocks_)
      for (auto& l : m.layers()) out.push_back(&l);
    for (auto& l : head_.layers()) out.push_back(&l);
    return out;
  }

  std::vector<const nn::Dense*> parameters() const {
    std::vector<const nn::Dense*> out;
    for (const auto& m : blocks_)
      for (const auto& l : m.layers()) out.push_back(&l);
    for (const auto& l : head_.layers()) out.push_back(&l);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = head_.parameter_count();
    for (const auto& m : blocks_) n += m.parameter_count();
    return n;
  }

  bool all_finite() const {
    for (const auto* l : parameters())
      if (!l->weight.allFinite() || !l->bias.allFinite()) return false;
    return true;
  }

  /// Bitwise weight equality.
  bool same_weights(const CriticNetwork& other) const {
    if (!(arch_ == other.arch_)) return false;
    const auto a = parameters(), b = other.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i]->weight.size() != b[i]->weight.size()) return false;
      if (std::memcmp(a[i]->weight.data(), b[i]->weight.data(), sizeof(double) * a[i]->weight.size()) != 0) return false;
      if (std::memcmp(a[i]->bias.data(), b[i]->bias.data(), sizeof(double) * a[i]->bias.size()) != 0) return false;
    }
    return true;
  }

  // Format: "boed-critic 1\n", one JSON header line, then the raw
  // little-endian doubles of every layer (weights column-major, then bias),
  // block sub-networks first.
  void save(std::ostream& os) const {
    nlohmann::json header{{"format", "boed-critic"}, {"version", 1}, {"architecture", arch_},
                          {"parameters", parameter_count()}};
    os << "boed-critic 1\n" << header.dump() << "\n";
    for (const auto* l : parameters()) {
      os.write(reinterpret_cast<const char*>(l->weight.data()), static_cast<std::streamsize>(sizeof(double) * l->weight.size()));
      os.write(reinterpret_cast<const char*>(l->bias.data()), static_cast<std::streamsize>(sizeof(double) * l->bias.size()));
    }
    if (!os) throw std::runtime_error("failed to write critic network");
  }

  static CriticNetwork load(std::istream& is) {
    std::string magic, header_line;
    std::getline(is, magic);
    if (magic != "boed-critic 1") throw std::runtime_error("not a boed critic file (or unsupported version)");
    std::getline(is, header_line);
    const auto header = nlohmann::json::parse(header_line);
    CriticNetwork net(header.at("architecture").get<NetworkArchitecture>(), 0);
    if (header.at("parameters").get<std::size_t>() != net.parameter_count())
      throw std::runtime_error("critic file parameter count does not match its architecture");
    for (auto* l : net.parameters()) {
      is.read(reinterpret_cast<char*>(l->weight.data()), static_cast<std::streamsize>(sizeof(double) * l->weight.size()));
      is.read(reinterpret_cast<char*>(l->bias.data()), static_cast<std::streamsize>(sizeof(double) * l->bias.size()));
    }
    if (!is) throw std::runtime_error("truncated critic file");
    return net;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    save(os);
  }

  static CriticNetwork load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open critic file " + path.string());
    return load(is);
  }

 private:
  void check_y(const Matrix& y) const {
    if (y.rows() != arch_.y_width()) throw std::invalid_argument("data batch does not match the network input width");
  }

  NetworkArchitecture arch_;
  std::vector<nn::Mlp> blocks_;
  nn::Mlp head_;
};

/// NWJ bound of a critic on (y, v) pairs; v_marginal must be v with its
/// columns permuted so that it is decoupled from y.
inline NwjEstimate nwj_objective(const CriticNetwork& critic, const Matrix& y, const Matrix& v_joint,
                                 const Matrix& v_marginal) {
  if (y.cols() == 0) throw std::invalid_argument("NWJ objective needs non-empty batches");
  const Eigen::RowVectorXd tj = critic.evaluate(y, v_joint);
  const Eigen::RowVectorXd tm = critic.evaluate(y, v_marginal);
  return nwj_from_scores({tj.data(), static_cast<std::size_t>(tj.size())},
                         {tm.data(), static_cast<std::size_t>(tm.size())});
}

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  double plateau_factor = 0.5;
  int plateau_patience = 25;
  int epochs = 200;
  std::size_t sample_budget = 50000;
  std::size_t heldout = 10000;
  std::size_t batch_size = 256;

  void validate() const {
    if (!(learning_rate > 0.0) || weight_decay < 0.0) throw std::invalid_argument("learning rate must be positive");
    if (epochs < 1) throw std::invalid_argument("at least one epoch is required");
    if (heldout == 0 || heldout >= sample_budget) throw std::invalid_argument("held-out size must be in (0, sample budget)");
    if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
  }

  /// Case-study settings: 200/400/300/300 epochs, weight decay 1e-3
  /// (1e-4 for WSLTS parameter estimation), 50,000 samples with 10,000 held out.
  static TrainingConfig paper(Task task) {
    TrainingConfig c;
    switch (task) {
      case Task::md: c.epochs = 200; break;
      case Task::pe_wslts: c.epochs = 400; c.weight_decay = 1e-4; break;
      case Task::pe_aeg: c.epochs = 300; break;
      case Task::pe_gls: c.epochs = 300; break;
    }
    return c;
  }

  /// Workstation profile: 5,000 training + 1,000 held-out samples, 100 epochs.
  static TrainingConfig desk(Task task) {
    TrainingConfig c = paper(task);
    c.epochs = 100;
    c.sample_budget = 6000;
    c.heldout = 1000;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"learning_rate", c.learning_rate},   {"weight_decay", c.weight_decay}, {"plateau_factor", c.plateau_factor},
       {"plateau_patience", c.plateau_patience}, {"epochs", c.epochs},          {"sample_budget", c.sample_budget},
       {"heldout", c.heldout},               {"batch_size", c.batch_size}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.epochs = j.value("epochs", c.epochs);
  c.sample_budget = j.value("sample_budget", c.sample_budget);
  c.heldout = j.value("heldout", c.heldout);
  c.batch_size = j.value("batch_size", c.batch_size);
}

struct MIEstimate {
  double value = 0.0;  // nats
  double std_error = 0.0;
  std::size_t train_samples = 0;
  std::size_t heldout_samples = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_objective = 0.0;
  double validation_objective = 0.0;
  double learning_rate = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  MIEstimate validation;
};

inline nlohmann::json to_json(const TrainingReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_objective", e.train_objective},
                      {"validation_objective", e.validation_objective},
                      {"learning_rate", e.learning_rate}});
  return {{"epochs", epochs},
          {"validation_mi", r.validation.value},
          {"validation_mi_std_error", r.validation.std_error},
          {"train_samples", r.validation.train_samples},
          {"heldout_samples", r.validation.heldout_samples}};
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error("critic training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

struct TrainedCritic {
  CriticNetwork network;
  TrainingReport report;
};

inline Matrix permute_columns(const Matrix& v, const std::vector<std::size_t>& perm) {
  Matrix out(v.rows(), v.cols());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = v.col(static_cast<Eigen::Index>(perm[i]));
  return out;
}

/// NWJ estimate on held-out data; the marginal pairs use a derangement of v
/// drawn from `seed`.
inline MIEstimate estimate_mi(const CriticNetwork& critic, const Dataset& heldout, std::uint64_t seed = 0) {
  Stream rng = Stream::keyed(seed, {0x7e57ULL});
  const auto perm = rng.derangement(heldout.size());
  const auto est = nwj_objective(critic, heldout.y, heldout.v, permute_columns(heldout.v, perm));
  return {est.value, est.std_error, 0, heldout.size()};
}

/// Splits a dataset into (train, heldout) by a seeded random permutation.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t heldout, std::uint64_t seed) {
  if (heldout == 0 || heldout >= data.size()) throw std::invalid_argument("held-out size must be in (0, dataset size)");
  std::vector<Eigen::Index> idx(data.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Stream rng = Stream::keyed(seed, {0x5b117ULL});
  rng.shuffle(idx);
  std::vector<Eigen::Index> ho(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(heldout));
  std::vector<Eigen::Index> tr(idx.begin() + static_cast<std::ptrdiff_t>(heldout), idx.end());
  return {data.subset(tr), data.subset(ho)};
}

/// Trains a freshly initialised critic by Adam ascent on the NWJ bound with
/// a plateau scheduler on the validation objective.
inline TrainedCritic train_critic(const NetworkArchitecture& arch, const TrainingConfig& config, const Dataset& train,
                                  const Dataset& heldout, std::uint64_t seed) {
  arch.validate();
  if (train.size() < 2 || heldout.size() < 2) throw std::invalid_argument("training and held-out sets need at least two samples");
  if (train.y.rows() != arch.y_width() || train.v.rows() != arch.variable)
    throw std::invalid_argument("dataset widths do not match the network architecture");

  TrainedCritic out{CriticNetwork(arch, seed), {}};
  nn::Adam opt(config.learning_rate, config.weight_decay);
  nn::PlateauScheduler scheduler(config.plateau_factor, config.plateau_patience);
  const std::size_t n = train.size();
  const std::size_t batch = std::min(config.batch_size, n);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Stream rng = Stream::keyed(seed, {0xe90cULL, static_cast<std::uint64_t>(epoch)});
    rng.shuffle(order);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      if (len < 2) break;
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + len));
      const Matrix y = train.y(Eigen::all, idx);
      const Matrix v = train.v(Eigen::all, idx);
      const Matrix vm = permute_columns(v, rng.derangement(len));
      const double obj = out.network.train_step(y, v, vm, opt);
      if (!std::isfinite(obj)) throw TrainingDiverged(epoch, "non-finite batch objective");
      sum += obj;
      ++batches;
    }
    const auto val = estimate_mi(out.network, heldout, seed);
    if (!std::isfinite(val.value) || !out.network.all_finite())
      throw TrainingDiverged(epoch, "non-finite validation objective or weights");
    out.report.epochs.push_back({epoch, batches ? sum / static_cast<double>(batches) : 0.0, val.value, opt.learning_rate()});
    opt.set_learning_rate(scheduler.step(val.value, opt.learning_rate()));
  }
  out.report.validation = estimate_mi(out.network, heldout, seed);
  out.report.validation.train_samples = n;
  return out;
}

/// Splits `data` with config.heldout samples held out, then trains.
inline TrainedCritic train_critic(const NetworkArchitecture& arch, const TrainingConfig& config, const Dataset& data,
                                  std::uint64_t seed) {
  auto [train, heldout] = split_dataset(data, config.heldout, seed);
  return train_critic(arch, config, train, heldout, seed);
}

// ---------------------------------------------------------------------------
// Ensembles

struct Ensemble {
  std::vector<CriticNetwork> members;
  std::vector<std::uint64_t> seeds;
  std::vector<MIEstimate> validation;

  bool empty() const { return members.empty(); }
  std::size_t size() const { return members.size(); }
  const NetworkArchitecture& architecture() const { return members.front().architecture(); }
};

class EnsembleMemberError : public std::runtime_error {
 public:
  EnsembleMemberError(std::size_t member, const std::string& what)
      : std::runtime_error("ensemble member " + std::to_string(member) + ": " + what), member_(member) {}
  std::size_t member() const noexcept { return member_; }

 private:
  std::size_t member_;
};

inline std::uint64_t member_seed(std::uint64_t seed, std::size_t i) { return stream_key(seed, {0xe45eULL, i}); }

/// Trains n independently initialised critics on the same train/held-out
/// split. Members run on up to hardware_concurrency threads.
inline Ensemble train_ensemble(std::size_t n, const NetworkArchitecture& arch, const TrainingConfig& config,
                               const Dataset& data, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("ensemble size must be at least 1");
  auto [train, heldout] = split_dataset(data, config.heldout, seed);
  Ensemble ens;
  ens.members.resize(n);
  ens.validation.resize(n);
  for (std::size_t i = 0; i < n; ++i) ens.seeds.push_back(member_seed(seed, i));

  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        auto tc = train_critic(arch, config, train, heldout, ens.seeds[i]);
        ens.members[i] = std::move(tc.network);
        ens.validation[i] = tc.report.validation;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw EnsembleMemberError(i, e.what());
    }
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Amortised posteriors

struct DiscretePosterior {
  std::vector<double> probs;

  std::size_t map_index() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// Per-member scores T(v_j, y) -> prior-weighted softmax of T - 1 per
/// member, then the average over members.
inline DiscretePosterior posterior_from_scores(const std::vector<Eigen::RowVectorXd>& member_scores,
                                               std::span<const double> prior) {
  if (member_scores.empty()) throw std::invalid_argument("posterior needs a non-empty ensemble");
  const std::size_t k = prior.size();
  DiscretePosterior post{std::vector<double>(k, 0.0)};
  std::vector<double> logw(k);
  for (const auto& t : member_scores) {
    if (static_cast<std::size_t>(t.size()) != k) throw std::invalid_argument("prior and candidate counts differ");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(t[static_cast<Eigen::Index>(j)])) throw std::runtime_error("non-finite critic output");
      logw[j] = prior[j] > 0.0 ? std::log(prior[j]) + t[static_cast<Eigen::Index>(j)] - 1.0
                               : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, logw[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logw[j] - mx);
    for (std::size_t j = 0; j < k; ++j) post.probs[j] += std::exp(logw[j] - mx) / z;
  }
  for (auto& p : post.probs) p /= static_cast<double>(member_scores.size());
  return post;
}

/// p(v_j | y) over candidate encodings (columns), averaged over ensemble
/// members after per-member normalisation.
inline DiscretePosterior posterior_discrete(std::span<const CriticNetwork> ensemble, std::span<const double> y,
                                            const Matrix& candidates, std::span<const double> prior) {
  if (ensemble.empty()) throw std::invalid_argument("posterior needs a non-empty ensemble");
  if (prior.size() != static_cast<std::size_t>(candidates.cols())) throw std::invalid_argument("prior and candidate counts differ");
  std::vector<Eigen::RowVectorXd> scores;
  for (const auto& net : ensemble) scores.push_back(net.evaluate_candidates(y, candidates));
  return posterior_from_scores(scores, prior);
}

inline Matrix model_candidates() {
  Matrix c = Matrix::Zero(static_cast<Eigen::Index>(kModels.size()), static_cast<Eigen::Index>(kModels.size()));
  c.setIdentity();
  return c;
}

/// Posterior over the three models from behavioural data.
inline DiscretePosterior posterior_models(const Ensemble& ensemble, const ExperimentData& data, std::size_t arms,
                                          const PriorSpec& prior = {}) {
  if (ensemble.empty()) throw std::invalid_argument("posterior needs a non-empty ensemble");
  if (static_cast<int>(data.blocks.size()) != ensemble.architecture().blocks)
    throw std::invalid_argument("data block count does not match the ensemble");
  const auto y = encode_data(data, arms);
  return posterior_discrete(ensemble.members, y, model_candidates(), prior.model_probs);
}

/// Grid posterior p(theta | y) propto p(theta) exp(T(theta, y) - 1),
/// normalised by the grid quadrature, averaged over members.
inline GridPosterior posterior_density(std::span<const CriticNetwork> ensemble, std::span<const double> y,
                                       const ParameterGrid& grid) {
  if (ensemble.empty()) throw std::invalid_argument("posterior needs a non-empty ensemble");
  if (static_cast<int>(grid.dimension()) != ensemble.front().architecture().variable)
    throw std::invalid_argument("grid dimension does not match the model parameter count");
  const std::size_t n = grid.size();
  const auto w = grid.weights();
  const auto prior = grid.priors();
  GridPosterior out{std::vector<double>(n, 0.0)};
  std::vector<double> logq(n);
  constexpr std::size_t kChunk = 8192;
  for (const auto& net : ensemble) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t first = 0; first < n; first += kChunk) {
      const std::size_t count = std::min(kChunk, n - first);
      const Eigen::RowVectorXd t = net.evaluate_candidates(y, grid.encoded(first, count));
      for (std::size_t c = 0; c < count; ++c) {
        const double tc = t[static_cast<Eigen::Index>(c)];
        if (!std::isfinite(tc)) throw std::runtime_error("non-finite critic output");
        const std::size_t i = first + c;
        logq[i] = prior[i] > 0.0 ? std::log(prior[i]) + tc - 1.0 : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, logq[i]);
      }
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += w[i] * std::exp(logq[i] - mx);
    for (std::size_t i = 0; i < n; ++i) out.density[i] += std::exp(logq[i] - mx) / z;
  }
  for (auto& d : out.density) d /= static_cast<double>(ensemble.size());
  return out;
}

inline GridPosterior posterior_density(const Ensemble& ensemble, const ExperimentData& data, std::size_t arms,
                                       const ParameterGrid& grid) {
  if (ensemble.empty()) throw std::invalid_argument("posterior needs a non-empty ensemble");
  if (static_cast<int>(data.blocks.size()) != ensemble.architecture().blocks)
    throw std::invalid_argument("data block count does not match the ensemble");
  const auto y = encode_data(data, arms);
  return posterior_density(ensemble.members, y, grid);
}

// ---------------------------------------------------------------------------
// Ensemble files: <dir>/ensemble.json plus one critic file per member.

struct EnsembleInfo {
  Task task = Task::md;
  Design design;
  std::size_t trials = kCaseStudyTrials;
};

inline void save_ensemble(const Ensemble& ens, const EnsembleInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const std::string file = "member_" + std::to_string(i) + ".critic";
    ens.members[i].save(dir / file);
    nlohmann::json m{{"file", file}, {"seed", ens.seeds.at(i)}};
    if (i < ens.validation.size()) m["validation_mi"] = ens.validation[i].value;
    members.push_back(m);
  }
  nlohmann::json j{{"format", "boed-ensemble"},
                   {"version", 1},
                   {"task", std::string(to_string(info.task))},
                   {"design", info.design.blocks},
                   {"trials", info.trials},
                   {"architecture", ens.architecture()},
                   {"members", members}};
  std::ofstream os(dir / "ensemble.json");
  os << j.dump(2) << "\n";
  if (!os) throw std::runtime_error("failed to write " + (dir / "ensemble.json").string());
}

inline std::pair<Ensemble, EnsembleInfo> load_ensemble(const std::filesystem::path& dir) {
  std::ifstream is(dir / "ensemble.json");
  if (!is) throw std::runtime_error("no ensemble manifest in " + dir.string());
  const auto j = nlohmann::json::parse(is);
  if (j.value("format", "") != "boed-ensemble") throw std::runtime_error("not an ensemble manifest: " + dir.string());
  EnsembleInfo info;
  info.task = task_from_string(j.at("task").get<std::string>());
  info.design.blocks = j.at("design").get<std::vector<std::vector<double>>>();
  info.trials = j.value("trials", std::size_t{kCaseStudyTrials});
  Ensemble ens;
  for (const auto& m : j.at("members")) {
    ens.members.push_back(CriticNetwork::load(dir / m.at("file").get<std::string>()));
    ens.seeds.push_back(m.value("seed", std::uint64_t{0}));
    ens.validation.push_back({m.value("validation_mi", 0.0), 0.0, 0, 0});
  }
  if (ens.empty()) throw std::runtime_error("ensemble in " + dir.string() + " has no members");
  return {std::move(ens), std::move(info)};
}

}  // namespace boed

#endif  // BOED_CRITIC_HPP
