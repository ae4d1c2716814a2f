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

// Small fully-connected ReLU networks with hand-written backpropagation.
// Batches are column-major: one sample per column.

#ifndef BOED_NN_HPP
#define BOED_NN_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "boed/rng.hpp"

namespace boed::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Dense {
  Matrix weight;  // out x in
  Vector bias;    // out
  Matrix grad_weight;
  Vector grad_bias;

  Dense() = default;

  /// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  Dense(Eigen::Index in, Eigen::Index out, Stream& rng)
      : weight(out, in), bias(out), grad_weight(Matrix::Zero(out, in)), grad_bias(Vector::Zero(out)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
    for (Eigen::Index i = 0; i < bias.size(); ++i) bias[i] = (2.0 * rng.uniform() - 1.0) * bound;
  }

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }

  void zero_grad() {
    grad_weight.setZero(weight.rows(), weight.cols());
    grad_bias.setZero(bias.size());
  }
};

/// ReLU on every hidden layer, identity on the last.
class Mlp {
 public:
  Mlp() = default;

  /// widths = {input, hidden..., output}
  Mlp(const std::vector<int>& widths, Stream& rng) {
    if (widths.size() < 2) throw std::invalid_argument("an MLP needs input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      if (widths[i] <= 0 || widths[i + 1] <= 0) throw std::invalid_argument("layer widths must be positive");
      layers_.emplace_back(widths[i], widths[i + 1], rng);
    }
  }

  Eigen::Index input_width() const { return layers_.front().in(); }
  Eigen::Index output_width() const { return layers_.back().out(); }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  /// Forward pass that caches activations for backward().
  const Matrix& forward(const Matrix& x) {
    inputs_.resize(layers_.size());
    pre_.resize(layers_.size());
    const Matrix* cur = &x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      inputs_[l] = *cur;
      pre_[l].noalias() = layers_[l].weight * *cur;
      pre_[l].colwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) {
        activ_ = pre_[l].cwiseMax(0.0);
        cur = &activ_;
      }
    }
    return pre_.back();
  }

  /// Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Matrix backward(const Matrix& grad_out) {
    Matrix g = grad_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) g = (pre_[l].array() > 0.0).select(g, 0.0);
      layers_[l].grad_weight.noalias() += g * inputs_[l].transpose();
      layers_[l].grad_bias += g.rowwise().sum();
      Matrix next = layers_[l].weight.transpose() * g;
      g.swap(next);
    }
    return g;
  }

  /// Stateless forward pass, safe for concurrent use.
  Matrix predict(const Matrix& x) const { return predict_from(0, x); }

  /// Continues a forward pass at `first_layer` with that layer's input `x`.
  Matrix predict_from(std::size_t first_layer, const Matrix& x) const {
    Matrix cur = x;
    for (std::size_t l = first_layer; l < layers_.size(); ++l) {
      Matrix next = layers_[l].weight * cur;
      next.colwise() += layers_[l].bias;
      if (l + 1 < layers_.size()) next = next.cwiseMax(0.0);
      cur.swap(next);
    }
    return cur;
  }

  void zero_grad() {
    for (auto& layer : layers_) layer.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

 private:
  std::vector<Dense> layers_;
  std::vector<Matrix> inputs_;
  std::vector<Matrix> pre_;
  Matrix activ_;
};

/// Adam with L2 weight decay added to the gradient (the PyTorch
/// `weight_decay` convention). Maximisation is the caller's business: pass
/// gradients of the loss to minimise.
class Adam {
 public:
  explicit Adam(double learning_rate = 1e-3, double weight_decay = 0.0, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(const std::vector<Dense*>& layers) {
    if (m_w_.empty()) {
      for (auto* l : layers) {
        m_w_.push_back(Matrix::Zero(l->weight.rows(), l->weight.cols()));
        v_w_.push_back(Matrix::Zero(l->weight.rows(), l->weight.cols()));
        m_b_.push_back(Vector::Zero(l->bias.size()));
        v_b_.push_back(Vector::Zero(l->bias.size()));
      }
    }
    if (m_w_.size() != layers.size()) throw std::logic_error("Adam: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const double step = lr_ / c1;
    const double sqrt_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = *layers[i];
      update(l.weight, l.grad_weight, m_w_[i], v_w_[i], step, sqrt_c2);
      update(l.bias, l.grad_bias, m_b_[i], v_b_[i], step, sqrt_c2);
    }
  }

 private:
  template <class P, class G>
  void update(P& param, const G& grad, P& m, P& v, double step, double sqrt_c2) const {
    P g = grad;
    if (wd_ != 0.0) g += wd_ * param;
    m = b1_ * m + (1.0 - b1_) * g;
    v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
    param.array() -= step * m.array() / (v.array().sqrt() / sqrt_c2 + eps_);
  }

  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_w_, v_w_;
  std::vector<Vector> m_b_, v_b_;
};

/// Halves (by `factor`) the learning rate when the monitored quantity has
/// not improved for more than `patience` epochs. Mode "max", relative
/// threshold 1e-4, no cooldown.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 25, double threshold = 1e-4, double min_lr = 0.0)
      : factor_(factor), patience_(patience), threshold_(threshold), min_lr_(min_lr) {}

  /// Returns the (possibly reduced) learning rate.
  double step(double metric, double lr) {
    const bool improved = !seen_ || metric > best_ + threshold_ * std::abs(best_);
    if (improved) {
      best_ = metric;
      seen_ = true;
      bad_epochs_ = 0;
    } else if (++bad_epochs_ > patience_) {
      bad_epochs_ = 0;
      return std::max(lr * factor_, min_lr_);
    }
    return lr;
  }

 private:
  double factor_;
  int patience_;
  double threshold_;
  double min_lr_;
  double best_ = 0.0;
  bool seen_ = false;
  int bad_epochs_ = 0;
};

}  // namespace boed::nn

#endif  // BOED_NN_HPP
