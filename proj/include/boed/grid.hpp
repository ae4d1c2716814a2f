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

#ifndef BOED_GRID_HPP
#define BOED_GRID_HPP

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boed/bandit.hpp"

namespace boed {

/// One axis of a tensor-product quadrature lattice.
struct GridAxis {
  std::string name;
  std::vector<double> nodes;
  std::vector<double> weights;  // trapezoid weights in parameter units
  std::vector<double> prior;    // marginal prior density at each node
  bool log_encoded = false;     // network sees log(node) instead of node

  std::size_t size() const noexcept { return nodes.size(); }
};

namespace detail {
inline std::vector<double> trapezoid_weights(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> w(n, 0.0);
  if (n < 2) throw std::invalid_argument("a grid axis needs at least two nodes");
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = x[i + 1] - x[i];
    if (!(h > 0.0)) throw std::invalid_argument("grid nodes must be strictly increasing");
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}
}  // namespace detail

/// Evenly spaced axis on [lo, hi] with a constant prior density 1/(hi-lo).
inline GridAxis uniform_axis(std::string name, std::size_t n, double lo = 0.0, double hi = 1.0) {
  GridAxis a;
  a.name = std::move(name);
  for (std::size_t i = 0; i < n; ++i)
    a.nodes.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  a.weights = detail::trapezoid_weights(a.nodes);
  a.prior.assign(n, 1.0 / (hi - lo));
  return a;
}

/// Log-spaced axis on [lo, hi] with the given prior density.
inline GridAxis log_axis(std::string name, std::size_t n, double lo, double hi,
                         const std::function<double(double)>& prior_pdf) {
  GridAxis a;
  a.name = std::move(name);
  a.log_encoded = true;
  const double l0 = std::log(lo), l1 = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    a.nodes.push_back(std::exp(l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(n - 1)));
  a.weights = detail::trapezoid_weights(a.nodes);
  for (double x : a.nodes) a.prior.push_back(prior_pdf(x));
  return a;
}

/// Row-major tensor-product lattice (last axis varies fastest).
class ParameterGrid {
 public:
  ParameterGrid() = default;
  explicit ParameterGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
    if (axes_.empty()) throw std::invalid_argument("a parameter grid needs at least one axis");
    size_ = 1;
    for (const auto& a : axes_) {
      if (a.nodes.size() != a.weights.size() || a.nodes.size() != a.prior.size())
        throw std::invalid_argument("grid axis arrays differ in length");
      size_ *= a.size();
    }
  }

  std::size_t dimension() const noexcept { return axes_.size(); }
  std::size_t size() const noexcept { return size_; }
  const std::vector<GridAxis>& axes() const noexcept { return axes_; }
  const GridAxis& axis(std::size_t i) const { return axes_.at(i); }

  /// Per-axis node indices of flat node i.
  std::vector<std::size_t> index(std::size_t i) const {
    std::vector<std::size_t> idx(axes_.size());
    for (std::size_t a = axes_.size(); a-- > 0;) {
      idx[a] = i % axes_[a].size();
      i /= axes_[a].size();
    }
    return idx;
  }

  std::vector<double> node(std::size_t i) const {
    const auto idx = index(i);
    std::vector<double> x(axes_.size());
    for (std::size_t a = 0; a < axes_.size(); ++a) x[a] = axes_[a].nodes[idx[a]];
    return x;
  }

  double weight(std::size_t i) const {
    const auto idx = index(i);
    double w = 1.0;
    for (std::size_t a = 0; a < axes_.size(); ++a) w *= axes_[a].weights[idx[a]];
    return w;
  }

  double prior(std::size_t i) const {
    const auto idx = index(i);
    double p = 1.0;
    for (std::size_t a = 0; a < axes_.size(); ++a) p *= axes_[a].prior[idx[a]];
    return p;
  }

  std::vector<double> weights() const {
    std::vector<double> w(size_);
    for (std::size_t i = 0; i < size_; ++i) w[i] = weight(i);
    return w;
  }

  std::vector<double> priors() const {
    std::vector<double> p(size_);
    for (std::size_t i = 0; i < size_; ++i) p[i] = prior(i);
    return p;
  }

  /// Network encoding of nodes [first, first+count): one column per node.
  Eigen::MatrixXd encoded(std::size_t first, std::size_t count) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(axes_.size()), static_cast<Eigen::Index>(count));
    for (std::size_t c = 0; c < count; ++c) {
      const auto idx = index(first + c);
      for (std::size_t a = 0; a < axes_.size(); ++a) {
        const double x = axes_[a].nodes[idx[a]];
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = axes_[a].log_encoded ? std::log(x) : x;
      }
    }
    return out;
  }

 private:
  std::vector<GridAxis> axes_;
  std::size_t size_ = 0;
};

/// Quadrature lattice matching a model's prior: 51 nodes per axis for models
/// with up to three parameters, 11 per axis for the five-parameter GLS; the
/// WSLTS temperature uses 51 log-spaced nodes on [0.05, 20].
inline ParameterGrid default_grid(Model model) {
  const std::size_t n = parameter_count(model) <= 3 ? 51 : 11;
  std::vector<GridAxis> axes;
  for (std::size_t i = 0; i < parameter_count(model); ++i) {
    const std::string name = "theta" + std::to_string(i);
    if (model == Model::wslts && i == 2)
      axes.push_back(log_axis(name, 51, 0.05, 20.0, [](double x) { return lognormal_pdf(x); }));
    else
      axes.push_back(uniform_axis(name, n));
  }
  return ParameterGrid(std::move(axes));
}

/// Density values on a grid, normalised so that sum_i w_i p_i = 1.
struct GridPosterior {
  std::vector<double> density;

  double integral(const ParameterGrid& grid) const {
    double s = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) s += grid.weight(i) * density[i];
    return s;
  }

  /// Marginal density along one axis (normalised on that axis).
  std::vector<double> marginal(const ParameterGrid& grid, std::size_t axis) const {
    const auto& ax = grid.axis(axis);
    std::vector<double> m(ax.size(), 0.0);
    for (std::size_t i = 0; i < density.size(); ++i) {
      const auto idx = grid.index(i);
      double w = 1.0;
      for (std::size_t a = 0; a < grid.dimension(); ++a)
        if (a != axis) w *= grid.axis(a).weights[idx[a]];
      m[idx[axis]] += w * density[i];
    }
    return m;
  }

  std::vector<double> mean(const ParameterGrid& grid) const {
    std::vector<double> mu(grid.dimension(), 0.0);
    for (std::size_t i = 0; i < density.size(); ++i) {
      const double w = grid.weight(i) * density[i];
      const auto x = grid.node(i);
      for (std::size_t a = 0; a < x.size(); ++a) mu[a] += w * x[a];
    }
    return mu;
  }
};

}  // namespace boed

#endif  // BOED_GRID_HPP
