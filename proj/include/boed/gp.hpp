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

// Gaussian-process surrogate with an ARD Matern-5/2 kernel, a constant mean
// profiled out by generalised least squares, and Gaussian observation noise.
// Hyperparameters maximise the log marginal likelihood (Ceres L-BFGS, several
// restarts). Predictions return the latent-function mean and variance and
// their gradients with respect to the query point.

#ifndef BOED_GP_HPP
#define BOED_GP_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>
#include <nlohmann/json.hpp>

#include "boed/rng.hpp"

namespace boed {

namespace detail {
inline constexpr double kSqrt5 = 2.2360679774997896964;
}

/// sigma^2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r) for a scaled distance r.
inline double matern52_r(double r, double variance) {
  const double s = detail::kSqrt5 * r;
  return variance * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

inline double matern52(std::span<const double> x, std::span<const double> x2, std::span<const double> lengthscales,
                       double variance) {
  if (x.size() != x2.size() || x.size() != lengthscales.size())
    throw std::invalid_argument("matern52: dimension mismatch");
  if (!(variance > 0.0)) throw std::invalid_argument("matern52: variance must be positive");
  double r2 = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (!(lengthscales[d] > 0.0)) throw std::invalid_argument("matern52: lengthscales must be positive");
    const double z = (x[d] - x2[d]) / lengthscales[d];
    r2 += z * z;
  }
  return matern52_r(std::sqrt(r2), variance);
}

struct GPHyperparameters {
  double signal_variance = 1.0;
  std::vector<double> lengthscales;
  double noise_variance = 1e-4;

  void validate() const {
    if (!(signal_variance > 0.0) || !(noise_variance > 0.0)) throw std::invalid_argument("GP variances must be positive");
    for (double l : lengthscales)
      if (!(l > 0.0)) throw std::invalid_argument("GP lengthscales must be positive");
  }
};

inline void to_json(nlohmann::json& j, const GPHyperparameters& h) {
  j = {{"signal_variance", h.signal_variance}, {"lengthscales", h.lengthscales}, {"noise_variance", h.noise_variance}};
}

inline void from_json(const nlohmann::json& j, GPHyperparameters& h) {
  j.at("signal_variance").get_to(h.signal_variance);
  j.at("lengthscales").get_to(h.lengthscales);
  j.at("noise_variance").get_to(h.noise_variance);
}

struct GPPrediction {
  double mean = 0.0;
  double variance = 0.0;  // latent function, no observation noise
  Eigen::VectorXd mean_gradient;
  Eigen::VectorXd variance_gradient;

  double stddev() const { return std::sqrt(std::max(variance, 0.0)); }
};

class GPSurrogate {
 public:
  static constexpr double kInitialJitter = 1e-6;
  static constexpr int kMaxJitterEscalations = 6;

  GPSurrogate() = default;

  /// Conditions on (X, y) with fixed hyperparameters. Rows of X are inputs.
  GPSurrogate(Eigen::MatrixXd x, Eigen::VectorXd y, GPHyperparameters hyper)
      : x_(std::move(x)), y_(std::move(y)), hyper_(std::move(hyper)) {
    if (x_.rows() != y_.size() || x_.rows() < 1) throw std::invalid_argument("GP needs matching, non-empty inputs and targets");
    if (static_cast<Eigen::Index>(hyper_.lengthscales.size()) != x_.cols())
      throw std::invalid_argument("GP lengthscale count does not match the input dimension");
    hyper_.validate();
    factorise();
  }

  std::size_t dimension() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(x_.rows()); }
  const Eigen::MatrixXd& inputs() const { return x_; }
  const Eigen::VectorXd& targets() const { return y_; }
  const GPHyperparameters& hyperparameters() const { return hyper_; }
  double constant_mean() const { return mean_; }
  double jitter() const { return jitter_; }
  double log_marginal_likelihood() const { return lml_; }

  double kernel(std::span<const double> a, std::span<const double> b) const {
    return matern52(a, b, hyper_.lengthscales, hyper_.signal_variance);
  }

  GPPrediction predict(std::span<const double> x, bool with_gradient = false) const {
    if (x.size() != dimension()) throw std::invalid_argument("GP query has the wrong dimension");
    const Eigen::Index n = x_.rows(), dim = x_.cols();
    Eigen::VectorXd ks(n);
    Eigen::MatrixXd dks;
    if (with_gradient) dks.resize(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      double r2 = 0.0;
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double z = (x[static_cast<std::size_t>(d)] - x_(i, d)) / hyper_.lengthscales[static_cast<std::size_t>(d)];
        r2 += z * z;
      }
      const double r = std::sqrt(r2);
      ks[i] = matern52_r(r, hyper_.signal_variance);
      if (with_gradient) {
        // dk/dx_d = -(5/3) sigma^2 (1 + sqrt5 r) exp(-sqrt5 r) (x_d - x_id) / l_d^2
        const double c = -(5.0 / 3.0) * hyper_.signal_variance * (1.0 + detail::kSqrt5 * r) * std::exp(-detail::kSqrt5 * r);
        for (Eigen::Index d = 0; d < dim; ++d) {
          const double l = hyper_.lengthscales[static_cast<std::size_t>(d)];
          dks(i, d) = c * (x[static_cast<std::size_t>(d)] - x_(i, d)) / (l * l);
        }
      }
    }
    GPPrediction p;
    p.mean = mean_ + ks.dot(alpha_);
    const Eigen::VectorXd w = llt_.solve(ks);
    p.variance = std::max(hyper_.signal_variance - ks.dot(w), 0.0);
    if (with_gradient) {
      p.mean_gradient = dks.transpose() * alpha_;
      p.variance_gradient = -2.0 * dks.transpose() * w;
    }
    return p;
  }

  /// Log marginal likelihood and its gradient with respect to
  /// (log sigma^2, log l_1..log l_D, log noise) at the given hyperparameters.
  /// Returns nullopt when the kernel matrix cannot be factorised.
  static std::optional<std::pair<double, Eigen::VectorXd>> lml_and_gradient(const Eigen::MatrixXd& x,
                                                                            const Eigen::VectorXd& y,
                                                                            const GPHyperparameters& h) {
    const Eigen::Index n = x.rows(), dim = x.cols();
    Eigen::MatrixXd k(n, n);
    std::vector<Eigen::MatrixXd> sq(static_cast<std::size_t>(dim), Eigen::MatrixXd(n, n));
    Eigen::MatrixXd r(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        double r2 = 0.0;
        for (Eigen::Index d = 0; d < dim; ++d) {
          const double z = (x(i, d) - x(j, d)) / h.lengthscales[static_cast<std::size_t>(d)];
          sq[static_cast<std::size_t>(d)](i, j) = sq[static_cast<std::size_t>(d)](j, i) = z * z;
          r2 += z * z;
        }
        r(i, j) = r(j, i) = std::sqrt(r2);
        k(i, j) = k(j, i) = matern52_r(r(i, j), h.signal_variance);
      }
    }
    Eigen::MatrixXd kn = k;
    kn.diagonal().array() += h.noise_variance + kInitialJitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kn);
    if (llt.info() != Eigen::Success) return std::nullopt;

    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd kinv1 = llt.solve(ones);
    const double mean = kinv1.dot(y) / kinv1.dot(ones);
    const Eigen::VectorXd resid = y.array() - mean;
    const Eigen::VectorXd alpha = llt.solve(resid);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double lml = -0.5 * resid.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);

    // d LML / d p = 0.5 tr((alpha alpha^T - K^-1) dK/dp); the profiled mean
    // contributes nothing by stationarity.
    const Eigen::MatrixXd inner = alpha * alpha.transpose() - llt.solve(Eigen::MatrixXd::Identity(n, n));
    Eigen::VectorXd grad(dim + 2);
    grad[0] = 0.5 * (inner.cwiseProduct(k)).sum();
    const Eigen::MatrixXd c =
        ((5.0 / 3.0) * h.signal_variance * (1.0 + detail::kSqrt5 * r.array()) * (-detail::kSqrt5 * r.array()).exp())
            .matrix();
    for (Eigen::Index d = 0; d < dim; ++d)
      grad[1 + d] = 0.5 * (inner.array() * c.array() * sq[static_cast<std::size_t>(d)].array()).sum();
    grad[dim + 1] = 0.5 * inner.trace() * h.noise_variance;
    return std::make_pair(lml, grad);
  }

 private:
  void factorise() {
    const Eigen::Index n = x_.rows();
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const Eigen::VectorXd a = x_.row(i), b = x_.row(j);
        k(i, j) = k(j, i) = kernel({a.data(), dimension()}, {b.data(), dimension()});
      }
    jitter_ = kInitialJitter;
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd kn = k;
      kn.diagonal().array() += hyper_.noise_variance + jitter_;
      llt_.compute(kn);
      if (llt_.info() == Eigen::Success) break;
      if (attempt == kMaxJitterEscalations)
        throw std::runtime_error("GP kernel matrix is not positive definite after jitter escalation");
      jitter_ *= 10.0;
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd kinv1 = llt_.solve(ones);
    mean_ = kinv1.dot(y_) / kinv1.dot(ones);
    const Eigen::VectorXd resid = y_.array() - mean_;
    alpha_ = llt_.solve(resid);
    const double logdet = 2.0 * llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
    lml_ = -0.5 * resid.dot(alpha_) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  }

  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  GPHyperparameters hyper_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double mean_ = 0.0;
  double jitter_ = kInitialJitter;
  double lml_ = 0.0;
};

struct GPFitOptions {
  int restarts = 5;
  std::uint64_t seed = 0;
  int max_iterations = 200;
  double noise_floor = 1e-6;
  std::optional<GPHyperparameters> warm_start;
};

namespace detail {

// Box constraints in log space through a logistic map:
// log p = lo + (hi - lo) sigmoid(z).
struct LogBox {
  std::vector<double> lo, hi;

  double to_log(std::size_t i, double z) const { return lo[i] + (hi[i] - lo[i]) / (1.0 + std::exp(-z)); }
  double dlog_dz(std::size_t i, double z) const {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return (hi[i] - lo[i]) * s * (1.0 - s);
  }
  double to_z(std::size_t i, double log_p) const {
    const double t = std::clamp((log_p - lo[i]) / (hi[i] - lo[i]), 1e-6, 1.0 - 1e-6);
    return std::log(t / (1.0 - t));
  }
};

inline GPHyperparameters unpack(const LogBox& box, const double* z, std::size_t dim) {
  GPHyperparameters h;
  h.signal_variance = std::exp(box.to_log(0, z[0]));
  for (std::size_t d = 0; d < dim; ++d) h.lengthscales.push_back(std::exp(box.to_log(1 + d, z[1 + d])));
  h.noise_variance = std::exp(box.to_log(dim + 1, z[dim + 1]));
  return h;
}

class NegativeLml final : public ceres::FirstOrderFunction {
 public:
  NegativeLml(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LogBox& box) : x_(x), y_(y), box_(box) {}

  bool Evaluate(const double* z, double* cost, double* gradient) const override {
    const auto dim = static_cast<std::size_t>(x_.cols());
    const auto h = unpack(box_, z, dim);
    const auto res = GPSurrogate::lml_and_gradient(x_, y_, h);
    if (!res || !std::isfinite(res->first)) return false;
    *cost = -res->first;
    if (gradient)
      for (int i = 0; i < NumParameters(); ++i)
        gradient[i] = -res->second[i] * box_.dlog_dz(static_cast<std::size_t>(i), z[i]);
    return true;
  }

  int NumParameters() const override { return static_cast<int>(x_.cols()) + 2; }

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::VectorXd& y_;
  const LogBox& box_;
};

}  // namespace detail

/// Maximum-marginal-likelihood GP fit. Bounds scale with the target
/// variance v: signal in [1e-2 v, 1e2 v], noise in [floor, v],
/// lengthscales in [1e-2, 10] (inputs live in the unit cube).
inline GPSurrogate gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GPFitOptions& options = {}) {
  if (x.rows() < 2 || x.rows() != y.size()) throw std::invalid_argument("gp_fit needs at least two points");
  if (!y.allFinite() || !x.allFinite()) throw std::invalid_argument("gp_fit inputs must be finite");
  const auto dim = static_cast<std::size_t>(x.cols());
  const double mu = y.mean();
  const double v = std::max((y.array() - mu).square().sum() / static_cast<double>(y.size()), 1e-10);

  detail::LogBox box;
  box.lo.push_back(std::log(1e-2 * v));
  box.hi.push_back(std::log(1e2 * v));
  for (std::size_t d = 0; d < dim; ++d) {
    box.lo.push_back(std::log(1e-2));
    box.hi.push_back(std::log(10.0));
  }
  box.lo.push_back(std::log(options.noise_floor));
  box.hi.push_back(std::log(std::max(v, 10.0 * options.noise_floor)));

  std::vector<std::vector<double>> starts;
  auto start_from = [&](const GPHyperparameters& h) {
    std::vector<double> z{box.to_z(0, std::log(h.signal_variance))};
    for (std::size_t d = 0; d < dim; ++d) z.push_back(box.to_z(1 + d, std::log(h.lengthscales[d])));
    z.push_back(box.to_z(dim + 1, std::log(h.noise_variance)));
    return z;
  };
  if (options.warm_start && options.warm_start->lengthscales.size() == dim) starts.push_back(start_from(*options.warm_start));
  starts.push_back(start_from({v, std::vector<double>(dim, 0.3), std::max(1e-2 * v, options.noise_floor)}));
  Stream rng = Stream::keyed(options.seed, {0x69f1ULL});
  while (static_cast<int>(starts.size()) < std::max(options.restarts, 1)) {
    std::vector<double> z(dim + 2);
    for (auto& zi : z) zi = 4.0 * rng.uniform() - 2.0;
    starts.push_back(std::move(z));
  }

  ceres::GradientProblemSolver::Options solver;
  solver.line_search_direction_type = ceres::LBFGS;
  solver.max_num_iterations = options.max_iterations;
  solver.logging_type = ceres::SILENT;
  solver.minimizer_progress_to_stdout = false;

  std::optional<GPHyperparameters> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (auto& z : starts) {
    ceres::GradientProblem problem(new detail::NegativeLml(x, y, box));
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(solver, problem, z.data(), &summary);
    const auto h = detail::unpack(box, z.data(), dim);
    const auto res = GPSurrogate::lml_and_gradient(x, y, h);
    if (res && std::isfinite(res->first) && res->first > best_lml) {
      best_lml = res->first;
      best = h;
    }
  }
  if (!best) throw std::runtime_error("gp_fit: no restart produced a positive-definite kernel matrix");
  return GPSurrogate(x, y, *best);
}

inline GPSurrogate gp_fit(const std::vector<std::vector<double>>& points, const std::vector<double>& values,
                          const GPFitOptions& options = {}) {
  if (points.empty() || points.size() != values.size()) throw std::invalid_argument("gp_fit needs matching points and values");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(points.front().size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != points.front().size()) throw std::invalid_argument("gp_fit points differ in dimension");
    for (std::size_t d = 0; d < points[i].size(); ++d)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = points[i][d];
  }
  return gp_fit(x, Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())), options);
}

// ---------------------------------------------------------------------------
// Expected improvement (maximisation, no exploration offset)

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double expected_improvement(double mean, double stddev, double incumbent) {
  if (!(stddev > 0.0)) return 0.0;
  const double z = (mean - incumbent) / stddev;
  return std::max((mean - incumbent) * normal_cdf(z) + stddev * normal_pdf(z), 0.0);
}

struct AcquisitionValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

inline AcquisitionValue expected_improvement(const GPSurrogate& gp, std::span<const double> x, double incumbent,
                                             bool with_gradient = false) {
  const auto p = gp.predict(x, with_gradient);
  AcquisitionValue out;
  const double s = p.stddev();
  out.value = expected_improvement(p.mean, s, incumbent);
  if (with_gradient) {
    out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(x.size()));
    if (s > 1e-12) {
      const double z = (p.mean - incumbent) / s;
      // dEI = Phi(z) dmu + phi(z) dsigma, dsigma = dvar / (2 sigma)
      out.gradient = normal_cdf(z) * p.mean_gradient + normal_pdf(z) * p.variance_gradient / (2.0 * s);
    }
  }
  return out;
}

}  // namespace boed

#endif  // BOED_GP_HPP
