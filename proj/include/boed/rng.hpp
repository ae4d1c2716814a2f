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

#ifndef BOED_RNG_HPP
#define BOED_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace boed {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a seed and a list of coordinates into a single stream key.
/// Distinct coordinate tuples give (with overwhelming probability)
/// unrelated keys, so any (seed, sample, block, trial) address owns a
/// private random stream independent of evaluation order.
constexpr std::uint64_t stream_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> coords) noexcept {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  std::uint64_t i = 1;
  for (auto c : coords) {
    h = mix64(h ^ mix64(c + i * 0x632be59bd9b4e019ULL));
    ++i;
  }
  return h;
}

/// Counter-based random stream (SplitMix64 sequence started at a key).
/// Satisfies UniformRandomBitGenerator so the standard distributions work.
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr explicit Stream(std::uint64_t key = 0) noexcept : state_(key) {}

  static constexpr Stream keyed(std::uint64_t seed,
                                std::initializer_list<std::uint64_t> coords) noexcept {
    return Stream(stream_key(seed, coords));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n). n must be positive.
  std::size_t index(std::size_t n) noexcept {
    // Lemire's multiply-shift; bias is below 2^-64 * n and irrelevant here.
    const auto x = static_cast<unsigned __int128>((*this)()) * n;
    return static_cast<std::size_t>(x >> 64);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  double normal() { return std::normal_distribution<double>{0.0, 1.0}(*this); }

  double gamma(double shape) { return std::gamma_distribution<double>{shape, 1.0}(*this); }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  /// Uniform choice from a non-empty list.
  template <class T>
  const T& pick(std::span<const T> items) noexcept {
    return items[index(items.size())];
  }
  template <class T>
  const T& pick(const std::vector<T>& items) noexcept {
    return items[index(items.size())];
  }

  template <class T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  /// Uniformly random cyclic permutation of 0..n-1 (Sattolo). For n >= 2 no
  /// element maps to itself.
  std::vector<std::size_t> derangement(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i - 1)]);
    return p;
  }

 private:
  std::uint64_t state_;
};

}  // namespace boed

#endif  // BOED_RNG_HPP
