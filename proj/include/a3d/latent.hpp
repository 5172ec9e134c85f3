// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "a3d/core.hpp"

namespace a3d {

inline constexpr double kSimplexSumTolerance = 1e-6;
inline constexpr double kSimplexNegativeTolerance = 1e-9;

/// A point on the (N-1)-simplex. Vertices select single objects, edges select
/// transitions between two of them.
class LatentCode {
 public:
  LatentCode() = default;

  /// Throws InvalidInput unless the components form a probability vector.
  explicit LatentCode(std::vector<double> u) : u_(std::move(u)) { validate(); }

  static LatentCode vertex(std::size_t n, std::size_t i) {
    if (i >= n) throw InvalidInput("vertex index out of range");
    std::vector<double> u(n, 0.0);
    u[i] = 1.0;
    return LatentCode(std::move(u));
  }

  /// t * e_i + (1 - t) * e_j
  static LatentCode edge(std::size_t n, std::size_t i, std::size_t j, double t) {
    if (i >= n || j >= n) throw InvalidInput("edge index out of range");
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("edge parameter outside [0,1]");
    std::vector<double> u(n, 0.0);
    u[i] += t;
    u[j] += 1.0 - t;
    return LatentCode(std::move(u));
  }

  std::size_t size() const noexcept { return u_.size(); }
  double operator[](std::size_t i) const { return u_[i]; }
  const std::vector<double>& values() const noexcept { return u_; }

  template <class S>
  std::vector<S> as() const {
    return std::vector<S>(u_.begin(), u_.end());
  }

  /// Index of the vertex this code sits on, or -1 if it is not a vertex.
  int vertex_index() const {
    int idx = -1;
    for (std::size_t i = 0; i < u_.size(); ++i) {
      if (u_[i] == 1.0) {
        idx = static_cast<int>(i);
      } else if (u_[i] != 0.0) {
        return -1;
      }
    }
    return idx;
  }

  bool operator==(const LatentCode&) const = default;

  static bool on_simplex(const std::vector<double>& u) {
    if (u.empty()) return false;
    double sum = 0.0;
    for (double v : u) {
      if (!std::isfinite(v) || v < -kSimplexNegativeTolerance) return false;
      sum += v;
    }
    return std::abs(sum - 1.0) <= kSimplexSumTolerance;
  }

 private:
  void validate() const {
    if (u_.empty()) throw InvalidInput("latent code must have at least one component");
    if (!on_simplex(u_)) {
      std::ostringstream os;
      os << "latent code is not on the probability simplex: (";
      for (std::size_t i = 0; i < u_.size(); ++i) os << (i ? ", " : "") << u_[i];
      os << ")";
      throw InvalidInput(os.str());
    }
  }

  std::vector<double> u_;
};

/// Convex combination sum_k w_k * codes[k]; the weights must themselves be a
/// probability vector, so the result stays on the simplex.
inline LatentCode blend(std::span<const LatentCode> codes, std::span<const double> weights) {
  if (codes.empty() || codes.size() != weights.size())
    throw ConfigError("blend: codes and weights differ in length");
  const std::size_t n = codes.front().size();
  std::vector<double> u(n, 0.0);
  for (std::size_t k = 0; k < codes.size(); ++k) {
    if (codes[k].size() != n) throw ConfigError("blend: latent dimensions differ");
    for (std::size_t i = 0; i < n; ++i) u[i] += weights[k] * codes[k][i];
  }
  return LatentCode(std::move(u));
}

}  // namespace a3d
