// SPDX-License-Identifier: Apache-2.0
//
// Adam updates, loss bookkeeping and a finite-difference gradient checker.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "a3d/core.hpp"

namespace a3d {

/// Flat gradient aligned one-to-one with the field's parameter order.
template <class S>
using GradientVector = std::vector<S>;

/// Contiguous parameter range sharing one learning rate.
struct ParamGroup {
  std::size_t begin = 0;
  std::size_t end = 0;
  double lr = 1e-3;
};

struct AdamConfig {
  double grid_lr = 1e-2;
  double mlp_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-15;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;  // used where no group covers a parameter
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-15;
  std::vector<ParamGroup> groups;

  AdamState() = default;
  AdamState(std::size_t n, double lr_, double b1 = 0.9, double b2 = 0.99, double eps = 1e-15)
      : first_moment(n, 0.0), second_moment(n, 0.0), lr(lr_), beta1(b1), beta2(b2),
        epsilon(eps) {}

  /// Grid tables [0, grid_count) and MLP weights [grid_count, total) get
  /// separate learning rates.
  static AdamState for_field(std::size_t grid_count, std::size_t total, const AdamConfig& c) {
    AdamState s(total, c.mlp_lr, c.beta1, c.beta2, c.epsilon);
    s.groups = {{0, grid_count, c.grid_lr}, {grid_count, total, c.mlp_lr}};
    return s;
  }
};

/// Bias-corrected Adam step.
template <class S>
void adam_step(std::span<S> params, std::span<const S> grads, AdamState& st) {
  if (params.size() != grads.size() || params.size() != st.first_moment.size() ||
      params.size() != st.second_moment.size())
    throw ConfigError("adam: parameter, gradient and moment lengths differ");
  ++st.step_count;
  const double t = double(st.step_count);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  auto update = [&](std::size_t b, std::size_t e, double lr) {
    for (std::size_t i = b; i < e; ++i) {
      const double g = grads[i];
      double& m = st.first_moment[i];
      double& v = st.second_moment[i];
      m = st.beta1 * m + (1.0 - st.beta1) * g;
      v = st.beta2 * v + (1.0 - st.beta2) * g * g;
      const double mhat = m / c1;
      const double vhat = v / c2;
      params[i] = static_cast<S>(double(params[i]) - lr * mhat / (std::sqrt(vhat) + st.epsilon));
    }
  };
  if (st.groups.empty()) {
    update(0, params.size(), st.lr);
    return;
  }
  std::size_t covered = 0;
  for (const auto& g : st.groups) {
    update(g.begin, std::min(g.end, params.size()), g.lr);
    covered += std::min(g.end, params.size()) - g.begin;
  }
  if (covered != params.size()) throw ConfigError("adam: parameter groups do not cover all params");
}

/// Named scalar loss terms with their weights.
struct LossBreakdown {
  struct Term {
    double value = 0.0;
    double weight = 0.0;
  };
  std::map<std::string, Term> terms;

  void set(const std::string& name, double value, double weight) { terms[name] = {value, weight}; }
  double value(const std::string& name) const {
    auto it = terms.find(name);
    return it == terms.end() ? 0.0 : it->second.value;
  }
  double weight(const std::string& name) const {
    auto it = terms.find(name);
    return it == terms.end() ? 0.0 : it->second.weight;
  }
  double total() const {
    double t = 0.0;
    for (const auto& [_, term] : terms) t += term.weight * term.value;
    return t;
  }
  /// Throws NonFiniteLoss naming the first offending term.
  void check_finite() const {
    for (const auto& [name, term] : terms)
      if (!std::isfinite(term.value)) throw NonFiniteLoss(name, term.value);
  }
};

struct FiniteDiffEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double step = 0.0;
  double relative_error = 0.0;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double max_relative_error = 0.0;
};

/// Central differences of a deterministic loss at the sampled indices. Each
/// index keeps the step (from steps) that agrees best with the analytic value.
/// Relative error is |a - n| / max(|a|, |n|, abs_floor).
inline FiniteDiffReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                          std::vector<double> params,
                                          std::span<const double> analytic,
                                          std::span<const std::size_t> indices,
                                          std::span<const double> steps,
                                          double abs_floor = 1e-10) {
  if (analytic.size() != params.size()) throw ConfigError("finite diff: gradient length mismatch");
  if (steps.empty()) throw ConfigError("finite diff: no step sizes");
  FiniteDiffReport rep;
  for (std::size_t idx : indices) {
    if (idx >= params.size()) throw ConfigError("finite diff: index out of range");
    FiniteDiffEntry best;
    best.relative_error = std::numeric_limits<double>::infinity();
    for (double h : steps) {
      const double orig = params[idx];
      params[idx] = orig + h;
      const double lp = loss(params);
      params[idx] = orig - h;
      const double lm = loss(params);
      params[idx] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(num), abs_floor});
      const double rel = std::abs(a - num) / denom;
      if (rel < best.relative_error) best = {idx, a, num, h, rel};
    }
    rep.max_relative_error = std::max(rep.max_relative_error, best.relative_error);
    rep.entries.push_back(best);
  }
  return rep;
}

}  // namespace a3d
