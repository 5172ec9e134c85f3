// SPDX-License-Identifier: Apache-2.0
//
// Latent-conditioned reflectance field: multiresolution hash encoding of the
// position, concatenated with the latent code, followed by a shallow ReLU MLP
// producing density and albedo.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "a3d/core.hpp"

namespace a3d {

struct HashGridConfig {
  std::uint32_t levels = 16;
  std::uint32_t base_resolution = 8;
  double per_level_scale = 1.447269237440378;
  std::uint32_t features_per_level = 2;
  /// log2 of the table size of every level; coarse levels that fit are dense.
  std::uint32_t table_size_log2 = 15;
  Box3<double> bounds{};

  std::size_t output_dim() const { return std::size_t{levels} * features_per_level; }

  void validate() const {
    if (levels < 1) throw ConfigError("hash grid: levels must be >= 1");
    if (base_resolution < 2) throw ConfigError("hash grid: base_resolution must be >= 2");
    if (!(per_level_scale > 1.0)) throw ConfigError("hash grid: per_level_scale must be > 1");
    if (features_per_level < 1) throw ConfigError("hash grid: features_per_level must be >= 1");
    if (table_size_log2 < 4 || table_size_log2 > 28)
      throw ConfigError("hash grid: table_size_log2 must be in [4, 28]");
    const auto e = bounds.extent();
    if (!(e.x > 0 && e.y > 0 && e.z > 0)) throw ConfigError("hash grid: empty bounds");
  }

  std::uint32_t resolution(std::uint32_t level) const {
    return static_cast<std::uint32_t>(
        std::floor(base_resolution * std::pow(per_level_scale, double(level)) + 1e-9));
  }

  bool operator==(const HashGridConfig& o) const {
    return levels == o.levels && base_resolution == o.base_resolution &&
           per_level_scale == o.per_level_scale && features_per_level == o.features_per_level &&
           table_size_log2 == o.table_size_log2 && bounds.lo == o.bounds.lo &&
           bounds.hi == o.bounds.hi;
  }
};

struct MlpConfig {
  /// 1 is the full method; 2 and 3 are the deeper ablation variants.
  std::uint32_t hidden_layers = 1;
  std::uint32_t width = 64;

  void validate() const {
    if (hidden_layers < 1 || hidden_layers > 3)
      throw ConfigError("mlp: hidden_layers must be 1, 2 or 3");
    if (width < 1) throw ConfigError("mlp: width must be >= 1");
  }
  bool operator==(const MlpConfig&) const = default;
};

struct FieldConfig {
  HashGridConfig grid{};
  MlpConfig mlp{};
  /// Number of objects N, i.e. the latent dimension.
  std::uint32_t latent_dim = 2;
  /// Constant added to the raw density before softplus. Not trained.
  double density_bias = 0.5;

  void validate() const {
    grid.validate();
    mlp.validate();
    if (latent_dim < 1) throw ConfigError("field: latent_dim must be >= 1");
    if (!std::isfinite(density_bias)) throw ConfigError("field: density_bias must be finite");
  }
  std::size_t mlp_input_dim() const { return grid.output_dim() + latent_dim; }
  bool operator==(const FieldConfig&) const = default;
};

template <class S>
struct FieldSample {
  S tau{};
  Vec3<S> rho{};
};

/// Parameter layout: a pure function of the configuration. Canonical order is
/// grid level 0..L-1 (rows x features), then for each dense layer its weight
/// matrix (out x in, row-major) followed by its bias.
struct FieldLayout {
  struct Level {
    std::uint32_t resolution;
    std::size_t rows;
    bool dense;
    std::size_t offset;
  };
  struct Layer {
    std::size_t in, out;
    std::size_t weight_offset, bias_offset;
  };

  std::vector<Level> levels;
  std::vector<Layer> layers;
  std::size_t grid_count = 0;
  std::size_t total = 0;

  explicit FieldLayout(const FieldConfig& cfg) {
    cfg.validate();
    std::size_t offset = 0;
    const std::size_t table = std::size_t{1} << cfg.grid.table_size_log2;
    for (std::uint32_t l = 0; l < cfg.grid.levels; ++l) {
      const std::uint32_t res = cfg.grid.resolution(l);
      const std::size_t side = std::size_t{res} + 1;
      const std::size_t dense_rows = side * side * side;
      const bool dense = dense_rows <= table;
      const std::size_t rows = dense ? dense_rows : table;
      levels.push_back({res, rows, dense, offset});
      offset += rows * cfg.grid.features_per_level;
    }
    grid_count = offset;
    std::size_t in = cfg.mlp_input_dim();
    for (std::uint32_t k = 0; k <= cfg.mlp.hidden_layers; ++k) {
      const std::size_t out = (k == cfg.mlp.hidden_layers) ? 4 : cfg.mlp.width;
      layers.push_back({in, out, offset, offset + in * out});
      offset += in * out + out;
      in = out;
    }
    total = offset;
  }
};

/// Per-sample record of a forward pass, consumed by the backward pass.
/// Reusable: forward() overwrites it without reallocating.
template <class S>
struct FieldTape {
  std::vector<std::uint32_t> rows;  // levels x 8, parameter offset of each corner row
  std::vector<S> weights;           // levels x 8 trilinear weights
  std::vector<S> frac;              // levels x 3 fractional cell coordinates
  std::array<bool, 3> inside{};     // false when the axis was clamped to the bounds
  std::vector<S> input;             // [encoding | latent]
  std::vector<S> pre;               // hidden pre-activations, layer-major
  std::vector<S> scratch;
  std::array<S, 4> raw{};
  FieldSample<S> out{};
};

template <class S>
class LatentField {
 public:
  using Scalar = S;
  using Workspace = FieldTape<S>;

  explicit LatentField(FieldConfig cfg)
      : cfg_(std::move(cfg)), layout_(cfg_), params_(layout_.total, S(0)) {}

  const FieldConfig& config() const noexcept { return cfg_; }
  const FieldLayout& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<S> params() noexcept { return params_; }
  std::span<const S> params() const noexcept { return params_; }
  std::size_t latent_dim() const noexcept { return cfg_.latent_dim; }
  Box3<S> bounds() const { return {Vec3<S>(cfg_.grid.bounds.lo), Vec3<S>(cfg_.grid.bounds.hi)}; }

  /// Grid tables uniform in [-1e-4, 1e-4]; dense layers fan-in scaled uniform
  /// (He for ReLU layers), zero biases.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < layout_.grid_count; ++i)
      params_[i] = static_cast<S>(rng.uniform(-1e-4, 1e-4));
    for (std::size_t k = 0; k < layout_.layers.size(); ++k) {
      const auto& L = layout_.layers[k];
      const bool last = k + 1 == layout_.layers.size();
      const double bound = last ? std::sqrt(1.0 / double(L.in)) : std::sqrt(6.0 / double(L.in));
      for (std::size_t i = 0; i < L.in * L.out; ++i)
        params_[L.weight_offset + i] = static_cast<S>(rng.uniform(-bound, bound));
      for (std::size_t i = 0; i < L.out; ++i) params_[L.bias_offset + i] = S(0);
    }
  }

  Workspace make_workspace() const {
    Workspace t;
    const std::size_t L = cfg_.grid.levels;
    t.rows.resize(L * 8);
    t.weights.resize(L * 8);
    t.frac.resize(L * 3);
    t.input.resize(cfg_.mlp_input_dim());
    t.pre.resize(std::size_t{cfg_.mlp.hidden_layers} * cfg_.mlp.width);
    t.scratch.resize(std::max<std::size_t>(cfg_.mlp.width, cfg_.mlp_input_dim()) * 2);
    return t;
  }

  /// Approximate heap footprint of one workspace, for cache budgeting.
  std::size_t workspace_bytes() const {
    const std::size_t L = cfg_.grid.levels;
    const std::size_t floats = L * 8 + L * 3 + cfg_.mlp_input_dim() +
                               std::size_t{cfg_.mlp.hidden_layers} * cfg_.mlp.width +
                               std::max<std::size_t>(cfg_.mlp.width, cfg_.mlp_input_dim()) * 2;
    return sizeof(Workspace) + L * 8 * sizeof(std::uint32_t) + floats * sizeof(S) + 6 * 16;
  }

  /// Trilinearly interpolated per-level features, concatenated over levels.
  /// Writes levels * features_per_level values into out.
  void encode(const Vec3<S>& p, std::span<S> out, Workspace& t) const {
    if (!is_finite(p)) throw InvalidInput("encode_position: non-finite coordinate");
    const auto& g = cfg_.grid;
    const std::uint32_t F = g.features_per_level;
    S unit[3];
    for (int a = 0; a < 3; ++a) {
      const S lo = static_cast<S>(g.bounds.lo[a]);
      const S hi = static_cast<S>(g.bounds.hi[a]);
      S x = (p[a] - lo) / (hi - lo);
      t.inside[a] = x >= S(0) && x <= S(1);
      unit[a] = std::clamp(x, S(0), S(1));
    }
    for (std::uint32_t l = 0; l < g.levels; ++l) {
      const auto& lev = layout_.levels[l];
      const std::uint32_t res = lev.resolution;
      std::uint32_t cell[3];
      S* fr = &t.frac[l * 3];
      for (int a = 0; a < 3; ++a) {
        const S pos = unit[a] * static_cast<S>(res);
        std::uint32_t c = static_cast<std::uint32_t>(pos);  // pos >= 0: truncation is floor
        if (c >= res) c = res - 1;
        cell[a] = c;
        fr[a] = pos - static_cast<S>(c);
      }
      const S wx[2] = {S(1) - fr[0], fr[0]};
      const S wy[2] = {S(1) - fr[1], fr[1]};
      const S wz[2] = {S(1) - fr[2], fr[2]};
      std::uint32_t* rows = &t.rows[l * 8];
      S* weights = &t.weights[l * 8];
      std::uint32_t rx[2], ry[2], rz[2];
      std::uint32_t mask = 0xffffffffu;
      if (lev.dense) {
        const std::uint32_t side = res + 1;
        rx[0] = cell[0], rx[1] = cell[0] + 1;
        ry[0] = cell[1] * side, ry[1] = (cell[1] + 1) * side;
        rz[0] = cell[2] * side * side, rz[1] = (cell[2] + 1) * side * side;
      } else {
        rx[0] = cell[0], rx[1] = cell[0] + 1;
        ry[0] = cell[1] * kHashPrimeY, ry[1] = (cell[1] + 1) * kHashPrimeY;
        rz[0] = cell[2] * kHashPrimeZ, rz[1] = (cell[2] + 1) * kHashPrimeZ;
        mask = static_cast<std::uint32_t>(lev.rows - 1);
      }
      const std::uint32_t base = static_cast<std::uint32_t>(lev.offset);
      for (int c = 0; c < 8; ++c) {
        const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
        weights[c] = wx[dx] * wy[dy] * wz[dz];
        const std::uint32_t row =
            lev.dense ? rx[dx] + ry[dy] + rz[dz] : (rx[dx] ^ ry[dy] ^ rz[dz]) & mask;
        rows[c] = base + row * F;
      }
      S* out_l = out.data() + std::size_t{l} * F;
      const S* P = params_.data();
      if (F == 2) {
        S a0 = S(0), a1 = S(0);
        for (int c = 0; c < 8; ++c) {
          a0 += weights[c] * P[rows[c]];
          a1 += weights[c] * P[rows[c] + 1];
        }
        out_l[0] = a0;
        out_l[1] = a1;
      } else {
        for (std::uint32_t f = 0; f < F; ++f) {
          S acc = S(0);
          for (int c = 0; c < 8; ++c) acc += weights[c] * P[rows[c] + f];
          out_l[f] = acc;
        }
      }
    }
  }

  std::vector<S> encode_position(const Vec3<S>& p) const {
    auto t = make_workspace();
    std::vector<S> out(cfg_.grid.output_dim());
    encode(p, out, t);
    return out;
  }

  /// Forward pass recording everything the backward pass needs in t.
  FieldSample<S> eval(const Vec3<S>& p, std::span<const S> u, Workspace& t) const {
    if (u.size() != cfg_.latent_dim)
      throw ConfigError("eval_field: latent code has " + std::to_string(u.size()) +
                        " components, field expects " + std::to_string(cfg_.latent_dim));
    const std::size_t enc = cfg_.grid.output_dim();
    encode(p, std::span<S>(t.input.data(), enc), t);
    for (std::size_t i = 0; i < u.size(); ++i) t.input[enc + i] = u[i];

    const S* x = t.input.data();
    S* buf = t.scratch.data();
    const std::size_t H = cfg_.mlp.hidden_layers;
    for (std::size_t k = 0; k <= H; ++k) {
      const auto& L = layout_.layers[k];
      const S* W = params_.data() + L.weight_offset;
      const S* b = params_.data() + L.bias_offset;
      S* y = (k == H) ? t.raw.data() : t.pre.data() + k * cfg_.mlp.width;
      // four output rows at a time: independent accumulation chains
      const std::size_t nin = L.in, nout = L.out;
      std::size_t o = 0;
      for (; o + 4 <= nout; o += 4) {
        const S* r0 = W + o * nin;
        const S* r1 = r0 + nin;
        const S* r2 = r1 + nin;
        const S* r3 = r2 + nin;
        S a0 = b[o], a1 = b[o + 1], a2 = b[o + 2], a3 = b[o + 3];
        for (std::size_t i = 0; i < nin; ++i) {
          const S xi = x[i];
          a0 += r0[i] * xi;
          a1 += r1[i] * xi;
          a2 += r2[i] * xi;
          a3 += r3[i] * xi;
        }
        y[o] = a0, y[o + 1] = a1, y[o + 2] = a2, y[o + 3] = a3;
      }
      for (; o < nout; ++o) {
        const S* r = W + o * nin;
        S a = b[o];
        for (std::size_t i = 0; i < nin; ++i) a += r[i] * x[i];
        y[o] = a;
      }
      if (k < H) {
        // activations live in scratch, alternating halves
        S* act = buf + (k % 2) * cfg_.mlp.width;
        for (std::size_t o = 0; o < L.out; ++o) act[o] = y[o] > S(0) ? y[o] : S(0);
        x = act;
      }
    }
    t.out.tau = softplus(t.raw[0] + static_cast<S>(cfg_.density_bias));
    t.out.rho = {sigmoid(t.raw[1]), sigmoid(t.raw[2]), sigmoid(t.raw[3])};
    return t.out;
  }

  FieldSample<S> eval(const Vec3<S>& p, std::span<const S> u) const {
    auto t = make_workspace();
    return eval(p, u, t);
  }

  S density(const Vec3<S>& p, std::span<const S> u, Workspace& t) const {
    return eval(p, u, t).tau;
  }

  /// Reverse pass for one recorded sample. Accumulates parameter gradients
  /// into grad (skipped when empty) and, when d_position is non-null, adds the
  /// gradient with respect to the sample position.
  void backward(Workspace& t, S d_tau, const Vec3<S>& d_rho, std::span<S> grad,
                Vec3<S>* d_position = nullptr) const {
    const bool want_params = !grad.empty();
    const std::size_t H = cfg_.mlp.hidden_layers;
    const std::size_t Wd = cfg_.mlp.width;
    const std::size_t half = t.scratch.size() / 2;
    S* d_y = t.scratch.data();         // gradient w.r.t. the current layer output
    S* d_in = t.scratch.data() + half;  // gradient w.r.t. the current layer input

    d_y[0] = d_tau * sigmoid(t.raw[0] + static_cast<S>(cfg_.density_bias));
    for (int c = 0; c < 3; ++c) {
      const S s = t.out.rho[c];
      d_y[c + 1] = d_rho[c] * s * (S(1) - s);
    }

    for (std::size_t kk = H + 1; kk-- > 0;) {
      const auto& L = layout_.layers[kk];
      const S* W = params_.data() + L.weight_offset;
      const S* pre_in = kk > 0 ? t.pre.data() + (kk - 1) * Wd : nullptr;
      if (want_params) {
        S* gW = grad.data() + L.weight_offset;
        S* gb = grad.data() + L.bias_offset;
        for (std::size_t o = 0; o < L.out; ++o) {
          const S go = d_y[o];
          gb[o] += go;
          if (go == S(0)) continue;
          S* grow = gW + o * L.in;
          if (kk == 0) {
            for (std::size_t i = 0; i < L.in; ++i) grow[i] += go * t.input[i];
          } else {
            for (std::size_t i = 0; i < L.in; ++i)
              if (pre_in[i] > S(0)) grow[i] += go * pre_in[i];
          }
        }
      }
      for (std::size_t i = 0; i < L.in; ++i) d_in[i] = S(0);
      for (std::size_t o = 0; o < L.out; ++o) {
        const S go = d_y[o];
        if (go == S(0)) continue;
        const S* row = W + o * L.in;
        for (std::size_t i = 0; i < L.in; ++i) d_in[i] += row[i] * go;
      }
      if (kk > 0)
        for (std::size_t i = 0; i < L.in; ++i) d_y[i] = pre_in[i] > S(0) ? d_in[i] : S(0);
    }
    grid_backward(t, d_in, grad, d_position);
  }

  /// Gradient of the encoding w.r.t. the grid tables (and optionally the
  /// position), given the gradient w.r.t. the encoding.
  void grid_backward(const Workspace& t, const S* d_enc, std::span<S> grad,
                     Vec3<S>* d_position) const {
    const auto& g = cfg_.grid;
    const std::uint32_t F = g.features_per_level;
    Vec3<S> dp{};
    for (std::uint32_t l = 0; l < g.levels; ++l) {
      const S* de = d_enc + std::size_t{l} * F;
      const S* fr = &t.frac[l * 3];
      for (int c = 0; c < 8; ++c) {
        const std::uint32_t off = t.rows[l * 8 + c];
        const S w = t.weights[l * 8 + c];
        if (!grad.empty())
          for (std::uint32_t f = 0; f < F; ++f) grad[off + f] += w * de[f];
        if (d_position) {
          S dot_feat = S(0);
          for (std::uint32_t f = 0; f < F; ++f) dot_feat += de[f] * params_[off + f];
          if (dot_feat == S(0)) continue;
          const int bits[3] = {c & 1, (c >> 1) & 1, (c >> 2) & 1};
          for (int a = 0; a < 3; ++a) {
            S dw = bits[a] ? S(1) : S(-1);
            for (int b = 0; b < 3; ++b) {
              if (b == a) continue;
              dw *= bits[b] ? fr[b] : S(1) - fr[b];
            }
            dp[a] += dot_feat * dw * static_cast<S>(layout_.levels[l].resolution);
          }
        }
      }
    }
    if (d_position) {
      for (int a = 0; a < 3; ++a) {
        const S ext = static_cast<S>(g.bounds.hi[a] - g.bounds.lo[a]);
        (*d_position)[a] += t.inside[a] ? dp[a] / ext : S(0);
      }
    }
  }

  /// Half the finest grid cell edge: the finite-difference step for normals.
  S default_normal_step() const { return static_cast<S>(0.5 * finest_cell_edge()); }

  /// Finest lattice cell edge along the smallest-extent axis.
  double finest_cell_edge() const {
    const auto e = cfg_.grid.bounds.extent();
    const double ext = std::min({e.x, e.y, e.z});
    return ext / double(layout_.levels.back().resolution);
  }

  bool all_finite() const {
    for (S v : params_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  static constexpr std::uint32_t kHashPrimeY = 2654435761u;
  static constexpr std::uint32_t kHashPrimeZ = 805459861u;

  FieldConfig cfg_;
  FieldLayout layout_;
  std::vector<S> params_;
};

/// Unit normal n = -grad(tau) / |grad(tau)| from central differences.
template <class S>
struct NormalEstimate {
  Vec3<S> normal{S(0), S(0), S(1)};
  Vec3<S> gradient{};
  bool degenerate = false;
};

/// Central-difference surface normal of any callable density tau(p).
template <class S, class DensityFn>
NormalEstimate<S> normal_from_density(const Vec3<S>& p, S h, DensityFn&& tau) {
  if (!(h > S(0))) throw InvalidInput("field_normal: step must be positive");
  NormalEstimate<S> r;
  for (int a = 0; a < 3; ++a) {
    Vec3<S> e{};
    e[a] = h;
    // evaluation order +e then -e is relied on by the renderer's tape layout
    const S plus = tau(p + e);
    const S minus = tau(p - e);
    r.gradient[a] = (plus - minus) / (S(2) * h);
  }
  const S mag = norm(r.gradient);
  if (!(mag >= S(1e-12))) {
    r.degenerate = true;
    r.normal = {S(0), S(0), S(1)};
    return r;
  }
  r.normal = -r.gradient / mag;
  return r;
}

template <class Field, class S = typename Field::Scalar>
NormalEstimate<S> field_normal(const Field& field, const Vec3<S>& p, std::span<const S> u, S h) {
  auto ws = field.make_workspace();
  return normal_from_density<S>(p, h, [&](const Vec3<S>& q) { return field.eval(q, u, ws).tau; });
}

}  // namespace a3d
