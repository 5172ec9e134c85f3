// SPDX-License-Identifier: Apache-2.0
//
// Ray-march volume rendering of a latent-conditioned field.
//
// Samples sit at the centers of n equal bins on [near, far] (or jittered inside
// their bins), and sample i stands for the segment up to sample i+1; the last
// segment ends at far. Opacity per segment is 1 - exp(-tau * length).
//
// Shading is deferred to the ray: a single normal is estimated by central
// differences at the expected termination point and every sample's albedo is
// shaded with it before compositing.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <type_traits>
#include <span>
#include <vector>

#include "a3d/camera.hpp"
#include "a3d/core.hpp"
#include "a3d/field.hpp"
#include "a3d/latent.hpp"

namespace a3d {

struct RayMarchConfig {
  std::uint32_t n_samples = 96;
  double near = 0.1;
  double far = 6.0;
  bool stratified_jitter = false;
  Vec3d background{1.0, 1.0, 1.0};
  /// Restrict [near, far] to the field's bounding box.
  bool clip_to_bounds = true;
  /// Finite-difference step for normals; 0 picks the field's default.
  double normal_step = 0.0;
  /// Normal-map pixels with opacity at or below this are written as zero.
  double normal_opacity_threshold = 0.01;
  /// Stop marching once transmittance drops below this (0 disables).
  double min_transmittance = 0.0;
  std::uint64_t jitter_seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (n_samples < 2) throw ConfigError("ray march: n_samples must be >= 2");
    if (!(near > 0.0 && near < far)) throw ConfigError("ray march: need 0 < near < far");
    if (!is_finite(background)) throw ConfigError("ray march: non-finite background");
    if (normal_step < 0.0) throw ConfigError("ray march: normal_step must be >= 0");
  }
};

struct LightSample {
  Vec3d direction{0.0, 0.0, 1.0};  // unit, points from the surface toward the light
  Vec3d diffuse{0.0, 0.0, 0.0};
  Vec3d ambient{1.0, 1.0, 1.0};

  /// c = rho: ambient 1, no diffuse term.
  static LightSample unlit() { return {}; }

  void validate() const {
    for (int c = 0; c < 3; ++c)
      if (!(diffuse[c] >= 0.0) || !(ambient[c] >= 0.0))
        throw InvalidInput("light: intensities must be non-negative");
    const double n = norm(direction);
    if (!(std::abs(n - 1.0) < 1e-6)) throw InvalidInput("light: direction must be unit length");
  }
  bool operator==(const LightSample&) const = default;
};

/// c = rho * (ambient + diffuse * max(0, n . l)), clamped to [0, 1].
template <class S>
Vec3<S> shade(const Vec3<S>& rho, const Vec3<S>& n, const LightSample& light) {
  const S lambert = std::max(S(0), dot(n, Vec3<S>(light.direction)));
  Vec3<S> c;
  for (int ch = 0; ch < 3; ++ch) {
    const S l = static_cast<S>(light.ambient[ch]) + static_cast<S>(light.diffuse[ch]) * lambert;
    c[ch] = std::clamp(rho[ch] * l, S(0), S(1));
  }
  return c;
}

/// Gradients of shade() w.r.t. albedo and normal given dL/dc.
template <class S>
void shade_backward(const Vec3<S>& rho, const Vec3<S>& n, const LightSample& light,
                    const Vec3<S>& d_c, Vec3<S>& d_rho, Vec3<S>& d_n) {
  const Vec3<S> ldir(light.direction);
  const S ndl = dot(n, ldir);
  const S lambert = std::max(S(0), ndl);
  for (int ch = 0; ch < 3; ++ch) {
    const S diff = static_cast<S>(light.diffuse[ch]);
    const S l = static_cast<S>(light.ambient[ch]) + diff * lambert;
    const S v = rho[ch] * l;
    if (v <= S(0) || v >= S(1)) {
      d_rho[ch] = S(0);
      continue;
    }
    d_rho[ch] = d_c[ch] * l;
    if (ndl > S(0) && diff != S(0)) d_n += ldir * (d_c[ch] * rho[ch] * diff);
  }
}

/// Where the latent code comes from: one fixed code for the whole field, or a
/// spatially varying code u(p) (hybridization).
class LatentSource {
 public:
  using SpatialFn = std::function<LatentCode(const Vec3d&)>;

  LatentSource(LatentCode fixed)  // NOLINT(google-explicit-constructor)
      : dim_(fixed.size()), fixed_(std::move(fixed)) {}
  LatentSource(std::size_t dim, SpatialFn fn) : dim_(dim), spatial_(std::move(fn)) {
    if (!spatial_) throw ConfigError("latent source: empty spatial function");
  }

  std::size_t dim() const noexcept { return dim_; }
  bool is_fixed() const noexcept { return fixed_.has_value(); }
  const LatentCode& fixed() const { return *fixed_; }

  template <class S>
  void at(const Vec3<S>& p, std::vector<S>& out) const {
    if (fixed_) {
      out.assign(fixed_->values().begin(), fixed_->values().end());
      return;
    }
    const LatentCode u = spatial_(Vec3d(p));
    if (u.size() != dim_) throw ConfigError("latent source: spatial code has wrong dimension");
    out.assign(u.values().begin(), u.values().end());
  }

 private:
  std::size_t dim_;
  std::optional<LatentCode> fixed_;
  SpatialFn spatial_;
};

template <class S>
struct RenderedView {
  Image<S> rgb;      // H x W x 3
  Image<S> opacity;  // H x W x 1
  Image<S> depth;    // H x W x 1
  Image<S> normal;   // H x W x 3, unit where opacity > threshold, zero elsewhere
  std::size_t degenerate_normals = 0;

  std::size_t height() const { return rgb.height(); }
  std::size_t width() const { return rgb.width(); }
};

/// Per-pixel gradients of a scalar loss w.r.t. the rendered maps. Empty images
/// mean "no dependence".
template <class S>
struct ViewGradients {
  Image<S> rgb;
  Image<S> opacity;
  Image<S> depth;
  Image<S> normal;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double hash01(std::uint64_t key, std::uint64_t i) {
  return double(splitmix64(key ^ splitmix64(i)) >> 11) * 0x1.0p-53;
}

/// Entry/exit distances of a ray against a box; false when it misses.
template <class S>
bool intersect_box(const Ray<S>& ray, const Box3<S>& box, double& t0, double& t1) {
  double lo = -1e300, hi = 1e300;
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (std::abs(d) < 1e-15) {
      if (o < box.lo[a] || o > box.hi[a]) return false;
      continue;
    }
    double ta = (double(box.lo[a]) - o) / d;
    double tb = (double(box.hi[a]) - o) / d;
    if (ta > tb) std::swap(ta, tb);
    lo = std::max(lo, ta);
    hi = std::min(hi, tb);
  }
  t0 = lo;
  t1 = hi;
  return hi > lo;
}

}  // namespace detail

/// Everything computed along one ray. Reused across rays to avoid allocation.
template <class S>
struct RayTrace {
  std::size_t count = 0;
  std::vector<S> s, delta, tau, w, T;  // T has count + 1 entries
  std::vector<Vec3<S>> rho, c;
  std::vector<S> u;
  S opacity{}, depth{};
  Vec3<S> color{};
  Vec3<S> point{};
  S normal_step{};
  NormalEstimate<S> normal{};
  bool hit = false;

  void reserve(std::size_t n) {
    s.resize(n);
    delta.resize(n);
    tau.resize(n);
    w.resize(n);
    T.resize(n + 1);
    rho.resize(n);
    c.resize(n);
  }
};

template <class S>
struct RayResult {
  Vec3<S> color;
  S opacity;
  S depth;
  NormalEstimate<S> normal;
};

template <class Field>
typename Field::Scalar resolve_normal_step(const Field& field, const RayMarchConfig& cfg) {
  using S = typename Field::Scalar;
  return cfg.normal_step > 0.0 ? static_cast<S>(cfg.normal_step) : field.default_normal_step();
}

/// Marches one ray. When tapes is non-null it must hold n_samples + 6
/// workspaces; sample i records into tapes[i] and the six normal probes into
/// tapes[n_samples .. n_samples + 5] (+x, -x, +y, -y, +z, -z).
template <class Field, class S = typename Field::Scalar>
void march_ray(const Field& field, const Ray<S>& ray, const LatentSource& latent,
               const LightSample& light, const RayMarchConfig& cfg, std::uint64_t jitter_key,
               RayTrace<S>& tr, typename Field::Workspace& ws,
               std::vector<typename Field::Workspace>* tapes = nullptr) {
  const std::size_t n = cfg.n_samples;
  tr.reserve(n);
  tr.normal_step = resolve_normal_step(field, cfg);
  double t0 = cfg.near, t1 = cfg.far;
  bool hit = true;
  if (cfg.clip_to_bounds) {
    double b0, b1;
    hit = detail::intersect_box(ray, field.bounds(), b0, b1);
    if (hit) {
      t0 = std::max(t0, b0);
      t1 = std::min(t1, b1);
      hit = t1 > t0;
    }
  }
  const Vec3<S> bg(cfg.background);
  tr.hit = hit;
  tr.T[0] = S(1);
  if (!hit) {
    tr.count = 0;
    tr.opacity = S(0);
    tr.depth = S(0);
    tr.color = bg;
    tr.point = ray.origin;
    tr.normal = NormalEstimate<S>{};
    tr.normal.degenerate = true;
    return;
  }

  const double bin = (t1 - t0) / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = cfg.stratified_jitter ? detail::hash01(jitter_key, i) : 0.5;
    tr.s[i] = static_cast<S>(t0 + (double(i) + xi) * bin);
  }
  for (std::size_t i = 0; i + 1 < n; ++i) tr.delta[i] = tr.s[i + 1] - tr.s[i];
  tr.delta[n - 1] = static_cast<S>(t1) - tr.s[n - 1];

  const S min_T = static_cast<S>(cfg.min_transmittance);
  std::size_t count = 0;
  S O = S(0), depth_acc = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3<S> p = ray.origin + ray.direction * tr.s[i];
    latent.at(p, tr.u);
    auto& w = tapes ? (*tapes)[i] : ws;
    const auto smp = field.eval(p, std::span<const S>(tr.u), w);
    tr.tau[i] = smp.tau;
    tr.rho[i] = smp.rho;
    const S trans = std::exp(-smp.tau * tr.delta[i]);
    tr.w[i] = tr.T[i] * (S(1) - trans);
    tr.T[i + 1] = tr.T[i] * trans;
    O += tr.w[i];
    depth_acc += tr.w[i] * tr.s[i];
    count = i + 1;
    if (min_T > S(0) && tr.T[i + 1] < min_T) break;
  }
  tr.count = count;
  tr.opacity = O;
  tr.depth = depth_acc / std::max(O, S(1e-6));
  tr.point = ray.origin + ray.direction * tr.depth;

  std::size_t probe = 0;
  tr.normal = normal_from_density<S>(tr.point, tr.normal_step, [&](const Vec3<S>& q) {
    std::vector<S>& uq = tr.u;
    latent.at(q, uq);
    auto& w = tapes ? (*tapes)[n + probe] : ws;
    ++probe;
    return field.eval(q, std::span<const S>(uq), w).tau;
  });

  Vec3<S> C{};
  for (std::size_t i = 0; i < count; ++i) {
    tr.c[i] = shade(tr.rho[i], tr.normal.normal, light);
    C += tr.c[i] * tr.w[i];
  }
  C += bg * tr.T[count];
  tr.color = C;
}

/// Composited color, opacity and expected depth of one ray.
template <class Field, class S = typename Field::Scalar>
RayResult<S> render_ray(const Field& field, const Ray<S>& ray, const LatentSource& latent,
                        const LightSample& light, const RayMarchConfig& cfg,
                        std::uint64_t jitter_key = 0) {
  cfg.validate();
  RayTrace<S> tr;
  auto ws = field.make_workspace();
  march_ray(field, ray, latent, light, cfg, jitter_key, tr, ws);
  return {tr.color, tr.opacity, tr.depth, tr.normal};
}

inline std::uint64_t pixel_key(const RayMarchConfig& cfg, std::size_t pixel) {
  return detail::splitmix64(cfg.jitter_seed ^ detail::splitmix64(pixel + 0x51ed27f0ULL));
}

/// Forward records of one rendered view, kept so that the following
/// render_view_backward call does not have to re-march the rays. Filled only
/// when the estimated footprint fits the budget; consumed (invalidated) by the
/// backward pass. The caller must not change the field in between.
template <class Field>
struct RenderCache {
  using S = typename Field::Scalar;
  std::size_t budget_bytes = std::size_t{1} << 30;
  bool valid = false;
  std::size_t height = 0, width = 0, samples = 0;
  std::vector<RayTrace<S>> traces;
  std::vector<std::vector<typename Field::Workspace>> tapes;

  static std::size_t estimate(const Field& field, std::size_t pixels, std::size_t samples) {
    std::size_t ws = sizeof(typename Field::Workspace);
    if constexpr (requires { field.workspace_bytes(); }) ws = field.workspace_bytes();
    const std::size_t trace = sizeof(RayTrace<S>) + samples * (6 * sizeof(S) + 2 * sizeof(Vec3<S>));
    return pixels * (trace + (samples + 6) * ws);
  }

  /// Sizes the storage for a view; returns false (and stays invalid) when
  /// the view does not fit the budget.
  bool prepare(const Field& field, std::size_t h, std::size_t w, std::size_t n) {
    valid = false;
    if (estimate(field, h * w, n) > budget_bytes) return false;
    if (h != height || w != width || n != samples || tapes.size() != h * w) {
      traces.assign(h * w, RayTrace<S>{});
      tapes.assign(h * w, std::vector<typename Field::Workspace>(n + 6, field.make_workspace()));
      height = h, width = w, samples = n;
    }
    return true;
  }
};

template <class Field, class S = typename Field::Scalar>
RenderedView<S> render_view(const Field& field, const Camera& camera, const LatentSource& latent,
                            const LightSample& light, const RayMarchConfig& cfg,
                            RenderCache<Field>* cache = nullptr) {
  cfg.validate();
  light.validate();
  if (latent.dim() != field.latent_dim())
    throw ConfigError("render: latent dimension does not match the field");
  const auto basis = camera.basis();
  const std::size_t H = camera.height, W = camera.width;
  RenderedView<S> view{Image<S>(H, W, 3), Image<S>(H, W, 1), Image<S>(H, W, 1),
                       Image<S>(H, W, 3), 0};
  const bool record = cache && cache->prepare(field, H, W, cfg.n_samples);
  std::vector<std::size_t> degenerate(std::max(1u, cfg.threads), 0);
  parallel_rows(H, cfg.threads, [&](std::size_t r0, std::size_t r1, unsigned worker) {
    RayTrace<S> local;
    auto ws = field.make_workspace();
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const std::size_t px = r * W + c;
        const auto ray = camera.ray<S>(r, c, basis);
        RayTrace<S>& tr = record ? cache->traces[px] : local;
        march_ray(field, ray, latent, light, cfg, pixel_key(cfg, px), tr, ws,
                  record ? &cache->tapes[px] : nullptr);
        for (int ch = 0; ch < 3; ++ch) view.rgb(r, c, ch) = tr.color[ch];
        view.opacity(r, c) = tr.opacity;
        view.depth(r, c) = tr.depth;
        const bool show = double(tr.opacity) > cfg.normal_opacity_threshold;
        for (int ch = 0; ch < 3; ++ch) view.normal(r, c, ch) = show ? tr.normal.normal[ch] : S(0);
        if (show && tr.normal.degenerate) ++degenerate[worker];
      }
    }
  });
  for (auto d : degenerate) view.degenerate_normals += d;
  if (record) cache->valid = true;
  return view;
}

/// Reverse pass of one ray given loss gradients w.r.t. its outputs. The ray
/// must have been marched with tapes. Parameter gradients accumulate into grad.
template <class Field, class S = typename Field::Scalar>
void ray_backward(const Field& field, const Ray<S>& ray, const LightSample& light,
                  const RayMarchConfig& cfg, RayTrace<S>& tr,
                  std::vector<typename Field::Workspace>& tapes, const Vec3<S>& d_color,
                  S d_opacity, S d_depth, const Vec3<S>& d_normal_map, std::type_identity_t<std::span<S>> grad) {
  const std::size_t n = cfg.n_samples;
  const std::size_t count = tr.count;
  const Vec3<S> bg(cfg.background);
  if (count == 0) return;

  // shading: c_k = shade(rho_k, n, light)
  Vec3<S> d_n{};
  std::vector<Vec3<S>>& d_rho = tr.c;  // reuse storage after reading c_k below
  std::vector<S> g(count);
  for (std::size_t k = 0; k < count; ++k) {
    g[k] = dot(d_color, tr.c[k]) + d_opacity;
    Vec3<S> dr{};
    shade_backward(tr.rho[k], tr.normal.normal, light, d_color * tr.w[k], dr, d_n);
    d_rho[k] = dr;
  }
  if (double(tr.opacity) > cfg.normal_opacity_threshold) d_n += d_normal_map;

  // normal: n = -grad / |grad|, grad from six density probes at the depth point
  S d_D = d_depth;
  if (!tr.normal.degenerate && (d_n.x != S(0) || d_n.y != S(0) || d_n.z != S(0))) {
    const Vec3<S> nn = tr.normal.normal;
    const S mag = norm(tr.normal.gradient);
    const Vec3<S> d_grad = -(d_n - nn * dot(nn, d_n)) / mag;
    Vec3<S> d_point{};
    const S inv2h = S(1) / (S(2) * tr.normal_step);
    for (int a = 0; a < 3; ++a) {
      field.backward(tapes[n + 2 * a], d_grad[a] * inv2h, Vec3<S>{}, grad, &d_point);
      field.backward(tapes[n + 2 * a + 1], -d_grad[a] * inv2h, Vec3<S>{}, grad, &d_point);
    }
    d_D += dot(d_point, ray.direction);
  }

  // depth: D = sum w_k s_k / max(O, eps)
  if (d_D != S(0)) {
    const S eps = S(1e-6);
    for (std::size_t k = 0; k < count; ++k)
      g[k] += d_D * (tr.opacity > eps ? (tr.s[k] - tr.depth) / tr.opacity : tr.s[k] / eps);
  }

  // compositing: w_k = T_k - T_{k+1}, T_{k+1} = T_k exp(-tau_k delta_k)
  const S g_bg = dot(d_color, bg);
  const S T_final = tr.T[count];
  S suffix = S(0);
  for (std::size_t k = count; k-- > 0;) {
    const S d_tau = tr.delta[k] * (g[k] * tr.T[k + 1] - suffix - g_bg * T_final);
    suffix += g[k] * tr.w[k];
    field.backward(tapes[k], d_tau, d_rho[k], grad);
  }
}

/// Accumulates dLoss/dParams for a loss whose gradients w.r.t. the rendered
/// maps are given. Uses the forward records in cache when it holds this view,
/// otherwise re-marches every ray with tapes. Workers reduce their gradient
/// buffers in worker order, so results only depend on cfg.threads.
template <class Field, class S = typename Field::Scalar>
void render_view_backward(const Field& field, const Camera& camera, const LatentSource& latent,
                          const LightSample& light, const RayMarchConfig& cfg,
                          const ViewGradients<S>& dv, std::type_identity_t<std::span<S>> grad,
                          RenderCache<Field>* cache = nullptr) {
  cfg.validate();
  const auto basis = camera.basis();
  const std::size_t H = camera.height, W = camera.width;
  auto check = [&](const Image<S>& im, std::size_t ch, const char* name) {
    if (!im.empty() && (im.height() != H || im.width() != W || im.channels() != ch))
      throw ConfigError(std::string("render backward: gradient image '") + name +
                        "' has the wrong shape");
  };
  check(dv.rgb, 3, "rgb");
  check(dv.opacity, 1, "opacity");
  check(dv.depth, 1, "depth");
  check(dv.normal, 3, "normal");
  const bool cached = cache && cache->valid && cache->height == H && cache->width == W &&
                      cache->samples == cfg.n_samples;

  const unsigned threads = std::max(1u, cfg.threads);
  std::vector<std::vector<S>> partial(threads > 1 ? threads : 0);
  parallel_rows(H, threads, [&](std::size_t r0, std::size_t r1, unsigned worker) {
    std::span<S> out = grad;
    if (threads > 1) {
      partial[worker].assign(grad.size(), S(0));
      out = partial[worker];
    }
    RayTrace<S> local;
    auto ws = field.make_workspace();
    std::vector<typename Field::Workspace> local_tapes;
    if (!cached) local_tapes.assign(cfg.n_samples + 6, field.make_workspace());
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        const Vec3<S> dC = dv.rgb.empty()
                               ? Vec3<S>{}
                               : Vec3<S>{dv.rgb(r, c, 0), dv.rgb(r, c, 1), dv.rgb(r, c, 2)};
        const S dO = dv.opacity.empty() ? S(0) : dv.opacity(r, c);
        const S dD = dv.depth.empty() ? S(0) : dv.depth(r, c);
        const Vec3<S> dN =
            dv.normal.empty() ? Vec3<S>{}
                              : Vec3<S>{dv.normal(r, c, 0), dv.normal(r, c, 1), dv.normal(r, c, 2)};
        if (dC == Vec3<S>{} && dO == S(0) && dD == S(0) && dN == Vec3<S>{}) continue;
        const std::size_t px = r * W + c;
        const auto ray = camera.ray<S>(r, c, basis);
        if (cached) {
          ray_backward(field, ray, light, cfg, cache->traces[px], cache->tapes[px], dC, dO, dD, dN,
                       out);
        } else {
          march_ray(field, ray, latent, light, cfg, pixel_key(cfg, px), local, ws, &local_tapes);
          ray_backward(field, ray, light, cfg, local, local_tapes, dC, dO, dD, dN, out);
        }
      }
    }
  });
  if (cached) cache->valid = false;
  if (threads > 1)
    for (const auto& part : partial)
      for (std::size_t i = 0; i < part.size(); ++i) grad[i] += part[i];
}

}  // namespace a3d
