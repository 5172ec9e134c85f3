// SPDX-License-Identifier: Apache-2.0
//
// Optimization loops: joint generation over the latent simplex, photometric
// fitting to posed views, and the structure-preserving transformation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "a3d/camera.hpp"
#include "a3d/core.hpp"
#include "a3d/field.hpp"
#include "a3d/guidance.hpp"
#include "a3d/latent.hpp"
#include "a3d/losses.hpp"
#include "a3d/optimizer.hpp"
#include "a3d/render.hpp"

namespace a3d {

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Latent sampling
// ---------------------------------------------------------------------------

enum class Site { vertex, edge };

inline const char* to_string(Site s) { return s == Site::vertex ? "vertex" : "edge"; }

struct LatentSample {
  LatentCode code;
  Site site = Site::vertex;
  /// Vertex index, or the edge endpoints (first gets weight t).
  std::size_t i = 0, j = 0;
  double t = 1.0;
};

/// With probability 1 - p a uniformly chosen vertex; otherwise a uniformly
/// chosen unordered vertex pair {i, j} and u = t e_i + (1 - t) e_j, t ~ U(0, 1).
/// Always exactly one bernoulli draw, then the draws of the chosen branch.
inline LatentSample sample_latent(double p, std::size_t n, Rng& rng) {
  if (n == 0) throw ConfigError("sample_latent: N must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("sample_latent: p must lie in [0, 1]");
  const bool edge = rng.bernoulli(p) && n >= 2;
  LatentSample s;
  if (!edge) {
    s.i = s.j = rng.index(n);
    s.code = LatentCode::vertex(n, s.i);
    return s;
  }
  // unordered pairs enumerated row by row: (0,1) (0,2) .. (1,2) ..
  std::size_t k = rng.index(n * (n - 1) / 2);
  std::size_t a = 0;
  while (k >= n - 1 - a) {
    k -= n - 1 - a;
    ++a;
  }
  s.site = Site::edge;
  s.i = a;
  s.j = a + 1 + k;
  s.t = rng.uniform();
  s.code = LatentCode::edge(n, s.i, s.j, s.t);
  return s;
}

struct SimplexSampler {
  double p = 0.5;
  Rng rng{0};

  LatentSample operator()(std::size_t n) { return sample_latent(p, n, rng); }
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Render resolution from a given fraction of training onward.
struct ResolutionStep {
  double from_fraction = 0.0;
  std::uint32_t resolution = 64;
  bool operator==(const ResolutionStep&) const = default;
};

struct LightingConfig {
  /// Random lighting near the camera direction, or plain albedo.
  bool random = true;
  double ambient_min = 0.1;
  double ambient_max = 0.4;
  /// Std-dev of the perturbation added to the unit camera direction.
  double direction_jitter = 0.3;
  bool operator==(const LightingConfig&) const = default;
};

inline LightSample sample_light(const LightingConfig& cfg, const Camera& cam, Rng& rng) {
  if (!cfg.random) return LightSample::unlit();
  const Vec3d base = normalized(cam.position - cam.target);
  const Vec3d jitter{rng.normal(), rng.normal(), rng.normal()};
  Vec3d dir = base + jitter * cfg.direction_jitter;
  if (norm(dir) < 1e-6) dir = base;
  const double a = rng.uniform(cfg.ambient_min, cfg.ambient_max);
  LightSample l;
  l.direction = normalized(dir);
  l.ambient = {a, a, a};
  l.diffuse = {1.0 - a, 1.0 - a, 1.0 - a};
  return l;
}

struct GenerationConfig {
  std::uint64_t iterations = 10000;
  double p = 0.5;
  ConditioningMode conditioning_mode = ConditioningMode::blended;
  double sds_weight = 1.0;
  double orientation_weight_start = 100.0;
  double orientation_weight_end = 1000.0;
  double normal_smoothness_weight = 10.0;
  std::uint32_t views_per_step = 1;
  std::vector<ResolutionStep> resolution_schedule{{0.0, 64}, {0.5, 128}};
  double guidance_scale = 1.0;
  CameraSampling cameras{};
  LightingConfig lighting{};
  RayMarchConfig render{};
  AdamConfig adam{};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("generation: p must lie in [0, 1]");
    for (double w : {sds_weight, orientation_weight_start, orientation_weight_end,
                     normal_smoothness_weight})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("generation: weights must be >= 0");
    if (orientation_weight_end < orientation_weight_start)
      throw ConfigError("generation: orientation ramp must be non-decreasing");
    if (views_per_step < 1) throw ConfigError("generation: views_per_step must be >= 1");
    if (resolution_schedule.empty() || resolution_schedule.front().from_fraction != 0.0)
      throw ConfigError("generation: resolution schedule must start at fraction 0");
    for (std::size_t k = 0; k < resolution_schedule.size(); ++k) {
      if (resolution_schedule[k].resolution < 2)
        throw ConfigError("generation: resolutions must be >= 2");
      if (k > 0 && !(resolution_schedule[k].from_fraction > resolution_schedule[k - 1].from_fraction))
        throw ConfigError("generation: resolution schedule fractions must increase");
    }
    render.validate();
  }

  /// Orientation weight at iteration k: linear from start (k = 0) to end
  /// (k = iterations - 1).
  double orientation_weight(std::uint64_t k) const {
    if (iterations <= 1) return orientation_weight_start;
    return orientation_weight_start + (orientation_weight_end - orientation_weight_start) *
                                          double(k) / double(iterations - 1);
  }

  std::uint32_t resolution(std::uint64_t k) const {
    const double f = iterations == 0 ? 0.0 : double(k) / double(iterations);
    std::uint32_t r = resolution_schedule.front().resolution;
    for (const auto& s : resolution_schedule)
      if (f >= s.from_fraction) r = s.resolution;
    return r;
  }
};

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

struct StepRecord {
  std::uint64_t iteration = 0;
  LossBreakdown losses;
  std::vector<double> u;
  Site site = Site::vertex;
  double t = 0.0;
  bool skipped = false;
  std::string note;
};

struct TrainingCallbacks {
  std::function<void(const StepRecord&)> on_step;
  /// Called every checkpoint_every iterations and after the last one.
  std::function<void(std::uint64_t iteration)> on_checkpoint;
  std::uint64_t checkpoint_every = 0;
};

struct TrainingResult {
  std::uint64_t iterations = 0;
  std::uint64_t skipped_steps = 0;
  std::vector<StepRecord> log;
};

// ---------------------------------------------------------------------------
// Shared generation loop
// ---------------------------------------------------------------------------

namespace detail {

/// Extra loss on top of the generation objective. Returns false when it did
/// not contribute to this step; it must not touch the main random stream.
template <class S>
using ExtraTerm = std::function<bool(std::uint64_t iteration, const LatentSample& u,
                                     LatentField<S>& field, std::span<S> grad,
                                     LossBreakdown& losses)>;

template <class S>
Image<S> view_directions(const Camera& cam) {
  Image<S> v(cam.height, cam.width, 3);
  const auto b = cam.basis();
  for (std::size_t r = 0; r < cam.height; ++r)
    for (std::size_t c = 0; c < cam.width; ++c) {
      const auto ray = cam.ray<S>(r, c, b);
      for (int ch = 0; ch < 3; ++ch) v(r, c, ch) = ray.direction[ch];
    }
  return v;
}

template <class S>
TrainingResult generation_loop(const GenerationConfig& cfg, LatentField<S>& field,
                               const EmbeddingSet& embeddings, const Critic& critic,
                               const DiffusionSchedule& schedule,
                               const TrainingCallbacks& cb, const ExtraTerm<S>& extra) {
  cfg.validate();
  schedule.validate();
  embeddings.validate();
  const std::size_t n = field.latent_dim();
  if (embeddings.vertices.size() != n)
    throw ConfigError("generation: embedding count does not match the latent dimension");

  Rng rng(cfg.seed);
  AdamState adam = AdamState::for_field(field.layout().grid_count, field.parameter_count(), cfg.adam);
  std::vector<S> grad(field.parameter_count());
  const double bounds_radius = field.config().grid.bounds.radius();
  RenderCache<LatentField<S>> cache;
  TrainingResult result;

  for (std::uint64_t k = 0; k < cfg.iterations; ++k) {
    StepRecord rec;
    rec.iteration = k;
    const LatentSample u = sample_latent(cfg.p, n, rng);
    rec.u = u.code.values();
    rec.site = u.site;
    const Conditioning cond = make_conditioning(u.code, embeddings, cfg.conditioning_mode);
    const LatentSource source(u.code);
    std::fill(grad.begin(), grad.end(), S(0));
    const std::uint32_t res = cfg.resolution(k);
    const double w_orient = cfg.orientation_weight(k);

    bool ok = true;
    double sds_acc = 0.0, orient_acc = 0.0, smooth_acc = 0.0;
    for (std::uint32_t v = 0; v < cfg.views_per_step && ok; ++v) {
      const Camera cam = sample_training_camera(rng, cfg.cameras, bounds_radius, res, res);
      const LightSample light = sample_light(cfg.lighting, cam, rng);
      RayMarchConfig rm = cfg.render;
      rm.jitter_seed = rng.engine()();
      const auto view = render_view(field, cam, source, light, rm, &cache);
      const SdsDraw draw = draw_sds_noise(image_cast<float>(view.rgb), k, schedule, rng);
      rec.t = draw.t;

      Image<float> g;
      try {
        g = sds_image_grad(image_cast<float>(view.rgb), cond, critic, schedule, draw, cam,
                           cfg.guidance_scale);
      } catch (const GuidanceError& e) {
        ok = false;
        rec.note = e.what();
        break;
      }
      const double vs = 1.0 / double(cfg.views_per_step);
      ViewGradients<S> dv;
      dv.rgb = Image<S>(res, res, 3);
      double sds = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        sds += 0.5 * double(g.data()[i]) * double(g.data()[i]);
        dv.rgb.data()[i] = static_cast<S>(cfg.sds_weight * vs * double(g.data()[i]));
      }
      sds_acc += sds * vs;

      if (w_orient > 0.0) {
        const auto orient = orientation_penalty(view.normal, view_directions<S>(cam), view.opacity,
                                                rm.normal_opacity_threshold);
        orient_acc += orient.value * vs;
        dv.normal = Image<S>(res, res, 3);
        for (std::size_t i = 0; i < dv.normal.size(); ++i)
          dv.normal.data()[i] = static_cast<S>(w_orient * vs * double(orient.d_normal.data()[i]));
        dv.opacity = Image<S>(res, res, 1);
        for (std::size_t i = 0; i < dv.opacity.size(); ++i)
          dv.opacity.data()[i] = static_cast<S>(w_orient * vs * double(orient.d_opacity.data()[i]));
      }
      if (cfg.normal_smoothness_weight > 0.0) {
        const auto sm = normal_smoothness_loss(view.normal);
        smooth_acc += sm.value * vs;
        if (dv.normal.empty()) dv.normal = Image<S>(res, res, 3);
        for (std::size_t i = 0; i < dv.normal.size(); ++i)
          dv.normal.data()[i] +=
              static_cast<S>(cfg.normal_smoothness_weight * vs * double(sm.grad.data()[i]));
      }
      render_view_backward(field, cam, source, light, rm, dv, grad, &cache);
    }

    if (!ok) {
      rec.skipped = true;
      ++result.skipped_steps;
      if (cb.on_step) cb.on_step(rec);
      result.log.push_back(std::move(rec));
      continue;
    }

    rec.losses.set("sds", sds_acc, cfg.sds_weight);
    rec.losses.set("orientation", orient_acc, w_orient);
    rec.losses.set("normal_smoothness", smooth_acc, cfg.normal_smoothness_weight);
    if (extra) extra(k, u, field, grad, rec.losses);
    rec.losses.check_finite();
    for (S gval : grad)
      if (!std::isfinite(gval)) throw NonFiniteLoss("gradient", double(gval));

    adam_step<S>(field.params(), grad, adam);
    if (cb.on_step) cb.on_step(rec);
    result.log.push_back(std::move(rec));
    result.iterations = k + 1;
    if (cb.on_checkpoint && cb.checkpoint_every > 0 && (k + 1) % cb.checkpoint_every == 0)
      cb.on_checkpoint(k + 1);
  }
  result.iterations = cfg.iterations;
  if (cb.on_checkpoint && cfg.iterations > 0 &&
      (cb.checkpoint_every == 0 || cfg.iterations % cb.checkpoint_every != 0))
    cb.on_checkpoint(cfg.iterations);
  return result;
}

}  // namespace detail

/// Joint generation: each step samples a latent code, a camera and a light,
/// renders, and descends SDS plus the orientation and normal-smoothness
/// regularizers.
template <class S>
TrainingResult train_generation(const GenerationConfig& cfg, LatentField<S>& field,
                                const EmbeddingSet& embeddings, const Critic& critic,
                                const DiffusionSchedule& schedule,
                                const TrainingCallbacks& cb = {}) {
  return detail::generation_loop<S>(cfg, field, embeddings, critic, schedule, cb, {});
}

// ---------------------------------------------------------------------------
// Photometric fitting
// ---------------------------------------------------------------------------

struct PosedView {
  Camera camera;
  Image<float> rgb;  // H x W x 3
};

struct FitConfig {
  std::uint64_t iterations = 3000;
  std::size_t batch_rays = 1024;
  /// Stop early once the mean PSNR on check_views reaches this (0 disables).
  double psnr_target = 0.0;
  std::uint64_t check_every = 250;
  RayMarchConfig render{};
  AdamConfig adam{};
  std::uint64_t seed = 0;
  /// Divergence: mean loss over the last `window` steps exceeds `factor` times
  /// the mean over the window that ended `span` steps earlier.
  std::uint64_t divergence_span = 200;
  std::uint64_t divergence_window = 50;
  double divergence_factor = 10.0;
};

struct FitResult {
  std::uint64_t iterations = 0;
  double final_loss = 0.0;
  std::optional<double> psnr;
  std::vector<double> losses;
};

/// Uniform point of the latent space: u = (t, 1 - t) on a segment, a flat
/// Dirichlet draw otherwise.
inline LatentCode sample_uniform_latent(std::size_t n, Rng& rng) {
  if (n == 1) return LatentCode::vertex(1, 0);
  if (n == 2) return LatentCode::edge(2, 0, 1, rng.uniform());
  std::vector<double> e(n);
  double sum = 0.0;
  for (auto& v : e) {
    v = -std::log(1.0 - rng.uniform());
    sum += v;
  }
  for (auto& v : e) v /= sum;
  return LatentCode(std::move(e));
}

template <class S>
double mean_psnr(const LatentField<S>& field, std::span<const PosedView> views,
                 const LatentCode& u, const RayMarchConfig& render) {
  if (views.empty()) throw InvalidInput("psnr: no views");
  double acc = 0.0;
  for (const auto& v : views) {
    const auto out = render_view(field, v.camera, LatentSource(u), LightSample::unlit(), render);
    acc += psnr(image_cast<float>(out.rgb), v.rgb);
  }
  return acc / double(views.size());
}

/// Photometric fit of the field to posed views with the latent code drawn
/// uniformly over the whole latent space each step.
template <class S>
FitResult fit_to_views(const FitConfig& cfg, LatentField<S>& field,
                       std::span<const PosedView> views,
                       std::span<const PosedView> check_views = {}) {
  if (views.empty()) throw InvalidInput("fit_to_views: no source views");
  if (cfg.batch_rays == 0) throw ConfigError("fit_to_views: batch_rays must be >= 1");
  cfg.render.validate();
  for (const auto& v : views) {
    v.camera.validate();
    if (v.rgb.height() != v.camera.height || v.rgb.width() != v.camera.width ||
        v.rgb.channels() != 3)
      throw InvalidInput("fit_to_views: view image does not match its camera");
  }
  Rng rng(cfg.seed);
  AdamState adam = AdamState::for_field(field.layout().grid_count, field.parameter_count(), cfg.adam);
  std::vector<S> grad(field.parameter_count());
  const std::size_t n = field.latent_dim();
  const LightSample light = LightSample::unlit();
  RayMarchConfig rm = cfg.render;
  RayTrace<S> tr;
  auto ws = field.make_workspace();
  std::vector<typename LatentField<S>::Workspace> tapes(rm.n_samples + 6, field.make_workspace());
  FitResult res;

  for (std::uint64_t k = 0; k < cfg.iterations; ++k) {
    std::fill(grad.begin(), grad.end(), S(0));
    const LatentSource source(sample_uniform_latent(n, rng));
    rm.jitter_seed = rng.engine()();
    double loss = 0.0;
    const double inv = 1.0 / double(cfg.batch_rays);
    for (std::size_t b = 0; b < cfg.batch_rays; ++b) {
      const PosedView& v = views[rng.index(views.size())];
      const std::size_t r = rng.index(v.camera.height), c = rng.index(v.camera.width);
      const auto ray = v.camera.template ray<S>(r, c);
      march_ray(field, ray, source, light, rm, pixel_key(rm, b), tr, ws, &tapes);
      Vec3<S> d{};
      for (int ch = 0; ch < 3; ++ch) {
        const double diff = double(tr.color[ch]) - double(v.rgb(r, c, ch));
        loss += diff * diff * inv;
        d[ch] = static_cast<S>(2.0 * diff * inv);
      }
      ray_backward(field, ray, light, rm, tr, tapes, d, S(0), S(0), Vec3<S>{}, grad);
    }
    if (!std::isfinite(loss)) throw NonFiniteLoss("photometric", loss);
    res.losses.push_back(loss);
    adam_step<S>(field.params(), grad, adam);
    res.iterations = k + 1;
    res.final_loss = loss;

    const std::uint64_t span = cfg.divergence_span, win = cfg.divergence_window;
    if (win > 0 && res.losses.size() >= span + win) {
      const std::size_t end = res.losses.size();
      double now = 0.0, before = 0.0;
      for (std::size_t i = end - win; i < end; ++i) now += res.losses[i];
      for (std::size_t i = end - span - win; i < end - span; ++i) before += res.losses[i];
      if (now > cfg.divergence_factor * before)
        throw TrainingDiverged("fit_to_views diverged at step " + std::to_string(k) +
                               ": mean loss " + std::to_string(now / double(win)) + " vs " +
                               std::to_string(before / double(win)) + " " +
                               std::to_string(span) + " steps earlier");
    }
    if (cfg.psnr_target > 0.0 && !check_views.empty() && cfg.check_every > 0 &&
        (k + 1) % cfg.check_every == 0) {
      RayMarchConfig eval = cfg.render;
      eval.stratified_jitter = false;
      double worst = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i)
        worst = std::min(worst, mean_psnr(field, check_views, LatentCode::vertex(n, i), eval));
      res.psnr = worst;
      if (worst >= cfg.psnr_target) break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Transformation
// ---------------------------------------------------------------------------

struct TransformConfig {
  GenerationConfig generation{};
  std::vector<PosedView> source_views;
  double photometric_weight = 1.0;
  std::size_t source_vertex_index = 0;
};

/// Generation over a 2-object segment plus a photometric term, applied only at
/// steps whose latent code is the source vertex, against a random source view.
template <class S>
TrainingResult train_transform(const TransformConfig& cfg, LatentField<S>& field,
                               const EmbeddingSet& embeddings, const Critic& critic,
                               const DiffusionSchedule& schedule,
                               const TrainingCallbacks& cb = {}) {
  if (field.latent_dim() != 2) throw ConfigError("transform: the latent space must be a segment (N = 2)");
  if (cfg.source_vertex_index >= 2) throw ConfigError("transform: source_vertex_index must be 0 or 1");
  if (!(cfg.photometric_weight >= 0.0)) throw ConfigError("transform: photometric_weight must be >= 0");
  if (cfg.photometric_weight > 0.0 && cfg.source_views.empty())
    throw ConfigError("transform: photometric term needs source views");
  if (cfg.photometric_weight == 0.0)
    return detail::generation_loop<S>(cfg.generation, field, embeddings, critic, schedule, cb, {});

  auto hook_rng = std::make_shared<Rng>(cfg.generation.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t src = cfg.source_vertex_index;
  const double weight = cfg.photometric_weight;
  const auto& views = cfg.source_views;
  RayMarchConfig rm = cfg.generation.render;
  rm.stratified_jitter = false;
  detail::ExtraTerm<S> extra = [&, hook_rng, rm](std::uint64_t, const LatentSample& u,
                                                 LatentField<S>& f, std::span<S> grad,
                                                 LossBreakdown& losses) {
    if (u.site != Site::vertex || u.i != src) {
      losses.set("photometric", 0.0, weight);
      return false;
    }
    const PosedView& v = views[hook_rng->index(views.size())];
    const LatentSource source(u.code);
    const auto out = render_view(f, v.camera, source, LightSample::unlit(), rm);
    const auto ph = photometric_loss(out.rgb, image_cast<S>(v.rgb));
    ViewGradients<S> dv;
    dv.rgb = ph.grad;
    for (auto& x : dv.rgb.data()) x = static_cast<S>(weight * double(x));
    render_view_backward(f, v.camera, source, LightSample::unlit(), rm, dv, grad);
    losses.set("photometric", ph.value, weight);
    return true;
  };
  return detail::generation_loop<S>(cfg.generation, field, embeddings, critic, schedule, cb, extra);
}

}  // namespace a3d
