// SPDX-License-Identifier: Apache-2.0
//
// End-to-end gradient check: hand-written reverse mode through render and
// photometric loss against double-precision central differences.

#pragma once

#include <vector>

#include "a3d/field.hpp"
#include "a3d/losses.hpp"
#include "a3d/optimizer.hpp"
#include "a3d/render.hpp"

namespace a3d {

struct GradCheckConfig {
  FieldConfig field = tiny_field();
  std::size_t image_size = 8;
  std::uint32_t n_samples = 16;
  std::size_t params = 100;
  std::vector<double> steps{1e-3, 1e-4, 1e-5};
  /// Grid entries are drawn from [-grid_scale, grid_scale] so the encoding
  /// carries real signal (the training init is nearly zero).
  double grid_scale = 0.3;
  /// Weight of the normal-smoothness term added to the photometric loss.
  double normal_weight = 0.1;
  bool lit = true;
  std::uint64_t seed = 3;

  /// 2 levels, MLP width 8.
  static FieldConfig tiny_field() {
    FieldConfig f;
    f.grid.levels = 2;
    f.grid.base_resolution = 4;
    f.grid.per_level_scale = 2.0;
    f.grid.table_size_log2 = 10;
    f.mlp.width = 8;
    f.latent_dim = 2;
    return f;
  }
};

inline FiniteDiffReport render_gradient_check(const GradCheckConfig& cfg) {
  LatentField<double> field(cfg.field);
  field.initialize(cfg.seed);
  Rng rng(cfg.seed + 1);
  for (std::size_t i = 0; i < field.layout().grid_count; ++i)
    field.params()[i] = rng.uniform(-cfg.grid_scale, cfg.grid_scale);

  const Camera cam = orbit_camera(0.3, 0.3, 2.0, 40.0 * kPi / 180.0, cfg.image_size, cfg.image_size);
  RayMarchConfig rm;
  rm.n_samples = cfg.n_samples;
  LightSample light = LightSample::unlit();
  if (cfg.lit) {
    light.direction = normalized(Vec3d{0.3, -0.5, 0.8});
    light.ambient = {0.3, 0.3, 0.3};
    light.diffuse = {0.7, 0.7, 0.7};
  }
  std::vector<double> mix(cfg.field.latent_dim, 0.0);
  mix[0] = 0.7;
  if (mix.size() > 1) mix[1] = 0.3;
  else mix[0] = 1.0;
  const LatentSource u{LatentCode(mix)};
  Image<double> target(cfg.image_size, cfg.image_size, 3);
  for (auto& v : target.data()) v = rng.uniform();

  auto loss = [&](std::span<const double> p) {
    LatentField<double> q = field;
    std::copy(p.begin(), p.end(), q.params().begin());
    const auto v = render_view(q, cam, u, light, rm);
    double l = photometric_loss(v.rgb, target, false).value;
    if (cfg.normal_weight > 0) l += cfg.normal_weight * normal_smoothness_loss(v.normal, false).value;
    return l;
  };

  const auto view = render_view(field, cam, u, light, rm);
  ViewGradients<double> g;
  g.rgb = photometric_loss(view.rgb, target).grad;
  if (cfg.normal_weight > 0) {
    g.normal = normal_smoothness_loss(view.normal).grad;
    for (auto& x : g.normal.data()) x *= cfg.normal_weight;
  }
  std::vector<double> analytic(field.parameter_count(), 0.0);
  render_view_backward(field, cam, u, light, rm, g, analytic);

  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < cfg.params; ++k) idx.push_back(rng.index(field.parameter_count()));
  const std::vector<double> p(field.params().begin(), field.params().end());
  return finite_diff_check(loss, p, analytic, idx, cfg.steps);
}

}  // namespace a3d
