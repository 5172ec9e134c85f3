// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale presets: the toy two-object scene used by the ablation runs and
// the sample configuration.

#pragma once

#include "a3d/config.hpp"
#include "a3d/fixtures.hpp"

namespace a3d {

/// 4 levels from resolution 8, doubling per level, 2^14 rows, MLP width 16.
inline FieldConfig toy_field_config(std::uint32_t latent_dim = 2) {
  FieldConfig f;
  f.grid.levels = 4;
  f.grid.base_resolution = 8;
  f.grid.per_level_scale = 2.0;
  f.grid.table_size_log2 = 14;
  f.mlp.width = 16;
  f.latent_dim = latent_dim;
  return f;
}

/// Unlit 64x64 renders with 32 jittered samples per ray.
inline RayMarchConfig toy_render_config() {
  RayMarchConfig r;
  r.n_samples = 32;
  r.stratified_jitter = true;
  return r;
}

/// Toy session: sphere and box point-mass targets, N = 2.
inline SessionConfig toy_session(double p = 0.5, std::uint64_t iterations = 2000,
                                 std::uint64_t seed = 0) {
  SessionConfig s;
  s.prompts = {"sphere", "box"};
  s.field = toy_field_config(2);
  s.render = toy_render_config();
  s.generation.iterations = iterations;
  s.generation.p = p;
  s.generation.resolution_schedule = {{0.0, 64}};
  s.generation.lighting.random = false;
  s.schedule.horizon = iterations;
  s.critic.kind = CriticSpec::Kind::point_mass;
  s.critic.shapes = toy_shapes();
  s.seed = seed;
  s.output_dir = "out/toy";
  return s;
}

}  // namespace a3d
