// SPDX-License-Identifier: Apache-2.0
//
// Session-level pipelines: critic construction, generation, transformation.

#pragma once

#include <memory>
#include <vector>

#include "a3d/checkpoint.hpp"
#include "a3d/config.hpp"
#include "a3d/fixtures.hpp"
#include "a3d/remote_critic.hpp"
#include "a3d/trainer.hpp"

namespace a3d {

inline std::shared_ptr<const Critic> make_critic(const SessionConfig& s) {
  if (s.critic.kind == CriticSpec::Kind::remote)
    return std::make_shared<RemoteCritic>(s.critic.remote);
  return shape_critic(s.critic.shapes, s.render, s.schedule);
}

inline LatentField<float> initial_field(const SessionConfig& s) {
  FieldConfig fc = s.field;
  fc.latent_dim = static_cast<std::uint32_t>(s.latent_dim());
  LatentField<float> f(fc);
  f.initialize(s.seed);
  return f;
}

struct PipelineResult {
  Checkpoint checkpoint;
  TrainingResult training;
  std::optional<FitResult> fit;
};

/// Trains `field` (usually from initial_field) in place.
inline PipelineResult run_generation(const SessionConfig& s, LatentField<float>& field,
                                     const TrainingCallbacks& cb = {}) {
  const auto critic = make_critic(s);
  PipelineResult r;
  r.training = train_generation(s.generation_config(), field, s.embeddings(), *critic, s.schedule, cb);
  r.checkpoint = Checkpoint::from_field(field, s.prompts, r.training.iterations, s.render);
  return r;
}

/// Posed views of the transformation source: cameras drawn from the training
/// distribution with a dedicated stream, rendered unlit without jitter.
inline std::vector<PosedView> transform_source_views(const SessionConfig& s) {
  if (!s.transform) throw ConfigError("session has no transform section");
  const TransformSpec& t = *s.transform;
  RayMarchConfig rm = s.render;
  rm.stratified_jitter = false;
  Rng rng(s.seed ^ 0x5eed0f5017ce5ULL);
  std::vector<PosedView> views;
  std::optional<LatentField<float>> src_field;
  if (!t.source.shape) {
    const Checkpoint c = load_checkpoint(s.base_dir / t.source.checkpoint);
    if (t.source.vertex >= c.field.latent_dim)
      throw ConfigError("/transform/source/vertex: the checkpoint has " +
                        std::to_string(c.field.latent_dim) + " objects");
    src_field.emplace(c.make_field());
  }
  const double radius = s.field.grid.bounds.radius();
  for (std::uint32_t k = 0; k < t.views; ++k) {
    const Camera cam = sample_training_camera(rng, s.generation.cameras, radius, t.resolution, t.resolution);
    Image<float> rgb;
    if (t.source.shape) {
      rgb = render_shape_target(*t.source.shape, cam, rm);
    } else {
      const LatentSource u(LatentCode::vertex(src_field->latent_dim(), t.source.vertex));
      rgb = render_view(*src_field, cam, u, LightSample::unlit(), rm).rgb;
    }
    views.push_back({cam, std::move(rgb)});
  }
  return views;
}

/// Photometric initialization across the whole segment, then generation with
/// the source endpoint pinned photometrically.
inline PipelineResult run_transform(const SessionConfig& s, LatentField<float>& field,
                                    const TrainingCallbacks& cb = {}) {
  if (!s.transform) throw ConfigError("session has no transform section");
  const auto views = transform_source_views(s);
  PipelineResult r;
  r.fit = fit_to_views(s.fit_config(), field, std::span<const PosedView>(views));
  TransformConfig tc;
  tc.generation = s.generation_config();
  tc.source_views = views;
  tc.photometric_weight = s.transform->photometric_weight;
  tc.source_vertex_index = s.transform->source_vertex_index;
  const auto critic = make_critic(s);
  r.training = train_transform(tc, field, s.embeddings(), *critic, s.schedule, cb);
  r.checkpoint = Checkpoint::from_field(field, s.prompts, r.training.iterations, s.render);
  return r;
}

}  // namespace a3d
