// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>

#include "a3d/fixtures.hpp"
#include "a3d/gradcheck.hpp"
#include "a3d/presets.hpp"
#include "a3d/trainer.hpp"

using namespace a3d;

namespace {

GenerationConfig quick_generation(std::uint64_t iterations) {
  GenerationConfig g;
  g.iterations = iterations;
  g.resolution_schedule = {{0.0, 12}};
  g.render.n_samples = 16;
  g.render.stratified_jitter = true;
  g.lighting.random = true;
  g.seed = 5;
  return g;
}

LatentField<float> small_field(std::uint64_t seed = 1) {
  LatentField<float> f(GradCheckConfig::tiny_field());
  f.initialize(seed);
  return f;
}

DiffusionSchedule schedule_for(std::uint64_t iterations) {
  DiffusionSchedule s;
  s.horizon = iterations;
  return s;
}

std::vector<PosedView> sphere_views(std::size_t n, std::size_t res, std::uint64_t seed) {
  const Shape s = toy_shapes()[0];
  RayMarchConfig rm;
  rm.n_samples = 32;
  Rng rng(seed);
  std::vector<PosedView> views;
  for (std::size_t k = 0; k < n; ++k) {
    const Camera cam = sample_training_camera(rng, CameraSampling{}, 1.0, res, res);
    views.push_back({cam, render_shape_target(s, cam, rm)});
  }
  return views;
}

class FlakyCritic : public Critic {
 public:
  explicit FlakyCritic(std::shared_ptr<const Critic> inner) : inner_(std::move(inner)) {}
  Image<float> denoise(const DenoiseRequest& req) const override {
    if (calls_++ % 2 == 1) throw ProtocolError("simulated outage");
    return inner_->denoise(req);
  }

 private:
  std::shared_ptr<const Critic> inner_;
  mutable std::atomic<int> calls_{0};
};

}  // namespace

TEST(Generation, RunsAndLogsEveryTerm) {
  auto field = small_field();
  const auto cfg = quick_generation(6);
  const auto critic = shape_critic(toy_shapes(), cfg.render, schedule_for(6));
  std::vector<std::uint64_t> checkpoints;
  TrainingCallbacks cb;
  cb.checkpoint_every = 4;
  cb.on_checkpoint = [&](std::uint64_t k) { checkpoints.push_back(k); };
  const auto before = std::vector<float>(field.params().begin(), field.params().end());
  const auto r = train_generation(cfg, field, EmbeddingSet::one_hot({"sphere", "box"}), *critic,
                                  schedule_for(6), cb);
  EXPECT_EQ(r.iterations, 6u);
  EXPECT_EQ(r.skipped_steps, 0u);
  ASSERT_EQ(r.log.size(), 6u);
  EXPECT_EQ(checkpoints, (std::vector<std::uint64_t>{4, 6}));
  for (const auto& rec : r.log) {
    EXPECT_TRUE(rec.losses.terms.count("sds"));
    EXPECT_TRUE(rec.losses.terms.count("orientation"));
    EXPECT_EQ(rec.losses.weight("normal_smoothness"), 10.0);
    EXPECT_TRUE(LatentCode::on_simplex(rec.u));
  }
  EXPECT_EQ(r.log.front().losses.weight("orientation"), 100.0);
  EXPECT_EQ(r.log.back().losses.weight("orientation"), 1000.0);
  EXPECT_NE(before, std::vector<float>(field.params().begin(), field.params().end()));
  EXPECT_TRUE(field.all_finite());
}

TEST(Generation, DeterministicForASeed) {
  const auto cfg = quick_generation(4);
  const auto critic = shape_critic(toy_shapes(), cfg.render, schedule_for(4));
  const auto emb = EmbeddingSet::one_hot({"sphere", "box"});
  auto a = small_field(), b = small_field();
  train_generation(cfg, a, emb, *critic, schedule_for(4));
  train_generation(cfg, b, emb, *critic, schedule_for(4));
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}

TEST(Generation, GuidanceFailuresSkipTheStep) {
  const auto cfg = quick_generation(6);
  const auto inner = shape_critic(toy_shapes(), cfg.render, schedule_for(6));
  const FlakyCritic critic(inner);
  auto field = small_field();
  const auto r = train_generation(cfg, field, EmbeddingSet::one_hot({"sphere", "box"}), critic,
                                  schedule_for(6));
  EXPECT_EQ(r.skipped_steps, 3u);
  EXPECT_TRUE(r.log[1].skipped);
  EXPECT_NE(r.log[1].note.find("simulated outage"), std::string::npos);
  EXPECT_FALSE(r.log[2].skipped);
}

TEST(Generation, RejectsMismatchedEmbeddings) {
  const auto cfg = quick_generation(2);
  const auto critic = shape_critic(toy_shapes(), cfg.render, schedule_for(2));
  auto field = small_field();
  EXPECT_THROW(train_generation(cfg, field, EmbeddingSet::one_hot({"a", "b", "c"}), *critic,
                                schedule_for(2)),
               ConfigError);
}

TEST(Transform, ZeroPhotometricWeightReproducesGeneration) {
  const auto gen = quick_generation(5);
  const auto critic = shape_critic(toy_shapes(), gen.render, schedule_for(5));
  const auto emb = EmbeddingSet::one_hot({"sphere", "box"});
  auto a = small_field(), b = small_field();
  const auto ra = train_generation(gen, a, emb, *critic, schedule_for(5));
  TransformConfig tc;
  tc.generation = gen;
  tc.photometric_weight = 0.0;
  tc.source_views = sphere_views(2, 12, 1);
  const auto rb = train_transform(tc, b, emb, *critic, schedule_for(5));
  ASSERT_EQ(ra.log.size(), rb.log.size());
  for (std::size_t k = 0; k < ra.log.size(); ++k) {
    EXPECT_EQ(ra.log[k].u, rb.log[k].u);
    EXPECT_EQ(ra.log[k].t, rb.log[k].t);
    EXPECT_EQ(ra.log[k].losses.total(), rb.log[k].losses.total());
  }
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}

TEST(Transform, PhotometricTermOnlyAtTheSourceVertex) {
  auto gen = quick_generation(12);
  gen.p = 0.5;
  const auto critic = shape_critic(toy_shapes(), gen.render, schedule_for(12));
  auto field = small_field();
  TransformConfig tc;
  tc.generation = gen;
  tc.source_views = sphere_views(3, 12, 2);
  tc.photometric_weight = 2.0;
  tc.source_vertex_index = 1;
  const auto r = train_transform(tc, field, EmbeddingSet::one_hot({"sphere", "box"}), *critic,
                                 schedule_for(12));
  int active = 0;
  for (const auto& rec : r.log) {
    const bool source = rec.site == Site::vertex && rec.u[1] == 1.0;
    EXPECT_EQ(rec.losses.weight("photometric"), 2.0);
    if (source) {
      ++active;
      EXPECT_GT(rec.losses.value("photometric"), 0.0);
    } else {
      EXPECT_EQ(rec.losses.value("photometric"), 0.0);
    }
  }
  EXPECT_GT(active, 0);
}

TEST(Transform, ValidatesItsConfiguration) {
  const auto gen = quick_generation(1);
  const auto critic = shape_critic(toy_shapes(), gen.render, schedule_for(1));
  TransformConfig tc;
  tc.generation = gen;
  auto f2 = small_field();
  EXPECT_THROW(train_transform(tc, f2, EmbeddingSet::one_hot({"a", "b"}), *critic, schedule_for(1)),
               ConfigError);  // no source views
  tc.photometric_weight = 1.0;
  tc.source_views = sphere_views(1, 12, 1);
  tc.source_vertex_index = 2;
  EXPECT_THROW(train_transform(tc, f2, EmbeddingSet::one_hot({"a", "b"}), *critic, schedule_for(1)),
               ConfigError);
  FieldConfig three = GradCheckConfig::tiny_field();
  three.latent_dim = 3;
  LatentField<float> f3(three);
  tc.source_vertex_index = 0;
  EXPECT_THROW(train_transform(tc, f3, EmbeddingSet::one_hot({"a", "b", "c"}), *critic, schedule_for(1)),
               ConfigError);
}

TEST(Fit, ConvergesOnIdenticalTargets) {
  auto field = LatentField<float>(toy_field_config(2));
  field.initialize(3);
  const auto views = sphere_views(8, 24, 4);
  FitConfig fc;
  fc.iterations = 300;
  fc.batch_rays = 256;
  fc.render.n_samples = 32;
  fc.render.stratified_jitter = true;
  const auto r = fit_to_views(fc, field, std::span<const PosedView>(views));
  ASSERT_EQ(r.losses.size(), 300u);
  double head = 0, tail = 0;
  for (int k = 0; k < 20; ++k) head += r.losses[k], tail += r.losses[280 + k];
  EXPECT_LT(tail, 0.25 * head);
  // every latent code shows the same object, so both vertices agree with the views
  RayMarchConfig eval = fc.render;
  eval.stratified_jitter = false;
  const double p0 = mean_psnr(field, std::span<const PosedView>(views), LatentCode::vertex(2, 0), eval);
  const double p1 = mean_psnr(field, std::span<const PosedView>(views), LatentCode::vertex(2, 1), eval);
  EXPECT_GT(p0, 17.0);
  EXPECT_GT(p1, 17.0);
}

TEST(Fit, StopsAtThePsnrTarget) {
  auto field = LatentField<float>(toy_field_config(2));
  field.initialize(3);
  const auto views = sphere_views(6, 16, 4);
  FitConfig fc;
  fc.iterations = 1000;
  fc.batch_rays = 256;
  fc.render.n_samples = 24;
  fc.psnr_target = 12.0;
  fc.check_every = 20;
  const auto r = fit_to_views(fc, field, std::span<const PosedView>(views), std::span<const PosedView>(views));
  ASSERT_TRUE(r.psnr.has_value());
  EXPECT_GE(*r.psnr, 12.0);
  EXPECT_LT(r.iterations, 1000u);
  EXPECT_EQ(r.iterations % 20, 0u);
}

TEST(Fit, RejectsInconsistentViews) {
  auto field = small_field();
  auto views = sphere_views(1, 8, 1);
  views[0].rgb = Image<float>(4, 4, 3);
  EXPECT_THROW(fit_to_views(FitConfig{}, field, std::span<const PosedView>(views)), InvalidInput);
  EXPECT_THROW(fit_to_views(FitConfig{}, field, std::span<const PosedView>{}), InvalidInput);
}
