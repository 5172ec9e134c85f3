// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "a3d/fixtures.hpp"
#include "a3d/guidance.hpp"

using namespace a3d;

namespace {

Image<float> random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image<float> m(h, w, 3);
  for (auto& x : m.data()) x = float(rng.uniform());
  return m;
}

}  // namespace

TEST(Schedule, VariancePreserving) {
  for (auto kind : {DiffusionSchedule::Kind::cosine, DiffusionSchedule::Kind::linear_variance}) {
    DiffusionSchedule s;
    s.kind = kind;
    for (double t = 0.05; t < 1.0; t += 0.1) {
      EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t), 1.0, 1e-12);
      EXPECT_NEAR(s.weight(t), s.sigma(t) * s.sigma(t), 1e-15);
    }
  }
}

TEST(Schedule, AnnealedUpperBound) {
  DiffusionSchedule s;
  s.horizon = 101;
  EXPECT_DOUBLE_EQ(s.t_max(0), 0.98);
  EXPECT_DOUBLE_EQ(s.t_max(100), 0.5);
  EXPECT_DOUBLE_EQ(s.t_max(500), 0.5);
  EXPECT_NEAR(s.t_max(50), 0.74, 1e-12);
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const double t = sample_timestep(100, s, rng);
    EXPECT_GE(t, 0.02);
    EXPECT_LE(t, 0.5);
  }
  s.t_min = 0.6;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Embeddings, BlendIsConvexCombination) {
  EmbeddingSet set;
  set.prompts = {"a", "b", "c"};
  set.vertices = {{{1.0, 2.0}}, {{-1.0, 0.0}}, {{0.5, 4.0}}};
  const auto y = blend_embeddings(LatentCode({0.2, 0.3, 0.5}), set);
  EXPECT_NEAR(y.values[0], 0.2 - 0.3 + 0.25, 1e-15);
  EXPECT_NEAR(y.values[1], 0.4 + 2.0, 1e-15);
  EXPECT_EQ(blend_embeddings(LatentCode::vertex(3, 2), set), set.vertices[2]);
  EXPECT_THROW(blend_embeddings(LatentCode::vertex(2, 0), set), ConfigError);
}

TEST(Embeddings, ConditioningModes) {
  auto set = EmbeddingSet::one_hot({"sphere", "box"});
  const auto edge = LatentCode::edge(2, 0, 1, 0.25);
  const auto blended = make_conditioning(edge, set, ConditioningMode::blended);
  EXPECT_EQ(blended.embedding.values, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(blended.weights, (std::vector<double>{0.25, 0.75}));

  EXPECT_THROW(make_conditioning(edge, set, ConditioningMode::general_prompt), ConfigError);
  set.general_prompt = "a sphere and a box";
  set.general = PromptEmbedding{{0.5, 0.5}};
  const auto general = make_conditioning(edge, set, ConditioningMode::general_prompt);
  EXPECT_EQ(general.prompts, std::vector<std::string>{"a sphere and a box"});
  EXPECT_EQ(general.weights, std::vector<double>{1.0});

  const auto empty = make_conditioning(edge, set, ConditioningMode::unconditioned);
  EXPECT_EQ(empty.embedding.values, (std::vector<double>{0.0, 0.0}));

  // vertices always keep their own prompt
  const auto v = make_conditioning(LatentCode::vertex(2, 1), set, ConditioningMode::unconditioned);
  EXPECT_EQ(v.embedding.values, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(conditioning_mode_from_string("general_prompt"), ConditioningMode::general_prompt);
  EXPECT_THROW(conditioning_mode_from_string("mixed"), ConfigError);
}

// With the point-mass critic the estimator has a closed form:
// w(t) (eps_hat - eps) = w(t) (alpha / sigma) (x - x*).
TEST(Sds, PointMassClosedForm) {
  Rng rng(123);
  for (int draw = 0; draw < 10; ++draw) {
    const std::size_t h = 3 + draw % 4, w = 5 - draw % 3;
    const Image<float> target = random_image(h, w, rng);
    const Image<float> x = random_image(h, w, rng);
    DiffusionSchedule s;
    s.kind = draw % 2 ? DiffusionSchedule::Kind::linear_variance : DiffusionSchedule::Kind::cosine;
    const auto critic = point_mass_critic(target, s);
    SdsDraw d{rng.uniform(0.02, 0.98), Image<float>(h, w, 3)};
    for (auto& e : d.eps.data()) e = float(rng.normal());
    const Conditioning cond{PromptEmbedding{{1.0}}, {1.0}, {"target"}};
    const auto g = sds_image_grad(x, cond, *critic, s, d);
    const double scale = s.weight(d.t) * s.alpha(d.t) / s.sigma(d.t);
    for (std::size_t i = 0; i < g.size(); ++i)
      EXPECT_NEAR(g.data()[i], scale * (double(x.data()[i]) - double(target.data()[i])), 1e-6)
          << "draw " << draw << " t " << d.t;
  }
}

TEST(Sds, VanishesAtTheTarget) {
  Rng rng(1);
  const auto target = random_image(4, 4, rng);
  DiffusionSchedule s;
  const auto critic = point_mass_critic(target, s);
  const Conditioning cond{PromptEmbedding{{1.0}}, {1.0}, {"x"}};
  const auto g = sds_image_grad(target, cond, *critic, s, 10, rng);
  for (float v : g.data()) EXPECT_NEAR(v, 0.0f, 2e-6f);
}

TEST(Sds, RejectsBadInputs) {
  Rng rng(2);
  DiffusionSchedule s;
  const auto critic = point_mass_critic(random_image(4, 4, rng), s);
  const Conditioning cond{PromptEmbedding{{1.0}}, {1.0}, {"x"}};
  auto x = random_image(4, 4, rng);
  SdsDraw d{0.5, Image<float>(4, 4, 3)};
  x(1, 1, 1) = std::nanf("");
  EXPECT_THROW(sds_image_grad(x, cond, *critic, s, d), InvalidInput);
  // wrong target size surfaces as a guidance error
  const auto y = random_image(3, 3, rng);
  SdsDraw d3{0.5, Image<float>(3, 3, 3)};
  EXPECT_THROW(sds_image_grad(y, cond, *critic, s, d3), GuidanceError);
}

TEST(PointMass, BlendsTargetsWithTheEmbedding) {
  Rng rng(8);
  const auto t0 = random_image(2, 2, rng), t1 = random_image(2, 2, rng);
  DiffusionSchedule s;
  PointMassCritic critic({[t0](const Camera&) { return t0; }, [t1](const Camera&) { return t1; }}, s,
                         {1.0, 1.0, 1.0});
  const Image<float> x(2, 2, 3);
  const Conditioning half{PromptEmbedding{{0.5, 0.5}}, {0.5, 0.5}, {"a", "b"}};
  const auto blended = critic.target_for({x, 0.5, half, 1.0, std::nullopt});
  for (std::size_t i = 0; i < blended.size(); ++i)
    EXPECT_NEAR(blended.data()[i], 1.0 + 0.5 * (t0.data()[i] - 1.0) + 0.5 * (t1.data()[i] - 1.0), 1e-6);
  const Conditioning none{PromptEmbedding{{0.0, 0.0}}, {1.0}, {""}};
  const auto plain = critic.target_for({x, 0.5, none, 1.0, std::nullopt});
  for (float v : plain.data()) EXPECT_EQ(v, 1.0f);
  const Conditioning wrong{PromptEmbedding{{1.0}}, {1.0}, {"a"}};
  EXPECT_THROW(critic.target_for({x, 0.5, wrong, 1.0, std::nullopt}), GuidanceError);
}

TEST(PointMass, ShapeCriticRendersPerCamera) {
  RayMarchConfig rm;
  rm.n_samples = 32;
  DiffusionSchedule s;
  const auto critic = shape_critic(toy_shapes(), rm, s);
  const Camera side = orbit_camera(0.0, 0.0, 2.0, 0.7, 16, 16);
  const Image<float> x(16, 16, 3);
  const Conditioning sphere{PromptEmbedding{{1.0, 0.0}}, {1.0, 0.0}, {"sphere", "box"}};
  const auto img = critic->target_for({x, 0.5, sphere, 1.0, side});
  // the sphere sits above the box: only the upper half differs from white
  double upper = 0, lower = 0;
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) (r < 8 ? upper : lower) += 1.0 - img(r, c, 1);
  EXPECT_GT(upper, 5.0);
  EXPECT_LT(lower, 0.5);
}
