// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "a3d/field.hpp"
#include "a3d/fixtures.hpp"
#include "a3d/presets.hpp"

using namespace a3d;

namespace {

FieldConfig small_config() {
  FieldConfig f;
  f.grid.levels = 3;
  f.grid.base_resolution = 4;
  f.grid.per_level_scale = 2.0;
  f.grid.table_size_log2 = 8;  // 256 rows: level 0 (5^3 = 125) dense, the rest hashed
  f.mlp.width = 8;
  f.latent_dim = 2;
  return f;
}

LatentField<double> random_field(const FieldConfig& cfg, std::uint64_t seed) {
  LatentField<double> f(cfg);
  f.initialize(seed);
  Rng rng(seed + 100);
  for (std::size_t i = 0; i < f.layout().grid_count; ++i) f.params()[i] = rng.uniform(-0.5, 0.5);
  return f;
}

}  // namespace

TEST(FieldLayout, DenseWhenTheLatticeFitsTheTable) {
  const FieldLayout L(small_config());
  ASSERT_EQ(L.levels.size(), 3u);
  EXPECT_EQ(L.levels[0].resolution, 4u);
  EXPECT_TRUE(L.levels[0].dense);
  EXPECT_EQ(L.levels[0].rows, 125u);
  EXPECT_FALSE(L.levels[1].dense);
  EXPECT_EQ(L.levels[1].rows, 256u);
  EXPECT_EQ(L.levels[2].resolution, 16u);
  EXPECT_EQ(L.grid_count, (125u + 256u + 256u) * 2u);
  // (6 + 2) -> 8 -> 4
  ASSERT_EQ(L.layers.size(), 2u);
  EXPECT_EQ(L.layers[0].in, 8u);
  EXPECT_EQ(L.total, L.grid_count + 8 * 8 + 8 + 8 * 4 + 4);
}

TEST(FieldLayout, ToyPresetCounts) {
  const FieldLayout L(toy_field_config(2));
  // resolutions 8, 16, 32, 64: the first two are dense in 2^14 rows
  EXPECT_TRUE(L.levels[0].dense);
  EXPECT_TRUE(L.levels[1].dense);
  EXPECT_FALSE(L.levels[2].dense);
  EXPECT_EQ(L.levels[3].resolution, 64u);
}

TEST(FieldConfig, RejectsBadValues) {
  FieldConfig f = small_config();
  f.mlp.hidden_layers = 4;
  EXPECT_THROW(f.validate(), ConfigError);
  f = small_config();
  f.grid.per_level_scale = 1.0;
  EXPECT_THROW(f.validate(), ConfigError);
  f = small_config();
  f.latent_dim = 0;
  EXPECT_THROW(LatentField<float>{f}, ConfigError);
}

TEST(Encoding, DenseLevelIsTrilinearInterpolation) {
  FieldConfig cfg = small_config();
  cfg.grid.levels = 1;
  auto f = random_field(cfg, 5);
  const std::size_t side = 5;
  auto corner = [&](std::size_t x, std::size_t y, std::size_t z, std::size_t feat) {
    return f.params()[((z * side + y) * side + x) * 2 + feat];
  };
  Rng rng(9);
  for (int k = 0; k < 50; ++k) {
    const Vec3d p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const auto enc = f.encode_position(p);
    double g[3];
    std::size_t c[3];
    for (int a = 0; a < 3; ++a) {
      const double pos = (p[a] + 1.0) / 2.0 * 4.0;
      c[a] = std::min<std::size_t>(3, std::size_t(std::floor(pos)));
      g[a] = pos - double(c[a]);
    }
    for (std::size_t feat = 0; feat < 2; ++feat) {
      double want = 0.0;
      for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
          for (int dz = 0; dz < 2; ++dz)
            want += (dx ? g[0] : 1 - g[0]) * (dy ? g[1] : 1 - g[1]) * (dz ? g[2] : 1 - g[2]) *
                    corner(c[0] + dx, c[1] + dy, c[2] + dz, feat);
      EXPECT_NEAR(enc[feat], want, 1e-12);
    }
  }
}

TEST(Encoding, ContinuousAcrossCellFaces) {
  auto f = random_field(small_config(), 3);
  // x = 0 is a cell face at every level
  const auto a = f.encode_position({-1e-9, 0.13, -0.41});
  const auto b = f.encode_position({1e-9, 0.13, -0.41});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Encoding, RejectsNonFinitePositions) {
  auto f = random_field(small_config(), 3);
  EXPECT_THROW(f.encode_position({std::nan(""), 0, 0}), InvalidInput);
}

TEST(Field, OutputsStayInRange) {
  auto f = random_field(small_config(), 11);
  Rng rng(1);
  const std::vector<double> u{0.3, 0.7};
  for (int k = 0; k < 200; ++k) {
    const auto s = f.eval({rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}, u);
    EXPECT_GT(s.tau, 0.0);
    for (int c = 0; c < 3; ++c) {
      EXPECT_GT(s.rho[c], 0.0);
      EXPECT_LT(s.rho[c], 1.0);
    }
  }
  EXPECT_THROW(f.eval({0, 0, 0}, std::vector<double>{1.0}), ConfigError);
}

TEST(Field, LatentCodeChangesTheOutput) {
  auto f = random_field(small_config(), 12);
  const std::vector<double> u0{1, 0}, u1{0, 1};
  const auto a = f.eval({0.1, 0.2, 0.3}, u0);
  const auto b = f.eval({0.1, 0.2, 0.3}, u1);
  EXPECT_NE(a.tau, b.tau);
}

TEST(Field, InitializationIsSeeded) {
  LatentField<float> a(small_config()), b(small_config()), c(small_config());
  a.initialize(1);
  b.initialize(1);
  c.initialize(2);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  EXPECT_FALSE(std::equal(a.params().begin(), a.params().end(), c.params().begin()));
  for (std::size_t i = 0; i < a.layout().grid_count; ++i) EXPECT_LE(std::abs(a.params()[i]), 1e-4f);
}

// Field backward against central differences, for parameters and position.
TEST(Field, BackwardMatchesFiniteDifferences) {
  for (std::uint32_t layers = 1; layers <= 3; ++layers) {
    FieldConfig cfg = small_config();
    cfg.mlp.hidden_layers = layers;
    auto f = random_field(cfg, 20 + layers);
    const std::vector<double> u{0.4, 0.6};
    const Vec3d p{0.21, -0.37, 0.55};
    const double a_tau = 0.7;
    const Vec3d a_rho{0.3, -1.1, 0.5};
    auto objective = [&](const LatentField<double>& g, const Vec3d& q) {
      const auto s = g.eval(q, u);
      return a_tau * s.tau + dot(a_rho, s.rho);
    };
    auto ws = f.make_workspace();
    f.eval(p, u, ws);
    std::vector<double> grad(f.parameter_count(), 0.0);
    Vec3d dp{};
    f.backward(ws, a_tau, a_rho, grad, &dp);

    Rng rng(layers);
    const double h = 1e-6;
    for (int k = 0; k < 60; ++k) {
      const std::size_t i = rng.index(f.parameter_count());
      LatentField<double> g = f;
      g.params()[i] += h;
      const double plus = objective(g, p);
      g.params()[i] -= 2 * h;
      const double minus = objective(g, p);
      const double num = (plus - minus) / (2 * h);
      EXPECT_NEAR(grad[i], num, 1e-6 * std::max(1.0, std::abs(num))) << "param " << i;
    }
    for (int a = 0; a < 3; ++a) {
      Vec3d e{};
      e[a] = h;
      const double num = (objective(f, p + e) - objective(f, p - e)) / (2 * h);
      EXPECT_NEAR(dp[a], num, 1e-5 * std::max(1.0, std::abs(num))) << "axis " << a;
    }
  }
}

TEST(Normals, AnalyticSphereNormalPointsOutward) {
  const Shape s = Shape::sphere({0, 0, 0}, 0.5, {1, 1, 1});
  const auto field = shape_field<double>(s);
  const std::vector<double> u{1.0};
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const Vec3d dir = normalized(Vec3d{rng.normal(), rng.normal(), rng.normal()});
    const auto n = field_normal(field, dir * 0.5, std::span<const double>(u), 1e-4);
    ASSERT_FALSE(n.degenerate);
    EXPECT_NEAR(dot(n.normal, dir), 1.0, 1e-6);
  }
}

TEST(Normals, FlatDensityIsDegenerate) {
  const AnalyticField<double> flat([](const Vec3d&, std::span<const double>) {
    return FieldSample<double>{1.0, {0.5, 0.5, 0.5}};
  });
  const std::vector<double> u{1.0};
  const auto n = field_normal(flat, Vec3d{0, 0, 0}, std::span<const double>(u), 1e-3);
  EXPECT_TRUE(n.degenerate);
  EXPECT_THROW(field_normal(flat, Vec3d{0, 0, 0}, std::span<const double>(u), 0.0), InvalidInput);
}
