// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>

#include "a3d/latent.hpp"
#include "a3d/trainer.hpp"

using namespace a3d;

TEST(LatentCode, VertexAndEdgeConstructors) {
  const auto v = LatentCode::vertex(3, 1);
  EXPECT_EQ(v.values(), (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(v.vertex_index(), 1);

  const auto e = LatentCode::edge(3, 0, 2, 0.25);
  EXPECT_EQ(e.values(), (std::vector<double>{0.25, 0, 0.75}));
  EXPECT_EQ(e.vertex_index(), -1);
  EXPECT_EQ(LatentCode::edge(2, 0, 1, 1.0).vertex_index(), 0);
  EXPECT_EQ(LatentCode::edge(2, 0, 1, 0.0).vertex_index(), 1);
}

TEST(LatentCode, RejectsPointsOffTheSimplex) {
  EXPECT_THROW(LatentCode({0.5, 0.2}), InvalidInput);
  EXPECT_THROW(LatentCode({1.2, -0.2}), InvalidInput);
  EXPECT_THROW(LatentCode(std::vector<double>{}), InvalidInput);
  EXPECT_THROW(LatentCode({std::nan(""), 1.0}), InvalidInput);
  EXPECT_THROW(LatentCode::vertex(2, 2), InvalidInput);
  EXPECT_THROW(LatentCode::edge(2, 0, 1, 1.5), InvalidInput);
  EXPECT_NO_THROW(LatentCode({0.3, 0.3, 0.4}));
}

TEST(LatentCode, BlendStaysOnSimplex) {
  const std::vector<LatentCode> codes{LatentCode::vertex(3, 0), LatentCode::vertex(3, 2),
                                      LatentCode({0.2, 0.3, 0.5})};
  const std::vector<double> w{0.5, 0.25, 0.25};
  const auto b = blend(codes, w);
  EXPECT_NEAR(b[0], 0.5 + 0.05, 1e-15);
  EXPECT_NEAR(b[1], 0.075, 1e-15);
  EXPECT_NEAR(b[2], 0.25 + 0.125, 1e-15);
  EXPECT_TRUE(LatentCode::on_simplex(b.values()));
  const std::vector<double> bad{0.7, 0.7, -0.4};
  EXPECT_THROW(blend(codes, bad), InvalidInput);
}

TEST(Sampler, ExtremeProbabilities) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) EXPECT_EQ(sample_latent(0.0, 4, rng).site, Site::vertex);
  for (int k = 0; k < 200; ++k) {
    const auto s = sample_latent(1.0, 4, rng);
    ASSERT_EQ(s.site, Site::edge);
    EXPECT_LT(s.i, s.j);
    EXPECT_DOUBLE_EQ(s.code[s.i], s.t);
    EXPECT_DOUBLE_EQ(s.code[s.j], 1.0 - s.t);
  }
  // a single object has no edges
  for (int k = 0; k < 20; ++k) EXPECT_EQ(sample_latent(1.0, 1, rng).site, Site::vertex);
  EXPECT_THROW(sample_latent(1.5, 2, rng), ConfigError);
  EXPECT_THROW(sample_latent(0.5, 0, rng), ConfigError);
}

TEST(Sampler, DeterministicForASeed) {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(sample_latent(0.5, 3, a).code, sample_latent(0.5, 3, b).code);
}

// Chi-square statistic against a uniform distribution over the observed cells.
static double chi_square_uniform(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  const double expect = total / double(counts.size());
  double x2 = 0.0;
  for (double c : counts) x2 += (c - expect) * (c - expect) / expect;
  return x2;
}

TEST(Sampler, VertexFractionAndUniformityOverManyDraws) {
  constexpr std::size_t draws = 100000;
  Rng rng(2024);
  std::vector<double> vertex(3, 0.0);
  std::map<std::pair<std::size_t, std::size_t>, double> edge;
  double t_sum = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    const auto s = sample_latent(0.5, 3, rng);
    if (s.site == Site::vertex) {
      vertex[s.i] += 1.0;
    } else {
      edge[{s.i, s.j}] += 1.0;
      t_sum += s.t;
    }
  }
  const double nv = vertex[0] + vertex[1] + vertex[2];
  const double frac = nv / double(draws);
  const double sigma = std::sqrt(0.25 / double(draws));
  EXPECT_LE(std::abs(frac - 0.5), 3.0 * sigma) << "vertex fraction " << frac;

  // two degrees of freedom each; the 0.01 upper quantile is -2 ln 0.01
  const double critical = -2.0 * std::log(0.01);
  EXPECT_LT(chi_square_uniform(vertex), critical);
  ASSERT_EQ(edge.size(), 3u);
  std::vector<double> edges;
  for (const auto& [_, c] : edge) edges.push_back(c);
  EXPECT_LT(chi_square_uniform(edges), critical);

  const double ne = double(draws) - nv;
  EXPECT_NEAR(t_sum / ne, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / ne));
}

TEST(Sampler, UniformLatentCoversTheSegment) {
  Rng rng(7);
  double lo = 1.0, hi = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const auto u = sample_uniform_latent(2, rng);
    lo = std::min(lo, u[0]);
    hi = std::max(hi, u[0]);
  }
  EXPECT_LT(lo, 0.01);
  EXPECT_GT(hi, 0.99);
  const auto d = sample_uniform_latent(4, rng);
  EXPECT_TRUE(LatentCode::on_simplex(d.values()));
}
