// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "a3d/fixtures.hpp"
#include "a3d/gradcheck.hpp"
#include "a3d/hybrid.hpp"

using namespace a3d;

namespace {

AnchorSet two_anchors(double smoothing = 0.0) {
  AnchorSet s;
  s.anchors = {{{0, 0, 0.5}, LatentCode::vertex(2, 0)}, {{0, 0, -0.5}, LatentCode::vertex(2, 1)}};
  s.smoothing = smoothing;
  return s;
}

LatentCode random_code(std::size_t n, Rng& rng) {
  std::vector<double> u(n);
  double sum = 0;
  for (auto& x : u) sum += (x = rng.uniform(0.01, 1.0));
  for (auto& x : u) x /= sum;
  u.back() = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) u.back() -= u[i];
  return LatentCode(u);
}

// Independent oracle: sort every anchor by (distance, x, y, z, code) and blend the first two.
LatentCode brute_force(const Vec3d& p, const AnchorSet& set) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t k = 0; k < set.anchors.size(); ++k)
    order.push_back({norm(p - set.anchors[k].position), k});
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    const auto& A = set.anchors[a.second];
    const auto& B = set.anchors[b.second];
    return std::make_tuple(a.first, A.position.x, A.position.y, A.position.z, A.code.values()) <
           std::make_tuple(b.first, B.position.x, B.position.y, B.position.z, B.code.values());
  });
  if (order.size() == 1 || order[0].first == 0.0) return set.anchors[order[0].second].code;
  const double d1 = order[0].first, d2 = order[1].first;
  double w = d2 / (d1 + d2);
  if (set.smoothing > 0) w = w * w * (3 - 2 * w);
  const auto& c1 = set.anchors[order[0].second].code;
  const auto& c2 = set.anchors[order[1].second].code;
  if (w == 1.0) return c1;
  std::vector<double> u(c1.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = w * c1[i] + (1 - w) * c2[i];
  return LatentCode(u);
}

}  // namespace

TEST(LatentAt, WorkedExamples) {
  const auto set = two_anchors();
  EXPECT_EQ(latent_at({0, 0, 0.5}, set), LatentCode::vertex(2, 0));
  EXPECT_EQ(latent_at({0, 0, -0.5}, set), LatentCode::vertex(2, 1));
  const auto mid = latent_at({0.3, 0.1, 0.0}, set);
  EXPECT_DOUBLE_EQ(mid[0], 0.5);
  // d1 = 0.25, d2 = 0.75
  const auto q = latent_at({0, 0, 0.25}, set);
  EXPECT_DOUBLE_EQ(q[0], 0.75);
  EXPECT_DOUBLE_EQ(q[1], 0.25);
  // smoothstep(0.75) = 0.84375
  const auto s = latent_at({0, 0, 0.25}, two_anchors(1.0));
  EXPECT_DOUBLE_EQ(s[0], 0.84375);
  EXPECT_DOUBLE_EQ(smoothstep01(-2.0), 0.0);
  EXPECT_DOUBLE_EQ(smoothstep01(0.5), 0.5);
}

TEST(LatentAt, SingleAnchorIsConstant) {
  AnchorSet s;
  s.anchors = {{{0.1, 0.2, 0.3}, LatentCode({0.3, 0.7})}};
  EXPECT_EQ(latent_at({5, -4, 2}, s), LatentCode({0.3, 0.7}));
}

TEST(LatentAt, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    AnchorSet set;
    set.smoothing = trial % 2 ? 0.5 : 0.0;
    const std::size_t n = 2 + trial % 3;
    const std::size_t m = 1 + trial % 6;
    for (std::size_t k = 0; k < m; ++k)
      set.anchors.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}, random_code(n, rng)});
    for (int q = 0; q < 50; ++q) {
      const Vec3d p{rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2)};
      const auto got = latent_at(p, set);
      const auto want = brute_force(p, set);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], want[i], 1e-15);
    }
  }
}

TEST(LatentAt, IndependentOfAnchorOrderIncludingTies) {
  // a lattice makes many points equidistant from several anchors
  AnchorSet set;
  Rng rng(2);
  for (int x = -1; x <= 1; x += 2)
    for (int y = -1; y <= 1; y += 2)
      for (int z = -1; z <= 1; z += 2)
        set.anchors.push_back({{0.5 * x, 0.5 * y, 0.5 * z}, random_code(3, rng)});
  std::mt19937 g(5);
  const std::vector<Vec3d> probes{{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, -0.5}, {0.2, 0.2, 0.2}, {0.1, -0.3, 0}};
  std::vector<LatentCode> reference;
  for (const auto& p : probes) reference.push_back(latent_at(p, set));
  for (int perm = 0; perm < 20; ++perm) {
    AnchorSet shuffled = set;
    std::shuffle(shuffled.anchors.begin(), shuffled.anchors.end(), g);
    for (std::size_t k = 0; k < probes.size(); ++k) EXPECT_EQ(latent_at(probes[k], shuffled), reference[k]);
  }
}

TEST(LatentAt, OnlyTheTwoNearestAnchorsMatter) {
  AnchorSet set = two_anchors();
  const Vec3d p{0.05, 0, 0.2};
  const auto before = latent_at(p, set);
  set.anchors.push_back({{0.9, 0.9, 0.9}, LatentCode({0.5, 0.5})});
  EXPECT_EQ(latent_at(p, set), before);
  set.anchors.back().position = {-0.9, 0.8, 0.9};
  EXPECT_EQ(latent_at(p, set), before);
}

TEST(AnchorText, RoundTripIsBitExact) {
  Rng rng(3);
  AnchorSet set;
  for (int k = 0; k < 12; ++k)
    set.anchors.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1) * 1e-7, rng.uniform(-1, 1) * 1e5},
                           random_code(3, rng)});
  const std::string text = format_anchors(set);
  const auto parsed = parse_anchors(text);
  ASSERT_TRUE(parsed.ok());
  ASSERT_EQ(parsed.set.anchors.size(), set.anchors.size());
  for (std::size_t k = 0; k < set.anchors.size(); ++k) {
    EXPECT_EQ(parsed.set.anchors[k].position, set.anchors[k].position);
    EXPECT_EQ(parsed.set.anchors[k].code.values(), set.anchors[k].code.values());
  }
  EXPECT_EQ(format_anchors(parsed.set), text);
}

TEST(AnchorText, CommentsAndBlankLines) {
  const auto r = parse_anchors("# header\n\n  0 0 0.5   1 0  # sphere\n0 0 -0.5 0 1\n\n");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.set.anchors.size(), 2u);
  EXPECT_EQ(r.set.anchors[1].code, LatentCode::vertex(2, 1));
}

TEST(AnchorText, ErrorsNameTheLine) {
  const auto r = parse_anchors(
      "0 0 0 1 0\n"
      "0 0 x 1 0\n"
      "0 1 0 0.5 0.2\n"
      "1 0 0 0.2 0.3 0.5\n"
      "0 0 0 0 1\n"
      "1 2 3\n");
  ASSERT_EQ(r.errors.size(), 5u);
  EXPECT_EQ(r.errors[0].rfind("line 2:", 0), 0u);
  EXPECT_NE(r.errors[0].find("'x'"), std::string::npos);
  EXPECT_EQ(r.errors[1].rfind("line 3:", 0), 0u);
  EXPECT_NE(r.errors[1].find("simplex"), std::string::npos);
  EXPECT_EQ(r.errors[2].rfind("line 4:", 0), 0u);
  EXPECT_NE(r.errors[2].find("expected 2"), std::string::npos);
  EXPECT_EQ(r.errors[3].rfind("line 5:", 0), 0u);
  EXPECT_NE(r.errors[3].find("repeats"), std::string::npos);
  EXPECT_EQ(r.errors[4].rfind("line 6:", 0), 0u);
  EXPECT_FALSE(parse_anchors("# nothing\n").ok());
  EXPECT_FALSE(parse_anchors("0 0 0 inf\n").ok());
}

TEST(AnchorText, LoadValidates) {
  EXPECT_THROW(load_anchors_text("0 0 0 1 0\n1 1 1 0.4\n"), ConfigError);
  EXPECT_THROW(load_anchors_text("0 0 0 1 0\n", -1.0), ConfigError);
  const auto set = load_anchors_text("0 0 0 1 0\n", 0.25);
  EXPECT_EQ(set.smoothing, 0.25);
  AnchorSet far = set;
  far.anchors[0].position = {3, 0, 0};
  EXPECT_THROW(far.check_bounds(Box3<double>{}), ConfigError);
}

TEST(HybridRender, SingleAnchorEqualsFixedCode) {
  LatentField<float> f(GradCheckConfig::tiny_field());
  f.initialize(9);
  Rng rng(10);
  for (std::size_t i = 0; i < f.layout().grid_count; ++i) f.params()[i] = float(rng.uniform(-0.3, 0.3));
  const Camera cam = orbit_camera(0.4, 0.3, 2.0, 0.7, 10, 10);
  RayMarchConfig rm;
  rm.n_samples = 20;
  const LatentCode u({0.35, 0.65});
  AnchorSet one;
  one.anchors = {{{0.2, -0.1, 0.3}, u}};
  const auto fixed = render_view(f, cam, LatentSource(u), LightSample::unlit(), rm);
  const auto hybrid = render_hybrid(f, cam, one, LightSample::unlit(), rm);
  EXPECT_EQ(fixed.rgb.storage(), hybrid.rgb.storage());
  EXPECT_EQ(fixed.depth.storage(), hybrid.depth.storage());
  EXPECT_EQ(fixed.normal.storage(), hybrid.normal.storage());
}

TEST(HybridRender, AnchorsSelectObjectsLocally) {
  const auto field = blended_shapes_field<double>(toy_shapes());
  const Camera side = orbit_camera(0.0, 0.0, 2.0, 0.7, 16, 16);
  RayMarchConfig rm;
  rm.n_samples = 64;
  AnchorSet set;
  set.anchors = {{{0, 0, 0.3}, LatentCode::vertex(2, 0)}, {{0, 0, -0.3}, LatentCode::vertex(2, 1)}};
  const auto v = render_hybrid(field, side, set, LightSample::unlit(), rm);
  auto mass = [&](std::size_t r0, std::size_t r1) {
    double m = 0;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = 0; c < 16; ++c) m += v.opacity(r, c);
    return m;
  };
  // both the upper object (sphere) and the lower one (box) appear
  EXPECT_GT(mass(0, 8), 10.0);
  EXPECT_GT(mass(8, 16), 10.0);
  // the sphere keeps its own albedo near its center
  EXPECT_NEAR(v.rgb(5, 8, 0), 0.9, 0.05);
  AnchorSet wrong;
  wrong.anchors = {{{0, 0, 0}, LatentCode::vertex(3, 0)}};
  EXPECT_THROW(render_hybrid(field, side, wrong, LightSample::unlit(), rm), ConfigError);
}
