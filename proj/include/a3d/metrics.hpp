// SPDX-License-Identifier: Apache-2.0
//
// Structural alignment between two renders: dense features, nearest-neighbour
// matching by cosine similarity, and the diameter-normalized mean
// displacement of the matched points, averaged over a ring of viewpoints.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "a3d/camera.hpp"
#include "a3d/core.hpp"
#include "a3d/render.hpp"

namespace a3d {

using Mask = Image<std::uint8_t>;
using FeatureMap = Image<double>;  // H x W x F

/// Dense per-pixel features. Implementations must be deterministic and safe
/// to call concurrently.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureMap extract(const Image<float>& image) const = 0;
  virtual std::string name() const = 0;
};

/// Content-independent features ((x - ox) / s, (y - oy) / s, 1) with x the
/// column and y the row. Origin defaults to the image center, scale to half
/// the larger side.
class CoordinateFeatures : public FeatureExtractor {
 public:
  CoordinateFeatures() = default;
  CoordinateFeatures(double origin_x, double origin_y, double scale)
      : ox_(origin_x), oy_(origin_y), scale_(scale), explicit_(true) {
    if (!(scale > 0.0)) throw ConfigError("coordinate features: scale must be positive");
  }

  FeatureMap extract(const Image<float>& image) const override {
    const std::size_t H = image.height(), W = image.width();
    double ox = 0.5 * double(W - 1), oy = 0.5 * double(H - 1), s = 0.5 * double(std::max(H, W));
    if (explicit_) ox = ox_, oy = oy_, s = scale_;
    FeatureMap f(H, W, 3);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        f(r, c, 0) = (double(c) - ox) / s;
        f(r, c, 1) = (double(r) - oy) / s;
        f(r, c, 2) = 1.0;
      }
    return f;
  }
  std::string name() const override { return "coordinate"; }

 private:
  double ox_ = 0.0, oy_ = 0.0, scale_ = 1.0;
  bool explicit_ = false;
};

/// Coordinate features inside the silhouette (alpha channel > threshold),
/// centred on the silhouette centroid and scaled by its RMS radius; zero
/// outside. Matching therefore compares the relative layout of two shapes.
/// Expects an RGBA image.
class SilhouetteCoordinateFeatures : public FeatureExtractor {
 public:
  explicit SilhouetteCoordinateFeatures(double threshold = 0.5) : threshold_(threshold) {}

  FeatureMap extract(const Image<float>& image) const override {
    if (image.channels() != 4) throw InvalidInput("silhouette features: expected an RGBA image");
    const std::size_t H = image.height(), W = image.width();
    FeatureMap f(H, W, 3);
    double sx = 0.0, sy = 0.0, n = 0.0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if (double(image(r, c, 3)) > threshold_) sx += double(c), sy += double(r), n += 1.0;
    if (n == 0.0) return f;
    const double cx = sx / n, cy = sy / n;
    double m2 = 0.0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if (double(image(r, c, 3)) > threshold_) {
          const double dx = double(c) - cx, dy = double(r) - cy;
          m2 += dx * dx + dy * dy;
        }
    const double s = std::max(std::sqrt(m2 / n), 1.0);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if (double(image(r, c, 3)) > threshold_) {
          f(r, c, 0) = (double(c) - cx) / s;
          f(r, c, 1) = (double(r) - cy) / s;
          f(r, c, 2) = 1.0;
        }
    return f;
  }
  std::string name() const override { return "silhouette-coordinate"; }

 private:
  double threshold_;
};

// ---------------------------------------------------------------------------
// Point sets and matching
// ---------------------------------------------------------------------------

struct Pixel {
  std::int64_t row = 0, col = 0;
  bool operator==(const Pixel&) const = default;
};

inline double pixel_distance(const Pixel& a, const Pixel& b) {
  const double dr = double(a.row - b.row), dc = double(a.col - b.col);
  return std::sqrt(dr * dr + dc * dc);
}

/// Largest pairwise distance, through the convex hull.
inline double point_set_diameter(std::vector<Pixel> pts) {
  if (pts.size() < 2) return 0.0;
  std::sort(pts.begin(), pts.end(), [](const Pixel& a, const Pixel& b) {
    return a.col != b.col ? a.col < b.col : a.row < b.row;
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 2) return 0.0;
  auto cross = [](const Pixel& o, const Pixel& a, const Pixel& b) {
    return (a.col - o.col) * (b.row - o.row) - (a.row - o.row) * (b.col - o.col);
  };
  std::vector<Pixel> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double best = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i)
    for (std::size_t j = i + 1; j < hull.size(); ++j) best = std::max(best, pixel_distance(hull[i], hull[j]));
  return best;
}

struct PointSet2D {
  std::vector<Pixel> points;
  double diameter = 0.0;
};

/// Regular grid (rows and columns 0, stride, 2 stride, ...) filtered by the mask.
inline PointSet2D sample_points(const Mask& mask, std::size_t stride) {
  if (stride < 1) throw ConfigError("sample_points: stride must be >= 1");
  PointSet2D ps;
  for (std::size_t r = 0; r < mask.height(); r += stride)
    for (std::size_t c = 0; c < mask.width(); c += stride)
      if (mask(r, c)) ps.points.push_back({std::int64_t(r), std::int64_t(c)});
  if (ps.points.empty()) throw MetricUndefined("sample_points: mask selects no points");
  ps.diameter = point_set_diameter(ps.points);
  return ps;
}

struct MatchResult {
  std::vector<Pixel> source;   // points that were matched
  std::vector<Pixel> mapped;   // their correspondences in the other image
  std::size_t skipped = 0;     // points with a zero-norm feature
};

/// For each point of A, the pixel of B with the largest cosine similarity of
/// features (first in row-major order on ties). B pixels with zero-norm
/// features are never candidates.
inline MatchResult match_points(const FeatureMap& fa, const FeatureMap& fb,
                                std::span<const Pixel> points) {
  if (fa.channels() != fb.channels()) throw ConfigError("match_points: feature dimensions differ");
  const std::size_t F = fa.channels();
  // unit-normalized candidate features of B
  std::vector<double> cand;
  std::vector<std::size_t> cand_index;
  for (std::size_t i = 0; i < fb.pixels(); ++i) {
    double n2 = 0.0;
    for (std::size_t f = 0; f < F; ++f) n2 += fb.data()[i * F + f] * fb.data()[i * F + f];
    if (!(n2 > 0.0)) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t f = 0; f < F; ++f) cand.push_back(fb.data()[i * F + f] * inv);
    cand_index.push_back(i);
  }
  MatchResult m;
  std::vector<double> q(F);
  for (const Pixel& p : points) {
    if (p.row < 0 || p.col < 0 || std::size_t(p.row) >= fa.height() || std::size_t(p.col) >= fa.width())
      throw InvalidInput("match_points: point outside image A");
    double n2 = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      q[f] = fa(std::size_t(p.row), std::size_t(p.col), f);
      n2 += q[f] * q[f];
    }
    if (!(n2 > 0.0) || cand_index.empty()) {
      ++m.skipped;
      continue;
    }
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < cand_index.size(); ++k) {
      double d = 0.0;
      for (std::size_t f = 0; f < F; ++f) d += q[f] * cand[k * F + f];
      if (d > best) best = d, arg = k;
    }
    const std::size_t idx = cand_index[arg];
    m.source.push_back(p);
    m.mapped.push_back({std::int64_t(idx / fb.width()), std::int64_t(idx % fb.width())});
  }
  return m;
}

struct DiftResult {
  double distance = 0.0;
  double mean_a = 0.0, mean_b = 0.0;
  std::size_t points_a = 0, points_b = 0;
  std::size_t skipped_a = 0, skipped_b = 0;
};

/// Feature maps already extracted: S = (mean_A + mean_B) / 2 where mean_A is
/// the mean over matched points of |F_A(p) - p| / diam(P_A), and likewise for B.
inline DiftResult dift_distance_features(const FeatureMap& fa, const Mask& ma, const FeatureMap& fb,
                                         const Mask& mb, std::size_t stride) {
  if (fa.height() != ma.height() || fa.width() != ma.width() || fb.height() != mb.height() ||
      fb.width() != mb.width())
    throw InvalidInput("dift: feature maps and masks differ in size");
  const PointSet2D pa = sample_points(ma, stride);
  const PointSet2D pb = sample_points(mb, stride);
  auto side = [](const FeatureMap& from, const FeatureMap& to, const PointSet2D& ps,
                 std::size_t& skipped, std::size_t& used) {
    const MatchResult m = match_points(from, to, ps.points);
    skipped = m.skipped;
    used = m.source.size();
    if (m.source.empty()) throw MetricUndefined("dift: no matchable points");
    if (!(ps.diameter > 0.0)) throw MetricUndefined("dift: point set has zero diameter");
    double acc = 0.0;
    for (std::size_t i = 0; i < m.source.size(); ++i)
      acc += pixel_distance(m.mapped[i], m.source[i]) / ps.diameter;
    return acc / double(m.source.size());
  };
  DiftResult r;
  r.mean_a = side(fa, fb, pa, r.skipped_a, r.points_a);
  r.mean_b = side(fb, fa, pb, r.skipped_b, r.points_b);
  r.distance = 0.5 * (r.mean_a + r.mean_b);
  return r;
}

inline DiftResult dift_distance(const Image<float>& a, const Mask& ma, const Image<float>& b,
                                const Mask& mb, const FeatureExtractor& ex, std::size_t stride = 1) {
  return dift_distance_features(ex.extract(a), ma, ex.extract(b), mb, stride);
}

// ---------------------------------------------------------------------------
// Multi-view harness
// ---------------------------------------------------------------------------

/// Renders RGBA (alpha = opacity) for a camera.
using ViewRenderer = std::function<Image<float>(const Camera&)>;

template <class Field>
ViewRenderer field_renderer(const Field& field, LatentSource latent, RayMarchConfig cfg,
                            LightSample light = LightSample::unlit()) {
  return [&field, latent = std::move(latent), cfg, light](const Camera& cam) {
    const auto v = render_view(field, cam, latent, light, cfg);
    Image<float> out(cam.height, cam.width, 4);
    for (std::size_t r = 0; r < cam.height; ++r)
      for (std::size_t c = 0; c < cam.width; ++c) {
        for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = static_cast<float>(v.rgb(r, c, ch));
        out(r, c, 3) = static_cast<float>(v.opacity(r, c));
      }
    return out;
  };
}

inline Mask alpha_mask(const Image<float>& rgba, double threshold = 0.5) {
  if (rgba.channels() != 4) throw InvalidInput("alpha_mask: expected an RGBA image");
  Mask m(rgba.height(), rgba.width(), 1);
  for (std::size_t r = 0; r < rgba.height(); ++r)
    for (std::size_t c = 0; c < rgba.width(); ++c) m(r, c) = double(rgba(r, c, 3)) > threshold;
  return m;
}

struct AlignmentConfig {
  std::size_t views = 120;
  double elevation_deg = 15.0;
  double radius = 2.0;
  double fov_deg = 40.0;
  std::size_t resolution = 64;
  std::size_t stride = 1;
  double mask_threshold = 0.5;
};

struct AlignmentReport {
  double mean_distance = 0.0;
  std::vector<double> per_view;  // evaluated views only
  std::vector<std::size_t> evaluated_views;
  std::size_t skipped_views = 0;
};

/// Mean dift distance over a ring of cameras; views where either mask is
/// empty (or nothing can be matched) are skipped and counted.
inline AlignmentReport multiview_alignment(const ViewRenderer& a, const ViewRenderer& b,
                                           const FeatureExtractor& ex, const AlignmentConfig& cfg) {
  if (cfg.views == 0) throw ConfigError("alignment: need at least one view");
  const auto cams = ring_cameras(cfg.views, cfg.elevation_deg, cfg.radius, cfg.fov_deg,
                                 cfg.resolution, cfg.resolution);
  AlignmentReport rep;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const Image<float> ia = a(cams[i]), ib = b(cams[i]);
    try {
      const auto d = dift_distance(ia, alpha_mask(ia, cfg.mask_threshold), ib,
                                   alpha_mask(ib, cfg.mask_threshold), ex, cfg.stride);
      rep.per_view.push_back(d.distance);
      rep.evaluated_views.push_back(i);
    } catch (const MetricUndefined&) {
      ++rep.skipped_views;
    }
  }
  if (rep.per_view.empty()) throw MetricUndefined("alignment: every view was skipped");
  double acc = 0.0;
  for (double d : rep.per_view) acc += d;
  rep.mean_distance = acc / double(rep.per_view.size());
  return rep;
}

}  // namespace a3d
