// SPDX-License-Identifier: Apache-2.0
//
// Analytic fields with the same rendering interface as LatentField. Used as
// ground-truth scenes for fitting, as point-mass critic targets and in tests.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "a3d/core.hpp"
#include "a3d/field.hpp"
#include "a3d/guidance.hpp"
#include "a3d/render.hpp"

namespace a3d {

template <class S>
class AnalyticField {
 public:
  using Scalar = S;
  struct Workspace {};
  using Fn = std::function<FieldSample<S>(const Vec3<S>&, std::span<const S>)>;

  AnalyticField(Fn fn, std::size_t latent_dim = 1, Box3<S> bounds = {}, S normal_step = S(1e-3))
      : fn_(std::move(fn)), latent_dim_(latent_dim), bounds_(bounds), step_(normal_step) {}

  Workspace make_workspace() const { return {}; }
  FieldSample<S> eval(const Vec3<S>& p, std::span<const S> u, Workspace&) const {
    if (!is_finite(p)) throw InvalidInput("analytic field: non-finite coordinate");
    return fn_(p, u);
  }
  FieldSample<S> eval(const Vec3<S>& p, std::span<const S> u) const {
    Workspace w;
    return eval(p, u, w);
  }
  std::size_t latent_dim() const { return latent_dim_; }
  Box3<S> bounds() const { return bounds_; }
  S default_normal_step() const { return step_; }

 private:
  Fn fn_;
  std::size_t latent_dim_;
  Box3<S> bounds_;
  S step_;
};

/// Solid sphere or box with a soft boundary and a constant albedo.
struct Shape {
  enum class Kind { sphere, box };
  Kind kind = Kind::sphere;
  Vec3d center{};
  /// Radius for spheres, half extents for boxes.
  Vec3d size{0.5, 0.5, 0.5};
  Vec3d color{0.8, 0.3, 0.2};
  double density = 60.0;
  /// Width of the density ramp across the surface.
  double softness = 0.01;

  static Shape sphere(Vec3d c, double r, Vec3d color) {
    Shape s;
    s.kind = Kind::sphere;
    s.center = c;
    s.size = {r, r, r};
    s.color = color;
    return s;
  }
  static Shape box(Vec3d c, Vec3d half, Vec3d color) {
    Shape s;
    s.kind = Kind::box;
    s.center = c;
    s.size = half;
    s.color = color;
    return s;
  }

  double sdf(const Vec3d& p) const {
    const Vec3d q = p - center;
    if (kind == Kind::sphere) return norm(q) - size.x;
    const Vec3d d{std::abs(q.x) - size.x, std::abs(q.y) - size.y, std::abs(q.z) - size.z};
    const Vec3d outside{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
    return norm(outside) + std::min(std::max({d.x, d.y, d.z}), 0.0);
  }

  double density_at(const Vec3d& p) const { return density * sigmoid(-sdf(p) / softness); }

  /// Exact silhouette test of a camera ray (used for mask oracles).
  bool ray_hits(const Ray<double>& ray) const {
    if (kind == Kind::sphere) {
      const Vec3d oc = ray.origin - center;
      const double b = dot(oc, ray.direction);
      const double c = dot(oc, oc) - size.x * size.x;
      return b * b - c >= 0.0 && (-b + std::sqrt(std::max(0.0, b * b - c))) > 0.0;
    }
    Box3<double> box{center - size, center + size};
    double t0, t1;
    return detail::intersect_box(ray, box, t0, t1) && t1 > 0.0;
  }
};

/// One shape, independent of the latent code.
template <class S>
AnalyticField<S> shape_field(const Shape& shape, std::size_t latent_dim = 1,
                             Box3<S> bounds = {}) {
  return AnalyticField<S>(
      [shape](const Vec3<S>& p, std::span<const S>) {
        const Vec3d q(p);
        return FieldSample<S>{static_cast<S>(shape.density_at(q)), Vec3<S>(shape.color)};
      },
      latent_dim, bounds);
}

/// Latent-blended collection: tau = sum_i u_i tau_i, albedo weighted by each
/// shape's density share.
template <class S>
AnalyticField<S> blended_shapes_field(std::vector<Shape> shapes, Box3<S> bounds = {}) {
  const std::size_t n = shapes.size();
  return AnalyticField<S>(
      [shapes = std::move(shapes)](const Vec3<S>& p, std::span<const S> u) {
        const Vec3d q(p);
        double tau = 0.0;
        Vec3d rho{};
        for (std::size_t i = 0; i < shapes.size(); ++i) {
          const double t = double(u[i]) * shapes[i].density_at(q);
          tau += t;
          rho += shapes[i].color * t;
        }
        if (tau > 0.0) rho = rho / tau;
        return FieldSample<S>{static_cast<S>(tau), Vec3<S>(rho)};
      },
      n, bounds);
}

/// Renders an analytic shape from a camera: the per-view target of a toy
/// point-mass critic.
inline Image<float> render_shape_target(const Shape& shape, const Camera& cam,
                                        const RayMarchConfig& rm,
                                        const LightSample& light = LightSample::unlit()) {
  const auto field = shape_field<double>(shape);
  const LatentSource u(LatentCode::vertex(1, 0));
  return image_cast<float>(render_view(field, cam, u, light, rm).rgb);
}

/// Binary silhouette of a shape from its exact ray intersection.
inline Image<std::uint8_t> shape_mask(const Shape& shape, const Camera& cam) {
  Image<std::uint8_t> m(cam.height, cam.width, 1);
  const auto b = cam.basis();
  for (std::size_t r = 0; r < cam.height; ++r)
    for (std::size_t c = 0; c < cam.width; ++c) m(r, c) = shape.ray_hits(cam.ray(r, c, b)) ? 1 : 0;
  return m;
}


/// The two-object toy scene: a sphere above a box, disjoint when seen from
/// the side.
inline std::vector<Shape> toy_shapes() {
  return {Shape::sphere({0.0, 0.0, 0.3}, 0.25, {0.9, 0.3, 0.2}),
          Shape::box({0.0, 0.0, -0.3}, {0.2, 0.2, 0.2}, {0.2, 0.4, 0.9})};
}

/// Point-mass critic whose k-th target is shape k rendered (unlit, no jitter)
/// from the requested camera.
inline std::shared_ptr<PointMassCritic> shape_critic(const std::vector<Shape>& shapes,
                                                     const RayMarchConfig& rm,
                                                     const DiffusionSchedule& schedule) {
  RayMarchConfig cfg = rm;
  cfg.stratified_jitter = false;
  cfg.threads = 1;
  std::vector<TargetFn> targets;
  for (const auto& s : shapes)
    targets.push_back([s, cfg](const Camera& cam) { return render_shape_target(s, cam, cfg); });
  return std::make_shared<PointMassCritic>(std::move(targets), schedule, cfg.background);
}

}  // namespace a3d
