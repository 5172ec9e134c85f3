// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "a3d/core.hpp"

namespace a3d {

template <class S>
struct Ray {
  Vec3<S> origin;
  Vec3<S> direction;  // unit length
};

/// Pinhole camera looking from position at target.
struct Camera {
  Vec3d position{0.0, -2.0, 0.0};
  Vec3d target{0.0, 0.0, 0.0};
  Vec3d up{0.0, 0.0, 1.0};
  double vertical_fov = 40.0 * kPi / 180.0;
  std::size_t width = 64;
  std::size_t height = 64;

  bool operator==(const Camera&) const = default;

  void validate() const {
    if (!is_finite(position) || !is_finite(target) || !is_finite(up))
      throw InvalidInput("camera: non-finite vector");
    if (position == target) throw InvalidInput("camera: position equals target");
    if (!(vertical_fov > 0.0 && vertical_fov < kPi))
      throw InvalidInput("camera: vertical_fov must lie in (0, pi)");
    if (width < 1 || height < 1) throw InvalidInput("camera: empty image");
  }

  struct Basis {
    Vec3d forward, right, up;
  };

  Basis basis() const {
    validate();
    const Vec3d f = normalized(target - position);
    const Vec3d r0 = cross(f, up);
    const double rn = norm(r0);
    if (!(rn > 1e-9 * std::max(1.0, norm(up))))
      throw InvalidInput("camera: up vector is parallel to the viewing direction");
    const Vec3d r = r0 / rn;
    return {f, r, cross(r, f)};
  }

  /// Ray through the center of pixel (row, col).
  template <class S = double>
  Ray<S> ray(std::size_t row, std::size_t col, const Basis& b) const {
    const double tan_half = std::tan(0.5 * vertical_fov);
    const double aspect = double(width) / double(height);
    const double x = ((double(col) + 0.5) / double(width) * 2.0 - 1.0) * tan_half * aspect;
    const double y = (1.0 - (double(row) + 0.5) / double(height) * 2.0) * tan_half;
    const Vec3d d = normalized(b.forward + b.right * x + b.up * y);
    return {Vec3<S>(position), Vec3<S>(d)};
  }

  template <class S = double>
  Ray<S> ray(std::size_t row, std::size_t col) const {
    return ray<S>(row, col, basis());
  }
};

/// One ray per pixel, row-major.
template <class S = double>
std::vector<Ray<S>> generate_rays(const Camera& cam) {
  const auto b = cam.basis();
  std::vector<Ray<S>> rays;
  rays.reserve(cam.width * cam.height);
  for (std::size_t r = 0; r < cam.height; ++r)
    for (std::size_t c = 0; c < cam.width; ++c) rays.push_back(cam.ray<S>(r, c, b));
  return rays;
}

/// Camera on a sphere around target, z-up. Angles in radians.
inline Camera orbit_camera(double azimuth, double elevation, double radius, double fov,
                           std::size_t width, std::size_t height,
                           const Vec3d& target = {0.0, 0.0, 0.0}) {
  Camera c;
  c.position = target + Vec3d{radius * std::cos(elevation) * std::cos(azimuth),
                              radius * std::cos(elevation) * std::sin(azimuth),
                              radius * std::sin(elevation)};
  c.target = target;
  c.up = {0.0, 0.0, 1.0};
  c.vertical_fov = fov;
  c.width = width;
  c.height = height;
  return c;
}

/// Distribution of training viewpoints. Radii are multiples of the bounds
/// radius (half the largest box edge).
struct CameraSampling {
  double elevation_min_deg = -10.0;
  double elevation_max_deg = 45.0;
  double radius_min = 1.5;
  double radius_max = 2.2;
  double fov_deg = 40.0;

  bool operator==(const CameraSampling&) const = default;
};

inline Camera sample_training_camera(Rng& rng, const CameraSampling& s, double bounds_radius,
                                     std::size_t width, std::size_t height) {
  const double az = rng.uniform(0.0, 2.0 * kPi);
  const double el = rng.uniform(s.elevation_min_deg, s.elevation_max_deg) * kPi / 180.0;
  const double r = rng.uniform(s.radius_min, s.radius_max) * bounds_radius;
  return orbit_camera(az, el, r, s.fov_deg * kPi / 180.0, width, height);
}

/// n cameras evenly spaced in azimuth on one elevation ring.
inline std::vector<Camera> ring_cameras(std::size_t n, double elevation_deg, double radius,
                                        double fov_deg, std::size_t width, std::size_t height) {
  std::vector<Camera> cams;
  cams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double az = 2.0 * kPi * double(i) / double(n);
    cams.push_back(orbit_camera(az, elevation_deg * kPi / 180.0, radius, fov_deg * kPi / 180.0,
                                width, height));
  }
  return cams;
}

}  // namespace a3d
