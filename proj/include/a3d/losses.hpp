// SPDX-License-Identifier: Apache-2.0
//
// Image-space loss terms with their gradients w.r.t. the rendered maps.

#pragma once

#include <cmath>
#include <vector>

#include "a3d/core.hpp"

namespace a3d {

template <class S>
struct ImageLoss {
  double value = 0.0;
  Image<S> grad;  // same shape as the input map
};

/// Mean over the (H-1) x (W-1) grid of |N[i][j+1] - N[i][j]| + |N[i+1][j] - N[i][j]|,
/// absolute values taken per channel and summed over channels.
template <class S>
ImageLoss<S> normal_smoothness_loss(const Image<S>& normals, bool with_grad = true) {
  const std::size_t H = normals.height(), W = normals.width(), C = normals.channels();
  if (H < 2 || W < 2) throw InvalidInput("normal smoothness: map must be at least 2 x 2");
  ImageLoss<S> out;
  if (with_grad) out.grad = Image<S>(H, W, C);
  const double scale = 1.0 / (double(H - 1) * double(W - 1));
  auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < H; ++i) {
    for (std::size_t j = 0; j + 1 < W; ++j) {
      for (std::size_t c = 0; c < C; ++c) {
        const double n0 = normals(i, j, c);
        const double dx = double(normals(i, j + 1, c)) - n0;
        const double dy = double(normals(i + 1, j, c)) - n0;
        acc += std::abs(dx) + std::abs(dy);
        if (with_grad) {
          const double gx = sgn(dx) * scale, gy = sgn(dy) * scale;
          out.grad(i, j + 1, c) += static_cast<S>(gx);
          out.grad(i + 1, j, c) += static_cast<S>(gy);
          out.grad(i, j, c) -= static_cast<S>(gx + gy);
        }
      }
    }
  }
  out.value = acc * scale;
  return out;
}

template <class S>
struct OrientationLoss {
  double value = 0.0;
  Image<S> d_normal;   // H x W x 3
  Image<S> d_opacity;  // H x W x 1
};

/// Mean over foreground pixels (opacity > threshold) of
/// opacity * max(0, n . v)^2, v the unit camera-to-point direction.
template <class S>
OrientationLoss<S> orientation_penalty(const Image<S>& normals, const Image<S>& view_dirs,
                                       const Image<S>& opacity, double threshold = 0.01,
                                       bool with_grad = true) {
  const std::size_t H = normals.height(), W = normals.width();
  if (!normals.same_shape(view_dirs) || normals.channels() != 3 || opacity.height() != H ||
      opacity.width() != W || opacity.channels() != 1)
    throw InvalidInput("orientation penalty: map shapes differ");
  OrientationLoss<S> out;
  if (with_grad) {
    out.d_normal = Image<S>(H, W, 3);
    out.d_opacity = Image<S>(H, W, 1);
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      if (double(opacity(i, j)) > threshold) ++count;
  if (count == 0) return out;
  const double inv = 1.0 / double(count);
  double acc = 0.0;
  for (std::size_t i = 0; i < H; ++i) {
    for (std::size_t j = 0; j < W; ++j) {
      const double o = opacity(i, j);
      if (!(o > threshold)) continue;
      double nv = 0.0;
      for (int c = 0; c < 3; ++c) nv += double(normals(i, j, c)) * double(view_dirs(i, j, c));
      const double f = std::max(0.0, nv);
      acc += o * f * f;
      if (with_grad && f > 0.0) {
        for (int c = 0; c < 3; ++c)
          out.d_normal(i, j, c) = static_cast<S>(2.0 * o * f * double(view_dirs(i, j, c)) * inv);
        out.d_opacity(i, j) = static_cast<S>(f * f * inv);
      }
    }
  }
  out.value = acc * inv;
  return out;
}

/// Mean over rays of the squared color distance.
template <class S>
ImageLoss<S> photometric_loss(const Image<S>& render, const Image<S>& target,
                              bool with_grad = true) {
  if (!render.same_shape(target)) throw InvalidInput("photometric loss: shapes differ");
  const std::size_t rays = render.pixels();
  if (rays == 0) throw InvalidInput("photometric loss: empty batch");
  ImageLoss<S> out;
  if (with_grad) out.grad = Image<S>(render.height(), render.width(), render.channels());
  double acc = 0.0;
  const double inv = 1.0 / double(rays);
  for (std::size_t k = 0; k < render.size(); ++k) {
    const double d = double(render.data()[k]) - double(target.data()[k]);
    acc += d * d;
    if (with_grad) out.grad.data()[k] = static_cast<S>(2.0 * d * inv);
  }
  out.value = acc * inv;
  return out;
}

/// 10 log10(1 / MSE) over all channels, for images in [0, 1].
template <class S>
double psnr(const Image<S>& a, const Image<S>& b) {
  if (!a.same_shape(b) || a.empty()) throw InvalidInput("psnr: shapes differ");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = double(a.data()[k]) - double(b.data()[k]);
    acc += d * d;
  }
  const double mse = acc / double(a.size());
  return mse <= 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

}  // namespace a3d
