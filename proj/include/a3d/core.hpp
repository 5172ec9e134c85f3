// SPDX-License-Identifier: Apache-2.0
//
// Basic value types shared by every a3d module: small vectors, dense images,
// the error hierarchy and a seedable random stream.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace a3d {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed numeric input (non-finite coordinates, degenerate cameras, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration: dimension mismatches, schema violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A critic call failed. Retriable: the trainer may skip the step.
class GuidanceError : public Error {
 public:
  using Error::Error;
};

/// Remote critic answered with something that does not match the request.
class ProtocolError : public GuidanceError {
 public:
  using GuidanceError::GuidanceError;
};

/// Corrupt, truncated or unsupported persisted data.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// An alignment metric has no defined value (e.g. an empty mask).
class MetricUndefined : public Error {
 public:
  using Error::Error;
};

/// A loss term evaluated to NaN or infinity.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(std::string term, double value)
      : Error("non-finite loss term '" + term + "' (" + std::to_string(value) + ")"),
        term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

// ---------------------------------------------------------------------------
// Vec3
// ---------------------------------------------------------------------------

template <class S>
struct Vec3 {
  S x{}, y{}, z{};

  constexpr Vec3() = default;
  constexpr Vec3(S x_, S y_, S z_) : x(x_), y(y_), z(z_) {}
  template <class T>
  constexpr explicit Vec3(const Vec3<T>& o)
      : x(static_cast<S>(o.x)), y(static_cast<S>(o.y)), z(static_cast<S>(o.z)) {}

  constexpr S& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr S operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(S s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(S s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(S s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;
};

template <class S>
constexpr Vec3<S> operator*(S s, const Vec3<S>& v) {
  return v * s;
}

template <class S>
constexpr S dot(const Vec3<S>& a, const Vec3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

template <class S>
constexpr Vec3<S> cross(const Vec3<S>& a, const Vec3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <class S>
constexpr Vec3<S> hadamard(const Vec3<S>& a, const Vec3<S>& b) {
  return {a.x * b.x, a.y * b.y, a.z * b.z};
}

template <class S>
S norm(const Vec3<S>& a) {
  return std::sqrt(dot(a, a));
}

template <class S>
Vec3<S> normalized(const Vec3<S>& a) {
  return a / norm(a);
}

template <class S>
bool is_finite(const Vec3<S>& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

using Vec3f = Vec3<float>;
using Vec3d = Vec3<double>;

/// Axis-aligned box.
template <class S>
struct Box3 {
  Vec3<S> lo{S(-1), S(-1), S(-1)};
  Vec3<S> hi{S(1), S(1), S(1)};

  Vec3<S> extent() const { return hi - lo; }
  Vec3<S> center() const { return (lo + hi) * S(0.5); }
  /// Half of the largest edge; the scale used for camera distances.
  S radius() const {
    const auto e = extent();
    return S(0.5) * std::max({e.x, e.y, e.z});
  }
  bool contains(const Vec3<S>& p) const {
    return p.x >= lo.x && p.y >= lo.y && p.z >= lo.z && p.x <= hi.x && p.y <= hi.y &&
           p.z <= hi.z;
  }
};

// ---------------------------------------------------------------------------
// Image: row-major H x W x C
// ---------------------------------------------------------------------------

template <class T>
class Image {
 public:
  Image() = default;
  Image(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        data_(height * width * channels, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t pixels() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return data_.empty(); }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  T& operator()(std::size_t row, std::size_t col, std::size_t ch = 0) {
    return data_[(row * width_ + col) * channels_ + ch];
  }
  const T& operator()(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return data_[(row * width_ + col) * channels_ + ch];
  }

  std::span<T> pixel(std::size_t row, std::size_t col) {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }
  std::span<const T> pixel(std::size_t row, std::size_t col) const {
    return {data_.data() + (row * width_ + col) * channels_, channels_};
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

template <class To, class From>
Image<To> image_cast(const Image<From>& in) {
  Image<To> out(in.height(), in.width(), in.channels());
  std::transform(in.data().begin(), in.data().end(), out.data().begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

// ---------------------------------------------------------------------------
// Random stream
// ---------------------------------------------------------------------------

/// Seedable random stream. Every stochastic operation takes one explicitly so
/// that runs are reproducible from a single seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  /// Independent child stream, used to hand sub-streams to workers.
  Rng split() { return Rng(engine_()); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Row-parallel helper
// ---------------------------------------------------------------------------

/// Runs fn(begin, end, worker) over contiguous row ranges. With threads <= 1
/// everything runs inline on the calling thread.
template <class Fn>
void parallel_rows(std::size_t rows, unsigned threads, Fn&& fn) {
  if (threads <= 1 || rows < 2) {
    fn(std::size_t{0}, rows, 0u);
    return;
  }
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, rows));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (rows + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(rows, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, w] { fn(b, e, w); });
  }
  for (auto& t : pool) t.join();
}

inline constexpr double kPi = 3.14159265358979323846;

template <class S>
S softplus(S x) {
  // log(1 + e^x) without overflow
  return x > S(20) ? x : std::log1p(std::exp(x));
}

template <class S>
S sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace a3d
