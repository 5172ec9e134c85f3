// SPDX-License-Identifier: Apache-2.0
//
// Spatially varying latent codes from user anchors, the anchor text format,
// and hybrid rendering.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "a3d/core.hpp"
#include "a3d/latent.hpp"
#include "a3d/render.hpp"

namespace a3d {

struct Anchor {
  Vec3d position{};
  LatentCode code;
};

struct AnchorSet {
  std::vector<Anchor> anchors;
  /// > 0 enables the smoothstep profile between the two nearest anchors.
  double smoothing = 0.0;

  std::size_t dim() const { return anchors.empty() ? 0 : anchors.front().code.size(); }

  void validate() const {
    if (anchors.empty()) throw ConfigError("anchor set is empty");
    if (!(smoothing >= 0.0)) throw ConfigError("anchor set: smoothing must be >= 0");
    const std::size_t n = dim();
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      if (!is_finite(anchors[i].position))
        throw ConfigError("anchor " + std::to_string(i) + ": non-finite position");
      if (anchors[i].code.size() != n)
        throw ConfigError("anchor " + std::to_string(i) + ": latent dimension differs");
      for (std::size_t j = 0; j < i; ++j)
        if (anchors[i].position == anchors[j].position)
          throw ConfigError("anchors " + std::to_string(j) + " and " + std::to_string(i) +
                            " share a position");
    }
  }

  void check_bounds(const Box3<double>& box) const {
    for (std::size_t i = 0; i < anchors.size(); ++i)
      if (!box.contains(anchors[i].position))
        throw ConfigError("anchor " + std::to_string(i) + ": position outside the field bounds");
  }
};

inline double smoothstep01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

namespace detail {

/// Strict total order on anchors at equal distance, independent of list order.
inline bool anchor_before(const Anchor& a, double da, const Anchor& b, double db) {
  if (da != db) return da < db;
  for (int k = 0; k < 3; ++k)
    if (a.position[k] != b.position[k]) return a.position[k] < b.position[k];
  return a.code.values() < b.code.values();
}

}  // namespace detail

/// Blend of the codes of the two nearest anchors a1, a2 (d1 <= d2) with
/// weight w = d2 / (d1 + d2) on a1, passed through smoothstep when the set's
/// smoothing is positive. A single anchor yields its own code.
inline LatentCode latent_at(const Vec3d& p, const AnchorSet& set) {
  if (set.anchors.empty()) throw ConfigError("anchor set is empty");
  if (set.anchors.size() == 1) return set.anchors.front().code;
  std::size_t i1 = 0, i2 = 1;
  double d1 = norm(p - set.anchors[0].position), d2 = norm(p - set.anchors[1].position);
  if (detail::anchor_before(set.anchors[1], d2, set.anchors[0], d1)) {
    std::swap(i1, i2);
    std::swap(d1, d2);
  }
  for (std::size_t k = 2; k < set.anchors.size(); ++k) {
    const double d = norm(p - set.anchors[k].position);
    if (detail::anchor_before(set.anchors[k], d, set.anchors[i1], d1)) {
      i2 = i1, d2 = d1;
      i1 = k, d1 = d;
    } else if (detail::anchor_before(set.anchors[k], d, set.anchors[i2], d2)) {
      i2 = k, d2 = d;
    }
  }
  const LatentCode& c1 = set.anchors[i1].code;
  const LatentCode& c2 = set.anchors[i2].code;
  if (d1 == 0.0) return c1;
  double w = d2 / (d1 + d2);
  if (set.smoothing > 0.0) w = smoothstep01(w);
  if (w == 1.0) return c1;
  std::vector<double> u(c1.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = w * c1[i] + (1.0 - w) * c2[i];
  return LatentCode(std::move(u));
}

// ---------------------------------------------------------------------------
// Anchor text format: one anchor per line, "x y z  u1 ... uN", '#' comments.
// ---------------------------------------------------------------------------

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string format_anchors(const AnchorSet& set) {
  std::string out;
  for (const auto& a : set.anchors) {
    out += format_double(a.position.x) + ' ' + format_double(a.position.y) + ' ' +
           format_double(a.position.z) + ' ';
    for (std::size_t i = 0; i < a.code.size(); ++i)
      out += ' ' + format_double(a.code[i]);
    out += '\n';
  }
  return out;
}

struct AnchorParseResult {
  AnchorSet set;
  /// "line N: message" entries; empty when the text is valid.
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

inline AnchorParseResult parse_anchors(std::string_view text) {
  AnchorParseResult res;
  std::size_t line_no = 0, start = 0;
  std::size_t dim = 0;
  auto fail = [&](const std::string& msg) {
    res.errors.push_back("line " + std::to_string(line_no) + ": " + msg);
  };
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::vector<double> vals;
    bool bad = false;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      const std::string_view tok = line.substr(i, j - i);
      double v = 0.0;
      const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        fail("'" + std::string(tok) + "' is not a finite number");
        bad = true;
        break;
      }
      vals.push_back(v);
      i = j;
    }
    if (bad || vals.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (vals.size() < 4) {
      fail("expected 'x y z u1 ... uN'");
    } else if (dim != 0 && vals.size() - 3 != dim) {
      fail("latent code has " + std::to_string(vals.size() - 3) + " components, expected " +
           std::to_string(dim));
    } else {
      std::vector<double> u(vals.begin() + 3, vals.end());
      if (!LatentCode::on_simplex(u)) {
        fail("latent code is not on the probability simplex");
      } else {
        dim = u.size();
        Anchor a{{vals[0], vals[1], vals[2]}, LatentCode(std::move(u))};
        for (std::size_t k = 0; k < res.set.anchors.size(); ++k)
          if (res.set.anchors[k].position == a.position)
            fail("position repeats anchor " + std::to_string(k));
        res.set.anchors.push_back(std::move(a));
      }
    }
    if (end == text.size()) break;
  }
  if (res.set.anchors.empty() && res.errors.empty()) res.errors.push_back("no anchors");
  return res;
}

/// Throws ConfigError listing every problem.
inline AnchorSet load_anchors_text(std::string_view text, double smoothing = 0.0) {
  auto r = parse_anchors(text);
  if (!r.ok()) {
    std::string msg = "invalid anchors:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  r.set.smoothing = smoothing;
  r.set.validate();
  return std::move(r.set);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline LatentSource anchor_latent_source(AnchorSet anchors) {
  anchors.validate();
  const std::size_t n = anchors.dim();
  return LatentSource(n, [a = std::move(anchors)](const Vec3d& p) { return latent_at(p, a); });
}

template <class Field, class S = typename Field::Scalar>
RenderedView<S> render_hybrid(const Field& field, const Camera& camera, const AnchorSet& anchors,
                              const LightSample& light, const RayMarchConfig& cfg) {
  if (anchors.dim() != field.latent_dim())
    throw ConfigError("hybrid: anchor codes do not match the field's latent dimension");
  return render_view(field, camera, anchor_latent_source(anchors), light, cfg);
}

}  // namespace a3d
