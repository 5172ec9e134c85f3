// SPDX-License-Identifier: Apache-2.0
//
// PNG encoding of rendered maps (libpng, in memory), map quantization, and the
// JSON-lines metrics log.

#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <png.h>

#include "a3d/checkpoint.hpp"
#include "a3d/core.hpp"
#include "a3d/render.hpp"
#include "a3d/trainer.hpp"

namespace a3d {

using Bytes = std::vector<unsigned char>;

namespace detail {

struct PngWriteBuffer {
  Bytes* out;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->out->insert(buf->out->end(), data, data + len);
}
inline void png_flush_noop(png_structp) {}

struct PngReadBuffer {
  const Bytes* in;
  std::size_t pos;
};

inline void png_read_from_vector(png_structp png, png_bytep data, png_size_t len) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->pos + len > buf->in->size()) png_error(png, "truncated PNG");
  std::memcpy(data, buf->in->data() + buf->pos, len);
  buf->pos += len;
}

inline int png_color_type(std::size_t channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 2: return PNG_COLOR_TYPE_GRAY_ALPHA;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
  }
  throw InvalidInput("png: unsupported channel count " + std::to_string(channels));
}

/// Rows of big-endian samples, `bytes` per sample.
inline Bytes encode_png_rows(std::size_t h, std::size_t w, std::size_t channels, int bit_depth,
                             const std::vector<Bytes>& rows) {
  if (h == 0 || w == 0) throw InvalidInput("png: empty image");
  const int color = png_color_type(channels);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: out of memory");
  }
  Bytes out;
  PngWriteBuffer buf{&out};
  std::vector<png_bytep> ptrs(h);
  for (std::size_t r = 0; r < h; ++r) ptrs[r] = const_cast<png_bytep>(rows[r].data());
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(png, &buf, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
               color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings so identical pixels always give identical bytes.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

inline Bytes encode_png(const Image<std::uint8_t>& img) {
  std::vector<Bytes> rows(img.height());
  for (std::size_t r = 0; r < img.height(); ++r) {
    const auto* p = &img(r, 0, 0);
    rows[r].assign(p, p + img.width() * img.channels());
  }
  return detail::encode_png_rows(img.height(), img.width(), img.channels(), 8, rows);
}

inline Bytes encode_png(const Image<std::uint16_t>& img) {
  std::vector<Bytes> rows(img.height());
  for (std::size_t r = 0; r < img.height(); ++r) {
    rows[r].reserve(img.width() * img.channels() * 2);
    for (std::size_t c = 0; c < img.width(); ++c)
      for (std::size_t ch = 0; ch < img.channels(); ++ch) {
        const std::uint16_t v = img(r, c, ch);
        rows[r].push_back(static_cast<unsigned char>(v >> 8));
        rows[r].push_back(static_cast<unsigned char>(v & 0xff));
      }
  }
  return detail::encode_png_rows(img.height(), img.width(), img.channels(), 16, rows);
}

struct DecodedPng {
  std::size_t height = 0, width = 0, channels = 0;
  int bit_depth = 8;
  /// Samples widened to 16 bits (8-bit images keep their 0..255 values).
  std::vector<std::uint16_t> samples;
};

inline DecodedPng decode_png(const Bytes& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw InvalidInput("png: not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw Error("png: out of memory");
  }
  detail::PngReadBuffer buf{&bytes, 0};
  DecodedPng out;
  std::vector<Bytes> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw InvalidInput("png: decoding failed");
  }
  png_set_read_fn(png, &buf, detail::png_read_from_vector);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (out.bit_depth < 8) png_set_expand(png);
  png_read_update_info(png, info);
  out.height = png_get_image_height(png, info);
  out.width = png_get_image_width(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  rows.assign(out.height, Bytes(rowbytes));
  std::vector<png_bytep> ptrs(out.height);
  for (std::size_t r = 0; r < out.height; ++r) ptrs[r] = rows[r].data();
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  out.samples.reserve(out.height * out.width * out.channels);
  for (const auto& row : rows) {
    if (out.bit_depth == 16)
      for (std::size_t i = 0; i + 1 < row.size(); i += 2)
        out.samples.push_back(static_cast<std::uint16_t>((row[i] << 8) | row[i + 1]));
    else
      for (unsigned char v : row) out.samples.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map quantization
// ---------------------------------------------------------------------------

/// round(clamp(v, 0, 1) * 255); non-finite values map to 0.
template <class S>
Image<std::uint8_t> quantize8(const Image<S>& img) {
  Image<std::uint8_t> out(img.height(), img.width(), img.channels());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = double(img.data()[i]);
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    out.data()[i] = static_cast<std::uint8_t>(std::lround(c * 255.0));
  }
  return out;
}

/// Unit normals n in [-1, 1]^3 stored as (n + 1) / 2; background stays 0.
template <class S>
Image<std::uint8_t> quantize_normals(const Image<S>& n) {
  Image<S> shifted(n.height(), n.width(), n.channels());
  for (std::size_t r = 0; r < n.height(); ++r)
    for (std::size_t c = 0; c < n.width(); ++c) {
      bool zero = true;
      for (std::size_t ch = 0; ch < n.channels(); ++ch) zero = zero && n(r, c, ch) == S(0);
      for (std::size_t ch = 0; ch < n.channels(); ++ch)
        shifted(r, c, ch) = zero ? S(0) : S(0.5) * (n(r, c, ch) + S(1));
    }
  return quantize8(shifted);
}

/// Depth over [near, far] mapped linearly to 0..65535.
struct DepthEncoding {
  double near = 0.0, far = 1.0;
  json sidecar() const {
    return {{"encoding", "linear_u16"}, {"near", near}, {"far", far},
            {"formula", "depth = near + (far - near) * value / 65535"}};
  }
};

template <class S>
Image<std::uint16_t> quantize_depth(const Image<S>& d, const DepthEncoding& enc) {
  Image<std::uint16_t> out(d.height(), d.width(), 1);
  const double span = enc.far - enc.near;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double v = double(d.data()[i]);
    const double f = std::isfinite(v) && span > 0 ? std::clamp((v - enc.near) / span, 0.0, 1.0) : 0.0;
    out.data()[i] = static_cast<std::uint16_t>(std::lround(f * 65535.0));
  }
  return out;
}

enum class MapKind { rgb, normal, depth, opacity };

inline const char* to_string(MapKind m) {
  switch (m) {
    case MapKind::rgb: return "rgb";
    case MapKind::normal: return "normal";
    case MapKind::depth: return "depth";
    case MapKind::opacity: return "opacity";
  }
  return "?";
}

inline MapKind map_kind_from_string(const std::string& s) {
  if (s == "rgb") return MapKind::rgb;
  if (s == "normal") return MapKind::normal;
  if (s == "depth") return MapKind::depth;
  if (s == "opacity") return MapKind::opacity;
  throw InvalidInput("unknown map '" + s + "' (expected rgb, normal, depth or opacity)");
}

/// The PNG bytes of one rendered map; the single encoding path shared by the
/// command line and the service.
template <class S>
Bytes encode_map(const RenderedView<S>& view, MapKind kind, const RayMarchConfig& cfg) {
  switch (kind) {
    case MapKind::rgb: return encode_png(quantize8(view.rgb));
    case MapKind::normal: return encode_png(quantize_normals(view.normal));
    case MapKind::opacity: return encode_png(quantize8(view.opacity));
    case MapKind::depth: return encode_png(quantize_depth(view.depth, {cfg.near, cfg.far}));
  }
  throw InvalidInput("unknown map");
}

inline void write_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  detail::write_file_atomic(path, bytes);
}

/// Writes `<stem>_<map>.png` per map, plus `<stem>_depth.json` for depth.
template <class S>
std::vector<std::filesystem::path> write_maps(const std::filesystem::path& stem,
                                              const RenderedView<S>& view,
                                              const std::vector<MapKind>& maps,
                                              const RayMarchConfig& cfg) {
  std::vector<std::filesystem::path> written;
  for (MapKind m : maps) {
    const std::filesystem::path p = stem.string() + "_" + to_string(m) + ".png";
    write_bytes(p, encode_map(view, m, cfg));
    written.push_back(p);
    if (m == MapKind::depth) {
      const std::filesystem::path side = stem.string() + "_depth.json";
      const std::string text = DepthEncoding{cfg.near, cfg.far}.sidecar().dump(2) + "\n";
      write_bytes(side, Bytes(text.begin(), text.end()));
      written.push_back(side);
    }
  }
  return written;
}

// ---------------------------------------------------------------------------
// Metrics log
// ---------------------------------------------------------------------------

inline json to_json(const StepRecord& r) {
  json losses = json::object();
  for (const auto& [name, term] : r.losses.terms)
    losses[name] = {{"value", term.value}, {"weight", term.weight}};
  json j = {{"iteration", r.iteration},
            {"u", r.u},
            {"site", to_string(r.site)},
            {"t", r.t},
            {"skipped", r.skipped},
            {"total", r.losses.total()},
            {"losses", losses}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

/// Append-only JSON-lines log, one record per line, flushed per record.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
    if (!out_) throw Error("cannot open metrics log '" + path.string() + "'");
  }
  void write(const json& record) {
    std::lock_guard lock(mu_);
    out_ << record.dump() << '\n';
    out_.flush();
  }
  void write(const StepRecord& r) { write(to_json(r)); }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace a3d
