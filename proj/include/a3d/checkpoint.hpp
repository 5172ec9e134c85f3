// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: "A3DF" | u32 version | u64 config length | config JSON |
// u64 parameter count | f32 parameters | u32 CRC-32 of everything before it.
// All integers and floats are little-endian. Parameters follow FieldLayout's
// canonical order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include "a3d/config.hpp"
#include "a3d/field.hpp"

namespace a3d {

inline constexpr char kCheckpointMagic[4] = {'A', '3', 'D', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FieldConfig field{};
  std::vector<std::string> prompts;
  std::uint64_t iteration = 0;
  /// Render settings the model was trained with; used as render defaults.
  RayMarchConfig render{};
  std::vector<float> params;

  LatentField<float> make_field() const {
    LatentField<float> f(field);
    if (f.parameter_count() != params.size())
      throw IntegrityError("checkpoint: parameter count does not match the configuration");
    std::copy(params.begin(), params.end(), f.params().begin());
    return f;
  }

  static Checkpoint from_field(const LatentField<float>& f, std::vector<std::string> prompts,
                               std::uint64_t iteration, const RayMarchConfig& render) {
    Checkpoint c;
    c.field = f.config();
    c.prompts = std::move(prompts);
    c.iteration = iteration;
    c.render = render;
    c.params.assign(f.params().begin(), f.params().end());
    return c;
  }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

/// Writes to a sibling temporary, syncs, then renames over the target.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::vector<unsigned char>& bytes) {
  const auto dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  const auto tmp = dir / ("." + path.filename().string() + ".tmp." + std::to_string(::getpid()));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot create '" + tmp.string() + "'");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t w = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (w <= 0) {
      ::close(fd);
      std::filesystem::remove(tmp);
      throw Error("write failed for '" + tmp.string() + "'");
    }
    done += static_cast<std::size_t>(w);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    std::filesystem::remove(tmp);
    throw Error("cannot flush '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  const FieldLayout layout(c.field);
  if (layout.total != c.params.size())
    throw InvalidInput("checkpoint: parameter count does not match the configuration");
  const json header = {{"field", to_json(c.field)},
                       {"latent_dim", c.field.latent_dim},
                       {"prompts", c.prompts},
                       {"iteration", c.iteration},
                       {"render", to_json(c.render)}};
  const std::string text = header.dump();
  std::vector<unsigned char> out;
  out.reserve(24 + text.size() + 4 * c.params.size() + 4);
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  detail::put_u64(out, c.params.size());
  for (float v : c.params) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

/// Verifies magic, version, lengths and checksum before decoding anything.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& b) {
  if (b.size() < 4 || std::memcmp(b.data(), kCheckpointMagic, 4) != 0)
    throw IntegrityError("checkpoint: bad magic (not an A3DF file)");
  if (b.size() < 8) throw IntegrityError("checkpoint: truncated header");
  const std::uint32_t version = detail::get_u32(b.data() + 4);
  if (version != kCheckpointVersion)
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(version) +
                         " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  if (b.size() < 16) throw IntegrityError("checkpoint: truncated header");
  const std::uint64_t cfg_len = detail::get_u64(b.data() + 8);
  if (cfg_len > b.size() - 16 || b.size() - 16 - cfg_len < 12)
    throw IntegrityError("checkpoint: truncated configuration block");
  const std::size_t count_at = 16 + static_cast<std::size_t>(cfg_len);
  const std::uint64_t count = detail::get_u64(b.data() + count_at);
  const std::size_t payload_at = count_at + 8;
  if (count > (b.size() - payload_at - 4) / 4 || payload_at + 4 * count + 4 != b.size())
    throw IntegrityError("checkpoint: file length does not match the parameter count");
  const std::size_t crc_at = payload_at + 4 * static_cast<std::size_t>(count);
  if (detail::get_u32(b.data() + crc_at) != detail::crc32_of(b.data(), crc_at))
    throw IntegrityError("checkpoint: checksum mismatch (file is corrupted)");

  Checkpoint c;
  try {
    const json h = json::parse(b.begin() + 16, b.begin() + static_cast<std::ptrdiff_t>(count_at));
    std::vector<std::string> errors;
    ObjectReader r(h, "", errors);
    read_object(r, "field", [&](ObjectReader& f) { read_config(f, c.field); });
    r.integer("latent_dim", c.field.latent_dim, 1);
    r.strings("prompts", c.prompts);
    r.integer("iteration", c.iteration);
    read_object(r, "render", [&](ObjectReader& x) { read_config(x, c.render); });
    r.finish();
    if (!errors.empty()) throw ConfigErrors(errors);
    c.field.validate();
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(std::string("checkpoint: invalid configuration block: ") + e.what());
  }
  if (!c.prompts.empty() && c.prompts.size() != c.field.latent_dim)
    throw IntegrityError("checkpoint: prompt count does not match the latent dimension");
  if (FieldLayout(c.field).total != count)
    throw IntegrityError("checkpoint: parameter count does not match the configuration");
  c.params.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < c.params.size(); ++i)
    c.params[i] = std::bit_cast<float>(detail::get_u32(b.data() + payload_at + 4 * i));
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace a3d
