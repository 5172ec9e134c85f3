// SPDX-License-Identifier: Apache-2.0
//
// Out-of-process critic over HTTP.
//
// POST /denoise, body = u32 LE header length | JSON header | image payload.
//   request header:  {"kind":"denoise","width","height","channels","t",
//                     "guidance_scale","weights":[..],"prompts":[..],"camera"?}
//   response header: {"kind":"epsilon","width","height","channels"}
// The payload is the row-major image as f32 little-endian. Reals in the header
// are written with round-trip precision so both ends see the same doubles.

#pragma once

#include <bit>
#include <chrono>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "a3d/config.hpp"
#include "a3d/guidance.hpp"

namespace a3d {

namespace wire {

struct Message {
  json header;
  Image<float> image;
};

inline std::string encode(const json& header, const Image<float>& img) {
  const std::string h = header.dump();
  std::string out;
  out.reserve(4 + h.size() + 4 * img.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xff));
  out += h;
  for (float v : img.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

/// Parses a framed message; the header must declare the image shape and the
/// payload must match it exactly.
inline Message decode(const std::string& body, const char* expected_kind) {
  if (body.size() < 4) throw ProtocolError("wire: message shorter than its length prefix");
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= std::uint32_t(static_cast<unsigned char>(body[i])) << (8 * i);
  if (hlen > body.size() - 4) throw ProtocolError("wire: header length exceeds the message");
  Message m;
  try {
    m.header = json::parse(body.begin() + 4, body.begin() + 4 + hlen);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("wire: malformed header: ") + e.what());
  }
  if (!m.header.is_object() || m.header.value("kind", std::string{}) != expected_kind)
    throw ProtocolError(std::string("wire: expected a '") + expected_kind + "' message");
  std::size_t dims[3];
  const char* names[3] = {"height", "width", "channels"};
  for (int k = 0; k < 3; ++k) {
    const auto it = m.header.find(names[k]);
    if (it == m.header.end() || !it->is_number_unsigned() || it->get<std::uint64_t>() == 0 ||
        it->get<std::uint64_t>() > (1u << 16))
      throw ProtocolError(std::string("wire: header field '") + names[k] + "' is missing or invalid");
    dims[k] = it->get<std::size_t>();
  }
  if (dims[2] > 4) throw ProtocolError("wire: at most 4 channels");
  const std::size_t count = dims[0] * dims[1] * dims[2];
  if (body.size() - 4 - hlen != 4 * count)
    throw ProtocolError("wire: payload size does not match the declared shape");
  m.image = Image<float>(dims[0], dims[1], dims[2]);
  const auto* p = reinterpret_cast<const unsigned char*>(body.data()) + 4 + hlen;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t(p[4 * i + b]) << (8 * b);
    m.image.data()[i] = std::bit_cast<float>(bits);
  }
  return m;
}

inline json camera_json(const Camera& c) {
  return {{"position", vec3_json(c.position)}, {"target", vec3_json(c.target)},
          {"up", vec3_json(c.up)},             {"vertical_fov", c.vertical_fov},
          {"width", c.width},                  {"height", c.height}};
}

inline Camera camera_from_json(const json& j) {
  try {
    Camera c;
    auto v3 = [&](const char* k) {
      const auto& a = j.at(k);
      if (!a.is_array() || a.size() != 3) throw ProtocolError(std::string("camera.") + k);
      return Vec3d{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    c.position = v3("position");
    c.target = v3("target");
    c.up = v3("up");
    c.vertical_fov = j.at("vertical_fov").get<double>();
    c.width = j.at("width").get<std::size_t>();
    c.height = j.at("height").get<std::size_t>();
    c.validate();
    return c;
  } catch (const ProtocolError&) {
    throw;
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("wire: invalid camera: ") + e.what());
  }
}

inline json denoise_header(const DenoiseRequest& req) {
  json h = {{"kind", "denoise"},
            {"width", req.noisy.width()},
            {"height", req.noisy.height()},
            {"channels", req.noisy.channels()},
            {"t", req.t},
            {"guidance_scale", req.guidance_scale},
            {"weights", req.conditioning.weights},
            {"prompts", req.conditioning.prompts}};
  if (req.camera) h["camera"] = camera_json(*req.camera);
  return h;
}

}  // namespace wire

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

/// Critic that forwards denoise calls to a remote server. Transport failures
/// and malformed answers are retried; after the retry budget a ProtocolError
/// (a GuidanceError) reaches the trainer, which skips the step.
class RemoteCritic : public Critic {
 public:
  explicit RemoteCritic(RemoteCriticConfig cfg)
      : cfg_(std::move(cfg)),
        slots_(std::make_unique<std::counting_semaphore<256>>(
            std::ptrdiff_t(std::clamp<std::uint32_t>(cfg_.max_in_flight, 1, 256)))) {
    if (cfg_.url.empty()) throw ConfigError("remote critic: empty url");
  }

  Image<float> denoise(const DenoiseRequest& req) const override {
    const std::string body = wire::encode(wire::denoise_header(req), req.noisy);
    std::string last_error;
    for (std::uint32_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
      try {
        return attempt_once(body, req.noisy);
      } catch (const ProtocolError& e) {
        last_error = e.what();
      }
    }
    throw ProtocolError("remote critic: giving up after " + std::to_string(cfg_.retries + 1) +
                        " attempts: " + last_error);
  }

  const RemoteCriticConfig& config() const { return cfg_; }

 private:
  struct Slot {
    std::counting_semaphore<256>& s;
    explicit Slot(std::counting_semaphore<256>& sem) : s(sem) { s.acquire(); }
    ~Slot() { s.release(); }
  };

  Image<float> attempt_once(const std::string& body, const Image<float>& like) const {
    Slot slot(*slots_);
    httplib::Client cli(cfg_.url);
    const auto ms = std::chrono::milliseconds(cfg_.timeout_ms);
    cli.set_connection_timeout(ms);
    cli.set_read_timeout(ms);
    cli.set_write_timeout(ms);
    auto res = cli.Post("/denoise", body, "application/octet-stream");
    if (!res) throw ProtocolError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw ProtocolError("server answered " + std::to_string(res->status) + ": " +
                          res->body.substr(0, 200));
    wire::Message m = wire::decode(res->body, "epsilon");
    if (!m.image.same_shape(like)) throw ProtocolError("response image shape differs from request");
    return std::move(m.image);
  }

  RemoteCriticConfig cfg_;
  std::unique_ptr<std::counting_semaphore<256>> slots_;
};

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

/// Serves an in-process critic over the wire protocol. Prompts name the
/// critic's embeddings; an unknown prompt (such as the empty one) contributes
/// a zero embedding.
class CriticServer {
 public:
  CriticServer(std::shared_ptr<const Critic> critic, EmbeddingSet embeddings)
      : critic_(std::move(critic)), embeddings_(std::move(embeddings)) {
    embeddings_.validate();
    server_.Post("/denoise", [this](const httplib::Request& rq, httplib::Response& rs) {
      handle(rq, rs);
    });
  }
  ~CriticServer() { stop(); }

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("critic server: cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  int port() const { return port_; }

  /// Decodes one request body and returns the response body.
  std::string answer(const std::string& body) const {
    const wire::Message m = wire::decode(body, "denoise");
    const json& h = m.header;
    Conditioning cond;
    try {
      cond.weights = h.at("weights").get<std::vector<double>>();
      cond.prompts = h.at("prompts").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
      throw ProtocolError(std::string("wire: bad weights/prompts: ") + e.what());
    }
    if (cond.weights.size() != cond.prompts.size())
      throw ProtocolError("wire: weights and prompts differ in length");
    cond.embedding.values.assign(embeddings_.dim(), 0.0);
    for (std::size_t k = 0; k < cond.prompts.size(); ++k) {
      const auto it = std::find(embeddings_.prompts.begin(), embeddings_.prompts.end(), cond.prompts[k]);
      const PromptEmbedding* y = nullptr;
      if (it != embeddings_.prompts.end())
        y = &embeddings_.vertices[std::size_t(it - embeddings_.prompts.begin())];
      else if (embeddings_.general && cond.prompts[k] == embeddings_.general_prompt)
        y = &*embeddings_.general;
      else if (embeddings_.empty && cond.prompts[k].empty())
        y = &*embeddings_.empty;
      if (!y) continue;
      if (cond.weights[k] == 1.0 && cond.prompts.size() == 1) {
        cond.embedding = *y;
        break;
      }
      for (std::size_t e = 0; e < cond.embedding.size(); ++e)
        cond.embedding.values[e] += cond.weights[k] * y->values[e];
    }
    std::optional<Camera> cam;
    if (h.contains("camera")) cam = wire::camera_from_json(h["camera"]);
    double t = 0.0, gs = 1.0;
    try {
      t = h.at("t").get<double>();
      gs = h.value("guidance_scale", 1.0);
    } catch (const std::exception&) {
      throw ProtocolError("wire: bad t");
    }
    if (!(t > 0.0 && t < 1.0)) throw ProtocolError("wire: t must lie in (0, 1)");
    const DenoiseRequest req{m.image, t, cond, gs, cam};
    const Image<float> eps = critic_->denoise(req);
    return wire::encode({{"kind", "epsilon"},
                         {"width", eps.width()},
                         {"height", eps.height()},
                         {"channels", eps.channels()}},
                        eps);
  }

 private:
  void handle(const httplib::Request& rq, httplib::Response& rs) const {
    try {
      rs.set_content(answer(rq.body), "application/octet-stream");
    } catch (const ProtocolError& e) {
      rs.status = 400;
      rs.set_content(e.what(), "text/plain");
    } catch (const std::exception& e) {
      rs.status = 500;
      rs.set_content(e.what(), "text/plain");
    }
  }

  std::shared_ptr<const Critic> critic_;
  EmbeddingSet embeddings_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace a3d
