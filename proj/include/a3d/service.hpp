// SPDX-License-Identifier: Apache-2.0
//
// Render requests shared by the command line and the HTTP service, and the
// service itself.
//
//   GET  /health            -> {"status":"ok"}
//   GET  /model/info        -> {"prompts","N","bounds","image_limits","iteration"}
//   POST /render            -> image/png (one map) or multipart/mixed (several)
//   POST /anchors/validate  -> {"anchors":[...],"text":...} or {"errors":[...]}
//   POST /model/load        -> swaps in another checkpoint

#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "a3d/checkpoint.hpp"
#include "a3d/config.hpp"
#include "a3d/hybrid.hpp"
#include "a3d/image_io.hpp"
#include "a3d/render.hpp"

namespace a3d {

struct ImageLimits {
  std::size_t max_width = 1024;
  std::size_t max_height = 1024;
};

/// A loaded checkpoint ready to render. Immutable once built.
struct Model {
  Checkpoint checkpoint;
  LatentField<float> field;
  RayMarchConfig render;

  explicit Model(Checkpoint c, unsigned threads = 1)
      : checkpoint(std::move(c)), field(checkpoint.make_field()), render(checkpoint.render) {
    render.stratified_jitter = false;
    render.jitter_seed = 0;
    render.threads = std::max(1u, threads);
  }

  std::size_t latent_dim() const { return field.latent_dim(); }
};

// ---------------------------------------------------------------------------
// Request model
// ---------------------------------------------------------------------------

struct SweepLatent {
  double t = 0.0;
  std::size_t i = 0, j = 1;
};

/// u = t e_i + (1 - t) e_j; exact one-hot codes at t = 0 and t = 1.
inline LatentCode sweep_code(std::size_t n, const SweepLatent& s) {
  if (s.i >= n || s.j >= n || s.i == s.j) throw InvalidInput("sweep: invalid pair");
  if (!(s.t >= 0.0 && s.t <= 1.0)) throw InvalidInput("sweep: t must lie in [0, 1]");
  if (s.t == 1.0) return LatentCode::vertex(n, s.i);
  if (s.t == 0.0) return LatentCode::vertex(n, s.j);
  std::vector<double> u(n, 0.0);
  u[s.i] = s.t;
  u[s.j] = 1.0 - s.t;
  return LatentCode(std::move(u));
}

struct RenderRequest {
  Camera camera;
  std::variant<LatentCode, SweepLatent, AnchorSet> latent{LatentCode::vertex(1, 0)};
  std::vector<MapKind> maps{MapKind::rgb};
};

/// Field-level request problems.
class RequestErrors : public InvalidInput {
 public:
  explicit RequestErrors(std::vector<std::string> errors)
      : InvalidInput(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const noexcept { return errors_; }
  json to_json() const {
    json a = json::array();
    for (const auto& e : errors_) {
      const auto colon = e.find(": ");
      a.push_back({{"path", e.substr(0, colon)},
                   {"message", colon == std::string::npos ? e : e.substr(colon + 2)}});
    }
    return {{"errors", a}};
  }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid request:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

namespace detail {

inline std::vector<double> read_reals(ObjectReader& r, const std::string& key, bool required) {
  std::vector<double> out;
  if (required) r.require(key);
  const json* v = r.take(key);
  if (!v) return out;
  if (!v->is_array() || v->empty()) {
    r.error(r.at(key), "expected a non-empty array of numbers");
    return out;
  }
  for (std::size_t i = 0; i < v->size(); ++i) {
    const auto& e = (*v)[i];
    if (!e.is_number() || !std::isfinite(e.get<double>())) {
      r.error(r.at(key) + "/" + std::to_string(i), "expected a finite number");
      return {};
    }
    out.push_back(e.get<double>());
  }
  return out;
}

inline void check_code(ObjectReader& r, const std::string& key, const std::vector<double>& u,
                       std::size_t n) {
  if (u.empty()) return;
  if (u.size() != n)
    r.error(r.at(key), "expected " + std::to_string(n) + " components, got " + std::to_string(u.size()));
  else if (!LatentCode::on_simplex(u))
    r.error(r.at(key), "not on the probability simplex (non-negative, summing to 1)");
}

inline Camera read_camera(ObjectReader& r, const ImageLimits& limits,
                          const Box3<double>& bounds) {
  Camera cam;
  double fov_deg = 40.0;
  r.real("fov_deg", fov_deg, 0.0, 180.0, true);
  r.integer("width", cam.width, 1, limits.max_width);
  r.integer("height", cam.height, 1, limits.max_height);
  if (const json* o = r.take("orbit")) {
    ObjectReader orb(*o, r.at("orbit"), r.errors());
    double az = 0.0, el = 15.0, radius = 2.0 * bounds.radius();
    orb.real("azimuth_deg", az);
    orb.real("elevation_deg", el, -89.9, 89.9);
    orb.positive("radius", radius);
    orb.finish();
    if (r.take("position") || r.take("target") || r.take("up"))
      r.error(r.path(), "give either orbit or position/target/up");
    const Camera c = orbit_camera(az * kPi / 180.0, el * kPi / 180.0, radius, fov_deg * kPi / 180.0,
                                  cam.width, cam.height, bounds.center());
    return c;
  }
  r.require("position");
  r.vec3("position", cam.position);
  cam.target = bounds.center();
  r.vec3("target", cam.target);
  r.vec3("up", cam.up);
  cam.vertical_fov = fov_deg * kPi / 180.0;
  try {
    cam.basis();
  } catch (const InvalidInput& e) {
    r.error(r.path(), e.what());
  }
  return cam;
}

}  // namespace detail

inline json anchors_to_json(const AnchorSet& set) {
  json a = json::array();
  for (const auto& x : set.anchors)
    a.push_back({{"pos", vec3_json(x.position)}, {"code", x.code.values()}});
  return a;
}

/// Reads {"anchors":[{"pos":[x,y,z],"code":[...]}, ...], "smoothing"?} into a
/// validated set; n = 0 accepts any (consistent) code length.
inline AnchorSet read_anchor_list(ObjectReader& r, std::size_t n) {
  AnchorSet set;
  r.non_negative("smoothing", set.smoothing);
  r.require("anchors");
  const json* a = r.take("anchors");
  if (!a) return set;
  const std::string at = r.at("anchors");
  if (!a->is_array() || a->empty()) {
    r.error(at, "expected a non-empty array of anchors");
    return set;
  }
  for (std::size_t k = 0; k < a->size(); ++k) {
    ObjectReader ar((*a)[k], at + "/" + std::to_string(k), r.errors());
    Anchor anchor;
    ar.require("pos");
    ar.vec3("pos", anchor.position);
    const auto code = detail::read_reals(ar, "code", true);
    const std::size_t want = n ? n : (set.anchors.empty() ? code.size() : set.dim());
    detail::check_code(ar, "code", code, want);
    ar.finish();
    if (code.size() == want && LatentCode::on_simplex(code)) {
      anchor.code = LatentCode(code);
      for (std::size_t q = 0; q < set.anchors.size(); ++q)
        if (set.anchors[q].position == anchor.position)
          ar.error(ar.at("pos"), "repeats the position of anchor " + std::to_string(q));
      set.anchors.push_back(std::move(anchor));
    }
  }
  return set;
}

inline RenderRequest parse_render_request(const json& body, std::size_t n,
                                          const Box3<double>& bounds,
                                          const ImageLimits& limits = {}) {
  std::vector<std::string> errors;
  RenderRequest req;
  ObjectReader r(body, "", errors);
  r.require("camera");
  read_object(r, "camera", [&](ObjectReader& c) { req.camera = detail::read_camera(c, limits, bounds); });
  r.require("latent");
  read_object(r, "latent", [&](ObjectReader& l) {
    const bool has_fixed = l.take("fixed") != nullptr;
    const bool has_sweep = l.take("sweep_t") != nullptr;
    const bool has_anchors = l.take("anchors") != nullptr;
    if (int(has_fixed) + int(has_sweep) + int(has_anchors) != 1) {
      l.error(l.path(), "give exactly one of fixed, sweep_t (with pair) or anchors");
      // Suppress follow-on unknown-key noise.
      l.take("pair");
      l.take("smoothing");
      return;
    }
    if (has_fixed) {
      const auto u = detail::read_reals(l, "fixed", true);
      detail::check_code(l, "fixed", u, n);
      if (u.size() == n && LatentCode::on_simplex(u)) req.latent = LatentCode(u);
    } else if (has_sweep) {
      SweepLatent s;
      l.real("sweep_t", s.t, 0.0, 1.0);
      if (const json* p = l.take("pair")) {
        if (!p->is_array() || p->size() != 2 || !(*p)[0].is_number_unsigned() ||
            !(*p)[1].is_number_unsigned()) {
          l.error(l.at("pair"), "expected [i, j] with two vertex indices");
        } else {
          s.i = (*p)[0].get<std::size_t>();
          s.j = (*p)[1].get<std::size_t>();
          if (s.i >= n || s.j >= n || s.i == s.j)
            l.error(l.at("pair"), "indices must be distinct and below " + std::to_string(n));
        }
      } else if (n < 2) {
        l.error(l.at("pair"), "a sweep needs at least two objects");
      }
      req.latent = s;
    } else {
      req.latent = read_anchor_list(l, n);
    }
  });
  if (const json* m = r.take("maps")) {
    req.maps.clear();
    if (!m->is_array() || m->empty()) {
      r.error("/maps", "expected a non-empty array of map names");
    } else {
      for (std::size_t i = 0; i < m->size(); ++i) {
        try {
          if (!(*m)[i].is_string()) throw InvalidInput("expected a string");
          const MapKind k = map_kind_from_string((*m)[i].get<std::string>());
          if (std::find(req.maps.begin(), req.maps.end(), k) != req.maps.end())
            throw InvalidInput("map listed twice");
          req.maps.push_back(k);
        } catch (const InvalidInput& e) {
          r.error("/maps/" + std::to_string(i), e.what());
        }
      }
    }
  }
  r.finish();
  if (!errors.empty()) throw RequestErrors(std::move(errors));
  return req;
}

inline LatentSource latent_source(const RenderRequest& req, std::size_t n) {
  if (const auto* u = std::get_if<LatentCode>(&req.latent)) return LatentSource(*u);
  if (const auto* s = std::get_if<SweepLatent>(&req.latent)) return LatentSource(sweep_code(n, *s));
  return anchor_latent_source(std::get<AnchorSet>(req.latent));
}

struct RenderedMaps {
  std::vector<std::pair<MapKind, Bytes>> pngs;
  DepthEncoding depth;
};

/// The one render path behind both `a3d render` and POST /render.
inline RenderedMaps render_maps(const Model& model, const RenderRequest& req) {
  const std::size_t n = model.latent_dim();
  if (const auto* set = std::get_if<AnchorSet>(&req.latent)) {
    set->validate();
    if (set->dim() != n) throw InvalidInput("anchor codes do not match the model's latent dimension");
  }
  const auto view = render_view(model.field, req.camera, latent_source(req, n),
                                LightSample::unlit(), model.render);
  RenderedMaps out;
  out.depth = {model.render.near, model.render.far};
  for (MapKind m : req.maps) out.pngs.emplace_back(m, encode_map(view, m, model.render));
  return out;
}

// ---------------------------------------------------------------------------
// multipart/mixed
// ---------------------------------------------------------------------------

inline std::string multipart_boundary(const RenderedMaps& maps) {
  std::string b = "a3d-maps";
  for (;;) {
    bool clash = false;
    for (const auto& [_, bytes] : maps.pngs)
      clash = clash || std::search(bytes.begin(), bytes.end(), b.begin(), b.end()) != bytes.end();
    if (!clash) return b;
    b += "-x";
  }
}

inline std::string encode_multipart(const RenderedMaps& maps, const std::string& boundary) {
  std::string out;
  for (const auto& [kind, bytes] : maps.pngs) {
    out += "--" + boundary + "\r\n";
    out += "Content-Type: image/png\r\n";
    out += std::string("Content-Disposition: attachment; name=\"") + to_string(kind) +
           "\"; filename=\"" + to_string(kind) + ".png\"\r\n\r\n";
    out.append(bytes.begin(), bytes.end());
    out += "\r\n";
  }
  out += "--" + boundary + "--\r\n";
  return out;
}

/// Splits a multipart/mixed body into (name, bytes) parts.
inline std::vector<std::pair<std::string, Bytes>> decode_multipart(const std::string& body,
                                                                   const std::string& boundary) {
  std::vector<std::pair<std::string, Bytes>> parts;
  const std::string delim = "--" + boundary;
  std::size_t pos = body.find(delim);
  while (pos != std::string::npos) {
    pos += delim.size();
    if (body.compare(pos, 2, "--") == 0) break;
    pos += 2;  // CRLF
    const std::size_t head_end = body.find("\r\n\r\n", pos);
    if (head_end == std::string::npos) throw ProtocolError("multipart: missing part headers");
    const std::string head = body.substr(pos, head_end - pos);
    std::string name;
    if (const auto k = head.find("name=\""); k != std::string::npos)
      name = head.substr(k + 6, head.find('"', k + 6) - (k + 6));
    const std::size_t data = head_end + 4;
    const std::size_t next = body.find("\r\n" + delim, data);
    if (next == std::string::npos) throw ProtocolError("multipart: unterminated part");
    parts.emplace_back(name, Bytes(body.begin() + std::ptrdiff_t(data), body.begin() + std::ptrdiff_t(next)));
    pos = next + 2;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Service
// ---------------------------------------------------------------------------

struct ServiceOptions {
  ImageLimits limits{};
  unsigned render_threads = 1;
  std::size_t worker_threads = 8;
};

class RenderService {
 public:
  RenderService(std::shared_ptr<const Model> model, ServiceOptions opt = {})
      : opt_(opt), model_(std::move(model)) {
    if (!model_) throw InvalidInput("service: no model");
    const std::size_t workers = std::max<std::size_t>(1, opt_.worker_threads);
    server_.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
    routes();
  }
  ~RenderService() { stop(); }

  /// Current snapshot; requests hold it for their whole duration.
  std::shared_ptr<const Model> model() const {
    std::lock_guard lock(mu_);
    return model_;
  }
  void swap_model(std::shared_ptr<const Model> m) {
    if (!m) throw InvalidInput("service: no model");
    std::lock_guard lock(mu_);
    model_ = std::move(m);
  }

  /// Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("service: cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw Error("service: cannot bind " + host + ":" + std::to_string(port));
  }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  int port() const { return port_; }

  json info() const {
    const auto m = model();
    const auto& b = m->field.config().grid.bounds;
    return {{"prompts", m->checkpoint.prompts},
            {"N", m->latent_dim()},
            {"bounds", {{"lo", vec3_json(b.lo)}, {"hi", vec3_json(b.hi)}}},
            {"image_limits", {{"max_width", opt_.limits.max_width}, {"max_height", opt_.limits.max_height}}},
            {"iteration", m->checkpoint.iteration},
            {"maps", {"rgb", "normal", "depth", "opacity"}}};
  }

 private:
  static void send_json(httplib::Response& rs, int status, const json& j) {
    rs.status = status;
    rs.set_content(j.dump(), "application/json");
  }
  static json error_json(const std::string& path, const std::string& msg) {
    return {{"errors", json::array({{{"path", path}, {"message", msg}}})}};
  }
  static json parse_body(const httplib::Request& rq) {
    try {
      return json::parse(rq.body);
    } catch (const json::parse_error& e) {
      throw RequestErrors({std::string("/: malformed JSON: ") + e.what()});
    }
  }

  template <class Fn>
  void guarded(httplib::Response& rs, Fn&& fn) const {
    try {
      fn();
    } catch (const RequestErrors& e) {
      send_json(rs, 400, e.to_json());
    } catch (const InvalidInput& e) {
      send_json(rs, 400, error_json("/", e.what()));
    } catch (const ConfigError& e) {
      send_json(rs, 400, error_json("/", e.what()));
    } catch (const std::exception& e) {
      send_json(rs, 500, {{"error", std::string("render failed: ") + e.what()}});
    } catch (...) {
      send_json(rs, 500, {{"error", "render failed"}});
    }
  }

  void routes() {
    server_.Get("/health", [](const httplib::Request&, httplib::Response& rs) {
      send_json(rs, 200, {{"status", "ok"}});
    });
    server_.Get("/model/info", [this](const httplib::Request&, httplib::Response& rs) {
      guarded(rs, [&] { send_json(rs, 200, info()); });
    });
    server_.Post("/render", [this](const httplib::Request& rq, httplib::Response& rs) {
      guarded(rs, [&] {
        const auto m = model();
        const RenderRequest req = parse_render_request(
            parse_body(rq), m->latent_dim(), m->field.config().grid.bounds, opt_.limits);
        const RenderedMaps maps = render_maps(*m, req);
        std::string names;
        for (const auto& [k, _] : maps.pngs) names += (names.empty() ? "" : ",") + std::string(to_string(k));
        rs.set_header("X-A3D-Maps", names);
        rs.set_header("X-A3D-Depth-Near", format_double(maps.depth.near));
        rs.set_header("X-A3D-Depth-Far", format_double(maps.depth.far));
        if (maps.pngs.size() == 1) {
          const auto& png = maps.pngs.front().second;
          rs.set_content(std::string(png.begin(), png.end()), "image/png");
        } else {
          const std::string b = multipart_boundary(maps);
          rs.set_content(encode_multipart(maps, b), "multipart/mixed; boundary=" + b);
        }
      });
    });
    server_.Post("/anchors/validate", [this](const httplib::Request& rq, httplib::Response& rs) {
      guarded(rs, [&] {
        const auto m = model();
        AnchorSet set;
        if (rq.get_header_value("Content-Type").rfind("text/plain", 0) == 0) {
          auto parsed = parse_anchors(rq.body);
          if (!parsed.ok()) {
            json errs = json::array();
            for (const auto& e : parsed.errors) errs.push_back({{"path", "text"}, {"message", e}});
            return send_json(rs, 422, {{"errors", errs}});
          }
          set = std::move(parsed.set);
        } else {
          std::vector<std::string> errors;
          const json body = parse_body(rq);
          ObjectReader r(body, "", errors);
          set = read_anchor_list(r, m->latent_dim());
          r.finish();
          if (!errors.empty()) return send_json(rs, 422, RequestErrors(errors).to_json());
        }
        std::vector<std::string> errors;
        if (set.dim() != m->latent_dim())
          errors.push_back("/anchors: codes have " + std::to_string(set.dim()) +
                           " components, the model has " + std::to_string(m->latent_dim()));
        const auto& b = m->field.config().grid.bounds;
        for (std::size_t k = 0; k < set.anchors.size(); ++k)
          if (!b.contains(set.anchors[k].position))
            errors.push_back("/anchors/" + std::to_string(k) + "/pos: outside the model bounds");
        if (!errors.empty()) return send_json(rs, 422, RequestErrors(errors).to_json());
        send_json(rs, 200, {{"anchors", anchors_to_json(set)},
                            {"smoothing", set.smoothing},
                            {"text", format_anchors(set)}});
      });
    });
    server_.Post("/model/load", [this](const httplib::Request& rq, httplib::Response& rs) {
      guarded(rs, [&] {
        std::vector<std::string> errors;
        const json body = parse_body(rq);
        ObjectReader r(body, "", errors);
        std::string path;
        r.require("checkpoint");
        r.string("checkpoint", path);
        r.finish();
        if (!errors.empty()) throw RequestErrors(errors);
        std::shared_ptr<const Model> next;
        try {
          next = std::make_shared<const Model>(load_checkpoint(path), opt_.render_threads);
        } catch (const std::exception& e) {
          return send_json(rs, 422, error_json("/checkpoint", e.what()));
        }
        swap_model(next);
        send_json(rs, 200, info());
      });
    });
  }

  ServiceOptions opt_;
  mutable std::mutex mu_;
  std::shared_ptr<const Model> model_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace a3d
