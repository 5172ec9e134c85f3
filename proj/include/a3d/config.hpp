// SPDX-License-Identifier: Apache-2.0
//
// Session configuration: JSON schema, strict parsing with located errors, and
// serialization.

#pragma once

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "a3d/core.hpp"
#include "a3d/field.hpp"
#include "a3d/fixtures.hpp"
#include "a3d/guidance.hpp"
#include "a3d/render.hpp"
#include "a3d/trainer.hpp"

namespace a3d {

using json = nlohmann::json;

/// Schema violations, one "<json pointer>: <problem>" entry each.
class ConfigErrors : public ConfigError {
 public:
  explicit ConfigErrors(std::vector<std::string> errors)
      : ConfigError(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s = "invalid configuration:";
    for (const auto& x : e) s += "\n  " + x;
    return s;
  }
  std::vector<std::string> errors_;
};

// ---------------------------------------------------------------------------
// Strict object reader
// ---------------------------------------------------------------------------

/// Walks one JSON object, recording every problem under its JSON pointer.
/// Keys that are never read are reported as unknown by finish().
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(&j), path_(std::move(path)), errors_(&errors) {
    if (!j.is_object()) {
      error(path_, "expected an object");
      j_ = nullptr;
    }
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_ + "/" + escape(key); }
  void error(const std::string& where, const std::string& what) {
    errors_->push_back((where.empty() ? std::string("/") : where) + ": " + what);
  }
  std::vector<std::string>& errors() { return *errors_; }

  /// The value under key, or nullptr when absent.
  const json* take(const std::string& key) {
    seen_.insert(key);
    if (!j_) return nullptr;
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  bool require(const std::string& key) {
    if (j_ && !j_->contains(key)) {
      error(at(key), "required key is missing");
      return false;
    }
    return true;
  }

  void real(const std::string& key, double& out, double lo = -std::numeric_limits<double>::infinity(),
            double hi = std::numeric_limits<double>::infinity(), bool lo_open = false) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number()) return error(at(key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) return error(at(key), "must be finite");
    if (lo_open ? !(x > lo) : !(x >= lo))
      return error(at(key), std::string("must be ") + (lo_open ? "> " : ">= ") + num(lo));
    if (!(x <= hi)) return error(at(key), "must be <= " + num(hi));
    out = x;
  }
  void non_negative(const std::string& key, double& out) { real(key, out, 0.0); }
  void positive(const std::string& key, double& out) {
    real(key, out, 0.0, std::numeric_limits<double>::infinity(), true);
  }

  template <class U>
  void integer(const std::string& key, U& out, std::uint64_t lo = 0,
               std::uint64_t hi = std::numeric_limits<U>::max()) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      return error(at(key), "expected a non-negative integer");
    const auto x = v->get<std::uint64_t>();
    if (x < lo) return error(at(key), "must be >= " + std::to_string(lo));
    if (x > hi) return error(at(key), "must be <= " + std::to_string(hi));
    out = static_cast<U>(x);
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_boolean()) return error(at(key), "expected true or false");
    out = v->get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_string()) return error(at(key), "expected a string");
    out = v->get<std::string>();
  }

  void vec3(const std::string& key, Vec3d& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->size() != 3) return error(at(key), "expected an array of 3 numbers");
    Vec3d r;
    for (int i = 0; i < 3; ++i) {
      const auto& e = (*v)[std::size_t(i)];
      if (!e.is_number() || !std::isfinite(e.get<double>()))
        return error(at(key) + "/" + std::to_string(i), "expected a finite number");
      r[i] = e.get<double>();
    }
    out = r;
  }

  void strings(const std::string& key, std::vector<std::string>& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array()) return error(at(key), "expected an array of strings");
    std::vector<std::string> r;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string()) return error(at(key) + "/" + std::to_string(i), "expected a string");
      r.push_back((*v)[i].get<std::string>());
    }
    out = std::move(r);
  }

  /// Reports keys that were present but never read.
  void finish() {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!seen_.count(it.key())) error(at(it.key()), "unknown key");
  }

 private:
  static std::string escape(const std::string& key) {
    std::string s;
    for (char c : key) {
      if (c == '~') s += "~0";
      else if (c == '/') s += "~1";
      else s += c;
    }
    return s;
  }
  static std::string num(double x) {
    std::ostringstream o;
    o << x;
    return o.str();
  }

  const json* j_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> seen_;
};

/// Runs fn(reader) on the object under key when present.
template <class Fn>
void read_object(ObjectReader& parent, const std::string& key, Fn&& fn) {
  if (const json* v = parent.take(key)) {
    ObjectReader r(*v, parent.at(key), parent.errors());
    fn(r);
    r.finish();
  }
}

/// Moves a component's own validate() failure into the error list.
template <class T>
void validate_into(const T& v, const std::string& path, std::vector<std::string>& errors) {
  try {
    v.validate();
  } catch (const ConfigError& e) {
    errors.push_back((path.empty() ? std::string("/") : path) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Component readers and writers
// ---------------------------------------------------------------------------

inline json vec3_json(const Vec3d& v) { return json::array({v.x, v.y, v.z}); }

inline void read_config(ObjectReader& r, HashGridConfig& g) {
  r.integer("levels", g.levels, 1, 32);
  r.integer("base_resolution", g.base_resolution, 2);
  r.real("per_level_scale", g.per_level_scale, 1.0, 16.0, true);
  r.integer("features_per_level", g.features_per_level, 1, 16);
  r.integer("table_size_log2", g.table_size_log2, 4, 28);
  read_object(r, "bounds", [&](ObjectReader& b) {
    b.vec3("lo", g.bounds.lo);
    b.vec3("hi", g.bounds.hi);
  });
}
inline json to_json(const HashGridConfig& g) {
  return {{"levels", g.levels},
          {"base_resolution", g.base_resolution},
          {"per_level_scale", g.per_level_scale},
          {"features_per_level", g.features_per_level},
          {"table_size_log2", g.table_size_log2},
          {"bounds", {{"lo", vec3_json(g.bounds.lo)}, {"hi", vec3_json(g.bounds.hi)}}}};
}

inline void read_config(ObjectReader& r, MlpConfig& m) {
  r.integer("hidden_layers", m.hidden_layers, 1, 3);
  r.integer("width", m.width, 1, 4096);
}
inline json to_json(const MlpConfig& m) {
  return {{"hidden_layers", m.hidden_layers}, {"width", m.width}};
}

/// The latent dimension is not part of the schema: it is the prompt count.
inline void read_config(ObjectReader& r, FieldConfig& f) {
  read_object(r, "grid", [&](ObjectReader& g) { read_config(g, f.grid); });
  read_object(r, "mlp", [&](ObjectReader& m) { read_config(m, f.mlp); });
  r.real("density_bias", f.density_bias);
}
inline json to_json(const FieldConfig& f) {
  return {{"grid", to_json(f.grid)}, {"mlp", to_json(f.mlp)}, {"density_bias", f.density_bias}};
}

inline void read_config(ObjectReader& r, RayMarchConfig& c) {
  r.integer("n_samples", c.n_samples, 2, 4096);
  r.positive("near", c.near);
  r.positive("far", c.far);
  r.boolean("stratified_jitter", c.stratified_jitter);
  r.vec3("background", c.background);
  r.boolean("clip_to_bounds", c.clip_to_bounds);
  r.non_negative("normal_step", c.normal_step);
  r.real("normal_opacity_threshold", c.normal_opacity_threshold, 0.0, 1.0);
  r.real("min_transmittance", c.min_transmittance, 0.0, 1.0);
  r.integer("threads", c.threads, 1, 256);
}
/// The jitter seed is per-step state, not configuration.
inline json to_json(const RayMarchConfig& c) {
  return {{"n_samples", c.n_samples},
          {"near", c.near},
          {"far", c.far},
          {"stratified_jitter", c.stratified_jitter},
          {"background", vec3_json(c.background)},
          {"clip_to_bounds", c.clip_to_bounds},
          {"normal_step", c.normal_step},
          {"normal_opacity_threshold", c.normal_opacity_threshold},
          {"min_transmittance", c.min_transmittance},
          {"threads", c.threads}};
}

inline void read_config(ObjectReader& r, CameraSampling& c) {
  r.real("elevation_min_deg", c.elevation_min_deg, -90.0, 90.0);
  r.real("elevation_max_deg", c.elevation_max_deg, -90.0, 90.0);
  r.positive("radius_min", c.radius_min);
  r.positive("radius_max", c.radius_max);
  r.real("fov_deg", c.fov_deg, 0.0, 180.0, true);
  if (c.elevation_max_deg < c.elevation_min_deg)
    r.error(r.at("elevation_max_deg"), "must be >= elevation_min_deg");
  if (c.radius_max < c.radius_min) r.error(r.at("radius_max"), "must be >= radius_min");
}
inline json to_json(const CameraSampling& c) {
  return {{"elevation_min_deg", c.elevation_min_deg},
          {"elevation_max_deg", c.elevation_max_deg},
          {"radius_min", c.radius_min},
          {"radius_max", c.radius_max},
          {"fov_deg", c.fov_deg}};
}

inline void read_config(ObjectReader& r, LightingConfig& l) {
  r.boolean("random", l.random);
  r.real("ambient_min", l.ambient_min, 0.0, 1.0);
  r.real("ambient_max", l.ambient_max, 0.0, 1.0);
  r.non_negative("direction_jitter", l.direction_jitter);
  if (l.ambient_max < l.ambient_min) r.error(r.at("ambient_max"), "must be >= ambient_min");
}
inline json to_json(const LightingConfig& l) {
  return {{"random", l.random},
          {"ambient_min", l.ambient_min},
          {"ambient_max", l.ambient_max},
          {"direction_jitter", l.direction_jitter}};
}

inline void read_config(ObjectReader& r, AdamConfig& a) {
  r.non_negative("grid_lr", a.grid_lr);
  r.non_negative("mlp_lr", a.mlp_lr);
  r.real("beta1", a.beta1, 0.0, 1.0);
  r.real("beta2", a.beta2, 0.0, 1.0);
  r.positive("epsilon", a.epsilon);
}
inline json to_json(const AdamConfig& a) {
  return {{"grid_lr", a.grid_lr},
          {"mlp_lr", a.mlp_lr},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"epsilon", a.epsilon}};
}

inline void read_config(ObjectReader& r, DiffusionSchedule& s) {
  std::string kind = s.kind == DiffusionSchedule::Kind::cosine ? "cosine" : "linear_variance";
  r.string("kind", kind);
  if (kind == "cosine") s.kind = DiffusionSchedule::Kind::cosine;
  else if (kind == "linear_variance") s.kind = DiffusionSchedule::Kind::linear_variance;
  else r.error(r.at("kind"), "expected \"cosine\" or \"linear_variance\"");
  r.real("t_min", s.t_min, 0.0, 1.0, true);
  r.real("t_max_start", s.t_max_start, 0.0, 1.0, true);
  r.real("t_max_end", s.t_max_end, 0.0, 1.0, true);
  r.integer("horizon", s.horizon, 1);
}
inline json to_json(const DiffusionSchedule& s) {
  return {{"kind", s.kind == DiffusionSchedule::Kind::cosine ? "cosine" : "linear_variance"},
          {"t_min", s.t_min},
          {"t_max_start", s.t_max_start},
          {"t_max_end", s.t_max_end},
          {"horizon", s.horizon}};
}

/// Render, seed and camera radius scale come from the session, not from here.
inline void read_config(ObjectReader& r, GenerationConfig& g) {
  r.integer("iterations", g.iterations, 1);
  r.real("p", g.p, 0.0, 1.0);
  std::string mode = to_string(g.conditioning_mode);
  r.string("conditioning_mode", mode);
  try {
    g.conditioning_mode = conditioning_mode_from_string(mode);
  } catch (const ConfigError&) {
    r.error(r.at("conditioning_mode"),
            "expected \"blended\", \"general_prompt\" or \"unconditioned\"");
  }
  r.non_negative("sds_weight", g.sds_weight);
  r.non_negative("orientation_weight_start", g.orientation_weight_start);
  r.non_negative("orientation_weight_end", g.orientation_weight_end);
  r.non_negative("normal_smoothness_weight", g.normal_smoothness_weight);
  r.integer("views_per_step", g.views_per_step, 1, 64);
  if (const json* v = r.take("resolution_schedule")) {
    const std::string at = r.at("resolution_schedule");
    if (!v->is_array() || v->empty()) {
      r.error(at, "expected a non-empty array");
    } else {
      std::vector<ResolutionStep> steps;
      for (std::size_t i = 0; i < v->size(); ++i) {
        ObjectReader s((*v)[i], at + "/" + std::to_string(i), r.errors());
        ResolutionStep step;
        s.real("from_fraction", step.from_fraction, 0.0, 1.0);
        s.integer("resolution", step.resolution, 2, 4096);
        s.finish();
        steps.push_back(step);
      }
      g.resolution_schedule = std::move(steps);
    }
  }
  r.positive("guidance_scale", g.guidance_scale);
  read_object(r, "cameras", [&](ObjectReader& c) { read_config(c, g.cameras); });
  read_object(r, "lighting", [&](ObjectReader& l) { read_config(l, g.lighting); });
  read_object(r, "adam", [&](ObjectReader& a) { read_config(a, g.adam); });
}
inline json to_json(const GenerationConfig& g) {
  json steps = json::array();
  for (const auto& s : g.resolution_schedule)
    steps.push_back({{"from_fraction", s.from_fraction}, {"resolution", s.resolution}});
  return {{"iterations", g.iterations},
          {"p", g.p},
          {"conditioning_mode", to_string(g.conditioning_mode)},
          {"sds_weight", g.sds_weight},
          {"orientation_weight_start", g.orientation_weight_start},
          {"orientation_weight_end", g.orientation_weight_end},
          {"normal_smoothness_weight", g.normal_smoothness_weight},
          {"views_per_step", g.views_per_step},
          {"resolution_schedule", steps},
          {"guidance_scale", g.guidance_scale},
          {"cameras", to_json(g.cameras)},
          {"lighting", to_json(g.lighting)},
          {"adam", to_json(g.adam)}};
}

inline void read_config(ObjectReader& r, FitConfig& f) {
  r.integer("iterations", f.iterations, 1);
  r.integer("batch_rays", f.batch_rays, 1, 1u << 20);
  r.non_negative("psnr_target", f.psnr_target);
  r.integer("check_every", f.check_every, 1);
  read_object(r, "adam", [&](ObjectReader& a) { read_config(a, f.adam); });
  r.integer("divergence_span", f.divergence_span, 1);
  r.integer("divergence_window", f.divergence_window, 1);
  r.real("divergence_factor", f.divergence_factor, 1.0, std::numeric_limits<double>::infinity(),
         true);
}
inline json to_json(const FitConfig& f) {
  return {{"iterations", f.iterations},
          {"batch_rays", f.batch_rays},
          {"psnr_target", f.psnr_target},
          {"check_every", f.check_every},
          {"adam", to_json(f.adam)},
          {"divergence_span", f.divergence_span},
          {"divergence_window", f.divergence_window},
          {"divergence_factor", f.divergence_factor}};
}

inline void read_config(ObjectReader& r, Shape& s) {
  std::string kind = s.kind == Shape::Kind::sphere ? "sphere" : "box";
  r.require("kind");
  r.string("kind", kind);
  if (kind == "sphere") {
    s.kind = Shape::Kind::sphere;
    double radius = s.size.x;
    r.require("radius");
    r.positive("radius", radius);
    s.size = {radius, radius, radius};
  } else if (kind == "box") {
    s.kind = Shape::Kind::box;
    r.require("half_extent");
    r.vec3("half_extent", s.size);
    if (!(s.size.x > 0 && s.size.y > 0 && s.size.z > 0))
      r.error(r.at("half_extent"), "components must be > 0");
  } else {
    r.error(r.at("kind"), "expected \"sphere\" or \"box\"");
  }
  r.vec3("center", s.center);
  r.vec3("color", s.color);
  r.positive("density", s.density);
  r.positive("softness", s.softness);
}
inline json to_json(const Shape& s) {
  json j = {{"kind", s.kind == Shape::Kind::sphere ? "sphere" : "box"},
            {"center", vec3_json(s.center)},
            {"color", vec3_json(s.color)},
            {"density", s.density},
            {"softness", s.softness}};
  if (s.kind == Shape::Kind::sphere) j["radius"] = s.size.x;
  else j["half_extent"] = vec3_json(s.size);
  return j;
}

inline std::vector<Shape> read_shapes(const json& arr, const std::string& path,
                                      std::vector<std::string>& errors) {
  std::vector<Shape> shapes;
  if (!arr.is_array() || arr.empty()) {
    errors.push_back(path + ": expected a non-empty array of shapes");
    return shapes;
  }
  for (std::size_t i = 0; i < arr.size(); ++i) {
    ObjectReader s(arr[i], path + "/" + std::to_string(i), errors);
    Shape shape;
    read_config(s, shape);
    s.finish();
    shapes.push_back(shape);
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Critic and transform specs
// ---------------------------------------------------------------------------

struct RemoteCriticConfig {
  std::string url = "http://127.0.0.1:8091";
  std::uint32_t timeout_ms = 30000;
  std::uint32_t retries = 3;
  std::uint32_t max_in_flight = 4;
  bool operator==(const RemoteCriticConfig&) const = default;
};

struct CriticSpec {
  enum class Kind { point_mass, remote };
  Kind kind = Kind::point_mass;
  /// Point-mass targets, one shape per prompt (inline or loaded from a file).
  std::vector<Shape> shapes;
  std::string shapes_file;
  RemoteCriticConfig remote;
};

/// Where the transformation's source views come from.
struct TransformSource {
  /// Either an analytic shape ...
  std::optional<Shape> shape;
  /// ... or a vertex of an existing checkpoint.
  std::string checkpoint;
  std::uint32_t vertex = 0;
};

struct TransformSpec {
  TransformSource source;
  std::uint32_t views = 24;
  std::uint32_t resolution = 64;
  double photometric_weight = 1.0;
  std::uint32_t source_vertex_index = 0;
  FitConfig fit{};
};

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

struct SessionConfig {
  std::vector<std::string> prompts;
  std::string general_prompt;
  FieldConfig field{};
  RayMarchConfig render{};
  GenerationConfig generation{};
  DiffusionSchedule schedule{};
  CriticSpec critic{};
  std::optional<TransformSpec> transform;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::uint64_t checkpoint_every = 0;
  /// Directory that relative file references resolve against (not serialized).
  std::filesystem::path base_dir = ".";

  std::size_t latent_dim() const { return prompts.size(); }

  /// Generation settings with the session-wide render config and seed applied.
  GenerationConfig generation_config() const {
    GenerationConfig g = generation;
    g.render = render;
    g.seed = seed;
    return g;
  }
  FitConfig fit_config() const {
    FitConfig f = transform ? transform->fit : FitConfig{};
    f.render = render;
    f.seed = seed;
    return f;
  }
  EmbeddingSet embeddings() const {
    EmbeddingSet e = EmbeddingSet::one_hot(prompts);
    e.general_prompt = general_prompt;
    return e;
  }
};

namespace detail {

inline SessionConfig parse_session(const json& root, const std::filesystem::path& base_dir) {
  std::vector<std::string> errors;
  SessionConfig cfg;
  cfg.base_dir = base_dir;
  ObjectReader r(root, "", errors);

  r.require("prompts");
  r.strings("prompts", cfg.prompts);
  if (root.is_object() && root.contains("prompts") && cfg.prompts.empty() &&
      root["prompts"].is_array())
    r.error("/prompts", "at least one prompt is required");
  r.string("general_prompt", cfg.general_prompt);
  r.integer("seed", cfg.seed);
  r.string("output_dir", cfg.output_dir);
  r.integer("checkpoint_every", cfg.checkpoint_every);
  read_object(r, "field", [&](ObjectReader& f) { read_config(f, cfg.field); });
  read_object(r, "render", [&](ObjectReader& x) { read_config(x, cfg.render); });
  read_object(r, "generation", [&](ObjectReader& g) { read_config(g, cfg.generation); });
  bool horizon_set = false;
  read_object(r, "schedule", [&](ObjectReader& s) {
    horizon_set = root["schedule"].contains("horizon");
    read_config(s, cfg.schedule);
  });
  if (!horizon_set) cfg.schedule.horizon = cfg.generation.iterations;

  read_object(r, "critic", [&](ObjectReader& c) {
    std::string kind = "point_mass";
    c.string("kind", kind);
    if (kind == "point_mass") {
      cfg.critic.kind = CriticSpec::Kind::point_mass;
      const json* inline_shapes = c.take("shapes");
      c.string("shapes_file", cfg.critic.shapes_file);
      if (inline_shapes && !cfg.critic.shapes_file.empty()) {
        c.error(c.at("shapes_file"), "give either shapes or shapes_file, not both");
      } else if (inline_shapes) {
        cfg.critic.shapes = read_shapes(*inline_shapes, c.at("shapes"), errors);
      } else if (!cfg.critic.shapes_file.empty()) {
        const auto p = base_dir / cfg.critic.shapes_file;
        std::ifstream in(p);
        if (!in) {
          c.error(c.at("shapes_file"), "cannot open '" + p.string() + "'");
        } else {
          try {
            const json shapes = json::parse(in);
            cfg.critic.shapes = read_shapes(shapes, c.at("shapes_file") + "#", errors);
          } catch (const json::parse_error& e) {
            c.error(c.at("shapes_file"), std::string("malformed JSON: ") + e.what());
          }
        }
      } else {
        cfg.critic.shapes = toy_shapes();
      }
    } else if (kind == "remote") {
      cfg.critic.kind = CriticSpec::Kind::remote;
      c.require("url");
      c.string("url", cfg.critic.remote.url);
      c.integer("timeout_ms", cfg.critic.remote.timeout_ms, 1);
      c.integer("retries", cfg.critic.remote.retries, 0, 100);
      c.integer("max_in_flight", cfg.critic.remote.max_in_flight, 1, 256);
    } else {
      c.error(c.at("kind"), "expected \"point_mass\" or \"remote\"");
    }
  });
  if (!root.is_object() || !root.contains("critic")) cfg.critic.shapes = toy_shapes();

  read_object(r, "transform", [&](ObjectReader& t) {
    TransformSpec spec;
    t.require("source");
    read_object(t, "source", [&](ObjectReader& s) {
      if (const json* sh = s.take("shape")) {
        ObjectReader sr(*sh, s.at("shape"), errors);
        Shape shape;
        read_config(sr, shape);
        sr.finish();
        spec.source.shape = shape;
      }
      s.string("checkpoint", spec.source.checkpoint);
      s.integer("vertex", spec.source.vertex);
      if (spec.source.shape.has_value() == !spec.source.checkpoint.empty())
        s.error(s.path(), "give exactly one of shape or checkpoint");
      if (!spec.source.checkpoint.empty() &&
          !std::filesystem::exists(base_dir / spec.source.checkpoint))
        s.error(s.at("checkpoint"), "file does not exist");
    });
    t.integer("views", spec.views, 1, 1024);
    t.integer("resolution", spec.resolution, 2, 4096);
    t.non_negative("photometric_weight", spec.photometric_weight);
    t.integer("source_vertex_index", spec.source_vertex_index, 0, 1);
    read_object(t, "fit", [&](ObjectReader& f) { read_config(f, spec.fit); });
    cfg.transform = spec;
  });
  r.finish();

  if (errors.empty()) {
    cfg.field.latent_dim = static_cast<std::uint32_t>(cfg.prompts.size());
    validate_into(cfg.field, "/field", errors);
    validate_into(cfg.render, "/render", errors);
    validate_into(cfg.schedule, "/schedule", errors);
    validate_into(cfg.generation_config(), "/generation", errors);
    if (cfg.critic.kind == CriticSpec::Kind::point_mass &&
        cfg.critic.shapes.size() != cfg.prompts.size())
      errors.push_back("/critic: point-mass critic needs one shape per prompt (" +
                       std::to_string(cfg.prompts.size()) + ")");
    if (cfg.transform && cfg.prompts.size() != 2)
      errors.push_back("/transform: transformation needs exactly 2 prompts");
    if (cfg.generation.conditioning_mode == ConditioningMode::general_prompt &&
        cfg.general_prompt.empty())
      errors.push_back("/general_prompt: required by conditioning_mode \"general_prompt\"");
  }
  if (!errors.empty()) throw ConfigErrors(std::move(errors));
  return cfg;
}

}  // namespace detail

inline SessionConfig parse_config(const std::string& text,
                                  const std::filesystem::path& base_dir = ".") {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigErrors({std::string("/: malformed JSON: ") + e.what()});
  }
  return detail::parse_session(root, base_dir);
}

/// Relative file references resolve against the config file's directory.
inline SessionConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

inline json to_json(const SessionConfig& c) {
  json j = {{"prompts", c.prompts},
            {"general_prompt", c.general_prompt},
            {"seed", c.seed},
            {"output_dir", c.output_dir},
            {"checkpoint_every", c.checkpoint_every},
            {"field", to_json(c.field)},
            {"render", to_json(c.render)},
            {"generation", to_json(c.generation)},
            {"schedule", to_json(c.schedule)}};
  json critic;
  if (c.critic.kind == CriticSpec::Kind::point_mass) {
    critic["kind"] = "point_mass";
    json shapes = json::array();
    for (const auto& s : c.critic.shapes) shapes.push_back(to_json(s));
    critic["shapes"] = shapes;
  } else {
    critic = {{"kind", "remote"},
              {"url", c.critic.remote.url},
              {"timeout_ms", c.critic.remote.timeout_ms},
              {"retries", c.critic.remote.retries},
              {"max_in_flight", c.critic.remote.max_in_flight}};
  }
  j["critic"] = critic;
  if (c.transform) {
    const auto& t = *c.transform;
    json src;
    if (t.source.shape) src["shape"] = to_json(*t.source.shape);
    else src = {{"checkpoint", t.source.checkpoint}, {"vertex", t.source.vertex}};
    j["transform"] = {{"source", src},
                      {"views", t.views},
                      {"resolution", t.resolution},
                      {"photometric_weight", t.photometric_weight},
                      {"source_vertex_index", t.source_vertex_index},
                      {"fit", to_json(t.fit)}};
  }
  return j;
}

inline std::string serialize_config(const SessionConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace a3d
