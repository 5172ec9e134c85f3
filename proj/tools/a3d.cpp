// SPDX-License-Identifier: Apache-2.0
//
// a3d: command-line front end.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "a3d/a3d.hpp"

namespace fs = std::filesystem;
using namespace a3d;

namespace {

/// Error report for the process exit path: one JSON object on stderr.
int fail(const std::string& command, const std::string& kind, const std::string& message,
         const fs::path& status_dir = {}) {
  json err = {{"command", command}, {"error", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
  if (!status_dir.empty()) {
    std::error_code ec;
    fs::create_directories(status_dir, ec);
    std::ofstream(status_dir / "status.json") << json{{"status", "failed"}, {"error", err}}.dump(2)
                                              << "\n";
  }
  return kind == "configuration" || kind == "input" ? 2 : 1;
}

void write_status(const fs::path& dir, const std::vector<fs::path>& outputs, json extra = {}) {
  json files = json::array();
  for (const auto& p : outputs) files.push_back(p.string());
  json j = {{"status", "complete"}, {"outputs", files}};
  if (!extra.is_null()) j.update(extra);
  const std::string text = j.dump(2) + "\n";
  write_bytes(dir / "status.json", Bytes(text.begin(), text.end()));
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidInput("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> parse_reals(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw InvalidInput("'" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

/// Camera flags shared by the rendering commands; they become the same JSON
/// camera block the service accepts.
struct CameraFlags {
  double azimuth = 0.0, elevation = 15.0, radius = 0.0, fov = 40.0;
  std::size_t width = 128, height = 128;

  void add(CLI::App* app) {
    app->add_option("--azimuth", azimuth, "Azimuth in degrees")->capture_default_str();
    app->add_option("--elevation", elevation, "Elevation in degrees")->capture_default_str();
    app->add_option("--radius", radius, "Camera distance (default: twice the bounds radius)");
    app->add_option("--fov", fov, "Vertical field of view in degrees")->capture_default_str();
    app->add_option("--width", width, "Image width")->capture_default_str();
    app->add_option("--height", height, "Image height")->capture_default_str();
  }
  json to_json(double az) const {
    json orbit = {{"azimuth_deg", az}, {"elevation_deg", elevation}};
    if (radius > 0) orbit["radius"] = radius;
    return {{"orbit", orbit}, {"fov_deg", fov}, {"width", width}, {"height", height}};
  }
};

std::vector<std::string> split_maps(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(tok);
  return out;
}

std::vector<fs::path> write_rendered(const fs::path& stem, const RenderedMaps& maps) {
  std::vector<fs::path> written;
  for (const auto& [kind, bytes] : maps.pngs) {
    const fs::path p = stem.string() + "_" + to_string(kind) + ".png";
    write_bytes(p, bytes);
    written.push_back(p);
    if (kind == MapKind::depth) {
      const fs::path side = stem.string() + "_depth.json";
      const std::string text = maps.depth.sidecar().dump(2) + "\n";
      write_bytes(side, Bytes(text.begin(), text.end()));
      written.push_back(side);
    }
  }
  return written;
}

RenderRequest request_for(const Model& m, const json& body) {
  return parse_render_request(body, m.latent_dim(), m.field.config().grid.bounds, {});
}

TrainingCallbacks training_callbacks(MetricsLog& log, const SessionConfig& s,
                                     const LatentField<float>& field, const fs::path& dir,
                                     bool quiet) {
  TrainingCallbacks cb;
  cb.on_step = [&log, quiet, total = s.generation.iterations](const StepRecord& r) {
    log.write(r);
    if (!quiet && (r.iteration % 100 == 0 || r.iteration + 1 == total))
      std::cerr << "iteration " << r.iteration + 1 << "/" << total << "  loss " << r.losses.total()
                << (r.skipped ? "  (skipped)" : "") << "\n";
  };
  cb.checkpoint_every = s.checkpoint_every;
  if (s.checkpoint_every > 0)
    cb.on_checkpoint = [&field, &s, dir](std::uint64_t it) {
      save_checkpoint(dir / "model.a3df", Checkpoint::from_field(field, s.prompts, it, s.render));
    };
  return cb;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"a3d: aligned text-to-3D generation over a latent simplex"};
  app.require_subcommand(1);

  // generate / transform
  std::string config_path, out_dir;
  std::uint64_t iterations_override = 0;
  bool quiet = false;
  auto* gen = app.add_subcommand("generate", "Jointly train N aligned objects");
  gen->add_option("--config", config_path, "Session config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  gen->add_option("--iterations", iterations_override, "Override generation iterations");
  gen->add_flag("--quiet", quiet, "No progress output");

  auto* tr = app.add_subcommand("transform", "Structure-preserving transformation of a source object");
  tr->add_option("--config", config_path, "Session config with a transform section")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  tr->add_option("--iterations", iterations_override, "Override generation iterations");
  tr->add_flag("--quiet", quiet, "No progress output");

  // render
  std::string ckpt_path, latent_text, sweep_text, pair_text = "0,1", maps_text = "rgb", out_path,
                                                  request_path;
  std::size_t frames = 1;
  CameraFlags camf;
  auto* rd = app.add_subcommand("render", "Render a checkpoint at a fixed code or along a sweep");
  rd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  rd->add_option("--latent", latent_text, "Fixed code, comma separated (default: first vertex)");
  rd->add_option("--sweep", sweep_text, "Sweep range a..b of t, u = t e_i + (1 - t) e_j");
  rd->add_option("--pair", pair_text, "Vertex pair i,j for --sweep")->capture_default_str();
  rd->add_option("--frames", frames, "Frame count (turntable for a fixed code)")->capture_default_str();
  rd->add_option("--maps", maps_text, "Maps: rgb,normal,depth,opacity")->capture_default_str();
  rd->add_option("--request", request_path, "Render a service request body (JSON) instead");
  rd->add_option("--out", out_path, "Output directory")->required();
  camf.add(rd);

  // hybridize
  std::string anchors_path;
  double smoothing = 0.0;
  auto* hy = app.add_subcommand("hybridize", "Render with a spatially varying code from anchors");
  hy->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  hy->add_option("--anchors", anchors_path, "Anchor file (x y z u1 .. uN per line)")->required()->check(CLI::ExistingFile);
  hy->add_option("--smoothing", smoothing, "Smoothing width; > 0 enables smoothstep")->capture_default_str();
  hy->add_option("--frames", frames, "Turntable frame count")->capture_default_str();
  hy->add_option("--maps", maps_text, "Maps: rgb,normal,depth,opacity")->capture_default_str();
  hy->add_option("--out", out_path, "Output directory")->required();
  camf.add(hy);

  // eval-align
  std::string other_path, extractor_name = "coordinate", report_path;
  std::size_t vertex_a = 0, vertex_b = 1, views = 120, resolution = 64, stride = 1;
  double align_radius = 2.0, align_elevation = 15.0;
  auto* ea = app.add_subcommand("eval-align", "Multi-view correspondence distance between two objects");
  ea->add_option("--checkpoint", ckpt_path, "Checkpoint holding object A")->required()->check(CLI::ExistingFile);
  ea->add_option("--vertex-a", vertex_a, "Vertex of object A")->capture_default_str();
  ea->add_option("--against", other_path, "Checkpoint holding object B (default: same)");
  ea->add_option("--vertex-b", vertex_b, "Vertex of object B")->capture_default_str();
  ea->add_option("--extractor", extractor_name, "coordinate | silhouette")->capture_default_str();
  ea->add_option("--views", views, "Ring views")->capture_default_str();
  ea->add_option("--resolution", resolution, "Render size")->capture_default_str();
  ea->add_option("--stride", stride, "Point sampling stride")->capture_default_str();
  ea->add_option("--radius", align_radius, "Camera distance")->capture_default_str();
  ea->add_option("--elevation", align_elevation, "Ring elevation (degrees)")->capture_default_str();
  ea->add_option("--report", report_path, "Append the record to a JSON-lines report");

  // check-grad
  std::size_t grad_params = 100;
  std::uint64_t grad_seed = 3;
  double grad_tol = 5e-3;
  auto* cg = app.add_subcommand("check-grad", "Reverse mode vs. central differences on a tiny field");
  cg->add_option("--params", grad_params, "Parameters to check")->capture_default_str();
  cg->add_option("--seed", grad_seed, "Seed")->capture_default_str();
  cg->add_option("--tolerance", grad_tol, "Maximum relative error")->capture_default_str();

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  unsigned render_threads = 1;
  auto* sv = app.add_subcommand("serve", "Serve renders of a checkpoint over HTTP");
  sv->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sv->add_option("--host", host, "Bind address")->capture_default_str();
  sv->add_option("--port", port, "Port")->capture_default_str();
  sv->add_option("--render-threads", render_threads, "Threads per render")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();
  fs::path status_dir;

  try {
    if (gen->parsed() || tr->parsed()) {
      SessionConfig s = load_config(config_path);
      if (iterations_override > 0) {
        s.generation.iterations = iterations_override;
        s.schedule.horizon = iterations_override;
      }
      const fs::path dir = out_dir.empty() ? fs::path(s.output_dir) : fs::path(out_dir);
      status_dir = dir;
      fs::create_directories(dir);
      const std::string cfg_text = serialize_config(s);
      write_bytes(dir / "config.json", Bytes(cfg_text.begin(), cfg_text.end()));
      fs::remove(dir / "metrics.jsonl");
      MetricsLog log(dir / "metrics.jsonl");
      LatentField<float> field = initial_field(s);
      const auto cb = training_callbacks(log, s, field, dir, quiet);
      const PipelineResult r = gen->parsed() ? run_generation(s, field, cb) : run_transform(s, field, cb);
      save_checkpoint(dir / "model.a3df", r.checkpoint);
      json extra = {{"iterations", r.training.iterations}, {"skipped_steps", r.training.skipped_steps}};
      if (r.fit) extra["fit"] = {{"steps", r.fit->iterations}, {"final_loss", r.fit->final_loss}};
      write_status(dir, {dir / "config.json", dir / "metrics.jsonl", dir / "model.a3df"}, extra);
      std::cout << (dir / "model.a3df").string() << "\n";
      return 0;
    }

    if (rd->parsed() || hy->parsed()) {
      status_dir = out_path;
      fs::create_directories(out_path);
      const Model model(load_checkpoint(ckpt_path));
      const std::size_t n = model.latent_dim();
      json maps = json::array();
      for (const auto& m : split_maps(maps_text)) maps.push_back(m);
      std::vector<fs::path> written;

      if (!request_path.empty()) {
        const json body = json::parse(read_text(request_path));
        const RenderRequest req = request_for(model, body);
        for (auto& p : write_rendered(fs::path(out_path) / "render", render_maps(model, req)))
          written.push_back(p);
        write_status(out_path, written);
        return 0;
      }
      if (frames < 1) throw InvalidInput("--frames must be >= 1");

      json latent;
      bool sweep = false;
      double t0 = 0.0, t1 = 1.0;
      if (hy->parsed()) {
        const AnchorSet set = load_anchors_text(read_text(anchors_path), smoothing);
        latent = {{"anchors", anchors_to_json(set)}, {"smoothing", set.smoothing}};
      } else if (!sweep_text.empty()) {
        const auto dots = sweep_text.find("..");
        if (dots == std::string::npos) throw InvalidInput("--sweep expects a..b");
        t0 = parse_reals(sweep_text.substr(0, dots)).at(0);
        t1 = parse_reals(sweep_text.substr(dots + 2)).at(0);
        const auto pr = parse_reals(pair_text);
        if (pr.size() != 2) throw InvalidInput("--pair expects i,j");
        latent = {{"pair", {std::size_t(pr[0]), std::size_t(pr[1])}}};
        sweep = true;
      } else {
        std::vector<double> u(n, 0.0);
        u[0] = 1.0;
        if (!latent_text.empty()) u = parse_reals(latent_text);
        latent = {{"fixed", u}};
      }

      json frame_list = json::array();
      for (std::size_t f = 0; f < frames; ++f) {
        double az = camf.azimuth;
        json lat = latent;
        if (sweep) {
          const double t = frames == 1 ? t0 : t0 + (t1 - t0) * double(f) / double(frames - 1);
          lat["sweep_t"] = t;
        } else if (frames > 1) {
          az += 360.0 * double(f) / double(frames);
        }
        const json body = {{"camera", camf.to_json(az)}, {"latent", lat}, {"maps", maps}};
        const RenderRequest req = request_for(model, body);
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03zu", f);
        for (auto& p : write_rendered(fs::path(out_path) / name, render_maps(model, req)))
          written.push_back(p);
        frame_list.push_back(body);
      }
      write_status(out_path, written, {{"frames", frame_list}});
      return 0;
    }

    if (ea->parsed()) {
      const Model a(load_checkpoint(ckpt_path));
      const Model b(other_path.empty() ? load_checkpoint(ckpt_path) : load_checkpoint(other_path));
      if (vertex_a >= a.latent_dim() || vertex_b >= b.latent_dim())
        throw InvalidInput("vertex index out of range");
      AlignmentConfig ac;
      ac.views = views;
      ac.resolution = resolution;
      ac.stride = stride;
      ac.radius = align_radius;
      ac.elevation_deg = align_elevation;
      std::unique_ptr<FeatureExtractor> ex;
      if (extractor_name == "coordinate") ex = std::make_unique<CoordinateFeatures>();
      else if (extractor_name == "silhouette") ex = std::make_unique<SilhouetteCoordinateFeatures>();
      else throw InvalidInput("unknown extractor '" + extractor_name + "'");
      const auto ra = field_renderer(a.field, LatentSource(LatentCode::vertex(a.latent_dim(), vertex_a)), a.render);
      const auto rb = field_renderer(b.field, LatentSource(LatentCode::vertex(b.latent_dim(), vertex_b)), b.render);
      const AlignmentReport rep = multiview_alignment(ra, rb, *ex, ac);
      auto prompt = [](const Model& m, std::size_t v) {
        return v < m.checkpoint.prompts.size() ? m.checkpoint.prompts[v] : "object " + std::to_string(v);
      };
      const json record = {{"prompt_a", prompt(a, vertex_a)},
                           {"prompt_b", prompt(b, vertex_b)},
                           {"mean_distance", rep.mean_distance},
                           {"per_view", rep.per_view},
                           {"skipped_views", rep.skipped_views},
                           {"extractor", ex->name()}};
      if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::app);
        if (!out) throw InvalidInput("cannot write '" + report_path + "'");
        out << record.dump() << "\n";
      }
      std::printf("%-24s %-24s %14s %8s %8s\n", "prompt_a", "prompt_b", "mean_distance", "views",
                  "skipped");
      std::printf("%-24s %-24s %14.6f %8zu %8zu\n", record["prompt_a"].get<std::string>().c_str(),
                  record["prompt_b"].get<std::string>().c_str(), rep.mean_distance,
                  rep.per_view.size(), rep.skipped_views);
      return 0;
    }

    if (cg->parsed()) {
      GradCheckConfig gc;
      gc.params = grad_params;
      gc.seed = grad_seed;
      const FiniteDiffReport rep = render_gradient_check(gc);
      std::cout << "checked " << rep.entries.size() << " parameters, max relative error "
                << rep.max_relative_error << (rep.max_relative_error < grad_tol ? "  ok" : "  FAILED")
                << "\n";
      return rep.max_relative_error < grad_tol ? 0 : 1;
    }

    if (sv->parsed()) {
      ServiceOptions opt;
      opt.render_threads = render_threads;
      RenderService service(std::make_shared<const Model>(load_checkpoint(ckpt_path), render_threads), opt);
      std::cerr << "serving " << ckpt_path << " on http://" << host << ":" << port << "\n";
      service.run(host, port);
      return 0;
    }
  } catch (const RequestErrors& e) {
    return fail(cmd, "input", e.what(), status_dir);
  } catch (const ConfigError& e) {
    return fail(cmd, "configuration", e.what(), status_dir);
  } catch (const InvalidInput& e) {
    return fail(cmd, "input", e.what(), status_dir);
  } catch (const IntegrityError& e) {
    return fail(cmd, "integrity", e.what(), status_dir);
  } catch (const json::exception& e) {
    return fail(cmd, "input", e.what(), status_dir);
  } catch (const std::exception& e) {
    return fail(cmd, "runtime", e.what(), status_dir);
  }
  return 0;
}
