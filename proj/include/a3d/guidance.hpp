// SPDX-License-Identifier: Apache-2.0
//
// Score distillation against a pluggable denoiser critic.

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "a3d/camera.hpp"
#include "a3d/core.hpp"
#include "a3d/latent.hpp"

namespace a3d {

/// Conditioning vector y for one prompt.
struct PromptEmbedding {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const PromptEmbedding&) const = default;
};

enum class ConditioningMode {
  blended,         // edges use sum_i u_i y_i
  general_prompt,  // edges use one prompt describing the whole collection
  unconditioned,   // edges use the empty prompt
};

inline const char* to_string(ConditioningMode m) {
  switch (m) {
    case ConditioningMode::blended: return "blended";
    case ConditioningMode::general_prompt: return "general_prompt";
    case ConditioningMode::unconditioned: return "unconditioned";
  }
  return "?";
}

inline ConditioningMode conditioning_mode_from_string(const std::string& s) {
  if (s == "blended") return ConditioningMode::blended;
  if (s == "general_prompt") return ConditioningMode::general_prompt;
  if (s == "unconditioned") return ConditioningMode::unconditioned;
  throw ConfigError("unknown conditioning mode '" + s + "'");
}

/// One embedding per vertex prompt, plus the optional general and empty
/// prompt embeddings used by the ablation conditioning modes.
struct EmbeddingSet {
  std::vector<std::string> prompts;
  std::vector<PromptEmbedding> vertices;
  std::string general_prompt;
  std::optional<PromptEmbedding> general;
  std::optional<PromptEmbedding> empty;

  std::size_t dim() const { return vertices.empty() ? 0 : vertices.front().size(); }

  void validate() const {
    if (vertices.empty()) throw ConfigError("embedding set is empty");
    if (!prompts.empty() && prompts.size() != vertices.size())
      throw ConfigError("embedding set: prompt and embedding counts differ");
    const std::size_t e = dim();
    for (const auto& y : vertices) {
      if (y.size() != e) throw ConfigError("embedding set: embeddings differ in dimension");
      for (double v : y.values)
        if (!std::isfinite(v)) throw ConfigError("embedding set: non-finite embedding");
    }
    if (general && general->size() != e)
      throw ConfigError("embedding set: general embedding has the wrong dimension");
    if (empty && empty->size() != e)
      throw ConfigError("embedding set: empty-prompt embedding has the wrong dimension");
  }

  /// One-hot embeddings y_i = e_i; the toy point-mass critics read the
  /// embedding as blend weights over their targets.
  static EmbeddingSet one_hot(std::vector<std::string> prompts) {
    EmbeddingSet s;
    const std::size_t n = prompts.size();
    s.prompts = std::move(prompts);
    for (std::size_t i = 0; i < n; ++i) {
      PromptEmbedding y{std::vector<double>(n, 0.0)};
      y.values[i] = 1.0;
      s.vertices.push_back(std::move(y));
    }
    return s;
  }
};

/// y(u) = u_1 y_1 + ... + u_N y_N
inline PromptEmbedding blend_embeddings(const LatentCode& u, const EmbeddingSet& set) {
  set.validate();
  if (u.size() != set.vertices.size())
    throw ConfigError("blend_embeddings: latent code has " + std::to_string(u.size()) +
                      " components but the set holds " + std::to_string(set.vertices.size()) +
                      " embeddings");
  PromptEmbedding y{std::vector<double>(set.dim(), 0.0)};
  const int vertex = u.vertex_index();
  if (vertex >= 0) return set.vertices[static_cast<std::size_t>(vertex)];
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t k = 0; k < y.size(); ++k) y.values[k] += u[i] * set.vertices[i].values[k];
  return y;
}

/// Everything the critic is told about the image it denoises.
struct Conditioning {
  PromptEmbedding embedding;
  /// Prompt weights and texts for critics that blend server-side. For the
  /// general and empty prompt this is a single prompt with weight 1.
  std::vector<double> weights;
  std::vector<std::string> prompts;
};

/// Conditioning for a latent sample: vertices always use their own prompt;
/// other codes follow the mode.
inline Conditioning make_conditioning(const LatentCode& u, const EmbeddingSet& set,
                                      ConditioningMode mode) {
  set.validate();
  Conditioning c;
  const bool vertex = u.vertex_index() >= 0;
  if (vertex || mode == ConditioningMode::blended) {
    c.embedding = blend_embeddings(u, set);
    c.weights = u.values();
    c.prompts = set.prompts;
    return c;
  }
  if (mode == ConditioningMode::general_prompt) {
    if (!set.general) throw ConfigError("general_prompt mode needs a general embedding");
    c.embedding = *set.general;
    c.prompts = {set.general_prompt};
  } else {
    c.embedding = set.empty ? *set.empty : PromptEmbedding{std::vector<double>(set.dim(), 0.0)};
    c.prompts = {std::string{}};
  }
  c.weights = {1.0};
  return c;
}

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// Variance-preserving schedule (alpha_t^2 + sigma_t^2 = 1) with weighting
/// w(t) = sigma_t^2 and a linearly annealed upper bound on sampled t.
struct DiffusionSchedule {
  enum class Kind { cosine, linear_variance };
  Kind kind = Kind::cosine;
  double t_min = 0.02;
  double t_max_start = 0.98;
  double t_max_end = 0.5;
  /// Iterations over which t_max anneals; the last one samples [t_min, t_max_end].
  std::uint64_t horizon = 10000;

  double alpha(double t) const {
    return kind == Kind::cosine ? std::cos(0.5 * kPi * t) : std::sqrt(1.0 - t);
  }
  double sigma(double t) const {
    return kind == Kind::cosine ? std::sin(0.5 * kPi * t) : std::sqrt(t);
  }
  double weight(double t) const {
    const double s = sigma(t);
    return s * s;
  }
  double t_max(std::uint64_t iteration) const {
    if (horizon <= 1) return t_max_end;
    const double f = std::min(1.0, double(iteration) / double(horizon - 1));
    return t_max_start + (t_max_end - t_max_start) * f;
  }

  void validate() const {
    if (!(t_min > 0.0 && t_min < t_max_end && t_max_end <= t_max_start && t_max_start < 1.0))
      throw ConfigError("schedule: need 0 < t_min < t_max_end <= t_max_start < 1");
  }
};

/// t uniform in [t_min, t_max(iteration)].
inline double sample_timestep(std::uint64_t iteration, const DiffusionSchedule& schedule,
                              Rng& rng) {
  return rng.uniform(schedule.t_min, schedule.t_max(iteration));
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

struct DenoiseRequest {
  const Image<float>& noisy;
  double t;
  const Conditioning& conditioning;
  double guidance_scale = 1.0;
  /// Viewpoint of the rendered image, for camera-aware critics.
  std::optional<Camera> camera;
};

/// Predicts the noise in a noised image: eps_hat = E(y, t, x_t).
class Critic {
 public:
  virtual ~Critic() = default;
  virtual Image<float> denoise(const DenoiseRequest& req) const = 0;
};

/// A target image, either fixed or produced per viewpoint.
using TargetFn = std::function<Image<float>(const Camera&)>;

/// Optimal denoiser for a point-mass data distribution at x*:
/// eps_hat = (x_t - alpha_t x*) / sigma_t.
///
/// With several targets the effective x* blends them with the conditioning
/// embedding read as weights: x* = bg + sum_k y_k (x*_k - bg). The empty
/// prompt (zero embedding) therefore asks for the plain background.
class PointMassCritic : public Critic {
 public:
  PointMassCritic(std::vector<TargetFn> targets, DiffusionSchedule schedule,
                  Vec3d background = {1.0, 1.0, 1.0})
      : targets_(std::move(targets)), schedule_(schedule), background_(background) {
    if (targets_.empty()) throw ConfigError("point-mass critic needs at least one target");
  }

  std::size_t target_count() const { return targets_.size(); }

  Image<float> target_for(const DenoiseRequest& req) const {
    const Camera cam = req.camera.value_or(Camera{});
    if (targets_.size() == 1) return targets_.front()(cam);
    const auto& y = req.conditioning.embedding.values;
    if (y.size() != targets_.size())
      throw GuidanceError("point-mass critic: embedding has " + std::to_string(y.size()) +
                          " components for " + std::to_string(targets_.size()) + " targets");
    Image<double> acc(req.noisy.height(), req.noisy.width(), req.noisy.channels());
    for (std::size_t r = 0; r < acc.height(); ++r)
      for (std::size_t c = 0; c < acc.width(); ++c)
        for (std::size_t ch = 0; ch < acc.channels(); ++ch)
          acc(r, c, ch) = ch < 3 ? background_[int(ch)] : 0.0;
    for (std::size_t k = 0; k < targets_.size(); ++k) {
      if (y[k] == 0.0) continue;
      const Image<float> tk = targets_[k](cam);
      if (!tk.same_shape(req.noisy)) throw GuidanceError("point-mass critic: target shape mismatch");
      for (std::size_t r = 0; r < acc.height(); ++r)
        for (std::size_t c = 0; c < acc.width(); ++c)
          for (std::size_t ch = 0; ch < acc.channels(); ++ch) {
            const double bg = ch < 3 ? background_[int(ch)] : 0.0;
            acc(r, c, ch) += y[k] * (double(tk(r, c, ch)) - bg);
          }
    }
    return image_cast<float>(acc);
  }

  Image<float> denoise(const DenoiseRequest& req) const override {
    const Image<float> target = target_for(req);
    if (!target.same_shape(req.noisy)) throw GuidanceError("point-mass critic: target shape mismatch");
    const double a = schedule_.alpha(req.t), s = schedule_.sigma(req.t);
    Image<float> eps(req.noisy.height(), req.noisy.width(), req.noisy.channels());
    auto out = eps.data();
    auto xt = req.noisy.data();
    auto xs = target.data();
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>((double(xt[i]) - a * double(xs[i])) / s);
    return eps;
  }

 private:
  std::vector<TargetFn> targets_;
  DiffusionSchedule schedule_;
  Vec3d background_;
};

inline std::shared_ptr<PointMassCritic> point_mass_critic(Image<float> target,
                                                          DiffusionSchedule schedule) {
  auto fixed = std::make_shared<Image<float>>(std::move(target));
  return std::make_shared<PointMassCritic>(
      std::vector<TargetFn>{[fixed](const Camera&) { return *fixed; }}, schedule);
}

/// One (t, eps) draw of the score-distillation estimator.
struct SdsDraw {
  double t;
  Image<float> eps;
};

inline SdsDraw draw_sds_noise(const Image<float>& like, std::uint64_t iteration,
                              const DiffusionSchedule& schedule, Rng& rng) {
  SdsDraw d{sample_timestep(iteration, schedule, rng),
            Image<float>(like.height(), like.width(), like.channels())};
  for (auto& v : d.eps.data()) v = static_cast<float>(rng.normal());
  return d;
}

/// w(t) (eps_hat - eps) for x_t = alpha_t x + sigma_t eps. The critic is
/// treated as a constant: nothing is differentiated through it.
inline Image<float> sds_image_grad(const Image<float>& x, const Conditioning& cond,
                                   const Critic& critic, const DiffusionSchedule& schedule,
                                   const SdsDraw& draw, std::optional<Camera> camera = {},
                                   double guidance_scale = 1.0) {
  if (!x.same_shape(draw.eps)) throw InvalidInput("sds: noise shape differs from image");
  const double a = schedule.alpha(draw.t), s = schedule.sigma(draw.t), w = schedule.weight(draw.t);
  Image<float> xt(x.height(), x.width(), x.channels());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x.data()[i];
    if (!std::isfinite(xi)) throw InvalidInput("sds: non-finite image value");
    xt.data()[i] = static_cast<float>(a * double(xi) + s * double(draw.eps.data()[i]));
  }
  const DenoiseRequest req{xt, draw.t, cond, guidance_scale, std::move(camera)};
  const Image<float> eps_hat = critic.denoise(req);
  if (!eps_hat.same_shape(x)) throw GuidanceError("critic returned an image of the wrong shape");
  Image<float> g(x.height(), x.width(), x.channels());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double e = eps_hat.data()[i];
    if (!std::isfinite(e)) throw GuidanceError("critic returned a non-finite value");
    g.data()[i] = static_cast<float>(w * (e - double(draw.eps.data()[i])));
  }
  return g;
}

inline Image<float> sds_image_grad(const Image<float>& x, const Conditioning& cond,
                                   const Critic& critic, const DiffusionSchedule& schedule,
                                   std::uint64_t iteration, Rng& rng,
                                   std::optional<Camera> camera = {}) {
  const SdsDraw draw = draw_sds_noise(x, iteration, schedule, rng);
  return sds_image_grad(x, cond, critic, schedule, draw, std::move(camera));
}

}  // namespace a3d
