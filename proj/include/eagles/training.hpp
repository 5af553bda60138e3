#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "eagles/cloud.hpp"
#include "eagles/dataset.hpp"
#include "eagles/density_control.hpp"
#include "eagles/loss.hpp"
#include "eagles/optimizer.hpp"
#include "eagles/ply.hpp"
#include "eagles/progressive.hpp"
#include "eagles/quantization.hpp"
#include "eagles/rasterizer.hpp"

namespace eagles {

struct LearningRates {
  double position_init = 1.6e-4;  // times scene extent
  double position_final = 1.6e-6;
  double log_scale = 5e-3;
  double sh_base = 2.5e-3;
  double color_rest = 2.5e-3 / 20.0;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double decoder = 1e-4;

  double attribute(AttributeId id) const {
    switch (id) {
      case AttributeId::kColorRest: return color_rest;
      case AttributeId::kRotation: return rotation;
      default: return opacity;
    }
  }
};

/// Training hyperparameters. Iteration counts are given for a 30000-iteration
/// run; with `scale_schedule` they shrink in proportion to `total_iters`.
struct TrainConfig {
  long total_iters = 30000;
  double lambda_ssim = 0.2;
  LearningRates lr;

  bool densify = true;
  long densify_from = 500;
  long densify_until = 15000;
  long densify_interval = 175;
  double densify_grad_threshold = 2e-4;
  double percent_dense = 0.01;
  double min_opacity = 0.005;

  long opacity_reset_interval = 2500;
  double reset_opacity = 0.01;

  bool influence_prune = true;
  long prune_interval = 5000;
  long prune_until = 25000;  // exclusive
  double prune_fraction = 0.15;
  long prune_window = 100;  // iterations of influence accumulation, never scaled

  std::array<bool, 3> quantize{true, true, true};  // color_rest, rotation, opacity
  ProgressiveConfig progressive;

  bool scale_schedule = true;
  long reference_iters = 30000;
  double scene_extent = 0.0;  // 0 derives it from the cameras
  std::uint64_t seed = 0;

  bool quantized(AttributeId id) const { return quantize[size_t(id)]; }

  /// Iteration count `v` rescaled to this run's length.
  long scaled(long v) const {
    if (!scale_schedule || total_iters == reference_iters || total_iters <= 0) return v;
    return std::max(1L, std::lround(double(v) * double(total_iters) / double(reference_iters)));
  }

  void validate() const {
    require(total_iters >= 0, ErrorKind::kConfiguration, "iteration count must be non-negative");
    require(lambda_ssim >= 0.0 && lambda_ssim <= 1.0, ErrorKind::kConfiguration, "lambda_ssim must lie in [0, 1]");
    require(densify_interval > 0 && opacity_reset_interval > 0 && prune_interval > 0 && prune_window > 0 &&
                reference_iters > 0,
            ErrorKind::kConfiguration, "intervals must be positive");
    require(prune_fraction > 0.0 && prune_fraction < 1.0, ErrorKind::kConfiguration,
            "prune fraction must lie in (0, 1)");
    require(densify_from <= densify_until, ErrorKind::kConfiguration, "densify_from exceeds densify_until");
    require(densify_grad_threshold > 0.0 && percent_dense > 0.0, ErrorKind::kConfiguration,
            "densification thresholds must be positive");
    require(min_opacity >= 0.0 && min_opacity < 1.0 && reset_opacity > 0.0 && reset_opacity < 1.0,
            ErrorKind::kConfiguration, "opacity thresholds must lie in (0, 1)");
    require(scene_extent >= 0.0, ErrorKind::kConfiguration, "scene extent must be non-negative");
    for (double v : {lr.position_init, lr.position_final, lr.log_scale, lr.sh_base, lr.color_rest, lr.rotation,
                     lr.opacity, lr.decoder})
      require(v > 0.0 && std::isfinite(v), ErrorKind::kConfiguration, "learning rates must be positive");
    progressive.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["total_iters"] = c.total_iters;
  j["lambda_ssim"] = c.lambda_ssim;
  j["lr"] = {{"position_init", c.lr.position_init}, {"position_final", c.lr.position_final},
             {"log_scale", c.lr.log_scale},         {"sh_base", c.lr.sh_base},
             {"color_rest", c.lr.color_rest},       {"rotation", c.lr.rotation},
             {"opacity", c.lr.opacity},             {"decoder", c.lr.decoder}};
  j["densify"] = {{"enabled", c.densify},
                  {"from", c.densify_from},
                  {"until", c.densify_until},
                  {"interval", c.densify_interval},
                  {"grad_threshold", c.densify_grad_threshold},
                  {"percent_dense", c.percent_dense},
                  {"min_opacity", c.min_opacity}};
  j["opacity_reset"] = {{"interval", c.opacity_reset_interval}, {"value", c.reset_opacity}};
  j["influence_prune"] = {{"enabled", c.influence_prune},
                          {"interval", c.prune_interval},
                          {"until", c.prune_until},
                          {"fraction", c.prune_fraction},
                          {"window", c.prune_window}};
  j["quantize"] = {{"color_rest", c.quantize[0]}, {"rotation", c.quantize[1]}, {"opacity", c.quantize[2]}};
  j["progressive"] = {{"mode", std::string(to_string(c.progressive.mode))},
                      {"start_scale", c.progressive.start_scale},
                      {"end_scale", c.progressive.end_scale},
                      {"duration_fraction", c.progressive.duration_fraction},
                      {"gaussian_kernel_start", c.progressive.gaussian_kernel_start}};
  j["schedule"] = {{"scale_with_iters", c.scale_schedule}, {"reference_iters", c.reference_iters}};
  j["scene_extent"] = c.scene_extent;
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Loss and gradients for one view

template <typename T>
struct AttributeGradient {
  std::vector<T> d_values;  // latent shadows (quantized) or raw values
  std::vector<T> d_weight;  // empty for raw attributes
  std::vector<T> d_bias;
};

template <typename T>
struct CloudGradients {
  std::vector<T> d_positions, d_log_scales, d_sh_base;
  std::array<AttributeGradient<T>, 3> attributes;  // indexed by AttributeId
  std::vector<T> viewspace_grad_norm;
  std::vector<std::uint8_t> visible;
};

template <typename T>
struct ViewResult {
  T loss = 0;
  Image<T> rendered;
  CloudGradients<T> grads;
  std::vector<T> influence;
  double render_ms = 0;  // forward and backward rasterization
};

/// Combined loss of one view; gradients only when `with_gradients` is set.
template <typename T>
ViewResult<T> evaluate_view(const GaussianCloud<T>& cloud, const Camera<T>& camera, const Image<T>& target,
                            const Vec3<T>& background, T lambda, bool with_gradients = true,
                            Rounding rounding = Rounding::kStraightThrough) {
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();
  const auto decoded = decode_attributes(cloud, rounding);
  const auto splats = cull_and_prepare(cloud, decoded, camera);
  auto artifacts = rasterize_forward(splats, camera, background);
  ViewResult<T> out;
  const auto loss = combined_loss(artifacts.image, target, lambda);
  out.loss = loss.value;
  if (with_gradients) {
    const auto sg = rasterize_backward(splats, artifacts, loss.gradient);
    auto pg = chain_to_parameters(splats, sg, cloud, decoded, camera);
    out.render_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    auto& g = out.grads;
    g.d_positions = std::move(pg.d_positions);
    g.d_log_scales = std::move(pg.d_log_scales);
    g.d_sh_base = std::move(pg.d_sh_base);
    g.viewspace_grad_norm = std::move(pg.viewspace_grad_norm);
    g.visible = std::move(pg.visible);
    const std::array<std::vector<T>*, 3> decoded_grads = {&pg.d_sh_rest, &pg.d_rotation, &pg.d_opacity};
    for (AttributeId id : kLatentAttributes) {
      const auto& attr = cloud.attribute(id);
      auto& ag = g.attributes[size_t(id)];
      auto& d_attr = *decoded_grads[size_t(id)];
      if (!attr.quantized) {
        ag.d_values = std::move(d_attr);
        continue;
      }
      const auto latents = attr.forward_latents(rounding);
      auto dg = decode_backward<T>(attr.decoder, latents, d_attr);
      ag.d_values = std::move(dg.d_latent);
      ag.d_weight = std::move(dg.d_weight);
      ag.d_bias = std::move(dg.d_bias);
    }
  } else {
    out.render_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  }
  out.influence = std::move(artifacts.influence);
  out.rendered = std::move(artifacts.image);
  return out;
}

/// A camera paired with its target, for multi-view objectives.
template <typename T>
struct TrainingView {
  Camera<T> camera;
  Image<T> target;
};

/// Sum of per-view combined losses and the summed gradients.
template <typename T>
std::pair<T, CloudGradients<T>> total_loss_and_gradients(const GaussianCloud<T>& cloud,
                                                          const std::vector<TrainingView<T>>& views,
                                                          const Vec3<T>& background, T lambda,
                                                          Rounding rounding = Rounding::kStraightThrough) {
  T total = 0;
  CloudGradients<T> sum;
  for (size_t v = 0; v < views.size(); ++v) {
    auto r = evaluate_view(cloud, views[v].camera, views[v].target, background, lambda, true, rounding);
    total += r.loss;
    if (v == 0) {
      sum = std::move(r.grads);
      continue;
    }
    auto add = [](std::vector<T>& a, const std::vector<T>& b) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(sum.d_positions, r.grads.d_positions);
    add(sum.d_log_scales, r.grads.d_log_scales);
    add(sum.d_sh_base, r.grads.d_sh_base);
    add(sum.viewspace_grad_norm, r.grads.viewspace_grad_norm);
    for (size_t a = 0; a < 3; ++a) {
      add(sum.attributes[a].d_values, r.grads.attributes[a].d_values);
      add(sum.attributes[a].d_weight, r.grads.attributes[a].d_weight);
      add(sum.attributes[a].d_bias, r.grads.attributes[a].d_bias);
    }
    for (size_t i = 0; i < sum.visible.size(); ++i) sum.visible[i] |= r.grads.visible[i];
  }
  return {total, std::move(sum)};
}

template <typename T>
T total_loss(const GaussianCloud<T>& cloud, const std::vector<TrainingView<T>>& views, const Vec3<T>& background,
             T lambda, Rounding rounding = Rounding::kStraightThrough) {
  T total = 0;
  for (const auto& v : views) total += evaluate_view(cloud, v.camera, v.target, background, lambda, false, rounding).loss;
  return total;
}

// ---------------------------------------------------------------------------
// Training log
//
// Plain text, one record per line, fields separated by single spaces:
//   # comment
//   I <iter> <loss> <psnr> <gaussians> <width> <height> <render_ms> <step_ms>
//   E <iter> <kind> <count_before> <count_after>
// Event kinds: densify, prune_opacity, prune_influence, reset_opacity.

struct IterationRecord {
  long iter = 0;
  double loss = 0, psnr = 0;
  size_t count = 0;
  int width = 0, height = 0;
  double render_ms = 0, step_ms = 0;
};

struct EventRecord {
  long iter = 0;
  std::string kind;
  size_t before = 0, after = 0;
};

struct TrainingLog {
  std::vector<IterationRecord> iterations;
  std::vector<EventRecord> events;

  void write(std::ostream& out, bool with_timing = true) const {
    out << "# eagles training log v1\n";
    size_t e = 0;
    auto flush_events = [&](long upto) {
      for (; e < events.size() && events[e].iter <= upto; ++e)
        out << "E " << events[e].iter << ' ' << events[e].kind << ' ' << events[e].before << ' '
            << events[e].after << '\n';
    };
    char buf[256];
    for (const auto& r : iterations) {
      flush_events(r.iter - 1);
      std::snprintf(buf, sizeof(buf), "I %ld %.9g %.6f %zu %d %d %.4f %.4f\n", r.iter, r.loss, r.psnr, r.count,
                    r.width, r.height, with_timing ? r.render_ms : 0.0, with_timing ? r.step_ms : 0.0);
      out << buf;
      flush_events(r.iter);
    }
    flush_events(std::numeric_limits<long>::max());
  }

  static TrainingLog read(std::istream& in) {
    TrainingLog log;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      char tag = 0;
      ss >> tag;
      bool ok = false;
      if (tag == 'I') {
        IterationRecord r;
        ok = bool(ss >> r.iter >> r.loss >> r.psnr >> r.count >> r.width >> r.height >> r.render_ms >> r.step_ms);
        if (ok) log.iterations.push_back(r);
      } else if (tag == 'E') {
        EventRecord r;
        ok = bool(ss >> r.iter >> r.kind >> r.before >> r.after);
        if (ok) log.events.push_back(r);
      }
      require(ok, ErrorKind::kParse, "training log line " + std::to_string(line_no) + " is malformed");
    }
    return log;
  }
};

// ---------------------------------------------------------------------------
// Training loop

/// Initial cloud from a point set, quantizing the attributes selected in
/// `config`. Decoder seeds derive from the config seed.
inline GaussianCloud<float> initial_cloud(const InitPoints& points, const TrainConfig& config) {
  require(points.size() > 0, ErrorKind::kConfiguration, "initial point cloud is empty");
  auto init = initial_attributes<float>(points);
  GaussianCloud<float> c;
  c.positions = std::move(init.positions);
  c.log_scales = std::move(init.log_scales);
  c.sh_base = std::move(init.sh_base);
  const std::array<std::vector<float>*, 3> raw = {&init.sh_rest, &init.rotation, &init.opacity};
  for (AttributeId id : kLatentAttributes) {
    auto& values = *raw[size_t(id)];
    c.attribute(id) = config.quantized(id)
                          ? LatentAttribute<float>::make_quantized(id, values, config.seed * 3 + 1 + size_t(id))
                          : LatentAttribute<float>::make_raw(id, std::move(values));
  }
  c.validate();
  return c;
}

struct TrainResult {
  GaussianCloud<float> cloud;
  TrainingLog log;
};

/// Parameter groups of the optimizer, by role.
struct GroupIndex {
  size_t positions = 0, log_scales = 0, sh_base = 0;
  std::array<size_t, 3> values{};
  std::array<long, 3> weight{-1, -1, -1}, bias{-1, -1, -1};
};

namespace detail {

inline GroupIndex register_groups(AdamOptimizer<float>& opt, const GaussianCloud<float>& c, const TrainConfig& cfg,
                                  double extent) {
  GroupIndex g;
  const size_t n = c.size();
  g.positions = opt.add_group("positions", cfg.lr.position_init * extent, 3 * n, 3);
  g.log_scales = opt.add_group("log_scales", cfg.lr.log_scale, 3 * n, 3);
  g.sh_base = opt.add_group("sh_base", cfg.lr.sh_base, 3 * n, 3);
  for (AttributeId id : kLatentAttributes) {
    const auto& a = c.attribute(id);
    const auto spec = attribute_spec(id);
    const std::string name(spec.name);
    const double base = cfg.lr.attribute(id);
    const double lr = a.quantized ? latent_learning_rate(base, spec.latent_lr_scale, a.decoder) : base;
    g.values[size_t(id)] = opt.add_group(name, lr, a.values.size(), size_t(a.width()));
    if (a.quantized) {
      g.weight[size_t(id)] = long(opt.add_group(name + ".weight", cfg.lr.decoder, a.decoder.weight.size(), 0));
      g.bias[size_t(id)] = long(opt.add_group(name + ".bias", cfg.lr.decoder, a.decoder.bias.size(), 0));
    }
  }
  return g;
}

inline double position_lr(const TrainConfig& cfg, double extent, long iter) {
  const double t = cfg.total_iters > 0 ? std::clamp(double(iter) / double(cfg.total_iters), 0.0, 1.0) : 0.0;
  return extent * std::exp((1.0 - t) * std::log(cfg.lr.position_init) + t * std::log(cfg.lr.position_final));
}

}  // namespace detail

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Optimizes `cloud` against the training views of `dataset`.
inline TrainResult train(GaussianCloud<float> cloud, const ViewDataset& dataset, const TrainConfig& config,
                         const IterationCallback& on_iteration = {}) {
  config.validate();
  cloud.validate();
  const auto train_ids = dataset.train_indices();
  require(!train_ids.empty(), ErrorKind::kConfiguration, "dataset has no training views");
  for (size_t v : train_ids)
    require(dataset.views[v].image.width == dataset.views[v].camera.width &&
                dataset.views[v].image.height == dataset.views[v].camera.height,
            ErrorKind::kConfiguration, "training view '" + dataset.views[v].name + "' has no matching target");
  TrainResult result;
  if (config.total_iters == 0) {
    result.cloud = std::move(cloud);
    return result;
  }

  using Clock = std::chrono::steady_clock;
  const double extent = config.scene_extent > 0 ? config.scene_extent : dataset.scene_extent();
  const long total = config.total_iters;
  const long densify_from = config.scaled(config.densify_from);
  const long densify_until = config.scaled(config.densify_until);
  const long densify_interval = config.scaled(config.densify_interval);
  const long reset_interval = config.scaled(config.opacity_reset_interval);
  const long prune_interval = config.scaled(config.prune_interval);
  const long prune_until = config.scaled(config.prune_until);
  const long prune_window = std::min(config.prune_window, prune_interval);
  const float lambda = float(config.lambda_ssim);

  AdamOptimizer<float> opt;
  GroupIndex groups = detail::register_groups(opt, cloud, config, extent);
  DensifyAccumulator<float> dens(cloud.size());
  InfluenceAccumulator<float> influence(cloud.size());
  Rng rng(config.seed);
  std::vector<size_t> order;
  size_t cursor = 0;
  auto& log = result.log;

  auto apply_mutation = [&](MutationResult<float>& m, long iter, const char* kind) {
    const size_t before = cloud.size();
    cloud = std::move(m.cloud);
    opt.reindex(m.map);
    dens.reindex(m.map);
    influence.reindex(m.parents);
    log.events.push_back({iter, kind, before, cloud.size()});
  };

  for (long iter = 1; iter <= total; ++iter) {
    const auto t0 = Clock::now();
    if (cursor == order.size()) {
      order = train_ids;
      std::shuffle(order.begin(), order.end(), rng.engine());
      cursor = 0;
    }
    const View& view = dataset.views[order[cursor++]];
    const auto step = progressive_step(view.image, view.camera, iter - 1, total, config.progressive);
    auto r = evaluate_view(cloud, step.camera, step.target, dataset.background, lambda);
    const auto& g = r.grads;

    const double pos_lr = detail::position_lr(config, extent, iter - 1);
    opt.group(groups.positions).lr = pos_lr;
    opt.step(groups.positions, cloud.positions, g.d_positions);
    opt.step(groups.log_scales, cloud.log_scales, g.d_log_scales);
    opt.step(groups.sh_base, cloud.sh_base, g.d_sh_base);
    for (AttributeId id : kLatentAttributes) {
      auto& a = cloud.attribute(id);
      const auto& ag = g.attributes[size_t(id)];
      opt.step(groups.values[size_t(id)], a.values, ag.d_values);
      if (a.quantized) {
        opt.step(size_t(groups.weight[size_t(id)]), a.decoder.weight, ag.d_weight);
        opt.step(size_t(groups.bias[size_t(id)]), a.decoder.bias, ag.d_bias);
      }
    }

    const bool densifying = config.densify && iter < densify_until;
    if (densifying) dens.add(g.viewspace_grad_norm, g.visible, g.d_positions);

    const long next_prune = ((iter + prune_interval - 1) / prune_interval) * prune_interval;
    const bool prune_active = config.influence_prune && next_prune < prune_until;
    if (prune_active && next_prune - iter < prune_window) {
      influence.add(r.influence);
      ++influence.window_iters;
    }

    if (densifying && iter > densify_from && iter % densify_interval == 0) {
      auto d = densify<float>(cloud, dens, float(config.densify_grad_threshold), float(extent),
                              float(config.percent_dense), float(pos_lr), rng);
      apply_mutation(d, iter, "densify");
      auto p = prune_low_opacity<float>(cloud, float(config.min_opacity));
      apply_mutation(p, iter, "prune_opacity");
      dens.reset(cloud.size());
    }
    if (prune_active && iter == next_prune && influence.window_iters > 0) {
      auto p = influence_prune<float>(cloud, influence, config.prune_fraction);
      apply_mutation(p, iter, "prune_influence");
    }
    if (densifying && iter % reset_interval == 0) {
      opacity_reset<float>(cloud, float(config.reset_opacity));
      auto& grp = opt.group(groups.values[size_t(AttributeId::kOpacity)]);
      std::fill(grp.m.begin(), grp.m.end(), 0.0f);
      std::fill(grp.v.begin(), grp.v.end(), 0.0f);
      log.events.push_back({iter, "reset_opacity", cloud.size(), cloud.size()});
    }

    IterationRecord rec;
    rec.iter = iter;
    rec.loss = r.loss;
    rec.psnr = psnr(r.rendered, step.target);
    rec.count = cloud.size();
    rec.width = step.camera.width;
    rec.height = step.camera.height;
    rec.render_ms = r.render_ms;
    rec.step_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    log.iterations.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  result.cloud = std::move(cloud);
  return result;
}

inline TrainResult train(const InitPoints& points, const ViewDataset& dataset, const TrainConfig& config,
                         const IterationCallback& on_iteration = {}) {
  config.validate();
  return train(initial_cloud(points, config), dataset, config, on_iteration);
}

// ---------------------------------------------------------------------------
// Evaluation

struct ViewMetrics {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0;
  double mean_ssim = 0;
  double render_seconds = 0;  // rasterization only; decoding happens once up front
  double fps() const { return render_seconds > 0 ? double(views.size()) / render_seconds : 0.0; }
};

/// Renders the selected views at full resolution and scores them.
inline EvalReport evaluate(const GaussianCloud<float>& cloud, const ViewDataset& dataset,
                           const std::vector<size_t>& indices, std::vector<Image<float>>* renders = nullptr) {
  using Clock = std::chrono::steady_clock;
  const auto decoded = decode_attributes(cloud);
  EvalReport report;
  for (size_t v : indices) {
    const View& view = dataset.views.at(v);
    const auto t0 = Clock::now();
    auto art = render(cloud, decoded, view.camera, dataset.background);
    report.render_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    ViewMetrics m;
    m.name = view.name;
    if (view.image.same_shape(art.image)) {
      m.psnr = psnr(art.image, view.image);
      m.ssim = art.image.width >= kSsimWindow && art.image.height >= kSsimWindow
                   ? double(ssim(art.image, view.image).value)
                   : 0.0;
    }
    report.views.push_back(m);
    if (renders) renders->push_back(std::move(art.image));
  }
  if (!report.views.empty()) {
    for (const auto& m : report.views) {
      report.mean_psnr += m.psnr;
      report.mean_ssim += m.ssim;
    }
    report.mean_psnr /= double(report.views.size());
    report.mean_ssim /= double(report.views.size());
  }
  return report;
}

}  // namespace eagles
