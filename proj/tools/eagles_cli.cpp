#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eagles/eagles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitErrorBase = 10;  // exit code = 10 + ErrorKind
constexpr int kExitUnexpected = 1;

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

json storage_json(const eagles::StorageReport& r) {
  json j;
  j["gaussians"] = r.gaussian_count;
  j["total_bytes"] = r.total;
  j["total_bytes_without_decoders"] = r.total_without_decoders();
  j["sections"] = {{"header", r.header_bytes},
                   {"raw", r.raw_bytes},
                   {"decoders", r.decoder_bytes},
                   {"tables", r.table_bytes},
                   {"latent_streams", r.latent_stream_bytes},
                   {"raw_attributes", r.raw_attribute_bytes},
                   {"framing", r.framing_bytes},
                   {"footer", r.footer_bytes}};
  j["bytes_per_gaussian"] = r.gaussian_count ? double(r.total) / double(r.gaussian_count) : 0.0;
  j["latent_compression_ratio"] = r.latent_compression_ratio();
  j["total_compression_ratio"] = r.total_compression_ratio();
  j["attributes"] = json::array();
  for (const auto& a : r.attributes) {
    const auto spec = eagles::attribute_spec(a.attribute);
    j["attributes"].push_back({{"name", std::string(spec.name)},
                               {"quantized", a.quantized},
                               {"k", spec.attribute_dim},
                               {"l", a.quantized ? spec.latent_dim : 0},
                               {"decoder_bytes", a.decoder_bytes},
                               {"table_bytes", a.table_bytes},
                               {"stream_bytes", a.stream_bytes},
                               {"raw_bytes", a.raw_bytes},
                               {"framing_bytes", a.framing_bytes},
                               {"bits_per_latent", a.bits_per_latent},
                               {"coding", a.coding == eagles::LatentCodingMode::kRange ? "range" : "raw16"}});
  }
  return j;
}

void print_storage(const eagles::StorageReport& r) {
  std::printf("gaussians            %llu\n", (unsigned long long)r.gaussian_count);
  std::printf("total bytes          %llu (%.1f per Gaussian, %llu without decoders)\n", (unsigned long long)r.total,
              r.gaussian_count ? double(r.total) / double(r.gaussian_count) : 0.0,
              (unsigned long long)r.total_without_decoders());
  std::printf("  header             %llu\n", (unsigned long long)r.header_bytes);
  std::printf("  raw                %llu\n", (unsigned long long)r.raw_bytes);
  std::printf("  decoders           %llu\n", (unsigned long long)r.decoder_bytes);
  std::printf("  tables             %llu\n", (unsigned long long)r.table_bytes);
  std::printf("  latent streams     %llu\n", (unsigned long long)r.latent_stream_bytes);
  std::printf("  raw attributes     %llu\n", (unsigned long long)r.raw_attribute_bytes);
  std::printf("  framing            %llu\n", (unsigned long long)r.framing_bytes);
  std::printf("  footer             %llu\n", (unsigned long long)r.footer_bytes);
  std::printf("latent compression   %.2fx\n", r.latent_compression_ratio());
  std::printf("total compression    %.2fx\n", r.total_compression_ratio());
  for (const auto& a : r.attributes) {
    const auto spec = eagles::attribute_spec(a.attribute);
    if (a.quantized)
      std::printf("  %-11s quantized l=%d  %.3f bits/latent  %llu stream bytes (%s)\n",
                  std::string(spec.name).c_str(), spec.latent_dim, a.bits_per_latent,
                  (unsigned long long)a.stream_bytes,
                  a.coding == eagles::LatentCodingMode::kRange ? "range" : "raw16");
    else
      std::printf("  %-11s raw       %llu bytes\n", std::string(spec.name).c_str(), (unsigned long long)a.raw_bytes);
  }
}

std::vector<size_t> select_views(const eagles::ViewDataset& ds, const std::string& split) {
  if (split == "train") return ds.train_indices();
  if (split == "eval") return ds.eval_indices();
  if (split == "all") {
    std::vector<size_t> all(ds.views.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  // auto: the holdout views when the split has any, otherwise everything
  auto held = ds.eval_indices();
  return held.empty() ? select_views(ds, "all") : held;
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  eagles::SyntheticSceneSpec spec;
  bool json_output = false;
};

int cmd_synth(const SynthOptions& o) {
  auto scene = eagles::generate_synthetic_scene(o.spec);
  fs::create_directories(o.out);
  eagles::save_dataset(o.out, scene.dataset);
  eagles::write_point_ply((fs::path(o.out) / "points3d.ply").string(), scene.init_points);
  const size_t gt_bytes = eagles::save_compressed(scene.ground_truth, (fs::path(o.out) / "gt.egls").string());
  eagles::export_ply(scene.ground_truth, (fs::path(o.out) / "gt.ply").string());
  json j{{"out", o.out},
         {"gaussians", scene.ground_truth.size()},
         {"views", scene.dataset.views.size()},
         {"resolution", o.spec.resolution},
         {"init_points", scene.init_points.size()},
         {"ground_truth_bytes", gt_bytes},
         {"seed", o.spec.seed}};
  if (o.json_output)
    print_json(j);
  else
    std::printf("wrote %zu views of %zu Gaussians (%dx%d) and %zu init points to %s\n", scene.dataset.views.size(),
                scene.ground_truth.size(), o.spec.resolution, o.spec.resolution, scene.init_points.size(),
                o.out.c_str());
  return 0;
}

struct TrainOptions {
  std::string data, out, log, init;
  eagles::TrainConfig config;
  std::string progressive = "downsample";
  bool no_prune = false, no_densify = false, raw = false;
  bool no_q_color = false, no_q_rotation = false, no_q_opacity = false;
  bool no_schedule_scaling = false;
  bool holdout = false;
  bool print_config = false;
  bool json_output = false;
  long progress_every = 0;
};

eagles::TrainConfig resolve_config(const TrainOptions& o) {
  eagles::TrainConfig c = o.config;
  c.progressive.mode = eagles::parse_progressive_mode(o.progressive);
  if (o.no_prune) c.influence_prune = false;
  if (o.no_densify) c.densify = false;
  c.quantize = {!(o.raw || o.no_q_color), !(o.raw || o.no_q_rotation), !(o.raw || o.no_q_opacity)};
  if (o.no_schedule_scaling) c.scale_schedule = false;
  c.validate();
  return c;
}

int cmd_train(const TrainOptions& o) {
  const eagles::TrainConfig config = resolve_config(o);
  if (o.print_config) {
    print_json(eagles::to_json(config));
    return 0;
  }
  eagles::require(!o.data.empty() && !o.out.empty(), eagles::ErrorKind::kConfiguration,
                  "train needs --data and --out");
  const auto dataset = eagles::load_dataset(o.data, o.holdout);
  const std::string init = o.init.empty() ? (fs::path(o.data) / "points3d.ply").string() : o.init;
  const auto points = eagles::load_init_points(init);

  const auto t0 = std::chrono::steady_clock::now();
  auto result = eagles::train(points, dataset, config, [&](const eagles::IterationRecord& r) {
    if (o.progress_every > 0 && r.iter % o.progress_every == 0)
      std::fprintf(stderr, "iter %6ld  loss %.5f  psnr %6.2f  gaussians %zu\n", r.iter, r.loss, r.psnr, r.count);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const size_t bytes = eagles::save_compressed(result.cloud, o.out);
  const std::string log_path = o.log.empty() ? o.out + ".log" : o.log;
  {
    std::ofstream log(log_path);
    eagles::require(bool(log), eagles::ErrorKind::kIo, "cannot write '" + log_path + "'");
    result.log.write(log);
  }
  const auto report = eagles::storage_report(result.cloud);
  const auto train_eval = eagles::evaluate(result.cloud, dataset, dataset.train_indices());
  json j{{"scene", o.out},
         {"log", log_path},
         {"iterations", config.total_iters},
         {"gaussians", result.cloud.size()},
         {"bytes", bytes},
         {"train_psnr", train_eval.mean_psnr},
         {"train_ssim", train_eval.mean_ssim},
         {"seconds", seconds},
         {"storage", storage_json(report)}};
  if (o.holdout) {
    const auto held = eagles::evaluate(result.cloud, dataset, dataset.eval_indices());
    j["eval_psnr"] = held.mean_psnr;
    j["eval_ssim"] = held.mean_ssim;
  }
  if (o.json_output) {
    print_json(j);
  } else {
    std::printf("trained %ld iterations in %.1f s: %zu Gaussians, %zu bytes, train PSNR %.2f dB\n",
                config.total_iters, seconds, result.cloud.size(), bytes, train_eval.mean_psnr);
    if (o.holdout) std::printf("holdout PSNR %.2f dB\n", j["eval_psnr"].get<double>());
  }
  return 0;
}

struct ViewsOptions {
  std::string scene, data, out, split = "auto";
  std::vector<std::string> names;
  bool holdout = false;
  bool json_output = false;
};

std::vector<size_t> resolve_views(const eagles::ViewDataset& ds, const ViewsOptions& o) {
  if (o.names.empty()) return select_views(ds, o.split);
  std::vector<size_t> ids;
  for (const auto& name : o.names) {
    size_t found = ds.views.size();
    for (size_t i = 0; i < ds.views.size(); ++i)
      if (ds.views[i].name == name) found = i;
    eagles::require(found < ds.views.size(), eagles::ErrorKind::kInvalidInput, "no view named '" + name + "'");
    ids.push_back(found);
  }
  return ids;
}

json metrics_json(const eagles::EvalReport& rep) {
  json j;
  j["views"] = json::array();
  for (const auto& m : rep.views) j["views"].push_back({{"name", m.name}, {"psnr", m.psnr}, {"ssim", m.ssim}});
  j["mean_psnr"] = rep.mean_psnr;
  j["mean_ssim"] = rep.mean_ssim;
  j["render_seconds"] = rep.render_seconds;
  j["fps"] = rep.fps();
  return j;
}

int cmd_render(const ViewsOptions& o) {
  const auto cloud = eagles::load_compressed(o.scene);
  const auto ds = eagles::load_dataset(o.data, o.holdout, /*load_images=*/true);
  const auto ids = resolve_views(ds, o);
  eagles::require(!ids.empty(), eagles::ErrorKind::kInvalidInput, "no views selected");
  std::vector<eagles::Image<float>> images;
  const auto rep = eagles::evaluate(cloud, ds, ids, &images);
  fs::create_directories(o.out);
  for (size_t i = 0; i < ids.size(); ++i)
    eagles::write_png((fs::path(o.out) / (ds.views[ids[i]].name + ".png")).string(), images[i]);
  json j = metrics_json(rep);
  j["out"] = o.out;
  if (o.json_output)
    print_json(j);
  else
    std::printf("rendered %zu views to %s: %.1f fps, mean PSNR %.2f dB\n", ids.size(), o.out.c_str(), rep.fps(),
                rep.mean_psnr);
  return 0;
}

int cmd_eval(const ViewsOptions& o) {
  const auto bytes = eagles::read_file_bytes(o.scene);
  const auto parsed = eagles::parse_scene(bytes);
  const auto ds = eagles::load_dataset(o.data, o.holdout);
  const auto ids = resolve_views(ds, o);
  eagles::require(!ids.empty(), eagles::ErrorKind::kInvalidInput, "no views selected");
  const auto rep = eagles::evaluate(parsed.cloud, ds, ids);
  json j = metrics_json(rep);
  j["storage"] = storage_json(parsed.report);
  if (o.json_output) {
    print_json(j);
    return 0;
  }
  for (const auto& m : rep.views) std::printf("%-20s PSNR %6.2f  SSIM %.4f\n", m.name.c_str(), m.psnr, m.ssim);
  std::printf("mean                 PSNR %6.2f  SSIM %.4f  (%.1f fps)\n", rep.mean_psnr, rep.mean_ssim, rep.fps());
  print_storage(parsed.report);
  return 0;
}

struct FileOptions {
  std::string in, out;
  bool json_output = false;
};

int cmd_compress(const FileOptions& o) {
  const bool from_ply = fs::path(o.in).extension() == ".ply";
  const auto cloud = from_ply ? eagles::import_splat_ply(o.in) : eagles::load_compressed(o.in);
  const size_t bytes = eagles::save_compressed(cloud, o.out);
  const size_t in_bytes = fs::file_size(o.in);
  if (o.json_output)
    print_json({{"in", o.in}, {"out", o.out}, {"in_bytes", in_bytes}, {"out_bytes", bytes}, {"gaussians", cloud.size()}});
  else
    std::printf("%s (%zu bytes) -> %s (%zu bytes), %zu Gaussians\n", o.in.c_str(), in_bytes, o.out.c_str(), bytes,
                cloud.size());
  return 0;
}

int cmd_decompress(const FileOptions& o) {
  const auto cloud = eagles::load_compressed(o.in);
  eagles::export_ply(cloud, o.out);
  if (o.json_output)
    print_json({{"in", o.in}, {"out", o.out}, {"gaussians", cloud.size()}});
  else
    std::printf("%s -> %s, %zu Gaussians\n", o.in.c_str(), o.out.c_str(), cloud.size());
  return 0;
}

int cmd_info(const FileOptions& o) {
  const auto bytes = eagles::read_file_bytes(o.in);
  const auto parsed = eagles::parse_scene(bytes);
  if (o.json_output) {
    json j = storage_json(parsed.report);
    j["file"] = o.in;
    j["version"] = parsed.version;
    j["sh_degree"] = parsed.sh_degree;
    print_json(j);
    return 0;
  }
  std::printf("file                 %s\n", o.in.c_str());
  std::printf("format version       %u\n", parsed.version);
  std::printf("SH degree            %u\n", unsigned(parsed.sh_degree));
  print_storage(parsed.report);
  return 0;
}

int cmd_report(const FileOptions& o) {
  std::ifstream in(o.in);
  eagles::require(bool(in), eagles::ErrorKind::kIo, "cannot open '" + o.in + "'");
  const auto log = eagles::TrainingLog::read(in);
  eagles::require(!log.iterations.empty(), eagles::ErrorKind::kInvalidInput, o.in + ": log has no iterations");
  double step_ms = 0, render_ms = 0;
  for (const auto& r : log.iterations) {
    step_ms += r.step_ms;
    render_ms += r.render_ms;
  }
  const double n = double(log.iterations.size());
  const auto& last = log.iterations.back();
  json events = json::object();
  for (const auto& e : log.events) {
    auto& slot = events[e.kind];
    if (slot.is_null()) slot = {{"count", 0}, {"removed", 0}, {"added", 0}};
    slot["count"] = slot["count"].get<long>() + 1;
    if (e.after < e.before) slot["removed"] = slot["removed"].get<long>() + long(e.before - e.after);
    if (e.after > e.before) slot["added"] = slot["added"].get<long>() + long(e.after - e.before);
  }
  json j{{"iterations", log.iterations.size()},
         {"final", {{"iter", last.iter}, {"loss", last.loss}, {"psnr", last.psnr}, {"gaussians", last.count}}},
         {"mean_step_ms", step_ms / n},
         {"mean_render_ms", render_ms / n},
         {"events", events}};
  if (o.json_output) {
    print_json(j);
    return 0;
  }
  std::printf("iterations           %zu\n", log.iterations.size());
  std::printf("final                loss %.5f  PSNR %.2f  %zu Gaussians\n", last.loss, last.psnr, last.count);
  std::printf("mean step            %.3f ms (render %.3f ms)\n", step_ms / n, render_ms / n);
  for (const auto& [kind, s] : events.items())
    std::printf("%-20s %ld events, +%ld / -%ld Gaussians\n", kind.c_str(), s["count"].get<long>(),
                s["added"].get<long>(), s["removed"].get<long>());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train, compress and inspect quantized Gaussian splatting scenes"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic multi-view dataset");
  s->add_option("-o,--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.spec.gaussian_count, "Ground-truth Gaussians")->capture_default_str();
  s->add_option("--cameras", synth.spec.camera_count, "Cameras on the ring")->capture_default_str();
  s->add_option("--resolution", synth.spec.resolution, "Image width and height")->capture_default_str();
  s->add_option("--radius", synth.spec.ring_radius, "Camera ring radius")->capture_default_str();
  s->add_option("--elevation", synth.spec.ring_elevation, "Ring elevation (radians)")->capture_default_str();
  s->add_option("--extent", synth.spec.extent, "Half-size of the sampling cube")->capture_default_str();
  s->add_option("--view-dependence", synth.spec.view_dependence, "Higher SH band amplitude")->capture_default_str();
  s->add_option("--init-fraction", synth.spec.init_fraction, "Share of centers in the init cloud")
      ->capture_default_str();
  s->add_option("--init-noise", synth.spec.init_position_noise, "Init position noise (fraction of extent)")
      ->capture_default_str();
  s->add_option("--seed", synth.spec.seed, "Random seed")->capture_default_str();
  s->add_flag("--json", synth.json_output, "Machine-readable output");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Optimize a scene and write a compressed file");
  t->add_option("-d,--data", train.data, "Dataset directory");
  t->add_option("-o,--out", train.out, "Output scene file (.egls)");
  t->add_option("--log", train.log, "Training log path (default <out>.log)");
  t->add_option("--init", train.init, "Initialization point cloud (default <data>/points3d.ply)");
  t->add_option("--iters", train.config.total_iters, "Training iterations")->capture_default_str();
  t->add_option("--seed", train.config.seed, "Random seed")->capture_default_str();
  t->add_option("--lambda-ssim", train.config.lambda_ssim, "SSIM weight in the loss")->capture_default_str();
  t->add_option("--progressive", train.progressive, "Coarse-to-fine mode")
      ->check(CLI::IsMember({"none", "downsample", "mean", "gaussian"}))
      ->capture_default_str();
  t->add_option("--progressive-start", train.config.progressive.start_scale, "Initial resolution scale")
      ->capture_default_str();
  t->add_option("--progressive-fraction", train.config.progressive.duration_fraction,
                "Share of training spent ramping up")
      ->capture_default_str();
  t->add_option("--densify-threshold", train.config.densify_grad_threshold, "Viewspace gradient threshold")
      ->capture_default_str();
  t->add_option("--densify-interval", train.config.densify_interval, "Iterations between densifications")
      ->capture_default_str();
  t->add_option("--densify-until", train.config.densify_until, "Last densification iteration")
      ->capture_default_str();
  t->add_option("--reset-interval", train.config.opacity_reset_interval, "Iterations between opacity resets")
      ->capture_default_str();
  t->add_option("--prune-fraction", train.config.prune_fraction, "Share removed per influence prune")
      ->capture_default_str();
  t->add_option("--prune-interval", train.config.prune_interval, "Iterations between influence prunes")
      ->capture_default_str();
  t->add_option("--prune-until", train.config.prune_until, "Influence pruning stops before this iteration")
      ->capture_default_str();
  t->add_option("--scene-extent", train.config.scene_extent, "Scene extent (0 derives it from the cameras)")
      ->capture_default_str();
  t->add_flag("--no-prune", train.no_prune, "Disable influence pruning");
  t->add_flag("--no-densify", train.no_densify, "Disable densification");
  t->add_flag("--raw", train.raw, "Disable latent quantization for every attribute");
  t->add_flag("--no-quantize-color", train.no_q_color, "Keep higher SH bands unquantized");
  t->add_flag("--no-quantize-rotation", train.no_q_rotation, "Keep rotations unquantized");
  t->add_flag("--no-quantize-opacity", train.no_q_opacity, "Keep opacities unquantized");
  t->add_flag("--no-schedule-scaling", train.no_schedule_scaling,
              "Use the 30000-iteration schedule verbatim regardless of --iters");
  t->add_flag("--holdout", train.holdout, "Hold out every 8th view for evaluation");
  t->add_option("--progress", train.progress_every, "Print progress every N iterations");
  t->add_flag("--print-config", train.print_config, "Print the resolved configuration and exit");
  t->add_flag("--json", train.json_output, "Machine-readable output");

  ViewsOptions render;
  auto* r = app.add_subcommand("render", "Render dataset views to PNG");
  r->add_option("-s,--scene", render.scene, "Scene file")->required();
  r->add_option("-d,--data", render.data, "Dataset directory")->required();
  r->add_option("-o,--out", render.out, "Output directory")->required();
  r->add_option("--split", render.split, "Views to render")
      ->check(CLI::IsMember({"auto", "train", "eval", "all"}))
      ->capture_default_str();
  r->add_option("--view", render.names, "Render only the named views");
  r->add_flag("--holdout", render.holdout, "Hold out every 8th view");
  r->add_flag("--json", render.json_output, "Machine-readable output");

  ViewsOptions eval;
  auto* e = app.add_subcommand("eval", "Score a scene against a dataset");
  e->add_option("-s,--scene", eval.scene, "Scene file")->required();
  e->add_option("-d,--data", eval.data, "Dataset directory")->required();
  e->add_option("--split", eval.split, "Views to score")
      ->check(CLI::IsMember({"auto", "train", "eval", "all"}))
      ->capture_default_str();
  e->add_option("--view", eval.names, "Score only the named views");
  e->add_flag("--holdout", eval.holdout, "Hold out every 8th view");
  e->add_flag("--json", eval.json_output, "Machine-readable output");

  FileOptions compress;
  auto* c = app.add_subcommand("compress", "Re-encode a scene file or a splat PLY");
  c->add_option("-i,--in", compress.in, "Input .egls or .ply")->required();
  c->add_option("-o,--out", compress.out, "Output .egls")->required();
  c->add_flag("--json", compress.json_output, "Machine-readable output");

  FileOptions decompress;
  auto* x = app.add_subcommand("decompress", "Decode a scene file to a splat PLY");
  x->add_option("-i,--in", decompress.in, "Input .egls")->required();
  x->add_option("-o,--out", decompress.out, "Output .ply")->required();
  x->add_flag("--json", decompress.json_output, "Machine-readable output");

  FileOptions info;
  auto* i = app.add_subcommand("info", "Verify a scene file and print its layout");
  i->add_option("scene", info.in, "Scene file")->required();
  i->add_flag("--json", info.json_output, "Machine-readable output");

  FileOptions report;
  auto* p = app.add_subcommand("report", "Summarize a training log");
  p->add_option("log", report.in, "Training log")->required();
  p->add_flag("--json", report.json_output, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*r) return cmd_render(render);
    if (*e) return cmd_eval(eval);
    if (*c) return cmd_compress(compress);
    if (*x) return cmd_decompress(decompress);
    if (*i) return cmd_info(info);
    if (*p) return cmd_report(report);
  } catch (const eagles::FormatError& err) {
    std::fprintf(stderr, "error [%s] in section '%s': %s\n", std::string(eagles::to_string(err.kind())).c_str(),
                 err.section().c_str(), err.what());
    return kExitErrorBase + int(err.kind());
  } catch (const eagles::Error& err) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(eagles::to_string(err.kind())).c_str(), err.what());
    return kExitErrorBase + int(err.kind());
  } catch (const std::filesystem::filesystem_error& err) {
    std::fprintf(stderr, "error [io]: %s\n", err.what());
    return kExitErrorBase + int(eagles::ErrorKind::kIo);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitUnexpected;
  }
  return kExitUsage;
}
