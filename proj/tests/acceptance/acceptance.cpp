// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "eagles/eagles.hpp"
#include "support/scenes.hpp"

using namespace eagles;
using namespace eagles::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const Outcome& o) {
  std::printf("%s criterion %d: %s | %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

template <typename... Args>
std::string format(const char* fmt, Args... args) {
  char buf[1024];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central differences.

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  auto cloud = random_cloud<double>(8, 2024, true);
  Rng rng(99);
  std::vector<TrainingView<double>> views;
  for (int v = 0; v < 2; ++v) views.push_back({orbit_camera<double>(16, 0.5 * v - 0.25), random_image<double>(16, 16, rng)});
  const auto checks = check_gradients(cloud, views, Vec3<double>(0.1, 0.2, 0.3), 0.2, 1e-6, 1e-3, 1e-8);
  double worst = 0.0, worst_abs = 0.0;
  size_t failed = 0, total = 0;
  std::string worst_group;
  for (const auto& c : checks) {
    total += c.checked;
    worst_abs = std::max(worst_abs, c.max_absolute_error);
    failed += c.failures;
    if (c.max_relative_error >= worst) {
      worst = c.max_relative_error;
      worst_group = c.group;
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 120.0,
          format("%zu parameters in %zu groups, %zu above tolerance, max abs err %.2e, "
                 "max rel err above the 1e-8 floor %.2e (%s), %.1f s",
                 total, checks.size(), failed, worst_abs, worst, worst_group.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 2. Blending weights and final transmittance sum to one.

Outcome blending_identity() {
  double worst = 0.0;
  size_t pixels = 0;
  for (int s = 0; s < 100; ++s) {
    Rng rng(5000 + s);
    const size_t n = 1 + rng.below(60);
    RandomCloudOptions o;
    o.opacity_max = 0.999;
    o.scale_min = 0.03;
    const auto cloud = random_cloud<double>(n, 5000 + s, s % 2 == 0, o);
    const auto cam = orbit_camera<double>(24 + int(rng.below(24)), rng.uniform(0, 2 * std::numbers::pi), 2.5);
    const auto art = render(cloud, decode_attributes(cloud), cam, Vec3<double>(0.2, 0.4, 0.6));
    for (double t : blending_totals(art)) worst = std::max(worst, std::abs(t - 1.0));
    pixels += art.final_transmittance.size();
  }
  return {worst <= 1e-6, format("100 scenes, %zu pixels, max |sum - 1| = %.2e", pixels, worst)};
}

// ---------------------------------------------------------------------------
// 3. Gaussians with zero influence are pruned without changing any render.

Outcome influence_prune_equivalence() {
  const size_t total = 60;
  const double fraction = TrainConfig{}.prune_fraction;
  const size_t hidden = size_t(std::floor(fraction * double(total)));
  const size_t walls = 2;
  Rng rng(31);
  InitialAttributes<float> a;
  auto add = [&](Vec3<double> p, Vec3<double> s, double opacity) {
    for (int c = 0; c < 3; ++c) {
      a.positions.push_back(float(p[c]));
      a.log_scales.push_back(float(std::log(s[c])));
      a.sh_base.push_back(float(rgb_to_sh_base(0.1 + 0.8 * rng.uniform())));
    }
    for (int k = 0; k < kShRestDim; ++k) a.sh_rest.push_back(float(0.1 * rng.normal()));
    for (float q : {1.0f, 0.0f, 0.0f, 0.0f}) a.rotation.push_back(q);
    a.opacity.push_back(float(logit(opacity)));
  };
  // Visible Gaussians in front, two opaque walls (transmittance falls below the
  // stop threshold after both), hidden Gaussians behind.
  for (size_t i = 0; i < total - hidden - walls; ++i)
    add({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-1.2, -0.6)}, {0.08, 0.08, 0.08},
        rng.uniform(0.3, 0.8));
  for (size_t w = 0; w < walls; ++w) add({0.0, 0.0, 0.1 * double(w)}, {40.0, 40.0, 0.01}, 0.9999);
  for (size_t i = 0; i < hidden; ++i)
    add({rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(0.6, 1.2)}, {0.1, 0.1, 0.1}, 0.9);
  const auto cloud = make_cloud<float>(std::move(a), true, 7);

  std::vector<Camera<float>> cams;
  for (int v = 0; v < 4; ++v) cams.push_back(orbit_camera<float>(32, -0.15 + 0.1 * v, 3.0, 0.1));
  const Vec3<float> bg(0.3f, 0.3f, 0.3f);
  InfluenceAccumulator<float> acc(cloud.size());
  std::vector<Image<float>> before;
  const auto decoded = decode_attributes(cloud);
  for (const auto& cam : cams) {
    auto art = render(cloud, decoded, cam, bg);
    acc.add(art.influence);
    ++acc.window_iters;
    before.push_back(std::move(art.image));
  }
  std::vector<size_t> zero;
  for (size_t i = 0; i < acc.weight_sum.size(); ++i)
    if (acc.weight_sum[i] == 0.0f) zero.push_back(i);

  auto pruned = influence_prune(cloud, acc, fraction);
  std::vector<bool> kept(cloud.size(), false);
  for (auto src : pruned.map.source) kept[size_t(src)] = true;
  bool zero_removed = true;
  for (size_t i : zero) zero_removed = zero_removed && !kept[i];
  const size_t removed = cloud.size() - pruned.cloud.size();

  double worst = 0.0;
  const auto decoded_after = decode_attributes(pruned.cloud);
  for (size_t v = 0; v < cams.size(); ++v)
    worst = std::max(worst, max_abs_difference(render(pruned.cloud, decoded_after, cams[v], bg).image, before[v]));
  const bool ok = zero.size() == hidden && zero_removed && removed == zero.size() && worst < 1e-6;
  return {ok, format("%zu of %zu Gaussians have W=0, %zu removed, all zero-W removed: %s, max render change %.2e",
                     zero.size(), cloud.size(), removed, zero_removed ? "yes" : "no", worst)};
}

// ---------------------------------------------------------------------------
// 4-8. Desk-scale training runs on one synthetic scene.

struct Run {
  TrainResult result;
  EvalReport eval;
  double seconds = 0.0;
};

Run run_training(const SyntheticScene& scene, const TrainConfig& config, const char* label) {
  const auto t0 = Clock::now();
  Run r;
  r.result = train(scene.init_points, scene.dataset, config);
  r.seconds = seconds_since(t0);
  r.eval = evaluate(r.result.cloud, scene.dataset, scene.dataset.train_indices());
  std::printf("  run %-30s PSNR %.3f dB, %zu Gaussians, %.1f s\n", label, r.eval.mean_psnr, r.result.cloud.size(),
              r.seconds);
  std::fflush(stdout);
  return r;
}

double mean_over(const TrainingLog& log, long from_exclusive, long to_inclusive, bool step_time) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& it : log.iterations)
    if (it.iter > from_exclusive && it.iter <= to_inclusive) {
      sum += step_time ? it.step_ms : it.render_ms;
      ++n;
    }
  return n ? sum / double(n) : 0.0;
}

long last_event(const TrainingLog& log, const std::string& kind) {
  long last = 0;
  for (const auto& e : log.events)
    if (e.kind == kind) last = std::max(last, e.iter);
  return last;
}

Outcome progressive_schedule_exact() {
  const ProgressiveConfig p;
  const long total = 30000;
  bool monotone = true;
  double prev = schedule_scale(0, total, p);
  for (long it = 1; it <= total; ++it) {
    const double s = schedule_scale(it, total, p);
    monotone = monotone && s >= prev;
    prev = s;
  }
  const double s0 = schedule_scale(0, total, p);
  const double s70 = schedule_scale(long(0.7 * total), total, p);
  const bool ok = std::abs(s0 - 0.3) < 1e-12 && std::abs(s70 - 1.0) < 1e-12 && monotone;
  return {ok, format("s(0)=%.6f, s(0.7T)=%.6f, monotone over %ld steps: %s", s0, s70, total, monotone ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 9. Container roundtrips and corruption handling.

GaussianCloud<float> random_stored_cloud(Rng& rng, std::uint64_t seed) {
  const size_t n = rng.below(5) == 0 ? 0 : 1 + rng.below(80);
  auto cloud = random_cloud<float>(n, seed, true);
  for (AttributeId id : kLatentAttributes) {
    auto& a = cloud.attribute(id);
    switch (rng.below(4)) {
      case 0: {  // raw attribute
        a = LatentAttribute<float>::make_raw(id, a.decoded());
        break;
      }
      case 1: {  // wide latents that force 16-bit fallback coding
        for (auto& v : a.values) v = float(rng.uniform(-32000.0, 32000.0));
        break;
      }
      case 2: {  // fractional shadows
        for (auto& v : a.values) v += float(rng.uniform(-0.49, 0.49));
        break;
      }
      default: break;
    }
  }
  return cloud;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

bool same_content(const GaussianCloud<float>& a, const GaussianCloud<float>& b) {
  if (!same_bits(a.positions, b.positions) || !same_bits(a.log_scales, b.log_scales) ||
      !same_bits(a.sh_base, b.sh_base))
    return false;
  for (AttributeId id : kLatentAttributes) {
    const auto& x = a.attribute(id);
    const auto& y = b.attribute(id);
    if (x.quantized != y.quantized || !same_bits(x.decoded(), y.decoded())) return false;
    if (x.quantized && (x.frozen() != y.frozen() || !same_bits(x.decoder.weight, y.decoder.weight) ||
                        !same_bits(x.decoder.bias, y.decoder.bias)))
      return false;
  }
  return true;
}

void refresh_crcs(std::vector<std::uint8_t>& bytes) {
  constexpr size_t kHeader = 42;
  auto put = [&](size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[at + size_t(i)] = std::uint8_t(v >> (8 * i));
  };
  put(kHeader, crc32_of(std::span<const std::uint8_t>(bytes).first(kHeader)));
  put(bytes.size() - 4, crc32_of(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4)));
}

enum class ParseOutcome { kOk, kStructured, kOther };

ParseOutcome try_parse(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_scene(bytes);
    return ParseOutcome::kOk;
  } catch (const Error&) {
    return ParseOutcome::kStructured;
  } catch (...) {
    return ParseOutcome::kOther;
  }
}

Outcome format_roundtrip() {
  Rng rng(404);
  size_t mismatched = 0, render_mismatch = 0, renders = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto cloud = random_stored_cloud(rng, 9000 + std::uint64_t(i));
    const auto bytes = serialize_scene(cloud);
    const auto parsed = parse_scene(bytes);
    if (serialize_scene(parsed.cloud) != bytes || !same_content(cloud, parsed.cloud)) ++mismatched;
    if (i % 10 == 0) {
      const auto cam = orbit_camera<float>(32, rng.uniform(0, 2 * std::numbers::pi));
      const Vec3<float> bg(0.1f, 0.2f, 0.3f);
      const auto a = render(cloud, decode_attributes(cloud), cam, bg).image;
      const auto b = render(parsed.cloud, decode_attributes(parsed.cloud), cam, bg).image;
      ++renders;
      if (!same_bits(a.data, b.data)) ++render_mismatch;
    }
  }

  // Corruptions: every single-byte flip of a small file, random multi-byte
  // damage, every truncation, header fields rewritten with valid checksums,
  // and random garbage.
  std::map<std::string, size_t> unstructured;
  size_t trials = 0, accepted_flips = 0;
  const auto small = serialize_scene(random_cloud<float>(6, 77, true));
  for (size_t pos = 0; pos < small.size(); ++pos) {
    auto b = small;
    b[pos] ^= std::uint8_t(1 + rng.below(255));
    ++trials;
    const auto r = try_parse(b);
    if (r == ParseOutcome::kOther) ++unstructured["flip"];
    if (r == ParseOutcome::kOk) ++accepted_flips;
  }
  for (size_t len = 0; len < small.size(); ++len) {
    ++trials;
    if (try_parse(std::vector<std::uint8_t>(small.begin(), small.begin() + std::ptrdiff_t(len))) !=
        ParseOutcome::kStructured)
      ++unstructured["truncate"];
  }
  for (int t = 0; t < 2000; ++t) {
    auto b = serialize_scene(random_stored_cloud(rng, 20000 + std::uint64_t(t)));
    const int hits = 1 + int(rng.below(8));
    for (int h = 0; h < hits; ++h) b[rng.below(b.size())] = std::uint8_t(rng.below(256));
    ++trials;
    if (try_parse(b) == ParseOutcome::kOther) ++unstructured["random"];
    auto header = serialize_scene(random_stored_cloud(rng, 30000 + std::uint64_t(t)));
    const size_t field = 4 + rng.below(38);
    header[field] = std::uint8_t(rng.below(256));
    if (rng.below(2)) header[field + 1 < 42 ? field + 1 : field] = 0xFF;
    refresh_crcs(header);
    ++trials;
    if (try_parse(header) == ParseOutcome::kOther) ++unstructured["header"];
    std::vector<std::uint8_t> garbage(rng.below(400));
    for (auto& g : garbage) g = std::uint8_t(rng.below(256));
    if (garbage.size() >= 4 && rng.below(2)) std::memcpy(garbage.data(), kSceneMagic, 4);
    ++trials;
    if (try_parse(garbage) == ParseOutcome::kOther) ++unstructured["garbage"];
  }
  size_t bad = 0;
  for (const auto& [k, v] : unstructured) bad += v;
  const bool ok = mismatched == 0 && render_mismatch == 0 && bad == 0 && accepted_flips == 0;
  return {ok, format("1000 roundtrips, %zu mismatched; %zu render comparisons, %zu differ; %zu corrupted inputs, "
                     "%zu without a structured error, %zu single-byte flips accepted",
                     mismatched, renders, render_mismatch, trials, bad, accepted_flips)};
}

// ---------------------------------------------------------------------------
// 10. Entropy coder identity and efficiency.

Outcome codec() {
  constexpr size_t kCount = 1000000;
  Rng rng(1010);
  struct Source {
    const char* name;
    size_t n, l;
    std::function<std::int32_t(size_t)> draw;  // argument: latent dimension
  };
  const std::vector<Source> sources = {
      {"uniform[-40,40]", kCount, 1, [&](size_t) { return std::int32_t(rng.below(81)) - 40; }},
      {"gaussian sd 3", kCount, 1, [&](size_t) { return std::int32_t(std::lround(3.0 * rng.normal())); }},
      {"geometric p=0.3", kCount, 1,
       [&](size_t) {
         std::int32_t k = 0;
         while (rng.uniform() > 0.3) ++k;
         return k;
       }},
      {"16 dims, sd 0.5..8", kCount / 16, 16,
       [&](size_t j) { return std::int32_t(std::lround((0.5 + 0.5 * double(j)) * rng.normal())); }},
  };
  bool ok = true;
  std::string detail;
  for (const auto& src : sources) {
    std::vector<std::int32_t> values(src.n * src.l);
    for (size_t i = 0; i < src.n; ++i)
      for (size_t j = 0; j < src.l; ++j) values[i * src.l + j] = src.draw(j);
    const auto block = encode_latent_block(values, src.n, src.l);
    const bool identical = decode_latent_block(block.bytes, src.n, src.l) == values;
    double entropy_bits = 0.0;
    for (size_t j = 0; j < src.l; ++j) {
      std::vector<std::int32_t> column(src.n);
      for (size_t i = 0; i < src.n; ++i) column[i] = values[i * src.l + j];
      entropy_bits += empirical_entropy_bits(column) * double(src.n);
    }
    const double bound = entropy_bits / 8.0;
    const double payload = double(block.bytes.size() - block.table_bytes);
    const bool within = block.mode == LatentCodingMode::kRange && payload <= 1.02 * bound;
    ok = ok && identical && within;
    detail += format("%s%s: %s, payload %.0f B vs entropy %.0f B (%+.2f%%) + %zu B tables", detail.empty() ? "" : "; ",
                     src.name, identical ? "identical" : "MISMATCH", payload, bound, 100.0 * (payload / bound - 1.0),
                     block.table_bytes);
  }
  return {ok, detail};
}

void training_criteria();

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number; the default runs all ten.
  std::vector<bool> selected(11, argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (id >= 1 && id <= 10) selected[size_t(id)] = true;
  }
  std::printf("acceptance suite\n");
  if (selected[1]) report(1, "gradient oracle", gradient_oracle());
  if (selected[2]) report(2, "blending identity", blending_identity());
  if (selected[3]) report(3, "influence-prune equivalence", influence_prune_equivalence());
  if (selected[4] || selected[5] || selected[6] || selected[7] || selected[8]) training_criteria();
  if (selected[9]) report(9, "format roundtrip", format_roundtrip());
  if (selected[10]) report(10, "entropy codec", codec());

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

namespace {

void training_criteria() {
  const SyntheticSceneSpec spec;
  const auto scene = generate_synthetic_scene(spec);
  TrainConfig base;
  base.total_iters = 3000;
  base.densify_grad_threshold = 5e-4;
  base.seed = 0;
  std::printf("  scene: %d Gaussians, %d views at %dx%d, %zu init points\n", spec.gaussian_count, spec.camera_count,
              spec.resolution, spec.resolution, scene.init_points.size());

  TrainConfig raw_cfg = base;
  raw_cfg.quantize = {false, false, false};
  TrainConfig no_prune_cfg = base;
  no_prune_cfg.influence_prune = false;
  TrainConfig flat_cfg = base;
  flat_cfg.progressive.mode = ProgressiveMode::kNone;

  const Run q = run_training(scene, base, "quantized (full pipeline)");
  const Run raw = run_training(scene, raw_cfg, "unquantized control");

  {
    const double gap = q.eval.mean_psnr - raw.eval.mean_psnr;
    const double secs = q.seconds + raw.seconds;
    const bool ok = q.eval.mean_psnr > 30.0 && gap >= -0.5 && secs < 900.0;
    report(4, "desk-scale convergence",
           {ok, format("quantized %.3f dB, unquantized %.3f dB (quantized - unquantized = %+.3f dB, must be >= -0.5), "
                       "both runs %.0f s",
                       q.eval.mean_psnr, raw.eval.mean_psnr, gap, secs)});
  }
  {
    const auto rep = storage_report(q.result.cloud);
    const double coded = double(rep.table_bytes + rep.latent_stream_bytes);
    const double decoded = double(rep.decoded_quantized_float_bytes);
    const double baseline = kRawBytesPerGaussian * double(rep.gaussian_count);
    const bool ok = coded * 8.0 <= decoded && double(rep.total) < 0.3 * baseline;
    report(5, "compression",
           {ok, format("latent streams %.0f B vs %.0f B decoded (%.1fx), file %llu B = %.1f%% of raw baseline "
                       "(%.1f B/Gaussian)",
                       coded, decoded, decoded / coded, (unsigned long long)rep.total,
                       100.0 * double(rep.total) / baseline, double(rep.total) / double(rep.gaussian_count))});
  }

  const Run no_prune = run_training(scene, no_prune_cfg, "influence pruning disabled");
  {
    const double reduction = 1.0 - double(q.result.cloud.size()) / double(no_prune.result.cloud.size());
    const double drop = no_prune.eval.mean_psnr - q.eval.mean_psnr;
    const long final_prune = last_event(q.result.log, "prune_influence");
    const double render_q = mean_over(q.result.log, final_prune, base.total_iters, false);
    const double render_p = mean_over(no_prune.result.log, final_prune, base.total_iters, false);
    const bool ok = final_prune > 0 && reduction >= 0.25 && drop <= 0.3 && render_q < render_p;
    report(6, "pruning efficiency",
           {ok, format("%zu vs %zu Gaussians (-%.1f%%), PSNR drop %.3f dB, render after iter %ld: %.2f vs %.2f ms",
                       q.result.cloud.size(), no_prune.result.cloud.size(), 100.0 * reduction, drop, final_prune,
                       render_q, render_p)});
  }

  const Run flat = run_training(scene, flat_cfg, "progressive none");
  {
    const Outcome exact = progressive_schedule_exact();
    const long horizon = long(base.progressive.duration_fraction * double(base.total_iters));
    const double step_q = mean_over(q.result.log, 0, horizon, true);
    const double step_n = mean_over(flat.result.log, 0, horizon, true);
    report(7, "progressive schedule",
           {exact.pass && step_q < step_n,
            exact.detail + format("; mean iteration over iters 1-%ld: downsample %.2f ms vs none %.2f ms", horizon,
                                  step_q, step_n)});
  }
  {
    const double with_q = fraction_in_open_range(q.result.cloud.opacity.decoded(), 0.05, 0.95);
    const double without = fraction_in_open_range(raw.result.cloud.opacity.decoded(), 0.05, 0.95);
    report(8, "opacity spread",
           {with_q > without,
            format("share of opacities in (0.05, 0.95): quantized %.3f, unquantized %.3f", with_q, without)});
  }

}

}  // namespace
