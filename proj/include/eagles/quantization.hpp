#pragma once

// Quantized latent attributes: integer latents with continuous training
// shadows, straight-through rounding and per-attribute affine decoders.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eagles/core_math.hpp"
#include "eagles/error.hpp"

namespace eagles {

enum class AttributeId : std::uint8_t { kColorRest = 0, kRotation = 1, kOpacity = 2 };

inline constexpr std::array<AttributeId, 3> kLatentAttributes = {
    AttributeId::kColorRest, AttributeId::kRotation, AttributeId::kOpacity};

struct AttributeSpec {
  std::string_view name;
  int attribute_dim;   // k
  int latent_dim;      // l
  double decoder_std;  // init std of decoder weights
  double decoder_lr;
  double latent_lr_scale;
};

inline constexpr AttributeSpec attribute_spec(AttributeId id) {
  switch (id) {
    case AttributeId::kColorRest: return {"color_rest", kShRestDim, 16, 0.0005, 1e-4, 1.0};
    case AttributeId::kRotation: return {"rotation", 4, 8, 0.01, 1e-4, 1.0};
    case AttributeId::kOpacity: return {"opacity", 1, 1, 0.5, 1e-4, 1.0};
  }
  return {"unknown", 0, 0, 0.0, 0.0, 0.0};
}

/// Frozen latents are stored as signed 16-bit values.
inline constexpr double kLatentMin = -32768.0;
inline constexpr double kLatentMax = 32767.0;

/// Nearest integer with ties away from zero, clamped to the 16-bit range.
template <typename T>
T quantize_latent(T shadow) {
  return std::round(std::clamp(shadow, T(kLatentMin), T(kLatentMax)));
}

enum class Rounding {
  kStraightThrough,  // forward rounds, backward passes through
  kPassThrough,      // forward skips rounding; the surrogate STE differentiates
};

/// Forward value of the straight-through estimator. Its gradient is the
/// identity, which every backward routine in this library assumes.
template <typename T>
std::vector<T> ste_round(std::span<const T> shadow) {
  std::vector<T> out(shadow.size());
  for (size_t i = 0; i < shadow.size(); ++i) out[i] = quantize_latent(shadow[i]);
  return out;
}

template <typename T>
struct LinearDecoder {
  AttributeId attribute = AttributeId::kOpacity;
  int rows = 0;  // attribute dim k
  int cols = 0;  // latent dim l
  std::vector<T> weight;  // k x l, row-major
  std::vector<T> bias;    // k

  T frobenius_norm() const {
    T s = 0;
    for (T w : weight) s += w * w;
    return std::sqrt(s);
  }

  template <typename U>
  LinearDecoder<U> cast() const {
    return {attribute, rows, cols, std::vector<U>(weight.begin(), weight.end()),
            std::vector<U>(bias.begin(), bias.end())};
  }

  bool operator==(const LinearDecoder&) const = default;
};

/// Box-Muller on top of a 64-bit Mersenne twister; unlike
/// std::normal_distribution the stream is identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
LinearDecoder<T> init_decoder(AttributeId id, std::uint64_t seed) {
  const AttributeSpec spec = attribute_spec(id);
  LinearDecoder<T> d;
  d.attribute = id;
  d.rows = spec.attribute_dim;
  d.cols = spec.latent_dim;
  d.weight.resize(size_t(d.rows) * d.cols);
  d.bias.assign(d.rows, T(0));
  Rng rng(seed);
  for (auto& w : d.weight) w = T(spec.decoder_std * rng.normal());
  return d;
}

/// Applies the decoder row by row: out_i = W latent_i + b.
template <typename T>
std::vector<T> decode(const LinearDecoder<T>& decoder, std::span<const T> latents) {
  const size_t l = decoder.cols, k = decoder.rows;
  require(l > 0 && latents.size() % l == 0, ErrorKind::kInvalidInput,
          "latent block width does not match decoder");
  const size_t n = latents.size() / l;
  std::vector<T> out(n * k);
  for (size_t i = 0; i < n; ++i) {
    const T* q = latents.data() + i * l;
    for (size_t r = 0; r < k; ++r) {
      const T* w = decoder.weight.data() + r * l;
      T acc = 0;
      for (size_t c = 0; c < l; ++c) acc += w[c] * q[c];
      out[i * k + r] = acc + decoder.bias[r];
    }
  }
  return out;
}

template <typename T>
struct DecoderGradient {
  std::vector<T> d_weight;
  std::vector<T> d_bias;
  std::vector<T> d_latent;  // with respect to the shadow, via STE
};

/// Backward of `decode`. `latents` are the values that were fed forward
/// (rounded during training); the latent gradient passes straight through.
template <typename T>
DecoderGradient<T> decode_backward(const LinearDecoder<T>& decoder, std::span<const T> latents,
                                   std::span<const T> d_attributes) {
  const size_t l = decoder.cols, k = decoder.rows;
  const size_t n = latents.size() / l;
  require(d_attributes.size() == n * k, ErrorKind::kInvalidInput, "gradient block size mismatch");
  DecoderGradient<T> g;
  g.d_weight.assign(k * l, T(0));
  g.d_bias.assign(k, T(0));
  g.d_latent.assign(n * l, T(0));
  for (size_t i = 0; i < n; ++i) {
    const T* q = latents.data() + i * l;
    const T* da = d_attributes.data() + i * k;
    T* dq = g.d_latent.data() + i * l;
    for (size_t r = 0; r < k; ++r) {
      if (da[r] == T(0)) continue;
      const T* w = decoder.weight.data() + r * l;
      T* dw = g.d_weight.data() + r * l;
      for (size_t c = 0; c < l; ++c) {
        dq[c] += w[c] * da[r];
        dw[c] += da[r] * q[c];
      }
      g.d_bias[r] += da[r];
    }
  }
  return g;
}

template <typename T>
struct LeastSquaresLatents {
  std::vector<T> shadow;  // N x l
  bool regularized = false;  // weight was column-rank deficient
};

/// Per-row argmin ||W q + b - a||. Rank-deficient weights fall back to a
/// ridge solve (lambda = 1e-10), which yields the minimum-norm solution.
template <typename T>
LeastSquaresLatents<T> init_latents_least_squares(const LinearDecoder<T>& decoder,
                                                  std::span<const T> attributes) {
  const int k = decoder.rows, l = decoder.cols;
  require(k > 0 && attributes.size() % size_t(k) == 0, ErrorKind::kInvalidInput,
          "attribute block width does not match decoder");
  const Eigen::Index n = Eigen::Index(attributes.size() / k);
  using MatX = Eigen::MatrixXd;
  MatX w(k, l);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < l; ++c) w(r, c) = double(decoder.weight[size_t(r) * l + c]);
  MatX rhs(k, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int r = 0; r < k; ++r) rhs(r, i) = double(attributes[size_t(i) * k + r]) - double(decoder.bias[r]);

  LeastSquaresLatents<T> out;
  Eigen::ColPivHouseholderQR<MatX> qr(w);
  MatX solution;
  if (qr.rank() == l) {
    solution = qr.solve(rhs);
  } else {
    out.regularized = true;
    const MatX normal = w.transpose() * w + 1e-10 * MatX::Identity(l, l);
    solution = normal.ldlt().solve(w.transpose() * rhs);
  }
  out.shadow.resize(size_t(n) * l);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < l; ++c) out.shadow[size_t(i) * l + c] = T(solution(c, i));
  return out;
}

/// base_lr * lr_scale / ||W||_F.
template <typename T>
double latent_learning_rate(double base_lr, double lr_scale, const LinearDecoder<T>& decoder) {
  const double norm = double(decoder.frobenius_norm());
  require(norm > 0.0 && std::isfinite(norm), ErrorKind::kConfiguration,
          "decoder norm must be positive to scale the latent learning rate");
  return base_lr * lr_scale / norm;
}

/// Storage for one decodable attribute. In quantized mode `values` holds the
/// N x l latent shadows behind `decoder`; in raw mode it holds the N x k
/// attribute values directly and the decoder is unused.
template <typename T>
struct LatentAttribute {
  AttributeId attribute = AttributeId::kOpacity;
  bool quantized = false;
  std::vector<T> values;
  LinearDecoder<T> decoder;

  int width() const {
    const auto spec = attribute_spec(attribute);
    return quantized ? spec.latent_dim : spec.attribute_dim;
  }
  int attribute_dim() const { return attribute_spec(attribute).attribute_dim; }
  size_t count() const { return width() > 0 ? values.size() / size_t(width()) : 0; }

  /// Latents fed to the decoder in the forward pass.
  std::vector<T> forward_latents(Rounding rounding) const {
    if (rounding == Rounding::kPassThrough) return values;
    return ste_round<T>(values);
  }

  std::vector<T> decoded(Rounding rounding = Rounding::kStraightThrough) const {
    if (!quantized) return values;
    const auto q = forward_latents(rounding);
    return decode<T>(decoder, q);
  }

  /// Integer snapshot written to disk.
  std::vector<std::int32_t> frozen() const {
    std::vector<std::int32_t> q(values.size());
    for (size_t i = 0; i < values.size(); ++i) q[i] = std::int32_t(quantize_latent(values[i]));
    return q;
  }

  static LatentAttribute make_raw(AttributeId id, std::vector<T> raw) {
    LatentAttribute a;
    a.attribute = id;
    a.quantized = false;
    a.values = std::move(raw);
    return a;
  }

  /// Quantized attribute initialized by inverting a fresh decoder.
  static LatentAttribute make_quantized(AttributeId id, std::span<const T> raw, std::uint64_t seed,
                                        bool* regularized = nullptr) {
    LatentAttribute a;
    a.attribute = id;
    a.quantized = true;
    a.decoder = init_decoder<T>(id, seed);
    auto ls = init_latents_least_squares<T>(a.decoder, raw);
    a.values = std::move(ls.shadow);
    if (regularized) *regularized = ls.regularized;
    return a;
  }

  template <typename U>
  LatentAttribute<U> cast() const {
    LatentAttribute<U> a;
    a.attribute = attribute;
    a.quantized = quantized;
    a.values.assign(values.begin(), values.end());
    a.decoder = decoder.template cast<U>();
    return a;
  }
};

/// Empirical Shannon entropy (bits/symbol) of an integer sequence.
inline double empirical_entropy_bits(std::span<const std::int32_t> symbols) {
  if (symbols.empty()) return 0.0;
  std::vector<std::int32_t> sorted(symbols.begin(), symbols.end());
  std::sort(sorted.begin(), sorted.end());
  double h = 0.0;
  const double n = double(sorted.size());
  for (size_t i = 0; i < sorted.size();) {
    size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double p = double(j - i) / n;
    h -= p * std::log2(p);
    i = j;
  }
  return h;
}

}  // namespace eagles
