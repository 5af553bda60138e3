#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "eagles/core_math.hpp"
#include "eagles/quantization.hpp"

namespace eagles {

/// Structure-of-arrays Gaussian set. Position, log-scale and the band-0
/// color are raw; view-dependent color, rotation and opacity are decodable
/// attributes (quantized latents or raw values).
template <typename T>
struct GaussianCloud {
  std::vector<T> positions;   // N x 3
  std::vector<T> log_scales;  // N x 3
  std::vector<T> sh_base;     // N x 3
  LatentAttribute<T> sh_rest{AttributeId::kColorRest, false, {}, {}};
  LatentAttribute<T> rotation{AttributeId::kRotation, false, {}, {}};
  LatentAttribute<T> opacity{AttributeId::kOpacity, false, {}, {}};

  size_t size() const { return positions.size() / 3; }

  Vec3<T> position(size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
  Vec3<T> log_scale(size_t i) const { return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]}; }

  LatentAttribute<T>& attribute(AttributeId id) {
    switch (id) {
      case AttributeId::kColorRest: return sh_rest;
      case AttributeId::kRotation: return rotation;
      default: return opacity;
    }
  }
  const LatentAttribute<T>& attribute(AttributeId id) const {
    return const_cast<GaussianCloud*>(this)->attribute(id);
  }

  /// Throws unless every array matches `size()`.
  void validate() const {
    const size_t n = size();
    require(positions.size() == 3 * n && log_scales.size() == 3 * n && sh_base.size() == 3 * n,
            ErrorKind::kInvalidInput, "raw attribute arrays differ in length");
    for (AttributeId id : kLatentAttributes) {
      const auto& a = attribute(id);
      require(a.values.size() == n * size_t(a.width()), ErrorKind::kInvalidInput,
              std::string(attribute_spec(id).name) + " array length does not match Gaussian count");
      if (a.quantized) {
        const auto spec = attribute_spec(id);
        require(a.decoder.rows == spec.attribute_dim && a.decoder.cols == spec.latent_dim &&
                    a.decoder.weight.size() == size_t(spec.attribute_dim * spec.latent_dim) &&
                    a.decoder.bias.size() == size_t(spec.attribute_dim),
                ErrorKind::kInvalidInput, std::string(spec.name) + " decoder shape mismatch");
      }
    }
  }

  template <typename U>
  GaussianCloud<U> cast() const {
    GaussianCloud<U> c;
    c.positions.assign(positions.begin(), positions.end());
    c.log_scales.assign(log_scales.begin(), log_scales.end());
    c.sh_base.assign(sh_base.begin(), sh_base.end());
    c.sh_rest = sh_rest.template cast<U>();
    c.rotation = rotation.template cast<U>();
    c.opacity = opacity.template cast<U>();
    return c;
  }
};

/// Attributes in render space: SH rest coefficients, raw (unnormalized)
/// quaternions and opacity pre-activations.
template <typename T>
struct DecodedAttributes {
  std::vector<T> sh_rest;   // N x 45
  std::vector<T> rotation;  // N x 4
  std::vector<T> opacity;   // N

  size_t size() const { return opacity.size(); }
  Vec4<T> quaternion(size_t i) const {
    return {rotation[4 * i], rotation[4 * i + 1], rotation[4 * i + 2], rotation[4 * i + 3]};
  }
};

template <typename T>
DecodedAttributes<T> decode_attributes(const GaussianCloud<T>& cloud,
                                       Rounding rounding = Rounding::kStraightThrough) {
  return {cloud.sh_rest.decoded(rounding), cloud.rotation.decoded(rounding),
          cloud.opacity.decoded(rounding)};
}

/// Raw-attribute initialization record used to build clouds.
template <typename T>
struct InitialAttributes {
  std::vector<T> positions, log_scales, sh_base, sh_rest, rotation, opacity;
};

template <typename T>
GaussianCloud<T> make_cloud(InitialAttributes<T> init, bool quantized, std::uint64_t seed,
                            std::vector<AttributeId>* regularized = nullptr) {
  GaussianCloud<T> c;
  c.positions = std::move(init.positions);
  c.log_scales = std::move(init.log_scales);
  c.sh_base = std::move(init.sh_base);
  auto build = [&](AttributeId id, std::vector<T>& raw, std::uint64_t s) {
    if (!quantized) return LatentAttribute<T>::make_raw(id, std::move(raw));
    bool reg = false;
    auto a = LatentAttribute<T>::make_quantized(id, raw, s, &reg);
    if (reg && regularized) regularized->push_back(id);
    return a;
  };
  c.sh_rest = build(AttributeId::kColorRest, init.sh_rest, seed * 3 + 1);
  c.rotation = build(AttributeId::kRotation, init.rotation, seed * 3 + 2);
  c.opacity = build(AttributeId::kOpacity, init.opacity, seed * 3 + 3);
  c.validate();
  return c;
}

}  // namespace eagles
