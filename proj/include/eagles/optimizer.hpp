#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "eagles/error.hpp"

namespace eagles {

/// Source of each row after a cloud mutation: `source[new_row]` is the old
/// row it was copied from, or `kNewRow` for a freshly created Gaussian.
struct IndexMap {
  static constexpr std::ptrdiff_t kNewRow = -1;
  std::vector<std::ptrdiff_t> source;

  static IndexMap identity(size_t n) {
    IndexMap m;
    m.source.resize(n);
    for (size_t i = 0; i < n; ++i) m.source[i] = std::ptrdiff_t(i);
    return m;
  }

  size_t size() const { return source.size(); }

  bool is_identity(size_t old_size) const {
    if (source.size() != old_size) return false;
    for (size_t i = 0; i < source.size(); ++i)
      if (source[i] != std::ptrdiff_t(i)) return false;
    return true;
  }

  /// Row-wise gather; new rows are filled with `fill`.
  template <typename V>
  std::vector<V> apply(const std::vector<V>& old, size_t width, V fill = V{}) const {
    std::vector<V> out(source.size() * width, fill);
    for (size_t r = 0; r < source.size(); ++r) {
      if (source[r] == kNewRow) continue;
      for (size_t c = 0; c < width; ++c) out[r * width + c] = old[size_t(source[r]) * width + c];
    }
    return out;
  }

  /// Composition: first `*this`, then `next`.
  IndexMap then(const IndexMap& next) const {
    IndexMap m;
    m.source.resize(next.source.size());
    for (size_t r = 0; r < next.source.size(); ++r)
      m.source[r] = next.source[r] == kNewRow ? kNewRow : source[size_t(next.source[r])];
    return m;
  }
};

/// Adam with bias correction, one moment pair per parameter group.
template <typename T>
class AdamOptimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-15;

  struct Group {
    std::string name;
    double lr = 0;
    size_t row_width = 0;  // > 0 for per-Gaussian groups, 0 for shared ones
    std::vector<T> m, v;
    std::size_t step = 0;
  };

  /// Registers a group; returns its index.
  size_t add_group(std::string name, double lr, size_t size, size_t row_width) {
    Group g;
    g.name = std::move(name);
    g.lr = lr;
    g.row_width = row_width;
    g.m.assign(size, T(0));
    g.v.assign(size, T(0));
    groups_.push_back(std::move(g));
    return groups_.size() - 1;
  }

  Group& group(size_t i) { return groups_[i]; }
  const Group& group(size_t i) const { return groups_[i]; }
  size_t group_count() const { return groups_.size(); }

  /// One update of `params` in place. Each group keeps its own step counter.
  void step(size_t index, std::span<T> params, std::span<const T> grads) {
    Group& g = groups_[index];
    require(params.size() == g.m.size() && grads.size() == params.size(), ErrorKind::kInvalidInput,
            "optimizer group '" + g.name + "' shape mismatch");
    ++g.step;
    const double bc1 = 1.0 - std::pow(kBeta1, double(g.step));
    const double bc2 = 1.0 - std::pow(kBeta2, double(g.step));
    const T b1 = T(kBeta1), b2 = T(kBeta2);
    const T step_size = T(g.lr / bc1);
    const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
    for (size_t i = 0; i < params.size(); ++i) {
      const T gr = grads[i];
      g.m[i] = b1 * g.m[i] + (T(1) - b1) * gr;
      g.v[i] = b2 * g.v[i] + (T(1) - b2) * gr * gr;
      params[i] -= step_size * g.m[i] / (std::sqrt(g.v[i]) * inv_sqrt_bc2 + T(kEpsilon));
    }
  }

  /// Gathers the moments of every per-Gaussian group; new rows start at zero.
  void reindex(const IndexMap& map) {
    for (Group& g : groups_) {
      if (g.row_width == 0) continue;
      g.m = map.apply(g.m, g.row_width, T(0));
      g.v = map.apply(g.v, g.row_width, T(0));
    }
  }

 private:
  std::vector<Group> groups_;
};

}  // namespace eagles
