#pragma once

// Dense-array substrate shared by every other module: channel-last feature
// maps, flat grids, affine maps and the bilinear sampler with its adjoint.
// Everything is float64, row-major, channel-last.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vgocc/error.hpp"

namespace vgocc {

/// Per-camera H x W x C feature image, stored (row, col, channel).
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {
    require(h > 0 && w > 0 && c > 0, "FeatureMap extents must be positive");
  }

  std::size_t offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * width + col) * channels;
  }
  double& at(int row, int col, int ch) { return data[offset(row, col) + ch]; }
  double at(int row, int col, int ch) const { return data[offset(row, col) + ch]; }

  std::span<double> pixel(int row, int col) {
    return {data.data() + offset(row, col), static_cast<std::size_t>(channels)};
  }
  std::span<const double> pixel(int row, int col) const {
    return {data.data() + offset(row, col), static_cast<std::size_t>(channels)};
  }

  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }
};

/// Flat row-major array with an explicit shape.
struct DenseGrid {
  std::vector<int> shape;
  std::vector<double> data;

  DenseGrid() = default;
  explicit DenseGrid(std::vector<int> extents) : shape(std::move(extents)) {
    std::size_t n = 1;
    for (int e : shape) {
      require(e > 0, "DenseGrid extents must be positive");
      n *= static_cast<std::size_t>(e);
    }
    data.assign(n, 0.0);
  }

  std::size_t size() const { return data.size(); }
};

/// y = W x + b with W stored out_dim x in_dim row-major.
struct AffineMap {
  int out_dim = 0;
  int in_dim = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  AffineMap() = default;
  AffineMap(int out, int in)
      : out_dim(out), in_dim(in),
        weight(static_cast<std::size_t>(out) * in, 0.0),
        bias(static_cast<std::size_t>(out), 0.0) {
    require(out > 0 && in > 0, "AffineMap dimensions must be positive");
  }

  static AffineMap identity(int n) {
    AffineMap m(n, n);
    for (int i = 0; i < n; ++i) m.weight[static_cast<std::size_t>(i) * n + i] = 1.0;
    return m;
  }

  double w(int r, int c) const { return weight[static_cast<std::size_t>(r) * in_dim + c]; }
  double& w(int r, int c) { return weight[static_cast<std::size_t>(r) * in_dim + c]; }

  AffineMap zeros_like() const { return AffineMap(out_dim, in_dim); }

  /// Unchecked hot-path application; spans must already have the right size.
  void apply_into(std::span<const double> x, std::span<double> y) const {
    const double* wr = weight.data();
    for (int r = 0; r < out_dim; ++r, wr += in_dim) {
      double acc = bias[r];
      for (int c = 0; c < in_dim; ++c) acc += wr[c] * x[c];
      y[r] = acc;
    }
  }

  /// Accumulates dL/dW, dL/db into `grad` and adds W^T dy into `dx` (if non-empty).
  void backward(std::span<const double> x, std::span<const double> dy, AffineMap& grad,
                std::span<double> dx) const {
    for (int r = 0; r < out_dim; ++r) {
      const double g = dy[r];
      if (g == 0.0) continue;
      grad.bias[r] += g;
      double* gw = grad.weight.data() + static_cast<std::size_t>(r) * in_dim;
      const double* wr = weight.data() + static_cast<std::size_t>(r) * in_dim;
      for (int c = 0; c < in_dim; ++c) gw[c] += g * x[c];
      if (!dx.empty())
        for (int c = 0; c < in_dim; ++c) dx[c] += g * wr[c];
    }
  }

  void for_each_buffer(const std::function<void(std::vector<double>&)>& f) {
    f(weight);
    f(bias);
  }
  void for_each_buffer(const std::function<void(const std::vector<double>&)>& f) const {
    f(weight);
    f(bias);
  }
};

inline std::vector<double> affine_apply(const AffineMap& m, std::span<const double> x) {
  require(static_cast<int>(x.size()) == m.in_dim,
          "affine_apply: input has " + std::to_string(x.size()) + " entries, map expects " +
              std::to_string(m.in_dim));
  std::vector<double> y(static_cast<std::size_t>(m.out_dim));
  m.apply_into(x, y);
  return y;
}

/// Numerically shifted softmax, written into `out` (may alias `logits`).
inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= sum;
}

inline std::vector<double> softmax_norm(std::span<const double> logits) {
  require(!logits.empty(), "softmax_norm: empty input");
  std::vector<double> out(logits.size());
  softmax_into(logits, out);
  return out;
}

/// Backward of softmax: dlogit_i = w_i (dw_i - sum_j w_j dw_j). Accumulates.
inline void softmax_backward(std::span<const double> weights, std::span<const double> dweights,
                             std::span<double> dlogits) {
  double dot = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) dot += weights[i] * dweights[i];
  for (std::size_t i = 0; i < weights.size(); ++i)
    dlogits[i] += weights[i] * (dweights[i] - dot);
}

// ---------------------------------------------------------------------------
// Bilinear sampling. uv = (column, row) in continuous pixel units; pixel
// centers sit on integers. Valid region is the closed box [0,W-1]x[0,H-1];
// anything outside yields zero and valid=false.

struct BilinearStencil {
  bool valid = false;
  int col0 = 0, col1 = 0, row0 = 0, row1 = 0;
  double fu = 0.0, fv = 0.0;

  std::array<double, 4> weights() const {
    return {(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
  }
};

inline BilinearStencil bilinear_stencil(int height, int width, double u, double v) {
  BilinearStencil s;
  if (!(u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1)) return s;
  s.valid = true;
  s.col0 = std::min(static_cast<int>(std::floor(u)), std::max(width - 2, 0));
  s.row0 = std::min(static_cast<int>(std::floor(v)), std::max(height - 2, 0));
  s.col1 = std::min(s.col0 + 1, width - 1);
  s.row1 = std::min(s.row0 + 1, height - 1);
  s.fu = u - s.col0;
  s.fv = v - s.row0;
  return s;
}

/// out += weight * sample(map, u, v). Returns validity.
inline bool bilinear_accumulate(const FeatureMap& map, double u, double v, double weight,
                                std::span<double> out) {
  const BilinearStencil s = bilinear_stencil(map.height, map.width, u, v);
  if (!s.valid) return false;
  const auto w = s.weights();
  const double* p00 = map.data.data() + map.offset(s.row0, s.col0);
  const double* p01 = map.data.data() + map.offset(s.row0, s.col1);
  const double* p10 = map.data.data() + map.offset(s.row1, s.col0);
  const double* p11 = map.data.data() + map.offset(s.row1, s.col1);
  const double w0 = weight * w[0], w1 = weight * w[1], w2 = weight * w[2], w3 = weight * w[3];
  for (int c = 0; c < map.channels; ++c)
    out[c] += w0 * p00[c] + w1 * p01[c] + w2 * p10[c] + w3 * p11[c];
  return true;
}

struct BilinearSample {
  std::vector<double> feature;
  bool valid = false;
};

inline BilinearSample bilinear_sample(const FeatureMap& map, double u, double v) {
  BilinearSample r{std::vector<double>(static_cast<std::size_t>(map.channels), 0.0), false};
  r.valid = bilinear_accumulate(map, u, v, 1.0, r.feature);
  return r;
}

struct PixelContribution {
  int row = 0;
  int col = 0;
  double weight = 0.0;  // d(sample)/d(pixel), same for every channel
};

struct BilinearGrad {
  std::array<double, 2> grad_uv{0.0, 0.0};
  std::array<PixelContribution, 4> pixels{};
  int count = 0;  // 0 when the sample was invalid

  /// Accumulates upstream-weighted pixel gradients into a map-shaped buffer.
  template <typename MapT>
  void scatter(std::span<const double> upstream, MapT& grad_map) const {
    for (int i = 0; i < count; ++i) {
      auto px = grad_map.pixel(pixels[i].row, pixels[i].col);
      for (std::size_t c = 0; c < px.size(); ++c) px[c] += pixels[i].weight * upstream[c];
    }
  }
};

/// Gradient of upstream . sample(map, u, v) with respect to (u, v) and the pixels.
inline BilinearGrad bilinear_sample_grad(const FeatureMap& map, double u, double v,
                                         std::span<const double> upstream) {
  BilinearGrad g;
  const BilinearStencil s = bilinear_stencil(map.height, map.width, u, v);
  if (!s.valid) return g;
  const double* p00 = map.data.data() + map.offset(s.row0, s.col0);
  const double* p01 = map.data.data() + map.offset(s.row0, s.col1);
  const double* p10 = map.data.data() + map.offset(s.row1, s.col0);
  const double* p11 = map.data.data() + map.offset(s.row1, s.col1);
  double a = 0, b = 0, c = 0, d = 0;
  for (int ch = 0; ch < map.channels; ++ch) {
    a += upstream[ch] * p00[ch];
    b += upstream[ch] * p01[ch];
    c += upstream[ch] * p10[ch];
    d += upstream[ch] * p11[ch];
  }
  // Degenerate single-pixel axes have no slope.
  const double du = s.col1 == s.col0 ? 0.0 : 1.0;
  const double dv = s.row1 == s.row0 ? 0.0 : 1.0;
  g.grad_uv[0] = du * ((1 - s.fv) * (b - a) + s.fv * (d - c));
  g.grad_uv[1] = dv * ((1 - s.fu) * (c - a) + s.fu * (d - b));
  const auto w = s.weights();
  g.pixels = {PixelContribution{s.row0, s.col0, w[0]}, PixelContribution{s.row0, s.col1, w[1]},
              PixelContribution{s.row1, s.col0, w[2]}, PixelContribution{s.row1, s.col1, w[3]}};
  g.count = 4;
  return g;
}

// ---------------------------------------------------------------------------
// Seeded initialisation helpers.

using Rng = std::mt19937_64;

inline void fill_normal(std::vector<double>& buf, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : buf) v = dist(rng);
}

inline void fill_uniform(std::vector<double>& buf, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : buf) v = dist(rng);
}

/// Weight ~ N(0, gain^2 / in_dim), zero bias.
inline AffineMap random_affine(int out, int in, Rng& rng, double gain = 1.0) {
  AffineMap m(out, in);
  fill_normal(m.weight, rng, gain / std::sqrt(static_cast<double>(in)));
  return m;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace vgocc
