#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <span>
#include <vector>

#include "vgocc/numerics.hpp"
#include "vgocc/temporal_stream.hpp"

namespace vgocc::testing {

inline FeatureMap random_map(int h, int w, int c, Rng& rng, double scale = 1.0) {
  FeatureMap m(h, w, c);
  fill_normal(m.data, rng, scale);
  return m;
}

inline std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  fill_normal(v, rng, scale);
  return v;
}

/// Central differences of f over every entry of `buf`.
inline std::vector<double> numeric_grad(std::vector<double>& buf, const std::function<double()>& f,
                                        double h = 1e-6) {
  std::vector<double> g(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double keep = buf[i];
    buf[i] = keep + h;
    const double fp = f();
    buf[i] = keep - h;
    const double fm = f();
    buf[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|) in the 2-norm; 0 when both vanish.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  if (den < 1e-14) return std::sqrt(d);
  return std::sqrt(d) / den;
}

/// Smooth static world field sin(a x + c) cos(b y), seen from `ego` (ego -> world).
struct WaveField {
  double a = 0.9, b = 0.6;

  double value(const Vec2& xy, int c) const { return std::sin(a * xy.x() + 0.7 * c) * std::cos(b * xy.y()); }
  /// Bilinear interpolation error bound for cell pitch h.
  double interpolation_bound(double h) const { return h * h * (a * a + b * b) / 8.0; }

  BEVGrid render(int n, int c, double pitch, const Pose& ego) const {
    BEVGrid g(n, n, c, pitch, Vec2(-0.5 * n * pitch, -0.5 * n * pitch));
    for (int h = 0; h < n; ++h)
      for (int w = 0; w < n; ++w) {
        const Vec3 x = ego.apply(Vec3(g.cell_center(h, w).x(), g.cell_center(h, w).y(), 0.0));
        for (int k = 0; k < c; ++k) g.features.at(h, w, k) = value(x.head<2>(), k);
      }
    return g;
  }
};

/// Mean |warp(prev) - current| over cells whose pull point lies inside prev.
inline double warp_overlap_error(const BEVGrid& warped, const BEVGrid& current, const Pose& rel) {
  const Pose inv = rel.inverse();
  double sum = 0;
  std::size_t n = 0;
  for (int h = 0; h < current.height(); ++h)
    for (int w = 0; w < current.width(); ++w) {
      const Vec3 xp = inv.apply(Vec3(current.cell_center(h, w).x(), current.cell_center(h, w).y(), 0.0));
      const Vec2 uv = current.to_cell(xp.head<2>());
      if (uv.x() < 0 || uv.y() < 0 || uv.x() > current.width() - 1 || uv.y() > current.height() - 1) continue;
      for (int c = 0; c < current.channels(); ++c) {
        sum += std::abs(warped.features.at(h, w, c) - current.features.at(h, w, c));
        ++n;
      }
    }
  return n ? sum / n : 0.0;
}

/// Lovasz-softmax from the level-set form of the Lovasz extension,
/// f(m) = integral over t in [0,1] of Jaccard-loss({i : m_i >= t}).
inline double lovasz_oracle(std::span<const double> probs, int classes, std::span<const int> labels,
                            std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (mask[i]) idx.push_back(i);
  double total = 0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> m;
    std::vector<bool> fg;
    for (std::size_t i : idx) {
      fg.push_back(labels[i] == c);
      m.push_back(std::abs((labels[i] == c ? 1.0 : 0.0) - probs[i * classes + c]));
    }
    const double nfg = static_cast<double>(std::count(fg.begin(), fg.end(), true));
    if (nfg == 0) continue;
    ++present;
    const auto jaccard_loss = [&](double t) {
      double kept_fg = 0, extra = 0;
      for (std::size_t k = 0; k < m.size(); ++k) {
        const bool wrong = m[k] >= t;
        if (fg[k] && !wrong) kept_fg += 1;
        if (!fg[k] && wrong) extra += 1;
      }
      return 1.0 - kept_fg / (nfg + extra);
    };
    std::vector<double> levels(m);
    levels.push_back(0.0);
    levels.push_back(1.0);
    std::sort(levels.begin(), levels.end());
    // The integrand is constant on each (levels[k], levels[k+1]].
    for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
      const double a = levels[k], b = levels[k + 1];
      if (b > a) total += (b - a) * jaccard_loss(b);
    }
  }
  return present ? total / present : 0.0;
}

}  // namespace vgocc::testing
