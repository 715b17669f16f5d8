#pragma once

// Multi-head value/output mixing shared by the spatial and temporal
// deformable attention blocks:
//
//   out = sum_m  W_m (W'_m agg_m + b'_m) + b_m,   agg_m = sum_i A_mi s_mi
//
// Because every head's weights sum to one, applying W'_m to the aggregated
// sample is identical to applying it per sample and then aggregating.

#include <span>
#include <vector>

#include "vgocc/numerics.hpp"

namespace vgocc::detail {

/// agg: heads x channels. value_buf: heads x head_dim (written). out: channels (written).
inline void mix_heads_forward(const std::vector<AffineMap>& value_maps,
                              const std::vector<AffineMap>& output_maps,
                              std::span<const double> agg, std::span<double> value_buf,
                              std::span<double> out) {
  const std::size_t heads = value_maps.size();
  const std::size_t ch = static_cast<std::size_t>(value_maps.front().in_dim);
  const std::size_t hd = static_cast<std::size_t>(value_maps.front().out_dim);
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> tmp(ch);
  for (std::size_t m = 0; m < heads; ++m) {
    auto val = value_buf.subspan(m * hd, hd);
    value_maps[m].apply_into(agg.subspan(m * ch, ch), val);
    output_maps[m].apply_into(val, tmp);
    for (std::size_t c = 0; c < ch; ++c) out[c] += tmp[c];
  }
}

/// Accumulates map gradients and writes d(agg) (heads x channels, overwritten).
inline void mix_heads_backward(const std::vector<AffineMap>& value_maps,
                               const std::vector<AffineMap>& output_maps,
                               std::span<const double> agg, std::span<const double> value_buf,
                               std::span<const double> dout, std::vector<AffineMap>& gvalue,
                               std::vector<AffineMap>& goutput, std::span<double> dagg) {
  const std::size_t heads = value_maps.size();
  const std::size_t ch = static_cast<std::size_t>(value_maps.front().in_dim);
  const std::size_t hd = static_cast<std::size_t>(value_maps.front().out_dim);
  std::fill(dagg.begin(), dagg.end(), 0.0);
  std::vector<double> dval(hd);
  for (std::size_t m = 0; m < heads; ++m) {
    std::fill(dval.begin(), dval.end(), 0.0);
    output_maps[m].backward(value_buf.subspan(m * hd, hd), dout, goutput[m], dval);
    value_maps[m].backward(agg.subspan(m * ch, ch), dval, gvalue[m], dagg.subspan(m * ch, ch));
  }
}

/// Evenly spaced directions on a circle, used as a non-degenerate offset bias.
inline void star_bias(std::vector<double>& bias, int count, int dim, double radius) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  std::fill(bias.begin(), bias.end(), 0.0);
  for (int i = 0; i < count; ++i) {
    const double a = kTwoPi * i / count;
    bias[static_cast<std::size_t>(i) * dim + 0] = radius * std::cos(a);
    bias[static_cast<std::size_t>(i) * dim + 1] = radius * std::sin(a);
  }
}

}  // namespace vgocc::detail
