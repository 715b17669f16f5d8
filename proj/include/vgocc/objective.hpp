#pragma once

// Training objective (focal + cross-entropy + Lovasz-softmax + lambda * L1
// flow) and the evaluation metrics (mIoU, IoU_geo, mAVE).
//
// Each loss takes an optional gradient span; when non-empty the gradient of
// the returned scalar is *added* into it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vgocc/error.hpp"
#include "vgocc/flow_annotation.hpp"
#include "vgocc/grid.hpp"
#include "vgocc/numerics.hpp"

namespace vgocc {

inline constexpr int kFreeLabel = -1;

struct LossWeights {
  double lambda = 1.0;       // flow term weight
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  void validate() const {
    require(lambda >= 0.0, "lambda must be >= 0");
    require(focal_gamma >= 0.0, "focal gamma must be >= 0");
    require(focal_alpha >= 0.0 && focal_alpha <= 1.0, "focal alpha must lie in [0, 1]");
  }
};

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Mean over voxels of -alpha_t (1 - p_t)^gamma log p_t, p = sigmoid(logit).
inline double focal_loss(std::span<const double> logits, std::span<const std::uint8_t> labels,
                         double gamma, double alpha, std::span<double> grad = {}) {
  require(logits.size() == labels.size(), "focal_loss: logits and labels differ in length");
  if (logits.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    require(labels[i] <= 1, "focal_loss: labels must be binary");
    const double sign = labels[i] ? 1.0 : -1.0;
    const double pt = sigmoid(sign * logits[i]);
    const double at = labels[i] ? alpha : 1.0 - alpha;
    const double omp = 1.0 - pt;
    const double logpt = std::log(std::max(pt, 1e-12));
    const double mod = gamma == 0.0 ? 1.0 : std::pow(omp, gamma);
    total += -at * mod * logpt;
    if (!grad.empty()) {
      // d/dx = sign * (-a_t) [ -gamma (1-p_t)^gamma p_t log p_t + (1-p_t)^(gamma+1) ]
      const double dlog = pt > 1e-12 ? mod * omp : 0.0;
      const double dmod = gamma == 0.0 ? 0.0 : -gamma * mod * pt * logpt;
      grad[i] += inv_n * sign * (-at) * (dmod + dlog);
    }
  }
  return total * inv_n;
}

/// Mean -log softmax(true class) over masked voxels; 0 for an empty mask.
inline double cross_entropy(std::span<const double> logits, int num_classes,
                            std::span<const int> labels, std::span<const std::uint8_t> mask,
                            std::span<double> grad = {}) {
  require(logits.size() == labels.size() * num_classes, "cross_entropy: shape mismatch");
  require(mask.size() == labels.size(), "cross_entropy: mask shape mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (mask[i]) {
      require(labels[i] >= 0 && labels[i] < num_classes, "cross_entropy: label out of range");
      ++count;
    }
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<double> p(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    std::span<const double> row = logits.subspan(i * num_classes, num_classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[i]];
    if (!grad.empty()) {
      for (int c = 0; c < num_classes; ++c) {
        const double pc = std::exp(row[c] - lse);
        grad[i * num_classes + c] += inv * (pc - (c == labels[i] ? 1.0 : 0.0));
      }
    }
  }
  return total * inv;
}

/// Lovasz-softmax over masked voxels, averaged over classes present in the
/// masked labels. `grad` (if non-empty) receives d/d(probabilities).
inline double lovasz_softmax(std::span<const double> probs, int num_classes,
                             std::span<const int> labels, std::span<const std::uint8_t> mask,
                             std::span<double> grad = {}) {
  require(probs.size() == labels.size() * num_classes, "lovasz_softmax: shape mismatch");
  require(mask.size() == labels.size(), "lovasz_softmax: mask shape mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (mask[i]) {
      require(labels[i] >= 0 && labels[i] < num_classes, "lovasz_softmax: label out of range");
      idx.push_back(i);
    }
  if (idx.empty()) return 0.0;
  const std::size_t n = idx.size();
  std::vector<double> err(n);
  std::vector<std::uint8_t> fg(n);
  std::vector<std::size_t> order(n);
  std::vector<double> lov(n);
  int present = 0;
  double total = 0.0;
  struct ClassGrad {
    int cls;
    std::vector<std::size_t> order;
    std::vector<double> g;
  };
  std::vector<ClassGrad> cls_grads;
  for (int c = 0; c < num_classes; ++c) {
    double gts = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      fg[t] = labels[idx[t]] == c;
      gts += fg[t];
      err[t] = std::abs(fg[t] - probs[idx[t] * num_classes + c]);
    }
    if (gts == 0.0) continue;
    ++present;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    double cum_fg = 0.0, cum_bg = 0.0, prev_j = 0.0, loss_c = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t t = order[r];
      cum_fg += fg[t];
      cum_bg += 1.0 - fg[t];
      const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
      lov[r] = jac - prev_j;
      prev_j = jac;
      loss_c += err[t] * lov[r];
    }
    total += loss_c;
    if (!grad.empty()) cls_grads.push_back({c, order, lov});
  }
  if (present == 0) return 0.0;
  if (!grad.empty()) {
    const double inv = 1.0 / present;
    for (const auto& cg : cls_grads)
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t t = cg.order[r];
        const std::size_t i = idx[t];
        const double sgn = labels[i] == cg.cls ? -1.0 : 1.0;  // d|fg - p|/dp
        grad[i * num_classes + cg.cls] += inv * cg.g[r] * sgn;
      }
  }
  return total / present;
}

/// Lovasz-softmax evaluated on softmax(logits); gradient w.r.t. logits.
inline double lovasz_softmax_logits(std::span<const double> logits, int num_classes,
                                    std::span<const int> labels, std::span<const std::uint8_t> mask,
                                    std::span<double> grad = {}) {
  const std::size_t n = labels.size();
  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < n; ++i)
    softmax_into(logits.subspan(i * num_classes, num_classes),
                 std::span<double>(probs).subspan(i * num_classes, num_classes));
  if (grad.empty()) return lovasz_softmax(probs, num_classes, labels, mask);
  std::vector<double> gp(probs.size(), 0.0);
  const double v = lovasz_softmax(probs, num_classes, labels, mask, gp);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    softmax_backward(std::span<const double>(probs).subspan(i * num_classes, num_classes),
                     std::span<const double>(gp).subspan(i * num_classes, num_classes),
                     grad.subspan(i * num_classes, num_classes));
  }
  return v;
}

/// Mean over valid gt cells of |dvx| + |dvy|; 0 with no valid cell.
inline double l1_flow(std::span<const double> pred, const BEVFlowField& gt, std::span<double> grad = {}) {
  require(pred.size() == gt.flow.size(), "l1_flow: prediction grid does not match ground truth");
  std::size_t count = 0;
  for (auto v : gt.valid) count += v;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t c = 0; c < gt.cells(); ++c) {
    if (!gt.valid[c]) continue;
    for (int a = 0; a < 2; ++a) {
      const double d = pred[c * 2 + a] - gt.flow[c * 2 + a];
      total += std::abs(d);
      if (!grad.empty()) grad[c * 2 + a] += inv * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    }
  }
  return total * inv;
}

// ---------------------------------------------------------------------------

struct PredictionBundle {
  int num_classes = 0;
  std::vector<double> occ_logit;   // voxels
  std::vector<double> sem_logits;  // voxels x num_classes
  std::vector<double> bev_flow;    // cells x 2

  static PredictionBundle zeros(std::size_t voxels, std::size_t cells, int classes) {
    return {classes, std::vector<double>(voxels, 0.0),
            std::vector<double>(voxels * classes, 0.0), std::vector<double>(cells * 2, 0.0)};
  }
};

struct OccupancyTarget {
  std::vector<int> labels;  // per voxel, kFreeLabel where free
  BEVFlowField flow;
};

struct LossBreakdown {
  double focal = 0, ce = 0, lovasz = 0, l1 = 0, total = 0;
};

inline double combine_losses(double focal, double ce, double lovasz, double l1, double lambda) {
  return focal + ce + lovasz + lambda * l1;
}

/// L = L_focal + L_ce + L_ls + lambda * L_l1. Semantic terms run over
/// gt-occupied voxels only. `grad` (same shapes as `pred`) is accumulated.
inline LossBreakdown total_loss(const PredictionBundle& pred, const OccupancyTarget& gt,
                                const LossWeights& w, PredictionBundle* grad = nullptr) {
  w.validate();
  const std::size_t n = gt.labels.size();
  require(pred.occ_logit.size() == n && pred.sem_logits.size() == n * pred.num_classes,
          "total_loss: prediction shape does not match the target grid");
  std::vector<std::uint8_t> occ(n);
  for (std::size_t i = 0; i < n; ++i) occ[i] = gt.labels[i] != kFreeLabel;
  std::vector<int> sem(gt.labels);
  for (auto& l : sem) l = std::max(l, 0);  // free voxels are masked out below
  LossBreakdown b;
  const auto gspan = [&](std::vector<double>& v) { return grad ? std::span<double>(v) : std::span<double>(); };
  b.focal = focal_loss(pred.occ_logit, occ, w.focal_gamma, w.focal_alpha,
                       grad ? gspan(grad->occ_logit) : std::span<double>());
  b.ce = cross_entropy(pred.sem_logits, pred.num_classes, sem, occ,
                       grad ? gspan(grad->sem_logits) : std::span<double>());
  b.lovasz = lovasz_softmax_logits(pred.sem_logits, pred.num_classes, sem, occ,
                                   grad ? gspan(grad->sem_logits) : std::span<double>());
  if (grad && w.lambda > 0.0) {
    std::vector<double> gf(pred.bev_flow.size(), 0.0);
    b.l1 = l1_flow(pred.bev_flow, gt.flow, gf);
    for (std::size_t i = 0; i < gf.size(); ++i) grad->bev_flow[i] += w.lambda * gf[i];
  } else {
    b.l1 = l1_flow(pred.bev_flow, gt.flow);
  }
  b.total = combine_losses(b.focal, b.ce, b.lovasz, b.l1, w.lambda);
  return b;
}

// ---------------------------------------------------------------------------
// Metrics.

/// Intersection / union counts per class, accumulable over frames.
struct IouAccumulator {
  std::vector<int> classes;
  std::vector<double> inter, uni;
  double geo_inter = 0, geo_uni = 0;

  explicit IouAccumulator(std::vector<int> cls = {})
      : classes(std::move(cls)), inter(classes.size(), 0.0), uni(classes.size(), 0.0) {}

  void add(std::span<const int> pred, std::span<const int> gt, std::span<const std::uint8_t> mask) {
    require(pred.size() == gt.size() && (mask.empty() || mask.size() == gt.size()),
            "IoU inputs differ in size");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        const bool p = pred[i] == classes[c], g = gt[i] == classes[c];
        inter[c] += p && g;
        uni[c] += p || g;
      }
      const bool po = pred[i] != kFreeLabel, go = gt[i] != kFreeLabel;
      geo_inter += po && go;
      geo_uni += po || go;
    }
  }
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // nullopt where the union is empty
  double mean = 1.0;                             // 1 if every class is absent
};

inline MiouResult miou_from(const IouAccumulator& acc) {
  MiouResult r;
  double s = 0;
  int n = 0;
  for (std::size_t c = 0; c < acc.classes.size(); ++c) {
    if (acc.uni[c] == 0) {
      r.per_class.push_back(std::nullopt);
      continue;
    }
    const double iou = acc.inter[c] / acc.uni[c];
    r.per_class.push_back(iou);
    s += iou;
    ++n;
  }
  if (n > 0) r.mean = s / n;
  return r;
}

inline MiouResult miou(std::span<const int> pred, std::span<const int> gt, std::span<const int> classes,
                       std::span<const std::uint8_t> mask = {}) {
  IouAccumulator acc(std::vector<int>(classes.begin(), classes.end()));
  acc.add(pred, gt, mask);
  return miou_from(acc);
}

/// Class-agnostic occupancy IoU; two empty occupancies score 1.
inline double iou_geo(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                      std::span<const std::uint8_t> mask = {}) {
  require(pred.size() == gt.size(), "iou_geo inputs differ in size");
  double in = 0, un = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    in += pred[i] && gt[i];
    un += pred[i] || gt[i];
  }
  return un == 0 ? 1.0 : in / un;
}

struct AveAccumulator {
  std::vector<int> classes;
  std::vector<double> sum, count;

  explicit AveAccumulator(std::vector<int> cls = {})
      : classes(std::move(cls)), sum(classes.size(), 0.0), count(classes.size(), 0.0) {}

  void add(std::span<const double> pred, const BEVFlowField& gt, std::span<const int> category) {
    require(pred.size() == gt.flow.size() && category.size() == gt.cells(), "mAVE inputs differ in size");
    for (std::size_t cell = 0; cell < gt.cells(); ++cell) {
      if (!gt.valid[cell]) continue;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        if (category[cell] != classes[c]) continue;
        sum[c] += std::hypot(pred[cell * 2] - gt.flow[cell * 2], pred[cell * 2 + 1] - gt.flow[cell * 2 + 1]);
        count[c] += 1;
      }
    }
  }
};

struct MaveResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;  // 0 if no foreground cell exists
};

inline MaveResult mave_from(const AveAccumulator& acc) {
  MaveResult r;
  double s = 0;
  int n = 0;
  for (std::size_t c = 0; c < acc.classes.size(); ++c) {
    if (acc.count[c] == 0) {
      r.per_class.push_back(std::nullopt);
      continue;
    }
    const double ave = acc.sum[c] / acc.count[c];
    r.per_class.push_back(ave);
    s += ave;
    ++n;
  }
  if (n > 0) r.mean = s / n;
  return r;
}

inline MaveResult mave(std::span<const double> pred, const BEVFlowField& gt, std::span<const int> category,
                       std::span<const int> foreground) {
  AveAccumulator acc(std::vector<int>(foreground.begin(), foreground.end()));
  acc.add(pred, gt, category);
  return mave_from(acc);
}

// ---------------------------------------------------------------------------
// Resolution alignment: predictions on a coarse query grid are interpolated
// onto the ground-truth grid (trilinear for logits, nearest for labels).

class GridInterpolator {
 public:
  /// 3D trilinear when `planar` is false, 2D bilinear over (h, w) otherwise.
  GridInterpolator(const GridSpec& src, const GridSpec& dst, bool planar = false)
      : src_(src), dst_(dst), taps_(planar ? 4 : 8) {
    const std::size_t n = planar ? dst.cells() : dst.voxels();
    index_.resize(n * taps_);
    weight_.resize(n * taps_);
    auto axis = [&](double x, double o, int len, int& i0, int& i1, double& f) {
      double s = (x - o) / src.pitch - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(len - 1));
      i0 = std::min(static_cast<int>(std::floor(s)), std::max(len - 2, 0));
      i1 = std::min(i0 + 1, len - 1);
      f = s - i0;
    };
    for (std::size_t d = 0; d < n; ++d) {
      const Vec3 p = planar ? dst.center(0, static_cast<int>(d / dst.nx), static_cast<int>(d % dst.nx))
                            : dst.center(d);
      int w0, w1, h0, h1, z0 = 0, z1 = 0;
      double fw, fh, fz = 0;
      axis(p.x(), src.origin.x(), src.nx, w0, w1, fw);
      axis(p.y(), src.origin.y(), src.ny, h0, h1, fh);
      if (!planar) axis(p.z(), src.origin.z(), src.nz, z0, z1, fz);
      std::size_t t = d * taps_;
      for (int dz = 0; dz < (planar ? 1 : 2); ++dz)
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const int z = dz ? z1 : z0, h = dh ? h1 : h0, w = dw ? w1 : w0;
            index_[t] = planar ? static_cast<std::size_t>(h) * src.nx + w : src.index(z, h, w);
            weight_[t] = (planar ? 1.0 : (dz ? fz : 1 - fz)) * (dh ? fh : 1 - fh) * (dw ? fw : 1 - fw);
            ++t;
          }
    }
  }

  std::size_t dst_size() const { return index_.size() / taps_; }

  /// src: (src cells) x channels -> dst: (dst cells) x channels.
  std::vector<double> apply(std::span<const double> src, int channels) const {
    std::vector<double> out(dst_size() * channels, 0.0);
    for (std::size_t d = 0; d < dst_size(); ++d)
      for (std::size_t t = d * taps_; t < (d + 1) * taps_; ++t) {
        const double wt = weight_[t];
        if (wt == 0.0) continue;
        const double* s = src.data() + index_[t] * channels;
        double* o = out.data() + d * channels;
        for (int c = 0; c < channels; ++c) o[c] += wt * s[c];
      }
    return out;
  }

  /// Adjoint: accumulates d(src) from d(dst).
  void transpose_add(std::span<const double> ddst, int channels, std::span<double> dsrc) const {
    for (std::size_t d = 0; d < dst_size(); ++d)
      for (std::size_t t = d * taps_; t < (d + 1) * taps_; ++t) {
        const double wt = weight_[t];
        if (wt == 0.0) continue;
        double* s = dsrc.data() + index_[t] * channels;
        const double* o = ddst.data() + d * channels;
        for (int c = 0; c < channels; ++c) s[c] += wt * o[c];
      }
  }

 private:
  GridSpec src_, dst_;
  std::size_t taps_;
  std::vector<std::size_t> index_;
  std::vector<double> weight_;
};

/// Nearest-neighbour label transfer from src to dst voxel centres.
inline std::vector<int> nearest_upsample_labels(std::span<const int> src, const GridSpec& sg,
                                                const GridSpec& dg) {
  std::vector<int> out(dg.voxels(), kFreeLabel);
  for (std::size_t d = 0; d < dg.voxels(); ++d) {
    const Vec3 r = (dg.center(d) - sg.origin) / sg.pitch;
    const int w = std::clamp(static_cast<int>(std::floor(r.x())), 0, sg.nx - 1);
    const int h = std::clamp(static_cast<int>(std::floor(r.y())), 0, sg.ny - 1);
    const int z = std::clamp(static_cast<int>(std::floor(r.z())), 0, sg.nz - 1);
    out[d] = src[sg.index(z, h, w)];
  }
  return out;
}

}  // namespace vgocc
