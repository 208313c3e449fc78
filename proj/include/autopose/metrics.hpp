#pragma once

#include <array>
#include <optional>

#include "tensor.hpp"

namespace autopose {

// ---------------------------------------------------------------------------
// Keypoint containers
// ---------------------------------------------------------------------------

struct KeypointSet {
  std::vector<std::array<double, 2>> points;  // (x, y) in input-image pixels
  std::vector<int> visibility;                // 0 = absent, 1 = occluded, 2 = visible
  double scale = 1.0;                         // s = sqrt(instance area) in pixels
  std::vector<double> k;                      // per-keypoint falloff constants

  std::size_t size() const { return points.size(); }
};

// COCO Keypoint Challenge 2017 falloff constants (17 keypoints).
inline std::vector<double> coco_k_constants() {
  return {0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
          0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Plain (non-autodiff) masked heatmap MSE, for evaluation paths. pred/target
// {N,K,H,W}, vis {N,K}; invisible channels are excluded from the mean.
template <typename T>
double heatmap_mse(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& vis) {
  if (!pred.same_shape(target)) throw std::invalid_argument("heatmap_mse: shape mismatch");
  const int N = pred.shape[0], K = pred.shape[1], HW = pred.shape[2] * pred.shape[3];
  if (vis.shape != std::vector<int>{N, K}) throw std::invalid_argument("heatmap_mse: bad vis");
  double acc = 0.0;
  std::int64_t visible = 0;
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      if (!(vis.data[static_cast<std::size_t>(n) * K + k] > T(0))) continue;
      ++visible;
      const std::size_t base = (static_cast<std::size_t>(n) * K + k) * HW;
      for (int i = 0; i < HW; ++i) {
        const double d = static_cast<double>(pred.data[base + i]) - target.data[base + i];
        acc += d * d;
      }
    }
  return visible == 0 ? 0.0 : acc / (static_cast<double>(visible) * HW);
}

// ---------------------------------------------------------------------------
// Heatmap decoding
// ---------------------------------------------------------------------------

struct DecodedKeypoint {
  double x = 0, y = 0;  // input-image pixels
  double score = 0;     // peak heatmap value
};

// Argmax per channel (first maximum in scan order on ties), optional
// quarter-pixel shift toward the larger neighbor, then scaled to input
// pixels by `stride`.
template <typename T>
std::vector<DecodedKeypoint> decode_keypoints(const Tensor<T>& heatmaps, bool refine = true,
                                              int stride = 4) {
  if (heatmaps.shape.size() != 3) throw std::invalid_argument("decode_keypoints: expects {K,H,W}");
  const int K = heatmaps.shape[0], H = heatmaps.shape[1], W = heatmaps.shape[2];
  std::vector<DecodedKeypoint> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const T* p = heatmaps.data.data() + static_cast<std::size_t>(k) * H * W;
    int best = 0;
    for (int i = 1; i < H * W; ++i)
      if (p[i] > p[best]) best = i;
    const int by = best / W, bx = best % W;
    double x = bx, y = by;
    if (refine) {
      auto at = [&](int yy, int xx) { return static_cast<double>(p[yy * W + xx]); };
      if (bx > 0 && bx < W - 1) x += at(by, bx + 1) > at(by, bx - 1) ? 0.25 : -0.25;
      if (by > 0 && by < H - 1) y += at(by + 1, bx) > at(by - 1, bx) ? 0.25 : -0.25;
    }
    out[static_cast<std::size_t>(k)] = {x * stride, y * stride, static_cast<double>(p[best])};
  }
  return out;
}

// ---------------------------------------------------------------------------
// OKS
// ---------------------------------------------------------------------------

// Object keypoint similarity; empty when the ground truth has no visible
// keypoints (such instances are excluded from AP).
inline std::optional<double> oks(const KeypointSet& pred, const KeypointSet& gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("oks: keypoint count mismatch");
  if (gt.k.size() != gt.size()) throw std::invalid_argument("oks: missing k constants");
  if (!(gt.scale > 0)) throw std::invalid_argument("oks: nonpositive scale");
  double num = 0.0;
  int vis = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(gt.visibility[i] > 0)) continue;
    ++vis;
    const double dx = pred.points[i][0] - gt.points[i][0];
    const double dy = pred.points[i][1] - gt.points[i][1];
    const double denom = 2.0 * gt.scale * gt.scale * gt.k[i] * gt.k[i];
    num += std::exp(-(dx * dx + dy * dy) / denom);
  }
  if (vis == 0) return std::nullopt;
  return num / vis;
}

// ---------------------------------------------------------------------------
// Average precision / recall over OKS thresholds
// ---------------------------------------------------------------------------

struct InstancePrediction {
  KeypointSet kps;
  double score = 0.0;
};

struct InstanceGroundTruth {
  KeypointSet kps;
  double area = 0.0;  // pixel area for the M/L split
};

struct ApResult {
  double ap = -1, ap50 = -1, ap75 = -1, ap_m = -1, ap_l = -1, ar = -1;
};

inline std::vector<double> oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace detail_ap {

// Greedy matcher for one image at one threshold, detections visited in
// descending score; each detection takes the unmatched ground truth with the
// highest OKS at or above the threshold. Ground truths without visible
// keypoints or outside the area range are "ignored": they can absorb
// detections (which then drop out of scoring) but do not count as targets.
struct MatchOutcome {
  std::vector<int> dt_matched;  // per detection: 1 matched, 0 unmatched
  std::vector<int> dt_ignored;  // per detection: excluded from scoring
  int num_gt = 0;               // unignored ground truths
  int num_tp = 0;
};

inline MatchOutcome match_image(const std::vector<InstancePrediction>& dts,
                                const std::vector<InstanceGroundTruth>& gts, double thr,
                                double area_lo, double area_hi) {
  std::vector<int> order(dts.size());
  for (std::size_t i = 0; i < dts.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dts[static_cast<std::size_t>(a)].score >
                                              dts[static_cast<std::size_t>(b)].score; });
  std::vector<int> gt_ignored(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    bool any_vis = false;
    for (int v : gts[g].kps.visibility) any_vis = any_vis || v > 0;
    if (!any_vis || gts[g].area < area_lo || gts[g].area >= area_hi) gt_ignored[g] = 1;
  }
  MatchOutcome out;
  out.dt_matched.assign(dts.size(), 0);
  out.dt_ignored.assign(dts.size(), 0);
  for (int ig : gt_ignored)
    if (!ig) ++out.num_gt;
  std::vector<int> gt_used(gts.size(), 0);
  for (int d : order) {
    int best_g = -1;
    double best_oks = thr;
    // unignored ground truths take precedence over ignored ones
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gt_used[g] || (pass == 0) != (gt_ignored[g] == 0)) continue;
        auto o = oks(dts[static_cast<std::size_t>(d)].kps, gts[g].kps);
        if (!o) continue;
        if (*o >= best_oks) {
          best_oks = *o;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) break;
    }
    if (best_g >= 0) {
      gt_used[static_cast<std::size_t>(best_g)] = 1;
      if (gt_ignored[static_cast<std::size_t>(best_g)]) {
        out.dt_ignored[static_cast<std::size_t>(d)] = 1;
      } else {
        out.dt_matched[static_cast<std::size_t>(d)] = 1;
        ++out.num_tp;
      }
    } else {
      const double a = dts[static_cast<std::size_t>(d)].kps.scale *
                       dts[static_cast<std::size_t>(d)].kps.scale;
      if (a < area_lo || a >= area_hi) out.dt_ignored[static_cast<std::size_t>(d)] = 1;
    }
  }
  return out;
}

// 101-point interpolated average precision from globally score-ranked
// detections.
inline double interpolated_ap(std::vector<std::pair<double, int>>& scored, int num_gt) {
  if (num_gt == 0) return -1;
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& [score, is_tp] : scored) {
    is_tp ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / num_gt);
  }
  // monotone envelope
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<std::size_t>(i)] =
        std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i) + 1]);
  double ap = 0.0;
  std::size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    const double target = r / 100.0;
    while (j < recall.size() && recall[j] < target) ++j;
    ap += j < precision.size() ? precision[j] : 0.0;
  }
  return ap / 101.0;
}

struct RangeEval {
  double ap = -1, ar = -1, ap50 = -1, ap75 = -1;
};

inline RangeEval eval_range(const std::vector<std::vector<InstancePrediction>>& preds,
                            const std::vector<std::vector<InstanceGroundTruth>>& gts,
                            const std::vector<double>& thresholds, double lo, double hi) {
  RangeEval out;
  double ap_sum = 0, ar_sum = 0;
  int valid = 0;
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    std::vector<std::pair<double, int>> scored;
    int num_gt = 0, num_tp = 0;
    for (std::size_t img = 0; img < preds.size(); ++img) {
      auto m = match_image(preds[img], gts[img], thresholds[ti], lo, hi);
      num_gt += m.num_gt;
      num_tp += m.num_tp;
      for (std::size_t d = 0; d < preds[img].size(); ++d)
        if (!m.dt_ignored[d]) scored.push_back({preds[img][d].score, m.dt_matched[d]});
    }
    const double ap = interpolated_ap(scored, num_gt);
    if (ap < 0) continue;
    ++valid;
    ap_sum += ap;
    ar_sum += num_gt > 0 ? static_cast<double>(num_tp) / num_gt : 0.0;
    if (std::abs(thresholds[ti] - 0.50) < 1e-9) out.ap50 = ap;
    if (std::abs(thresholds[ti] - 0.75) < 1e-9) out.ap75 = ap;
  }
  if (valid > 0) {
    out.ap = ap_sum / valid;
    out.ar = ar_sum / valid;
  }
  return out;
}

}  // namespace detail_ap

inline ApResult average_precision(const std::vector<std::vector<InstancePrediction>>& preds,
                                  const std::vector<std::vector<InstanceGroundTruth>>& gts,
                                  const std::vector<double>& thresholds = oks_thresholds()) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("average_precision: image count mismatch");
  std::size_t total_gt = 0;
  for (const auto& g : gts) total_gt += g.size();
  if (total_gt == 0) throw std::invalid_argument("average_precision: empty ground truth set");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const double m_lo = 32.0 * 32.0, m_hi = 96.0 * 96.0;
  auto all = detail_ap::eval_range(preds, gts, thresholds, 0.0, kInf);
  auto med = detail_ap::eval_range(preds, gts, thresholds, m_lo, m_hi);
  auto lrg = detail_ap::eval_range(preds, gts, thresholds, m_hi, kInf);
  ApResult r;
  r.ap = all.ap;
  r.ap50 = all.ap50;
  r.ap75 = all.ap75;
  r.ar = all.ar;
  r.ap_m = med.ap;
  r.ap_l = lrg.ap;
  return r;
}

// ---------------------------------------------------------------------------
// PCK
// ---------------------------------------------------------------------------

struct PckResult {
  std::vector<double> per_joint;  // percentages, visible keypoints only
  double total = 0.0;
};

// d_i <= threshold * normalizer counts as correct (boundary inclusive).
inline PckResult pck(const std::vector<KeypointSet>& preds, const std::vector<KeypointSet>& gts,
                     const std::vector<double>& normalizers, double threshold = 0.5) {
  if (preds.size() != gts.size() || preds.size() != normalizers.size())
    throw std::invalid_argument("pck: instance count mismatch");
  if (preds.empty()) throw std::invalid_argument("pck: no instances");
  const std::size_t K = gts[0].size();
  std::vector<double> correct(K, 0.0), seen(K, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!(normalizers[i] > 0)) throw std::invalid_argument("pck: nonpositive normalizer");
    for (std::size_t k = 0; k < K; ++k) {
      if (!(gts[i].visibility[k] > 0)) continue;
      seen[k] += 1;
      const double dx = preds[i].points[k][0] - gts[i].points[k][0];
      const double dy = preds[i].points[k][1] - gts[i].points[k][1];
      if (std::sqrt(dx * dx + dy * dy) <= threshold * normalizers[i]) correct[k] += 1;
    }
  }
  PckResult r;
  double c = 0, s = 0;
  for (std::size_t k = 0; k < K; ++k) {
    r.per_joint.push_back(seen[k] > 0 ? 100.0 * correct[k] / seen[k] : 0.0);
    c += correct[k];
    s += seen[k];
  }
  r.total = s > 0 ? 100.0 * c / s : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Flip-averaged inference
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mirror_width(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) out.at4(n, c, i, j) = x.at4(n, c, i, W - 1 - j);
  return out;
}

// Averages fwd(image) with the un-mirrored, channel-swapped fwd(mirror(image)).
// flip_pairs lists (left, right) heatmap channel indices to swap.
template <typename T, typename F>
Tensor<T> flip_average_inference(F&& fwd, const Tensor<T>& images,
                                 const std::vector<std::pair<int, int>>& flip_pairs) {
  Tensor<T> plain = fwd(images);
  Tensor<T> flipped = fwd(mirror_width(images));
  const int K = plain.shape[1];
  std::vector<int> perm(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) perm[static_cast<std::size_t>(k)] = k;
  for (auto [l, r] : flip_pairs) {
    if (l < 0 || r < 0 || l >= K || r >= K || l == r)
      throw std::invalid_argument("flip_average: invalid flip pair");
    std::swap(perm[static_cast<std::size_t>(l)], perm[static_cast<std::size_t>(r)]);
  }
  Tensor<T> unflipped = mirror_width(flipped);
  Tensor<T> out(plain.shape);
  const int N = plain.shape[0], H = plain.shape[2], W = plain.shape[3];
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      const int src = perm[static_cast<std::size_t>(k)];
      for (int i = 0; i < H * W; ++i) {
        const std::size_t oi = (static_cast<std::size_t>(n) * K + k) * H * W + i;
        const std::size_t si = (static_cast<std::size_t>(n) * K + src) * H * W + i;
        out.data[oi] = static_cast<T>(0.5 * (plain.data[oi] + unflipped.data[si]));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// FLOPs accounting
// ---------------------------------------------------------------------------

struct ConvLayerSpec {
  std::string name;
  int kernel = 1, cin = 0, cout = 0, hout = 0, wout = 0;
};

// Analytic multiply-accumulate count for one convolution.
inline std::int64_t conv_macs(int kernel, int cin, int cout, int hout, int wout) {
  return static_cast<std::int64_t>(kernel) * kernel * cin * cout * hout * wout;
}

struct FlopReport {
  std::vector<std::pair<std::string, std::int64_t>> per_layer;
  std::int64_t macs = 0;
  std::int64_t flops() const { return 2 * macs; }  // 1 MAC = 2 FLOPs convention
};

// Pooling, skip connections and nearest-neighbor resampling count as zero.
inline FlopReport count_flops(const std::vector<ConvLayerSpec>& layers) {
  FlopReport r;
  for (const auto& l : layers) {
    const std::int64_t m = conv_macs(l.kernel, l.cin, l.cout, l.hout, l.wout);
    r.per_layer.push_back({l.name, m});
    r.macs += m;
  }
  return r;
}

}  // namespace autopose
