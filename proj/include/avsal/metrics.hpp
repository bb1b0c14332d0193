#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "avsal/error.hpp"

namespace avsal::metrics {

namespace detail {

inline void same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) throw ShapeError(std::string(what) + ": size mismatch");
}

inline double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(std::span<const double> v, double m) {
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline void require_normalized(std::span<const double> v, const char* what) {
  double s = 0;
  for (double x : v) {
    if (x < 0) throw NumericError(std::string(what) + ": negative density");
    s += x;
  }
  if (std::abs(s - 1.0) > 1e-6) throw NumericError(std::string(what) + ": not sum-normalized");
}

}  // namespace detail

/// Pearson correlation.
inline double cc(std::span<const double> gt, std::span<const double> pred) {
  detail::same_size(gt, pred, "cc");
  const double mg = detail::mean(gt), mp = detail::mean(pred);
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double a = pred[i] - mp, b = gt[i] - mg;
    ab += a * b;
    aa += a * a;
    bb += b * b;
  }
  if (!(aa > 0) || !(bb > 0)) throw NumericError("cc: zero variance");
  return ab / std::sqrt(aa * bb);
}

/// sum g log(eps + g / (s + eps)) over sum-normalized maps.
inline double kl(std::span<const double> gt, std::span<const double> pred, double eps = 1e-7) {
  detail::same_size(gt, pred, "kl");
  detail::require_normalized(gt, "kl");
  detail::require_normalized(pred, "kl");
  double s = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += gt[i] * std::log(eps + gt[i] / (pred[i] + eps));
  return s;
}

/// Histogram intersection of sum-normalized maps.
inline double sim(std::span<const double> gt, std::span<const double> pred) {
  detail::same_size(gt, pred, "sim");
  detail::require_normalized(gt, "sim");
  detail::require_normalized(pred, "sim");
  double s = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) s += std::min(gt[i], pred[i]);
  return s;
}

/// Mean z-scored prediction at fixated pixels (population std).
inline double nss(std::span<const double> pred, std::span<const double> fix) {
  detail::same_size(pred, fix, "nss");
  const double m = detail::mean(pred), sd = detail::stddev(pred, m);
  if (!(sd > 0)) throw NumericError("nss: zero variance prediction");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (fix[i] > 0) {
      s += (pred[i] - m) / sd;
      ++n;
    }
  }
  if (n == 0) throw NumericError("nss: no fixations");
  return s / static_cast<double>(n);
}

/// Judd ROC area. Thresholds are the distinct saliency values at fixations;
/// at each threshold TPR counts fixations and FPR non-fixated pixels with
/// saliency >= threshold. The curve runs from (0,0) to (1,1) and is
/// integrated with the trapezoid rule, so ties contribute half weight.
inline double auc_judd(std::span<const double> pred, std::span<const double> fix) {
  detail::same_size(pred, fix, "auc_judd");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pred.size(); ++i) (fix[i] > 0 ? pos : neg).push_back(pred[i]);
  if (pos.empty() || neg.empty()) throw NumericError("auc_judd: need fixated and non-fixated pixels");
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<double> thr(pos);
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  double auc = 0, px = 0, py = 0;
  std::size_t ip = 0, in = 0;
  for (double t : thr) {
    while (ip < pos.size() && pos[ip] >= t) ++ip;
    while (in < neg.size() && neg[in] >= t) ++in;
    const double x = static_cast<double>(in) / static_cast<double>(neg.size());
    const double y = static_cast<double>(ip) / static_cast<double>(pos.size());
    auc += (x - px) * (y + py) / 2;
    px = x;
    py = y;
  }
  auc += (1.0 - px) * (1.0 + py) / 2;
  return auc;
}

struct Scores {
  double cc = 0, nss = 0, auc_judd = 0, sim = 0, kl = 0;
};

/// All metrics for one prediction. `pred` is any nonnegative map; it is
/// sum-normalized for SIM and KL. A constant prediction scores CC = NSS = 0.
inline Scores evaluate(std::span<const double> pred, std::span<const double> gt_density,
                       std::span<const double> fixations, double eps = 1e-7) {
  std::vector<double> p(pred.begin(), pred.end());
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  if (!(total > 0)) throw NumericError("evaluate: prediction has no mass");
  for (double& v : p) v /= total;
  Scores s;
  const bool flat = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
  s.cc = flat ? 0.0 : cc(gt_density, pred);
  s.nss = flat ? 0.0 : nss(pred, fixations);
  s.auc_judd = auc_judd(pred, fixations);
  s.sim = sim(gt_density, p);
  s.kl = kl(gt_density, p, eps);
  return s;
}

/// Separable Gaussian blur of an H x W map with zero padding (truncated at 3 sigma).
inline std::vector<double> gaussian_blur(std::span<const double> img, std::size_t H, std::size_t W,
                                         double sigma) {
  if (img.size() != H * W) throw ShapeError("gaussian_blur: size mismatch");
  if (!(sigma > 0)) return {img.begin(), img.end()};
  const auto r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  for (long i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  const double ks = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= ks;
  std::vector<double> tmp(H * W, 0.0), out(H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (long i = -r; i <= r; ++i) {
        const long xx = static_cast<long>(x) + i;
        if (xx >= 0 && xx < static_cast<long>(W)) tmp[y * W + x] += k[i + r] * img[y * W + xx];
      }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (long i = -r; i <= r; ++i) {
        const long yy = static_cast<long>(y) + i;
        if (yy >= 0 && yy < static_cast<long>(H)) out[y * W + x] += k[i + r] * tmp[yy * W + x];
      }
  return out;
}

/// Blurred, sum-normalized density from a binary fixation map.
inline std::vector<double> density_from_fixations(std::span<const double> fix, std::size_t H,
                                                  std::size_t W, double sigma) {
  auto d = gaussian_blur(fix, H, W, sigma);
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  if (!(s > 0)) throw NumericError("density_from_fixations: no fixations");
  for (double& v : d) v /= s;
  return d;
}

}  // namespace avsal::metrics
