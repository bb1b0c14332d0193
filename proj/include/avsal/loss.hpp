#pragma once

#include <cmath>
#include <string>

#include "avsal/ops.hpp"

namespace avsal {

enum class KlForm {
  kPrinted,   // sum g log(eps + g / (s + eps))
  kTextbook,  // sum_{g>0} g log(g / (s + eps))
};

namespace detail {

template <class T>
T normalization_tolerance() {
  return std::is_same_v<T, float> ? T(1e-4) : T(1e-9);
}

template <class T>
void require_sum_normalized(std::span<const T> v, const char* what) {
  long double s = 0;
  for (T x : v) {
    if (x < T(0)) throw NumericError(std::string(what) + " has negative entries");
    s += x;
  }
  if (std::abs(static_cast<double>(s) - 1.0) > normalization_tolerance<T>()) {
    throw NumericError(std::string(what) + " is not sum-normalized (sum " +
                       std::to_string(static_cast<double>(s)) + ")");
  }
}

}  // namespace detail

/// x / sum(x).
template <class T>
Tensor<T> normalize_sum(const Tensor<T>& x) {
  return div(x, sum(x));
}

/// Divergence of `pred` from `gt`; both must be sum-normalized. Gradient flows
/// to `pred` only.
template <class T>
Tensor<T> kl_div(const Tensor<T>& gt, const Tensor<T>& pred, T eps = T(1e-7),
                 KlForm form = KlForm::kPrinted) {
  if (gt.shape() != pred.shape()) throw ShapeError("kl_div: shape mismatch");
  if (!(eps > T(0))) throw NumericError("kl_div: eps must be positive");
  detail::require_sum_normalized(gt.data(), "kl_div ground truth");
  detail::require_sum_normalized(pred.data(), "kl_div prediction");
  const auto g = gt.data();
  const auto s = pred.data();
  T total = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (form == KlForm::kPrinted) {
      total += g[i] * std::log(eps + g[i] / (s[i] + eps));
    } else if (g[i] > T(0)) {
      total += g[i] * std::log(g[i] / (s[i] + eps));
    }
  }
  return detail::make_result<T>(
      {}, {total}, "kl_div", {&pred},
      [gn = gt.node(), pn = pred.node(), eps, form](const TensorNode<T>& o) {
        T* gp = detail::grad_sink(pn);
        if (!gp) return;
        const T up = o.grad[0];
        for (std::size_t i = 0; i < pn->data.size(); ++i) {
          const T gi = gn->data[i], d = pn->data[i] + eps;
          if (form == KlForm::kPrinted) {
            gp[i] += up * gi * (-gi / (d * d)) / (eps + gi / d);
          } else if (gi > T(0)) {
            gp[i] += up * (-gi / d);
          }
        }
      });
}

/// Pearson correlation of all entries. Zero variance in either map throws.
template <class T>
Tensor<T> cc(const Tensor<T>& gt, const Tensor<T>& pred) {
  if (gt.shape() != pred.shape()) throw ShapeError("cc: shape mismatch");
  const auto g = gt.data();
  const auto p = pred.data();
  const std::size_t n = g.size();
  T mg = 0, mp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mg += g[i];
    mp += p[i];
  }
  mg /= static_cast<T>(n);
  mp /= static_cast<T>(n);
  std::vector<T> a(n), b(n);
  T ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = p[i] - mp;
    b[i] = g[i] - mg;
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (!(aa > T(0)) || !(bb > T(0))) throw NumericError("cc: zero variance");
  const T na = std::sqrt(aa), nb = std::sqrt(bb);
  const T r = ab / (na * nb);
  return detail::make_result<T>({}, {r}, "cc", {&pred},
                                [pn = pred.node(), a = std::move(a), b = std::move(b), na, nb,
                                 r](const TensorNode<T>& o) {
                                  T* gp = detail::grad_sink(pn);
                                  if (!gp) return;
                                  const T up = o.grad[0];
                                  for (std::size_t i = 0; i < a.size(); ++i) {
                                    gp[i] += up * (b[i] / (na * nb) - r * a[i] / (na * na));
                                  }
                                });
}

struct LossConfig {
  double lambda_kl = 1.0;
  double lambda_cc = -1.0;
  double eps = 1e-7;
  KlForm form = KlForm::kPrinted;
};

/// lambda_kl * KL(gt, pred / sum(pred)) + lambda_cc * CC(gt, pred).
template <class T>
Tensor<T> composite_loss(const Tensor<T>& gt, const Tensor<T>& pred, const LossConfig& cfg = {}) {
  auto kl = kl_div(gt, normalize_sum(pred), static_cast<T>(cfg.eps), cfg.form);
  if (cfg.lambda_cc == 0.0) return scale(kl, static_cast<T>(cfg.lambda_kl));
  return scale(kl, static_cast<T>(cfg.lambda_kl)) + scale(cc(gt, pred), static_cast<T>(cfg.lambda_cc));
}

}  // namespace avsal
