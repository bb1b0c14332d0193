#pragma once

#include <cmath>

#include "avsal/tensor.hpp"

namespace avsal {

namespace detail {

/// Normalizes groups of `members` entries spaced `stride` apart. `group_base`
/// maps a group index to the offset of its first member. Returns xhat and the
/// per-group inverse standard deviations.
template <class T, class Base>
void normalize_groups(const T* x, std::size_t groups, std::size_t members, std::size_t stride,
                      Base&& group_base, T eps, T* xhat, T* inv_std) {
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t b = group_base(g);
    T mu = 0;
    for (std::size_t m = 0; m < members; ++m) mu += x[b + m * stride];
    mu /= static_cast<T>(members);
    T var = 0;
    for (std::size_t m = 0; m < members; ++m) {
      const T d = x[b + m * stride] - mu;
      var += d * d;
    }
    var /= static_cast<T>(members);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[g] = is;
    for (std::size_t m = 0; m < members; ++m) xhat[b + m * stride] = (x[b + m * stride] - mu) * is;
  }
}

/// d/dx of xhat given d/dxhat, per group (the usual normalization backward).
template <class T, class Base>
void normalize_groups_backward(const T* gxhat, const T* xhat, const T* inv_std,
                               std::size_t groups, std::size_t members, std::size_t stride,
                               Base&& group_base, T* gx) {
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t b = group_base(g);
    T mg = 0, mgx = 0;
    for (std::size_t m = 0; m < members; ++m) {
      const std::size_t i = b + m * stride;
      mg += gxhat[i];
      mgx += gxhat[i] * xhat[i];
    }
    mg /= static_cast<T>(members);
    mgx /= static_cast<T>(members);
    for (std::size_t m = 0; m < members; ++m) {
      const std::size_t i = b + m * stride;
      gx[i] += inv_std[g] * (gxhat[i] - mg - xhat[i] * mgx);
    }
  }
}

}  // namespace detail

/// Layer normalization over the contiguous axis range [first, last]. `gamma`
/// and `beta` (optional, undefined for none) hold one value per normalized
/// entry.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t first, std::size_t last, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (!(eps > T(0))) throw ShapeError("layer_norm: eps must be positive");
  if (first > last || last >= x.ndim()) throw ShapeError("layer_norm: invalid axis range");
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t i = 0; i < first; ++i) outer *= x.dim(i);
  for (std::size_t i = first; i <= last; ++i) mid *= x.dim(i);
  for (std::size_t i = last + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  if (mid == 0) throw ShapeError("layer_norm: empty normalization group");
  if (gamma.defined() && gamma.numel() != mid) throw ShapeError("layer_norm: gamma size");
  if (beta.defined() && beta.numel() != mid) throw ShapeError("layer_norm: beta size");

  const std::size_t groups = outer * inner;
  auto base = [mid, inner](std::size_t g) { return (g / inner) * mid * inner + g % inner; };
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(groups);
  detail::normalize_groups(x.data().data(), groups, mid, inner, base, eps, xhat.data(),
                           inv_std.data());
  std::vector<T> out(xhat);
  if (gamma.defined() || beta.defined()) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t m = (i / inner) % mid;
      if (gamma.defined()) out[i] *= gamma.data()[m];
      if (beta.defined()) out[i] += beta.data()[m];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "layer_norm",
      {&x, gamma.defined() ? &gamma : nullptr, beta.defined() ? &beta : nullptr},
      [xn = x.node(), gn = gamma.defined() ? gamma.node() : nullptr,
       bn = beta.defined() ? beta.node() : nullptr, xhat = std::move(xhat),
       inv_std = std::move(inv_std), groups, mid, inner, base](const TensorNode<T>& o) {
        T* gx = detail::grad_sink(xn);
        T* gg = detail::grad_sink(gn);
        T* gb = detail::grad_sink(bn);
        std::vector<T> gxhat(o.grad);
        for (std::size_t i = 0; i < gxhat.size(); ++i) {
          const std::size_t m = (i / inner) % mid;
          if (gg) gg[m] += o.grad[i] * xhat[i];
          if (gb) gb[m] += o.grad[i];
          if (gn) gxhat[i] *= gn->data[m];
        }
        if (gx) {
          detail::normalize_groups_backward(gxhat.data(), xhat.data(), inv_std.data(), groups, mid,
                                            inner, base, gx);
        }
      });
}

/// Running statistics of a batch-norm layer (not differentiated).
template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
};

/// Batch normalization of [N, C, T, H, W] per channel. In training mode the
/// batch statistics normalize the input and update `state`; in eval mode the
/// running statistics are used.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training, T eps = T(1e-5)) {
  if (x.ndim() != 5) throw ShapeError("batch_norm: expected [N,C,T,H,W]");
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3) * x.dim(4);
  if (gamma.numel() != C || beta.numel() != C) throw ShapeError("batch_norm: affine size");
  if (state.running_mean.size() != C || state.running_var.size() != C) {
    throw ShapeError("batch_norm: running statistics size");
  }
  const std::size_t members = N * S;
  if (members == 0) throw ShapeError("batch_norm: empty batch");
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  std::vector<T> out(x.numel());

  if (!training) {
    std::vector<T> scale_c(C);
    for (std::size_t c = 0; c < C; ++c) {
      scale_c[c] = gv[c] / std::sqrt(state.running_var[c] + eps);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t b = (n * C + c) * S;
        for (std::size_t s = 0; s < S; ++s) {
          out[b + s] = (xv[b + s] - state.running_mean[c]) * scale_c[c] + bv[c];
        }
      }
    }
    std::vector<T> mean_c = state.running_mean;
    return detail::make_result<T>(
        x.shape(), std::move(out), "batch_norm_eval", {&x, &gamma, &beta},
        [xn = x.node(), gn = gamma.node(), bn = beta.node(), scale_c, mean_c, N, C, S,
         eps, var_c = state.running_var](const TensorNode<T>& o) {
          T* gx = detail::grad_sink(xn);
          T* gg = detail::grad_sink(gn);
          T* gb = detail::grad_sink(bn);
          for (std::size_t c = 0; c < C; ++c) {
            const T is = T(1) / std::sqrt(var_c[c] + eps);
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t b = (n * C + c) * S;
              for (std::size_t s = 0; s < S; ++s) {
                const T go = o.grad[b + s];
                if (gx) gx[b + s] += go * scale_c[c];
                if (gg) gg[c] += go * (xn->data[b + s] - mean_c[c]) * is;
                if (gb) gb[c] += go;
              }
            }
          }
        });
  }

  // Group c collects entries (n, c, s): offsets n*C*S + c*S + s.
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    T mu = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) mu += xv[(n * C + c) * S + s];
    mu /= static_cast<T>(members);
    T var = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const T d = xv[(n * C + c) * S + s] - mu;
        var += d * d;
      }
    var /= static_cast<T>(members);
    inv_std[c] = T(1) / std::sqrt(var + eps);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (n * C + c) * S + s;
        xhat[i] = (xv[i] - mu) * inv_std[c];
        out[i] = xhat[i] * gv[c] + bv[c];
      }
    const T unbiased = members > 1 ? var * static_cast<T>(members) / static_cast<T>(members - 1) : var;
    state.running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu;
    state.running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "batch_norm", {&x, &gamma, &beta},
      [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), N, C, S](const TensorNode<T>& o) {
        T* gx = detail::grad_sink(xn);
        T* gg = detail::grad_sink(gn);
        T* gb = detail::grad_sink(bn);
        const T members = static_cast<T>(N * S);
        for (std::size_t c = 0; c < C; ++c) {
          T mg = 0, mgx = 0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              const T go = o.grad[i];
              if (gg) gg[c] += go * xhat[i];
              if (gb) gb[c] += go;
              mg += go * gn->data[c];
              mgx += go * gn->data[c] * xhat[i];
            }
          if (!gx) continue;
          mg /= members;
          mgx /= members;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              gx[i] += inv_std[c] * (o.grad[i] * gn->data[c] - mg - xhat[i] * mgx);
            }
        }
      });
}

}  // namespace avsal
