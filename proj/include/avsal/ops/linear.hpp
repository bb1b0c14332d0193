#pragma once

#include <cmath>

#include "avsal/ops/elementwise.hpp"
#include "avsal/ops/shape_ops.hpp"
#include "avsal/tensor.hpp"

namespace avsal {

/// [M, K] x [K, N] -> [M, N].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> out(M * N, T(0));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = av[i * K + k];
      for (std::size_t j = 0; j < N; ++j) out[i * N + j] += aik * bv[k * N + j];
    }
  return detail::make_result<T>({M, N}, std::move(out), "matmul", {&a, &b},
                                [an = a.node(), bn = b.node(), M, K, N](const TensorNode<T>& o) {
                                  T* ga = detail::grad_sink(an);
                                  T* gb = detail::grad_sink(bn);
                                  const T* g = o.grad.data();
                                  for (std::size_t i = 0; i < M; ++i)
                                    for (std::size_t k = 0; k < K; ++k) {
                                      T acc = 0;
                                      for (std::size_t j = 0; j < N; ++j) {
                                        if (ga) acc += g[i * N + j] * bn->data[k * N + j];
                                        if (gb) gb[k * N + j] += an->data[i * K + k] * g[i * N + j];
                                      }
                                      if (ga) ga[i * K + k] += acc;
                                    }
                                });
}

/// Affine map over the trailing axis: x[..., Din] -> x W^T + b, W is [Dout, Din].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.ndim() < 1 || weight.ndim() != 2 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " weight " +
                     to_string(weight.shape()));
  }
  const std::size_t Din = weight.dim(1), Dout = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Dout)) {
    throw ShapeError("linear: bias must be [Dout]");
  }
  const std::size_t rows = x.numel() / Din;
  Shape shape = x.shape();
  shape.back() = Dout;
  std::vector<T> out(rows * Dout);
  const T* xv = x.data().data();
  const T* wv = weight.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < Dout; ++o) {
      T acc = 0;
      for (std::size_t i = 0; i < Din; ++i) acc += xv[r * Din + i] * wv[o * Din + i];
      out[r * Dout + o] = bias.defined() ? acc + bias.data()[o] : acc;
    }
  return detail::make_result<T>(
      shape, std::move(out), "linear", {&x, &weight, bias.defined() ? &bias : nullptr},
      [xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr, rows, Din,
       Dout](const TensorNode<T>& o) {
        T* gx = detail::grad_sink(xn);
        T* gw = detail::grad_sink(wn);
        T* gb = detail::grad_sink(bn);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t oo = 0; oo < Dout; ++oo) {
            const T g = o.grad[r * Dout + oo];
            if (gb) gb[oo] += g;
            for (std::size_t i = 0; i < Din; ++i) {
              if (gx) gx[r * Din + i] += g * wn->data[oo * Din + i];
              if (gw) gw[oo * Din + i] += g * xn->data[r * Din + i];
            }
          }
      });
}

/// Numerically stable softmax along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim()) throw ShapeError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  std::vector<T> out(x.numel());
  const T* xv = x.data().data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t b = o * len * inner + in;
      T mx = xv[b];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[b + k * inner]);
      T s = 0;
      for (std::size_t k = 0; k < len; ++k) {
        out[b + k * inner] = std::exp(xv[b + k * inner] - mx);
        s += out[b + k * inner];
      }
      for (std::size_t k = 0; k < len; ++k) out[b + k * inner] /= s;
    }
  return detail::make_result<T>(x.shape(), std::move(out), "softmax", {&x},
                                [xn = x.node(), outer, inner, len](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  for (std::size_t oo = 0; oo < outer; ++oo)
                                    for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t b = oo * len * inner + in;
                                      T dot = 0;
                                      for (std::size_t k = 0; k < len; ++k)
                                        dot += o.grad[b + k * inner] * o.data[b + k * inner];
                                      for (std::size_t k = 0; k < len; ++k) {
                                        const std::size_t i = b + k * inner;
                                        g[i] += o.data[i] * (o.grad[i] - dot);
                                      }
                                    }
                                });
}

template <class T>
struct AttentionResult {
  Tensor<T> output;   // [L, D]
  Tensor<T> weights;  // [L, L_k]
};

/// softmax(Q K^T / sqrt(d)) V for 2-D operands.
template <class T>
AttentionResult<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  const T scale_by = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  auto w = softmax(scale(matmul(q, permute(k, {1, 0})), scale_by), 1);
  return {matmul(w, v), w};
}

}  // namespace avsal
