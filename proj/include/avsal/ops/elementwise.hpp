#pragma once

#include <cmath>
#include <numbers>

#include "avsal/tensor.hpp"

namespace avsal {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` expressed over the coordinates of `out`, zero on broadcast axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto base = strides_of(in);
  const std::size_t lead = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) s[lead + i] = base[i];
  }
  return s;
}

/// Visits every output coordinate, passing the flat offsets into `a` and `b`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = numel_of(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t k = 0; k < n; ++k) {
    f(k, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (out[d] - 1);
      ob -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

/// Shared implementation of broadcasting binary ops. `fwd(a,b)` gives the
/// value; `da(a,b)` and `db(a,b)` give the partial derivatives.
template <class T, class Fwd, class Da, class Db>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, std::string_view name, Fwd fwd, Da da,
                    Db db) {
  if (a.shape() == b.shape()) {
    const auto x = a.data();
    const auto y = b.data();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
    return make_result<T>(a.shape(), std::move(out), name, {&a, &b},
                          [an = a.node(), bn = b.node(), da, db](const TensorNode<T>& o) {
                            T* ga = grad_sink(an);
                            T* gb = grad_sink(bn);
                            const auto& xa = an->data;
                            const auto& xb = bn->data;
                            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                              if (ga) ga[i] += o.grad[i] * da(xa[i], xb[i]);
                              if (gb) gb[i] += o.grad[i] * db(xa[i], xb[i]);
                            }
                          });
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), shape);
  auto sb = broadcast_strides(b.shape(), shape);
  std::vector<T> out(numel_of(shape));
  const auto x = a.data();
  const auto y = b.data();
  for_each_broadcast(shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) {
    out[k] = fwd(x[i], y[j]);
  });
  return make_result<T>(shape, std::move(out), name, {&a, &b},
                        [an = a.node(), bn = b.node(), shape, sa, sb, da,
                         db](const TensorNode<T>& o) {
                          T* ga = grad_sink(an);
                          T* gb = grad_sink(bn);
                          const auto& xa = an->data;
                          const auto& xb = bn->data;
                          for_each_broadcast(shape, sa, sb,
                                             [&](std::size_t k, std::size_t i, std::size_t j) {
                                               if (ga) ga[i] += o.grad[k] * da(xa[i], xb[j]);
                                               if (gb) gb[j] += o.grad[k] * db(xa[i], xb[j]);
                                             });
                        });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(const Tensor<T>& x, std::string_view name, Fwd fwd, Deriv deriv) {
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  return make_result<T>(x.shape(), std::move(out), name, {&x},
                        [xn = x.node(), deriv](const TensorNode<T>& o) {
                          T* g = grad_sink(xn);
                          if (!g) return;
                          for (std::size_t i = 0; i < o.grad.size(); ++i) {
                            g[i] += o.grad[i] * deriv(xn->data[i], o.data[i]);
                          }
                        });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op(
      x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, "sigmoid",
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// Exact GELU: x * Phi(x) with the Gaussian CDF written through erf.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary_op(
      x, "gelu", [](T v) { return v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary_op(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

enum class Activation { kSigmoid, kRelu, kGelu };

template <class T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::kSigmoid:
      return sigmoid(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kGelu:
      return gelu(x);
  }
  return x;
}

}  // namespace avsal
