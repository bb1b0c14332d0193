#pragma once

#include <set>

#include "avsal/ops/elementwise.hpp"

namespace avsal {

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return detail::make_result<T>(std::move(shape), x.to_vector(), "reshape", {&x},
                                [xn = x.node()](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                                });
}

/// Output axis i is input axis perm[i].
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.ndim();
  if (perm.size() != r || std::set<std::size_t>(perm.begin(), perm.end()).size() != r ||
      *std::max_element(perm.begin(), perm.end()) >= r) {
    throw ShapeError("permute: invalid axis order for shape " + to_string(x.shape()));
  }
  Shape shape(r);
  const auto in_strides = strides_of(x.shape());
  std::vector<std::size_t> src(r);
  for (std::size_t i = 0; i < r; ++i) {
    shape[i] = x.dim(perm[i]);
    src[i] = in_strides[perm[i]];
  }
  const auto dst = strides_of(shape);
  std::vector<T> out(x.numel());
  const auto v = x.data();
  // src strides walk the input in output order; dst is the contiguous output.
  detail::for_each_broadcast(shape, src, dst,
                             [&](std::size_t, std::size_t i, std::size_t k) { out[k] = v[i]; });
  return detail::make_result<T>(shape, std::move(out), "permute", {&x},
                                [xn = x.node(), shape, src, dst](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  detail::for_each_broadcast(
                                      shape, src, dst,
                                      [&](std::size_t, std::size_t i, std::size_t k) {
                                        g[i] += o.grad[k];
                                      });
                                });
}

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && p.dim(d) != shape[d]) {
        throw ShapeError("concat: " + to_string(p.shape()) + " vs " + to_string(shape));
      }
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto sp = detail::split_at(shape, axis);
  std::vector<T> out(numel_of(shape));
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis);
    const auto v = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.begin() + o * len * sp.inner, len * sp.inner,
                  out.begin() + (o * total + off) * sp.inner);
    }
    off += len;
  }
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  bool any = false;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    any = any || p.requires_grad();
  }
  // make_result takes a fixed initializer list; pass the first grad-carrying part.
  const Tensor<T>* witness = &parts[0];
  for (const auto& p : parts) {
    if (p.requires_grad()) witness = &p;
  }
  return detail::make_result<T>(
      shape, std::move(out), "concat", {any ? witness : nullptr},
      [nodes, offsets, sp, total](const TensorNode<T>& o) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          T* g = detail::grad_sink(nodes[k]);
          if (!g) continue;
          const std::size_t len = nodes[k]->shape.empty() ? 1 : nodes[k]->data.size() / (sp.outer * sp.inner);
          for (std::size_t oi = 0; oi < sp.outer; ++oi) {
            const T* src = o.grad.data() + (oi * total + offsets[k]) * sp.inner;
            T* dst = g + oi * len * sp.inner;
            for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

/// Slice [start, start+len) along `axis`.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= x.ndim() || start + len > x.dim(axis)) throw ShapeError("narrow: out of range");
  Shape shape = x.shape();
  shape[axis] = len;
  const auto sp = detail::split_at(x.shape(), axis);
  std::vector<T> out(numel_of(shape));
  const auto v = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(v.begin() + (o * sp.axis + start) * sp.inner, len * sp.inner,
                out.begin() + o * len * sp.inner);
  }
  return detail::make_result<T>(shape, std::move(out), "narrow", {&x},
                                [xn = x.node(), sp, start, len](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  for (std::size_t oi = 0; oi < sp.outer; ++oi) {
                                    const T* src = o.grad.data() + oi * len * sp.inner;
                                    T* dst = g + (oi * sp.axis + start) * sp.inner;
                                    for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                                  }
                                });
}

/// Sum over `axes`. With keepdim the reduced axes stay as size 1.
template <class T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim = false) {
  Shape kept = x.shape();
  for (std::size_t a : axes) {
    if (a >= kept.size()) throw ShapeError("sum: axis out of range");
    kept[a] = 1;
  }
  const auto src = strides_of(x.shape());
  const auto dst = detail::broadcast_strides(kept, x.shape());
  std::vector<T> out(numel_of(kept), T(0));
  const auto v = x.data();
  detail::for_each_broadcast(x.shape(), src, dst,
                             [&](std::size_t, std::size_t i, std::size_t k) { out[k] += v[i]; });
  Shape shape;
  if (keepdim) {
    shape = kept;
  } else {
    for (std::size_t d = 0; d < kept.size(); ++d) {
      if (std::find(axes.begin(), axes.end(), d) == axes.end()) shape.push_back(kept[d]);
    }
  }
  return detail::make_result<T>(shape, std::move(out), "sum", {&x},
                                [xn = x.node(), src, dst](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  detail::for_each_broadcast(
                                      xn->shape, src, dst,
                                      [&](std::size_t, std::size_t i, std::size_t k) {
                                        g[i] += o.grad[k];
                                      });
                                });
}

/// Sum of every entry, as a scalar tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.ndim());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes, false);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim = false) {
  std::size_t count = 1;
  for (std::size_t a : axes) count *= x.dim(a);
  if (count == 0) throw ShapeError("mean: empty reduction");
  return scale(sum(x, axes, keepdim), T(1) / static_cast<T>(count));
}

/// Mean over T, H, W of an [N, C, T, H, W] tensor, giving [N, C].
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() != 5) throw ShapeError("global_avg_pool: expected [N,C,T,H,W]");
  if (x.dim(2) * x.dim(3) * x.dim(4) == 0) throw ShapeError("global_avg_pool: empty volume");
  return mean(x, {2, 3, 4}, false);
}

enum class ShiftBoundary { kCyclic, kZero };

/// Splits the channel axis (1) into `displacements.size()` contiguous groups and
/// shifts group g by displacements[g] positions along `axis`. Cyclic mode is a
/// permutation of entries; zero mode fills vacated positions with zero.
template <class T>
Tensor<T> channel_group_shift(const Tensor<T>& x, std::size_t axis,
                              const std::vector<int>& displacements,
                              ShiftBoundary boundary = ShiftBoundary::kCyclic) {
  if (x.ndim() < 3 || axis < 2 || axis >= x.ndim()) {
    throw ShapeError("channel_group_shift: axis must be a non-batch, non-channel axis");
  }
  const std::size_t channels = x.dim(1);
  const std::size_t groups = displacements.size();
  if (groups == 0 || groups > channels) {
    throw ShapeError("channel_group_shift: need 1..C displacement groups");
  }
  // Group sizes differ by at most one; earlier groups take the remainder.
  std::vector<int> shift_of(channels);
  {
    std::size_t c = 0;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t n = channels / groups + (g < channels % groups ? 1 : 0);
      for (std::size_t k = 0; k < n; ++k) shift_of[c++] = displacements[g];
    }
  }
  const auto sp = detail::split_at(x.shape(), axis);
  const std::size_t per_channel = sp.outer / x.dim(0) / channels;  // axes between C and `axis`
  const std::size_t len = sp.axis;
  // Destination index for every source entry, or npos when the entry falls off.
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dest(x.numel());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const int d = shift_of[(o / per_channel) % channels];
    for (std::size_t i = 0; i < len; ++i) {
      long j = static_cast<long>(i) + d;
      std::size_t target = npos;
      if (boundary == ShiftBoundary::kCyclic) {
        const long L = static_cast<long>(len);
        target = static_cast<std::size_t>(((j % L) + L) % L);
      } else if (j >= 0 && j < static_cast<long>(len)) {
        target = static_cast<std::size_t>(j);
      }
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t s = (o * len + i) * sp.inner + in;
        dest[s] = target == npos ? npos : (o * len + target) * sp.inner + in;
      }
    }
  }
  std::vector<T> out(x.numel(), T(0));
  const auto v = x.data();
  for (std::size_t s = 0; s < dest.size(); ++s) {
    if (dest[s] != npos) out[dest[s]] = v[s];
  }
  return detail::make_result<T>(x.shape(), std::move(out), "channel_group_shift", {&x},
                                [xn = x.node(), dest = std::move(dest)](const TensorNode<T>& o) {
                                  T* g = detail::grad_sink(xn);
                                  if (!g) return;
                                  for (std::size_t s = 0; s < dest.size(); ++s) {
                                    if (dest[s] != npos) g[s] += o.grad[dest[s]];
                                  }
                                });
}

}  // namespace avsal
