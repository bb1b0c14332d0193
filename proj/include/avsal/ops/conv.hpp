#pragma once

#include <array>

#include "avsal/tensor.hpp"

namespace avsal {

using Triple = std::array<std::size_t, 3>;

namespace detail {

struct ConvGeometry {
  std::size_t N, C, T, H, W;
  std::size_t Co, kT, kH, kW;
  Triple stride, pad;
  std::size_t To, Ho, Wo;

  std::size_t in_plane() const { return T * H * W; }
  std::size_t out_plane() const { return To * Ho * Wo; }
  std::size_t taps() const { return kT * kH * kW; }
};

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                 const char* axis) {
  if (s == 0) throw ShapeError(std::string("conv3d: zero stride on axis ") + axis);
  if (in + 2 * p < k) {
    throw ShapeError(std::string("conv3d: kernel larger than padded input on axis ") + axis);
  }
  return (in + 2 * p - k) / s + 1;
}

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Triple stride, Triple pad) {
  if (x.size() != 5) throw ShapeError("conv3d: input must be [N,C,T,H,W], got " + to_string(x));
  if (w.size() != 5) throw ShapeError("conv3d: kernel must be [Co,C,kT,kH,kW], got " + to_string(w));
  if (x[1] != w[1]) {
    throw ShapeError("conv3d: channel mismatch, input " + to_string(x) + " kernel " + to_string(w));
  }
  ConvGeometry g{x[0], x[1], x[2], x[3], x[4], w[0], w[2], w[3], w[4], stride, pad, 0, 0, 0};
  g.To = conv_out_size(g.T, g.kT, stride[0], pad[0], "T");
  g.Ho = conv_out_size(g.H, g.kH, stride[1], pad[1], "H");
  g.Wo = conv_out_size(g.W, g.kW, stride[2], pad[2], "W");
  return g;
}

/// Valid output range [lo, hi) along one axis for kernel tap k: those outputs
/// whose input coordinate o*s + k - p lands inside [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t in, std::size_t out,
                                                       std::size_t k, std::size_t s,
                                                       std::size_t p) {
  const long lo_num = static_cast<long>(p) - static_cast<long>(k);
  const long lo = lo_num <= 0 ? 0 : (lo_num + static_cast<long>(s) - 1) / static_cast<long>(s);
  const long hi_num = static_cast<long>(in) - 1 + static_cast<long>(p) - static_cast<long>(k);
  const long hi = hi_num < 0 ? 0 : hi_num / static_cast<long>(s) + 1;
  const long clamped_hi = std::min<long>(hi, static_cast<long>(out));
  if (lo >= clamped_hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(clamped_hi)};
}

/// Calls f(in_row, out_row, wo_lo, wo_hi) for every (t, h) output row touched
/// by tap (kt, kh, kw). in_row is the input offset read by output wo_lo; both
/// offsets are relative to one channel plane.
template <class F>
void for_each_tap_row(const ConvGeometry& g, std::size_t kt, std::size_t kh, std::size_t kw,
                      F&& f) {
  const auto [t_lo, t_hi] = valid_range(g.T, g.To, kt, g.stride[0], g.pad[0]);
  const auto [h_lo, h_hi] = valid_range(g.H, g.Ho, kh, g.stride[1], g.pad[1]);
  const auto [w_lo, w_hi] = valid_range(g.W, g.Wo, kw, g.stride[2], g.pad[2]);
  if (w_lo >= w_hi) return;
  for (std::size_t to = t_lo; to < t_hi; ++to) {
    const std::size_t ti = to * g.stride[0] + kt - g.pad[0];
    for (std::size_t ho = h_lo; ho < h_hi; ++ho) {
      const std::size_t hi = ho * g.stride[1] + kh - g.pad[1];
      const std::size_t wi0 = w_lo * g.stride[2] + kw - g.pad[2];
      f((ti * g.H + hi) * g.W + wi0, (to * g.Ho + ho) * g.Wo, w_lo, w_hi);
    }
  }
}

}  // namespace detail

/// Output shape of conv3d without running it.
inline Shape conv3d_shape(const Shape& x, const Shape& w, Triple stride, Triple pad) {
  const auto g = detail::conv_geometry(x, w, stride, pad);
  return {g.N, g.Co, g.To, g.Ho, g.Wo};
}

namespace detail {

/// Column buffer [C * taps][P] of one sample: row (c, tap) holds the input
/// value read by each output position, zero where the tap falls in padding.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t P = g.out_plane(), sw = g.stride[2];
  std::fill(col, col + g.C * g.taps() * P, T(0));
  for (std::size_t c = 0; c < g.C; ++c) {
    const T* ip = x + c * g.in_plane();
    for (std::size_t kt = 0; kt < g.kT; ++kt)
      for (std::size_t kh = 0; kh < g.kH; ++kh)
        for (std::size_t kw = 0; kw < g.kW; ++kw) {
          T* row = col + (c * g.taps() + (kt * g.kH + kh) * g.kW + kw) * P;
          for_each_tap_row(g, kt, kh, kw,
                           [&](std::size_t in_row, std::size_t out_row, std::size_t lo,
                               std::size_t hi) {
                             const T* src = ip + in_row;
                             T* dst = row + out_row;
                             for (std::size_t o = lo; o < hi; ++o) dst[o] = src[(o - lo) * sw];
                           });
        }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input.
template <class T>
void col2im(const ConvGeometry& g, const T* gcol, T* gx) {
  const std::size_t P = g.out_plane(), sw = g.stride[2];
  for (std::size_t c = 0; c < g.C; ++c) {
    T* gp = gx + c * g.in_plane();
    for (std::size_t kt = 0; kt < g.kT; ++kt)
      for (std::size_t kh = 0; kh < g.kH; ++kh)
        for (std::size_t kw = 0; kw < g.kW; ++kw) {
          const T* row = gcol + (c * g.taps() + (kt * g.kH + kh) * g.kW + kw) * P;
          for_each_tap_row(g, kt, kh, kw,
                           [&](std::size_t in_row, std::size_t out_row, std::size_t lo,
                               std::size_t hi) {
                             T* dst = gp + in_row;
                             const T* src = row + out_row;
                             for (std::size_t o = lo; o < hi; ++o) dst[(o - lo) * sw] += src[o];
                           });
        }
  }
}

/// Dot product with eight interleaved partial sums (fixed order, vectorizable).
template <class T>
T dot_lanes(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  for (std::size_t l = 0; i < n; ++i, ++l) lane[l] += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

}  // namespace detail

/// 3D convolution (cross-correlation) with zero padding. Every output
/// accumulates its terms in (c, kt, kh, kw) order and adds the bias last.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Triple stride,
                 Triple pad) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), stride, pad);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.Co)) {
    throw ShapeError("conv3d: bias must be [Co]");
  }
  const std::size_t P = g.out_plane(), K = g.C * g.taps();
  std::vector<T> col(g.N * K * P);
  std::vector<T> out(g.N * g.Co * P, T(0));
  const T* wv = w.data().data();
  for (std::size_t n = 0; n < g.N; ++n) {
    T* cn = col.data() + n * K * P;
    detail::im2col(g, x.data().data() + n * g.C * g.in_plane(), cn);
    for (std::size_t co = 0; co < g.Co; ++co) {
      T* op = out.data() + (n * g.Co + co) * P;
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = wv[co * K + k];
        const T* cp = cn + k * P;
        for (std::size_t p = 0; p < P; ++p) op[p] += wk * cp[p];
      }
      if (bias.defined()) {
        const T b = bias.data()[co];
        for (std::size_t p = 0; p < P; ++p) op[p] += b;
      }
    }
  }
  const Tensor<T>* bias_ptr = bias.defined() ? &bias : nullptr;
  const bool need_col = w.requires_grad();
  return detail::make_result<T>(
      {g.N, g.Co, g.To, g.Ho, g.Wo}, std::move(out), "conv3d", {&x, &w, bias_ptr},
      [wn = w.node(), xn = x.node(), bn = bias.defined() ? bias.node() : nullptr, g, P, K,
       col = need_col ? std::move(col) : std::vector<T>{}](const TensorNode<T>& o) {
        T* gx = detail::grad_sink(xn);
        T* gw = detail::grad_sink(wn);
        T* gb = detail::grad_sink(bn);
        const T* go = o.grad.data();
        std::vector<T> gcol(gx ? K * P : 0);
        for (std::size_t n = 0; n < g.N; ++n) {
          if (gx) std::fill(gcol.begin(), gcol.end(), T(0));
          for (std::size_t co = 0; co < g.Co; ++co) {
            const T* gop = go + (n * g.Co + co) * P;
            if (gb) {
              T acc = 0;
              for (std::size_t p = 0; p < P; ++p) acc += gop[p];
              gb[co] += acc;
            }
            for (std::size_t k = 0; k < K; ++k) {
              if (gw) gw[co * K + k] += detail::dot_lanes(gop, col.data() + (n * K + k) * P, P);
              if (gx) {
                const T wk = wn->data[co * K + k];
                T* gcp = gcol.data() + k * P;
                for (std::size_t p = 0; p < P; ++p) gcp[p] += wk * gop[p];
              }
            }
          }
          if (gx) detail::col2im(g, gcol.data(), gx + n * g.C * g.in_plane());
        }
      });
}

template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, Triple stride = {1, 1, 1},
                 Triple pad = {0, 0, 0}) {
  return conv3d(x, w, Tensor<T>(), stride, pad);
}

}  // namespace avsal
