#pragma once

#include <array>
#include <cmath>

#include "avsal/tensor.hpp"

namespace avsal {

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

/// Half-pixel source coordinates (align_corners = false) for resizing one
/// axis from `in` to `out` samples. The source position is computed from an
/// exact integer numerator so that power-of-two scales round only once.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  for (std::size_t d = 0; d < out; ++d) {
    const long num = static_cast<long>((2 * d + 1) * in) - static_cast<long>(out);
    double src = num <= 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(2 * out);
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 >= in) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, i1 == i0 ? 0.0 : src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Trilinear resize of [N, C, T, H, W] to the given (T, H, W), half-pixel
/// sampling with edge clamping. Each axis blends with std::lerp, so constant
/// inputs stay exactly constant and outputs never leave the input's range.
template <class T>
Tensor<T> resize_trilinear(const Tensor<T>& x, Triple size) {
  if (x.ndim() != 5) throw ShapeError("resize_trilinear: expected [N,C,T,H,W]");
  if (x.numel() == 0) throw ShapeError("resize_trilinear: zero-size input");
  if (size[0] == 0 || size[1] == 0 || size[2] == 0) {
    throw ShapeError("resize_trilinear: zero-size output");
  }
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
  const auto tt = detail::lerp_taps(Ti, size[0]);
  const auto th = detail::lerp_taps(Hi, size[1]);
  const auto tw = detail::lerp_taps(Wi, size[2]);
  const std::size_t in_plane = Ti * Hi * Wi;
  const std::size_t out_plane = size[0] * size[1] * size[2];
  std::vector<T> out(planes * out_plane);
  const T* xv = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const T* ip = xv + p * in_plane;
    T* op = out.data() + p * out_plane;
    for (std::size_t t = 0; t < size[0]; ++t) {
      const auto& a = tt[t];
      for (std::size_t h = 0; h < size[1]; ++h) {
        const auto& b = th[h];
        for (std::size_t w = 0; w < size[2]; ++w) {
          const auto& c = tw[w];
          const T lw = static_cast<T>(c.frac), lh = static_cast<T>(b.frac),
                  lt = static_cast<T>(a.frac);
          auto at = [&](std::size_t ti, std::size_t hi, std::size_t wi) {
            return ip[(ti * Hi + hi) * Wi + wi];
          };
          auto plane = [&](std::size_t ti) {
            const T r0 = std::lerp(at(ti, b.i0, c.i0), at(ti, b.i0, c.i1), lw);
            const T r1 = std::lerp(at(ti, b.i1, c.i0), at(ti, b.i1, c.i1), lw);
            return std::lerp(r0, r1, lh);
          };
          op[(t * size[1] + h) * size[2] + w] = std::lerp(plane(a.i0), plane(a.i1), lt);
        }
      }
    }
  }
  Shape shape{x.dim(0), x.dim(1), size[0], size[1], size[2]};
  return detail::make_result<T>(
      shape, std::move(out), "resize_trilinear", {&x},
      [xn = x.node(), tt, th, tw, planes, in_plane, out_plane, Hi, Wi,
       size](const TensorNode<T>& o) {
        T* g = detail::grad_sink(xn);
        if (!g) return;
        for (std::size_t p = 0; p < planes; ++p) {
          T* gp = g + p * in_plane;
          const T* gop = o.grad.data() + p * out_plane;
          for (std::size_t t = 0; t < size[0]; ++t)
            for (std::size_t h = 0; h < size[1]; ++h)
              for (std::size_t w = 0; w < size[2]; ++w) {
                const T go = gop[(t * size[1] + h) * size[2] + w];
                const std::array<std::size_t, 2> ti{tt[t].i0, tt[t].i1}, hi{th[h].i0, th[h].i1},
                    wi{tw[w].i0, tw[w].i1};
                const std::array<T, 2> wt{T(1) - T(tt[t].frac), T(tt[t].frac)},
                    wh{T(1) - T(th[h].frac), T(th[h].frac)},
                    ww{T(1) - T(tw[w].frac), T(tw[w].frac)};
                for (int a = 0; a < 2; ++a)
                  for (int b = 0; b < 2; ++b)
                    for (int c = 0; c < 2; ++c) {
                      gp[(ti[a] * Hi + hi[b]) * Wi + wi[c]] += go * wt[a] * wh[b] * ww[c];
                    }
              }
        }
      });
}

/// Trilinear upsampling by integer per-axis factors (sT, sH, sW) >= 1.
template <class T>
Tensor<T> trilinear_upsample(const Tensor<T>& x, Triple scale) {
  if (x.ndim() != 5) throw ShapeError("trilinear_upsample: expected [N,C,T,H,W]");
  for (std::size_t s : scale) {
    if (s < 1) throw ShapeError("trilinear_upsample: scale factors must be >= 1");
  }
  return resize_trilinear(x, {x.dim(2) * scale[0], x.dim(3) * scale[1], x.dim(4) * scale[2]});
}

}  // namespace avsal
