#pragma once
// Direct-loop references, deliberately written without the library kernels.

#include <algorithm>
#include <cmath>
#include <vector>

#include "avsal/tensor.hpp"

namespace oracle {

using avsal::Tensor;

inline std::vector<double> conv3d(const Tensor<double>& x, const Tensor<double>& w,
                                  const Tensor<double>& b, std::array<std::size_t, 3> s,
                                  std::array<std::size_t, 3> p) {
  const long N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const long Co = w.dim(0), kT = w.dim(2), kH = w.dim(3), kW = w.dim(4);
  const long To = (T + 2 * long(p[0]) - kT) / long(s[0]) + 1;
  const long Ho = (H + 2 * long(p[1]) - kH) / long(s[1]) + 1;
  const long Wo = (W + 2 * long(p[2]) - kW) / long(s[2]) + 1;
  std::vector<double> out;
  for (long n = 0; n < N; ++n)
    for (long co = 0; co < Co; ++co)
      for (long t = 0; t < To; ++t)
        for (long h = 0; h < Ho; ++h)
          for (long ww = 0; ww < Wo; ++ww) {
            double acc = 0;
            for (long c = 0; c < C; ++c)
              for (long a = 0; a < kT; ++a)
                for (long i = 0; i < kH; ++i)
                  for (long j = 0; j < kW; ++j) {
                    const long ti = t * long(s[0]) - long(p[0]) + a;
                    const long hi = h * long(s[1]) - long(p[1]) + i;
                    const long wi = ww * long(s[2]) - long(p[2]) + j;
                    if (ti < 0 || hi < 0 || wi < 0 || ti >= T || hi >= H || wi >= W) continue;
                    acc += x.at({size_t(n), size_t(c), size_t(ti), size_t(hi), size_t(wi)}) *
                           w.at({size_t(co), size_t(c), size_t(a), size_t(i), size_t(j)});
                  }
            if (b.defined()) acc += b.data()[co];
            out.push_back(acc);
          }
  return out;
}

// Half-pixel linear weights of input index i for output index o.
inline double hat(std::size_t o, std::size_t i, std::size_t in, std::size_t out) {
  double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
  src = std::clamp(src, 0.0, double(in - 1));
  return std::max(0.0, 1.0 - std::abs(src - double(i)));
}

inline std::vector<double> resize_trilinear(const Tensor<double>& x, std::array<std::size_t, 3> sz) {
  const std::size_t N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4);
  std::vector<double> out;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < sz[0]; ++t)
        for (std::size_t h = 0; h < sz[1]; ++h)
          for (std::size_t w = 0; w < sz[2]; ++w) {
            double acc = 0;
            for (std::size_t a = 0; a < T; ++a)
              for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                  acc += hat(t, a, T, sz[0]) * hat(h, i, H, sz[1]) * hat(w, j, W, sz[2]) *
                         x.at({n, c, a, i, j});
            out.push_back(acc);
          }
  return out;
}

// 3x3 deformable conv, stride 1, pad 1, no bias; bilinear weights via hat
// functions summed over every pixel of the frame.
inline std::vector<double> deform_conv(const Tensor<double>& x, const Tensor<double>& off,
                                       const Tensor<double>& w) {
  const std::size_t C = x.dim(1), T = x.dim(2), H = x.dim(3), W = x.dim(4), Co = w.dim(0);
  std::vector<double> out;
  for (std::size_t co = 0; co < Co; ++co)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t ww = 0; ww < W; ++ww) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < 9; ++k) {
              const double py = double(h) - 1 + double(k / 3) + off.at({0, 2 * k, t, h, ww});
              const double px = double(ww) - 1 + double(k % 3) + off.at({0, 2 * k + 1, t, h, ww});
              double v = 0;
              for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                  v += std::max(0.0, 1 - std::abs(py - double(i))) *
                       std::max(0.0, 1 - std::abs(px - double(j))) * x.at({0, c, t, i, j});
              acc += w.at({co, c, 0, k / 3, k % 3}) * v;
            }
          out.push_back(acc);
        }
  return out;
}

}  // namespace oracle
