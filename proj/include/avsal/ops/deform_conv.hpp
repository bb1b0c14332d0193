#pragma once

#include <cmath>

#include "avsal/ops/conv.hpp"

namespace avsal {

namespace detail {

struct BilinearSample {
  long y0, x0;
  double ly, lx;
};

/// Value of one channel plane at fractional (py, px); out-of-range corners read 0.
template <class T>
T sample_plane(const T* plane, std::size_t H, std::size_t W, long y0, long x0, T ly, T lx) {
  auto at = [&](long y, long x) -> T {
    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return T(0);
    return plane[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
  };
  return (T(1) - ly) * (T(1) - lx) * at(y0, x0) + (T(1) - ly) * lx * at(y0, x0 + 1) +
         ly * (T(1) - lx) * at(y0 + 1, x0) + ly * lx * at(y0 + 1, x0 + 1);
}

}  // namespace detail

/// Deformable convolution with per-frame 2D offsets.
///
/// x is [N, C, T, H, W]; weight is [Co, C, 1, kH, kW]; offsets is
/// [N, 2*kH*kW, T, Ho, Wo] with channel 2k holding the row (dy) and 2k+1 the
/// column (dx) displacement of tap k = i*kW + j. Tap k of output (t, ho, wo)
/// samples the input bilinearly at (ho*sH - pH + i + dy, wo*sW - pW + j + dx)
/// inside frame t. With all-zero offsets the result equals conv3d exactly.
template <class T>
Tensor<T> deform_conv3d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& weight,
                        const Tensor<T>& bias, std::array<std::size_t, 2> stride,
                        std::array<std::size_t, 2> pad) {
  if (weight.ndim() != 5 || weight.dim(2) != 1) {
    throw ShapeError("deform_conv3d: kernel must be [Co,C,1,kH,kW]");
  }
  const auto g = detail::conv_geometry(x.shape(), weight.shape(), {1, stride[0], stride[1]},
                                       {0, pad[0], pad[1]});
  const std::size_t K = g.kH * g.kW;
  const Shape off_shape{g.N, 2 * K, g.To, g.Ho, g.Wo};
  if (offsets.shape() != off_shape) {
    throw ShapeError("deform_conv3d: offsets must be " + to_string(off_shape) + ", got " +
                     to_string(offsets.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.Co)) {
    throw ShapeError("deform_conv3d: bias must be [Co]");
  }
  const std::size_t P = g.out_plane();
  const std::size_t HW = g.H * g.W;
  const T* xv = x.data().data();
  const T* ov = offsets.data().data();
  const T* wv = weight.data().data();

  // Sampled columns [N][C*K][P] and the per-(n, k, p) sampling positions.
  std::vector<T> col(g.N * g.C * K * P);
  std::vector<detail::BilinearSample> pos(g.N * K * P);
  for (std::size_t n = 0; n < g.N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t i = k / g.kW, j = k % g.kW;
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t wo = p % g.Wo, ho = (p / g.Wo) % g.Ho;
        const T dy = ov[((n * 2 * K + 2 * k) * P) + p];
        const T dx = ov[((n * 2 * K + 2 * k + 1) * P) + p];
        const T py = static_cast<T>(static_cast<long>(ho * g.stride[1] + i) -
                                    static_cast<long>(g.pad[1])) + dy;
        const T px = static_cast<T>(static_cast<long>(wo * g.stride[2] + j) -
                                    static_cast<long>(g.pad[2])) + dx;
        const T fy = std::floor(py), fx = std::floor(px);
        pos[(n * K + k) * P + p] = {static_cast<long>(fy), static_cast<long>(fx),
                                    static_cast<double>(py - fy), static_cast<double>(px - fx)};
      }
    }
  for (std::size_t n = 0; n < g.N; ++n)
    for (std::size_t c = 0; c < g.C; ++c)
      for (std::size_t k = 0; k < K; ++k) {
        T* cp = col.data() + ((n * g.C + c) * K + k) * P;
        for (std::size_t p = 0; p < P; ++p) {
          const auto& s = pos[(n * K + k) * P + p];
          const std::size_t t = p / (g.Ho * g.Wo);
          const T* plane = xv + ((n * g.C + c) * g.T + t) * HW;
          cp[p] = detail::sample_plane(plane, g.H, g.W, s.y0, s.x0, T(s.ly), T(s.lx));
        }
      }

  std::vector<T> out(g.N * g.Co * P, T(0));
  for (std::size_t n = 0; n < g.N; ++n)
    for (std::size_t co = 0; co < g.Co; ++co) {
      T* op = out.data() + (n * g.Co + co) * P;
      for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t k = 0; k < K; ++k) {
          const T wk = wv[(co * g.C + c) * K + k];
          const T* cp = col.data() + ((n * g.C + c) * K + k) * P;
          for (std::size_t p = 0; p < P; ++p) op[p] += wk * cp[p];
        }
      if (bias.defined()) {
        const T b = bias.data()[co];
        for (std::size_t p = 0; p < P; ++p) op[p] += b;
      }
    }

  return detail::make_result<T>(
      {g.N, g.Co, g.To, g.Ho, g.Wo}, std::move(out), "deform_conv3d",
      {&x, &offsets, &weight, bias.defined() ? &bias : nullptr},
      [xn = x.node(), on = offsets.node(), wn = weight.node(),
       bn = bias.defined() ? bias.node() : nullptr, g, K, P, HW, col = std::move(col),
       pos = std::move(pos)](const TensorNode<T>& o) {
        T* gx = detail::grad_sink(xn);
        T* goff = detail::grad_sink(on);
        T* gw = detail::grad_sink(wn);
        T* gb = detail::grad_sink(bn);
        const T* go = o.grad.data();
        std::vector<T> gcol(g.C * K * P);
        for (std::size_t n = 0; n < g.N; ++n) {
          std::fill(gcol.begin(), gcol.end(), T(0));
          for (std::size_t co = 0; co < g.Co; ++co) {
            const T* gop = go + (n * g.Co + co) * P;
            if (gb) {
              T acc = 0;
              for (std::size_t p = 0; p < P; ++p) acc += gop[p];
              gb[co] += acc;
            }
            for (std::size_t c = 0; c < g.C; ++c)
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t wi = (co * g.C + c) * K + k;
                const T* cp = col.data() + ((n * g.C + c) * K + k) * P;
                T* gcp = gcol.data() + (c * K + k) * P;
                const T wk = wn->data[wi];
                T acc = 0;
                for (std::size_t p = 0; p < P; ++p) {
                  acc += gop[p] * cp[p];
                  gcp[p] += wk * gop[p];
                }
                if (gw) gw[wi] += acc;
              }
          }
          if (!gx && !goff) continue;
          for (std::size_t c = 0; c < g.C; ++c)
            for (std::size_t k = 0; k < K; ++k) {
              const T* gcp = gcol.data() + (c * K + k) * P;
              for (std::size_t p = 0; p < P; ++p) {
                const auto& s = pos[(n * K + k) * P + p];
                const std::size_t t = p / (g.Ho * g.Wo);
                const std::size_t plane_off = ((n * g.C + c) * g.T + t) * HW;
                const T* plane = xn->data.data() + plane_off;
                const T ly = T(s.ly), lx = T(s.lx);
                auto inside = [&](long y, long x) {
                  return y >= 0 && x >= 0 && y < static_cast<long>(g.H) &&
                         x < static_cast<long>(g.W);
                };
                auto val = [&](long y, long x) -> T {
                  return inside(y, x) ? plane[static_cast<std::size_t>(y) * g.W +
                                              static_cast<std::size_t>(x)]
                                      : T(0);
                };
                const T gv = gcp[p];
                if (gx) {
                  const long ys[2] = {s.y0, s.y0 + 1};
                  const long xs[2] = {s.x0, s.x0 + 1};
                  const T wy[2] = {T(1) - ly, ly};
                  const T wx[2] = {T(1) - lx, lx};
                  for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                      if (!inside(ys[a], xs[b])) continue;
                      gx[plane_off + static_cast<std::size_t>(ys[a]) * g.W +
                         static_cast<std::size_t>(xs[b])] += gv * wy[a] * wx[b];
                    }
                }
                if (goff) {
                  const T v00 = val(s.y0, s.x0), v01 = val(s.y0, s.x0 + 1);
                  const T v10 = val(s.y0 + 1, s.x0), v11 = val(s.y0 + 1, s.x0 + 1);
                  const T d_dy = (T(1) - lx) * (v10 - v00) + lx * (v11 - v01);
                  const T d_dx = (T(1) - ly) * (v01 - v00) + ly * (v11 - v10);
                  goff[(n * 2 * K + 2 * k) * P + p] += gv * d_dy;
                  goff[(n * 2 * K + 2 * k + 1) * P + p] += gv * d_dx;
                }
              }
            }
        }
      });
}

}  // namespace avsal
