// SPDX-License-Identifier: Apache-2.0
//
// Differentiable NN building blocks on top of the tensor tape: 2D/3D
// convolution (chunked im2col + GEMM on both passes), bilinear/trilinear
// grid sampling with border clamp, nearest upsampling and average pooling.

#pragma once

#include <vector>

#include "occufield/tensor.hpp"

namespace occufield {

namespace detail {

using StrideMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStrideMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// im2col for output rows [y0, y1): col[(ci*kh+ky)*kw+kx][(oy-y0)*ow+ox].
// Matrix rows are built independently and in parallel.
inline void im2col_rows(const double* x, int64_t cin, int64_t h, int64_t w, int64_t kh,
                        int64_t kw, int stride, int pad, int64_t ow, int64_t y0, int64_t y1,
                        double* col) {
  const int64_t cols = (y1 - y0) * ow;
  parallel_for(cin * kh * kw, [&](int64_t r0, int64_t r1) {
    for (int64_t row = r0; row < r1; ++row) {
      const int64_t kx = row % kw;
      const int64_t ky = (row / kw) % kh;
      const int64_t ci = row / (kw * kh);
      double* dst = col + row * cols;
      for (int64_t oy = y0; oy < y1; ++oy, dst += ow) {
        const int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) {
          std::fill(dst, dst + ow, 0.0);
          continue;
        }
        const double* src = x + (ci * h + iy) * w;
        if (stride == 1) {
          // valid ox range solves 0 <= ox - pad + kx < w
          const int64_t lo = std::max<int64_t>(0, pad - kx);
          const int64_t hi = std::min<int64_t>(ow, w + pad - kx);
          std::fill(dst, dst + std::min(lo, ow), 0.0);
          if (hi > lo) std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
          if (hi < ow) std::fill(dst + std::max<int64_t>(hi, 0), dst + ow, 0.0);
        } else {
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }, /*grain=*/4);
}

// Scatter-add of one channel's columns back into the input gradient.
inline void col2im_rows_add(double* gx, int64_t cin, int64_t h, int64_t w, int64_t kh,
                            int64_t kw, int stride, int pad, int64_t ow, int64_t y0, int64_t y1,
                            const double* col, int64_t ci) {
  const int64_t cols = (y1 - y0) * ow;
  for (int64_t ky = 0; ky < kh; ++ky)
    for (int64_t kx = 0; kx < kw; ++kx) {
      const double* src = col + (((ci * kh + ky) * kw) + kx) * cols;
      for (int64_t oy = y0; oy < y1; ++oy, src += ow) {
        const int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        double* dst = gx + (ci * h + iy) * w;
        if (stride == 1) {
          const int64_t lo = std::max<int64_t>(0, pad - kx);
          const int64_t hi = std::min<int64_t>(ow, w + pad - kx);
          double* d = dst - pad + kx;
          for (int64_t ox = lo; ox < hi; ++ox) d[ox] += src[ox];
        } else {
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
}

}  // namespace detail

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
                     int pad = 1) {
  if (x.rank() != 3 || w.rank() != 4)
    fail("conv2d: expects x [C,H,W] and w [Co,Ci,kh,kw], got " + shape_str(x.shape()) + " / " +
         shape_str(w.shape()));
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    fail("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, image has " +
         std::to_string(cin));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
    fail("conv2d: bias shape " + shape_str(b.shape()) + " does not match " +
         std::to_string(cout) + " output channels");
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) fail("conv2d: empty output for input " + shape_str(x.shape()));
  const int64_t k = cin * kh * kw;
  // chunk size bounds the im2col buffer near 4 MB
  const int64_t chunk = std::clamp<int64_t>((4 << 20) / (8 * std::max<int64_t>(k * ow, 1)),
                                            1, oh);

  Tensor out = Tensor::zeros({cout, oh, ow});
  {
    double* po = out.data();
    const double* px = x.data();
    detail::CMap wm(w.data(), cout, k);
    const double* pb = b.defined() ? b.data() : nullptr;
    std::vector<double> col(static_cast<size_t>(chunk * k * ow));
    for (int64_t y0 = 0; y0 < oh; y0 += chunk) {
      const int64_t y1 = std::min(oh, y0 + chunk);
      const int64_t cols = (y1 - y0) * ow;
      detail::im2col_rows(px, cin, h, wd, kh, kw, stride, pad, ow, y0, y1, col.data());
      detail::CMap cm(col.data(), k, cols);
      detail::StrideMap om(po + y0 * ow, cout, cols, Eigen::OuterStride<>(oh * ow));
      parallel_for(cout, [&](int64_t c0, int64_t c1) {
        om.middleRows(c0, c1 - c0).noalias() = wm.middleRows(c0, c1 - c0) * cm;
      }, /*grain=*/4);
      if (pb)
        for (int64_t co = 0; co < cout; ++co) om.row(co).array() += pb[co];
    }
  }

  autodiff::record(out, "conv2d", b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w},
                   [x, w, b, cin, h, wd, cout, kh, kw, stride, pad, oh, ow, k,
                    chunk](const std::vector<double>& go) {
    TensorImpl& ix = *x.impl();
    TensorImpl& iw = *w.impl();
    const bool want_x = ix.needs_grad(), want_w = iw.needs_grad();
    if (want_x) ix.ensure_grad();
    if (want_w) iw.ensure_grad();
    if (b.defined() && b.impl()->needs_grad()) {
      TensorImpl& ib = *b.impl();
      ib.ensure_grad();
      for (int64_t co = 0; co < cout; ++co) {
        double s = 0;
        const double* g = go.data() + co * oh * ow;
        for (int64_t i = 0; i < oh * ow; ++i) s += g[i];
        ib.grad[static_cast<size_t>(co)] += s;
      }
    }
    if (!want_x && !want_w) return;

    const double* px = ix.data.data();
    detail::CMap wm(iw.data.data(), cout, k);
    std::vector<double> col(static_cast<size_t>(chunk * k * ow));
    for (int64_t y0 = 0; y0 < oh; y0 += chunk) {
      const int64_t y1 = std::min(oh, y0 + chunk);
      const int64_t cols = (y1 - y0) * ow;
      detail::CStrideMap gy(go.data() + y0 * ow, cout, cols, Eigen::OuterStride<>(oh * ow));
      if (want_w) {
        detail::im2col_rows(px, cin, h, wd, kh, kw, stride, pad, ow, y0, y1, col.data());
        detail::CMap cm(col.data(), k, cols);
        detail::MMap gw(iw.grad.data(), cout, k);
        parallel_for(cout, [&](int64_t c0, int64_t c1) {
          gw.middleRows(c0, c1 - c0).noalias() += gy.middleRows(c0, c1 - c0) * cm.transpose();
        }, /*grain=*/4);
      }
      if (want_x) {
        detail::MMap cm(col.data(), k, cols);
        parallel_for(k, [&](int64_t r0, int64_t r1) {
          cm.middleRows(r0, r1 - r0).noalias() =
              wm.transpose().middleRows(r0, r1 - r0) * gy;
        }, /*grain=*/16);
        parallel_for(cin, [&](int64_t c0, int64_t c1) {
          for (int64_t ci = c0; ci < c1; ++ci)
            detail::col2im_rows_add(ix.grad.data(), cin, h, wd, kh, kw, stride, pad, ow, y0,
                                    y1, col.data(), ci);
        }, /*grain=*/1);
      }
    }
  });
  return out;
}

namespace detail {

// 3D analogue over [z0, z1) output slices; rows built in parallel.
inline void im2col_slices(const double* x, int64_t cin, int64_t d, int64_t h, int64_t w,
                          int64_t kd, int64_t kh, int64_t kw, int stride, int pad, int64_t oh,
                          int64_t ow, int64_t z0, int64_t z1, double* col) {
  const int64_t cols = (z1 - z0) * oh * ow;
  parallel_for(cin * kd * kh * kw, [&](int64_t r0, int64_t r1) {
    for (int64_t row = r0; row < r1; ++row) {
      const int64_t kx = row % kw;
      const int64_t ky = (row / kw) % kh;
      const int64_t kz = (row / (kw * kh)) % kd;
      const int64_t ci = row / (kw * kh * kd);
      double* dst = col + row * cols;
      for (int64_t oz = z0; oz < z1; ++oz) {
        const int64_t iz = oz * stride - pad + kz;
        for (int64_t oy = 0; oy < oh; ++oy, dst += ow) {
          const int64_t iy = oy * stride - pad + ky;
          if (iz < 0 || iz >= d || iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = x + ((ci * d + iz) * h + iy) * w;
          if (stride == 1) {
            const int64_t lo = std::max<int64_t>(0, pad - kx);
            const int64_t hi = std::min<int64_t>(ow, w + pad - kx);
            std::fill(dst, dst + std::min(lo, ow), 0.0);
            if (hi > lo) std::copy(src + lo - pad + kx, src + hi - pad + kx, dst + lo);
            if (hi < ow) std::fill(dst + std::max<int64_t>(hi, 0), dst + ow, 0.0);
          } else {
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }, /*grain=*/8);
}

inline void col2im_slices_add(double* gx, int64_t cin, int64_t d, int64_t h, int64_t w,
                              int64_t kd, int64_t kh, int64_t kw, int stride, int pad,
                              int64_t oh, int64_t ow, int64_t z0, int64_t z1, const double* col,
                              int64_t ci) {
  const int64_t cols = (z1 - z0) * oh * ow;
  for (int64_t kz = 0; kz < kd; ++kz)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        const int64_t row = ((ci * kd + kz) * kh + ky) * kw + kx;
        const double* src = col + row * cols;
        for (int64_t oz = z0; oz < z1; ++oz) {
          const int64_t iz = oz * stride - pad + kz;
          for (int64_t oy = 0; oy < oh; ++oy, src += ow) {
            const int64_t iy = oy * stride - pad + ky;
            if (iz < 0 || iz >= d || iy < 0 || iy >= h) continue;
            double* dst = gx + ((ci * d + iz) * h + iy) * w;
            if (stride == 1) {
              const int64_t lo = std::max<int64_t>(0, pad - kx);
              const int64_t hi = std::min<int64_t>(ow, w + pad - kx);
              double* dd = dst - pad + kx;
              for (int64_t ox = lo; ox < hi; ++ox) dd[ox] += src[ox];
            } else {
              for (int64_t ox = 0; ox < ow; ++ox) {
                const int64_t ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < w) dst[ix] += src[ox];
              }
            }
          }
        }
      }
}

}  // namespace detail

// x: [Cin,D,H,W], w: [Cout,Cin,kd,kh,kw], b: [Cout] or undefined.
inline Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
                     int pad = 1) {
  if (x.rank() != 4 || w.rank() != 5)
    fail("conv3d: expects x [C,D,H,W] and w [Co,Ci,kd,kh,kw], got " + shape_str(x.shape()) +
         " / " + shape_str(w.shape()));
  const int64_t cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
  if (w.dim(1) != cin)
    fail("conv3d: weight expects " + std::to_string(w.dim(1)) + " input channels, volume has " +
         std::to_string(cin));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
    fail("conv3d: bias shape " + shape_str(b.shape()) + " mismatch");
  const int64_t od = (d + 2 * pad - kd) / stride + 1;
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
  if (od <= 0 || oh <= 0 || ow <= 0) fail("conv3d: empty output");
  const int64_t k = cin * kd * kh * kw;
  const int64_t ohw = oh * ow;
  const int64_t chunk = std::clamp<int64_t>((8 << 20) / (8 * std::max<int64_t>(k * ohw, 1)),
                                            1, od);

  Tensor out = Tensor::zeros({cout, od, oh, ow});
  {
    double* po = out.data();
    const double* px = x.data();
    detail::CMap wm(w.data(), cout, k);
    const double* pb = b.defined() ? b.data() : nullptr;
    std::vector<double> col(static_cast<size_t>(chunk * k * ohw));
    for (int64_t z0 = 0; z0 < od; z0 += chunk) {
      const int64_t z1 = std::min(od, z0 + chunk);
      const int64_t cols = (z1 - z0) * ohw;
      detail::im2col_slices(px, cin, d, h, wd, kd, kh, kw, stride, pad, oh, ow, z0, z1,
                            col.data());
      detail::CMap cm(col.data(), k, cols);
      detail::StrideMap om(po + z0 * ohw, cout, cols, Eigen::OuterStride<>(od * ohw));
      parallel_for(cout, [&](int64_t c0, int64_t c1) {
        om.middleRows(c0, c1 - c0).noalias() = wm.middleRows(c0, c1 - c0) * cm;
      }, /*grain=*/2);
      if (pb)
        for (int64_t co = 0; co < cout; ++co) om.row(co).array() += pb[co];
    }
  }

  autodiff::record(out, "conv3d", b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w},
                   [x, w, b, cin, d, h, wd, cout, kd, kh, kw, stride, pad, od, oh, ow, k, ohw,
                    chunk](const std::vector<double>& go) {
    TensorImpl& ix = *x.impl();
    TensorImpl& iw = *w.impl();
    const bool want_x = ix.needs_grad(), want_w = iw.needs_grad();
    if (want_x) ix.ensure_grad();
    if (want_w) iw.ensure_grad();
    if (b.defined() && b.impl()->needs_grad()) {
      TensorImpl& ib = *b.impl();
      ib.ensure_grad();
      for (int64_t co = 0; co < cout; ++co) {
        double s = 0;
        const double* g = go.data() + co * od * ohw;
        for (int64_t i = 0; i < od * ohw; ++i) s += g[i];
        ib.grad[static_cast<size_t>(co)] += s;
      }
    }
    if (!want_x && !want_w) return;
    const double* px = ix.data.data();
    detail::CMap wm(iw.data.data(), cout, k);
    std::vector<double> col(static_cast<size_t>(chunk * k * ohw));
    for (int64_t z0 = 0; z0 < od; z0 += chunk) {
      const int64_t z1 = std::min(od, z0 + chunk);
      const int64_t cols = (z1 - z0) * ohw;
      detail::CStrideMap gy(go.data() + z0 * ohw, cout, cols, Eigen::OuterStride<>(od * ohw));
      if (want_w) {
        detail::im2col_slices(px, cin, d, h, wd, kd, kh, kw, stride, pad, oh, ow, z0, z1,
                              col.data());
        detail::CMap cm(col.data(), k, cols);
        detail::MMap gw(iw.grad.data(), cout, k);
        parallel_for(cout, [&](int64_t c0, int64_t c1) {
          gw.middleRows(c0, c1 - c0).noalias() += gy.middleRows(c0, c1 - c0) * cm.transpose();
        }, /*grain=*/2);
      }
      if (want_x) {
        detail::MMap cm(col.data(), k, cols);
        parallel_for(k, [&](int64_t r0, int64_t r1) {
          cm.middleRows(r0, r1 - r0).noalias() =
              wm.transpose().middleRows(r0, r1 - r0) * gy;
        }, /*grain=*/16);
        parallel_for(cin, [&](int64_t c0, int64_t c1) {
          for (int64_t ci = c0; ci < c1; ++ci)
            detail::col2im_slices_add(ix.grad.data(), cin, d, h, wd, kd, kh, kw, stride, pad,
                                      oh, ow, z0, z1, col.data(), ci);
        }, /*grain=*/1);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Grid sampling (align-corners, border clamp)
// ---------------------------------------------------------------------------

namespace detail {
struct LerpAxis {
  int64_t i0, i1;
  double f;       // fraction toward i1
  double dcoord;  // d(index)/d(normalized coord); 0 when clamped
};

inline LerpAxis lerp_axis(double c, int64_t extent) {
  LerpAxis ax;
  double half = 0.5 * static_cast<double>(extent - 1);
  double x = (c + 1.0) * half;
  double scale = half;
  if (x <= 0) { x = 0; scale = 0; }
  if (x >= static_cast<double>(extent - 1)) { x = static_cast<double>(extent - 1); scale = 0; }
  int64_t i0 = static_cast<int64_t>(x);
  if (i0 > extent - 2) i0 = std::max<int64_t>(0, extent - 2);
  ax.i0 = i0;
  ax.i1 = std::min(i0 + 1, extent - 1);
  ax.f = x - static_cast<double>(i0);
  ax.dcoord = scale;
  return ax;
}
}  // namespace detail

// F: [C,H,W], uv: [N,2] normalized to [-1,1]^2. Out-of-range clamps to border.
inline Tensor grid_sample_bilinear(const Tensor& f, const Tensor& uv) {
  if (f.rank() != 3) fail("grid_sample_bilinear: feature map must be [C,H,W]");
  if (uv.rank() != 2 || uv.dim(1) != 2)
    fail("grid_sample_bilinear: coordinates must be [N,2], got " + shape_str(uv.shape()));
  const int64_t c = f.dim(0), h = f.dim(1), w = f.dim(2), n = uv.dim(0);
  if (h < 1 || w < 1) fail("grid_sample_bilinear: empty feature map");
  Tensor out = Tensor::zeros({n, c});
  {
    const double* pf = f.data();
    const double* pu = uv.data();
    double* po = out.data();
    parallel_for(n, [&](int64_t n0, int64_t n1) {
      for (int64_t i = n0; i < n1; ++i) {
        auto ax = detail::lerp_axis(pu[i * 2 + 0], w);
        auto ay = detail::lerp_axis(pu[i * 2 + 1], h);
        const double w00 = (1 - ax.f) * (1 - ay.f), w10 = ax.f * (1 - ay.f);
        const double w01 = (1 - ax.f) * ay.f, w11 = ax.f * ay.f;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* plane = pf + ch * h * w;
          po[i * c + ch] = w00 * plane[ay.i0 * w + ax.i0] + w10 * plane[ay.i0 * w + ax.i1] +
                           w01 * plane[ay.i1 * w + ax.i0] + w11 * plane[ay.i1 * w + ax.i1];
        }
      }
    });
  }
  autodiff::record(out, "grid_sample_bilinear", {f, uv},
                   [f, uv, c, h, w, n](const std::vector<double>& go) {
    TensorImpl& fi = *f.impl();
    TensorImpl& ui = *uv.impl();
    const double* pf = fi.data.data();
    const double* pu = ui.data.data();
    if (fi.needs_grad()) {
      fi.ensure_grad();
      double* gf = fi.grad.data();
      parallel_for(c, [&](int64_t c0, int64_t c1) {
        for (int64_t i = 0; i < n; ++i) {
          auto ax = detail::lerp_axis(pu[i * 2 + 0], w);
          auto ay = detail::lerp_axis(pu[i * 2 + 1], h);
          for (int64_t ch = c0; ch < c1; ++ch) {
            const double g = go[static_cast<size_t>(i * c + ch)];
            double* plane = gf + ch * h * w;
            plane[ay.i0 * w + ax.i0] += g * (1 - ax.f) * (1 - ay.f);
            plane[ay.i0 * w + ax.i1] += g * ax.f * (1 - ay.f);
            plane[ay.i1 * w + ax.i0] += g * (1 - ax.f) * ay.f;
            plane[ay.i1 * w + ax.i1] += g * ax.f * ay.f;
          }
        }
      }, /*grain=*/1);
    }
    if (ui.needs_grad()) {
      ui.ensure_grad();
      double* gu = ui.grad.data();
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t i = n0; i < n1; ++i) {
          auto ax = detail::lerp_axis(pu[i * 2 + 0], w);
          auto ay = detail::lerp_axis(pu[i * 2 + 1], h);
          double du = 0, dv = 0;
          for (int64_t ch = 0; ch < c; ++ch) {
            const double* plane = pf + ch * h * w;
            const double g = go[static_cast<size_t>(i * c + ch)];
            const double v00 = plane[ay.i0 * w + ax.i0], v10 = plane[ay.i0 * w + ax.i1];
            const double v01 = plane[ay.i1 * w + ax.i0], v11 = plane[ay.i1 * w + ax.i1];
            du += g * ((1 - ay.f) * (v10 - v00) + ay.f * (v11 - v01));
            dv += g * ((1 - ax.f) * (v01 - v00) + ax.f * (v11 - v10));
          }
          gu[i * 2 + 0] += du * ax.dcoord;
          gu[i * 2 + 1] += dv * ay.dcoord;
        }
      });
    }
  });
  return out;
}

// V: [C,D,H,W], p: [N,3] normalized to [-1,1]^3; p maps (x,y,z) -> (W,H,D).
inline Tensor grid_sample_trilinear(const Tensor& v, const Tensor& p) {
  if (v.rank() != 4) fail("grid_sample_trilinear: volume must be [C,D,H,W]");
  if (p.rank() != 2 || p.dim(1) != 3)
    fail("grid_sample_trilinear: coordinates must be [N,3], got " + shape_str(p.shape()));
  const int64_t c = v.dim(0), d = v.dim(1), h = v.dim(2), w = v.dim(3), n = p.dim(0);
  Tensor out = Tensor::zeros({n, c});
  {
    const double* pv = v.data();
    const double* pp = p.data();
    double* po = out.data();
    parallel_for(n, [&](int64_t n0, int64_t n1) {
      for (int64_t i = n0; i < n1; ++i) {
        auto ax = detail::lerp_axis(pp[i * 3 + 0], w);
        auto ay = detail::lerp_axis(pp[i * 3 + 1], h);
        auto az = detail::lerp_axis(pp[i * 3 + 2], d);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* vol = pv + ch * d * h * w;
          auto at = [&](int64_t zi, int64_t yi, int64_t xi) {
            return vol[(zi * h + yi) * w + xi];
          };
          double c00 = at(az.i0, ay.i0, ax.i0) * (1 - ax.f) + at(az.i0, ay.i0, ax.i1) * ax.f;
          double c01 = at(az.i0, ay.i1, ax.i0) * (1 - ax.f) + at(az.i0, ay.i1, ax.i1) * ax.f;
          double c10 = at(az.i1, ay.i0, ax.i0) * (1 - ax.f) + at(az.i1, ay.i0, ax.i1) * ax.f;
          double c11 = at(az.i1, ay.i1, ax.i0) * (1 - ax.f) + at(az.i1, ay.i1, ax.i1) * ax.f;
          double c0 = c00 * (1 - ay.f) + c01 * ay.f;
          double c1 = c10 * (1 - ay.f) + c11 * ay.f;
          po[i * c + ch] = c0 * (1 - az.f) + c1 * az.f;
        }
      }
    });
  }
  autodiff::record(out, "grid_sample_trilinear", {v, p},
                   [v, p, c, d, h, w, n](const std::vector<double>& go) {
    TensorImpl& vi = *v.impl();
    TensorImpl& pi = *p.impl();
    const double* pv = vi.data.data();
    const double* pp = pi.data.data();
    if (vi.needs_grad()) {
      vi.ensure_grad();
      double* gv = vi.grad.data();
      parallel_for(c, [&](int64_t c0, int64_t c1) {
        for (int64_t i = 0; i < n; ++i) {
          auto ax = detail::lerp_axis(pp[i * 3 + 0], w);
          auto ay = detail::lerp_axis(pp[i * 3 + 1], h);
          auto az = detail::lerp_axis(pp[i * 3 + 2], d);
          const double wx[2] = {1 - ax.f, ax.f};
          const double wy[2] = {1 - ay.f, ay.f};
          const double wz[2] = {1 - az.f, az.f};
          const int64_t xi[2] = {ax.i0, ax.i1}, yi[2] = {ay.i0, ay.i1}, zi[2] = {az.i0, az.i1};
          for (int64_t ch = c0; ch < c1; ++ch) {
            const double g = go[static_cast<size_t>(i * c + ch)];
            double* vol = gv + ch * d * h * w;
            for (int a = 0; a < 2; ++a)
              for (int bb = 0; bb < 2; ++bb)
                for (int cc = 0; cc < 2; ++cc)
                  vol[(zi[a] * h + yi[bb]) * w + xi[cc]] += g * wz[a] * wy[bb] * wx[cc];
          }
        }
      }, /*grain=*/1);
    }
    if (pi.needs_grad()) {
      pi.ensure_grad();
      double* gp = pi.grad.data();
      for (int64_t i = 0; i < n; ++i) {
        auto ax = detail::lerp_axis(pp[i * 3 + 0], w);
        auto ay = detail::lerp_axis(pp[i * 3 + 1], h);
        auto az = detail::lerp_axis(pp[i * 3 + 2], d);
        double dx = 0, dy = 0, dz = 0;
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* vol = pv + ch * d * h * w;
          const double g = go[static_cast<size_t>(i * c + ch)];
          auto at = [&](int64_t zz, int64_t yy, int64_t xx) {
            return vol[(zz * h + yy) * w + xx];
          };
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb) {
              double wza = a ? az.f : 1 - az.f;
              double wyb = bb ? ay.f : 1 - ay.f;
              int64_t zz = a ? az.i1 : az.i0;
              int64_t yy = bb ? ay.i1 : ay.i0;
              dx += g * wza * wyb * (at(zz, yy, ax.i1) - at(zz, yy, ax.i0));
            }
          for (int a = 0; a < 2; ++a)
            for (int cc = 0; cc < 2; ++cc) {
              double wza = a ? az.f : 1 - az.f;
              double wxc = cc ? ax.f : 1 - ax.f;
              int64_t zz = a ? az.i1 : az.i0;
              int64_t xx = cc ? ax.i1 : ax.i0;
              dy += g * wza * wxc * (at(zz, ay.i1, xx) - at(zz, ay.i0, xx));
            }
          for (int bb = 0; bb < 2; ++bb)
            for (int cc = 0; cc < 2; ++cc) {
              double wyb = bb ? ay.f : 1 - ay.f;
              double wxc = cc ? ax.f : 1 - ax.f;
              int64_t yy = bb ? ay.i1 : ay.i0;
              int64_t xx = cc ? ax.i1 : ax.i0;
              dz += g * wyb * wxc * (at(az.i1, yy, xx) - at(az.i0, yy, xx));
            }
        }
        gp[i * 3 + 0] += dx * ax.dcoord;
        gp[i * 3 + 1] += dy * ay.dcoord;
        gp[i * 3 + 2] += dz * az.dcoord;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

inline Tensor upsample2x_nearest(const Tensor& x) {
  if (x.rank() != 3) fail("upsample2x_nearest: expects [C,H,W]");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out = Tensor::zeros({c, 2 * h, 2 * w});
  double* po = out.data();
  const double* px = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < 2 * h; ++y)
      for (int64_t xx = 0; xx < 2 * w; ++xx)
        po[(ch * 2 * h + y) * 2 * w + xx] = px[(ch * h + y / 2) * w + xx / 2];
  autodiff::record(out, "upsample2x_nearest", {x}, [x, c, h, w](const std::vector<double>& go) {
    TensorImpl& ix = *x.impl();
    if (!ix.needs_grad()) return;
    ix.ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < 2 * h; ++y)
        for (int64_t xx = 0; xx < 2 * w; ++xx)
          ix.grad[static_cast<size_t>((ch * h + y / 2) * w + xx / 2)] +=
              go[static_cast<size_t>((ch * 2 * h + y) * 2 * w + xx)];
  });
  return out;
}

inline Tensor avg_pool2d(const Tensor& x, int factor) {
  if (x.rank() != 3) fail("avg_pool2d: expects [C,H,W]");
  if (factor < 1 || x.dim(1) % factor || x.dim(2) % factor)
    fail("avg_pool2d: spatial dims " + shape_str(x.shape()) + " not divisible by " +
         std::to_string(factor));
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t oh = h / factor, ow = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out = Tensor::zeros({c, oh, ow});
  double* po = out.data();
  const double* px = x.data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx) {
        double s = 0;
        for (int64_t dy = 0; dy < factor; ++dy)
          for (int64_t dx = 0; dx < factor; ++dx)
            s += px[(ch * h + y * factor + dy) * w + xx * factor + dx];
        po[(ch * oh + y) * ow + xx] = s * inv;
      }
  autodiff::record(out, "avg_pool2d", {x}, [x, c, h, w, oh, ow, factor,
                                            inv](const std::vector<double>& go) {
    TensorImpl& ix = *x.impl();
    if (!ix.needs_grad()) return;
    ix.ensure_grad();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t xx = 0; xx < ow; ++xx) {
          const double g = go[static_cast<size_t>((ch * oh + y) * ow + xx)] * inv;
          for (int64_t dy = 0; dy < factor; ++dy)
            for (int64_t dx = 0; dx < factor; ++dx)
              ix.grad[static_cast<size_t>((ch * h + y * factor + dy) * w + xx * factor + dx)] += g;
        }
  });
  return out;
}

}  // namespace occufield
