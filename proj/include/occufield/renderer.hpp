// SPDX-License-Identifier: Apache-2.0
//
// Occupancy-based volume rendering: orthographic ray generation against the
// [-1,1]^3 bounding cube, front-to-back compositing where per-sample opacity
// is the occupancy probability itself (no distance rescaling), stratified +
// inverse-transform hierarchical sampling, and warp-field rendering of
// source-projection coordinates.

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <fstream>
#include <numeric>
#include <vector>

#include "occufield/camera.hpp"
#include "occufield/fieldnet.hpp"
#include "occufield/image.hpp"
#include "occufield/rng.hpp"
#include "occufield/synth.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

// ---------------------------------------------------------------------------
// Rays
// ---------------------------------------------------------------------------

struct RayBatch {
  std::vector<Vec3> origins;     // cube entry points
  std::vector<Vec3> directions;  // unit
  std::vector<double> near, far;
  std::vector<uint8_t> valid;    // 0 = misses the cube (renders empty)
  std::vector<int> px, py;       // owning pixel, when generated from a camera

  size_t size() const { return origins.size(); }
  Vec3 point(size_t ray, double t) const { return origins[ray] + directions[ray] * t; }
};

namespace detail {
inline bool cube_clip(const Vec3& o, const Vec3& d, double* t0, double* t1) {
  double lo = -1e30, hi = 1e30;
  const double oo[3] = {o.x, o.y, o.z};
  const double dd[3] = {d.x, d.y, d.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dd[i]) < 1e-14) {
      if (std::abs(oo[i]) > 1.0) return false;
      continue;
    }
    double a = (-1.0 - oo[i]) / dd[i];
    double b = (1.0 - oo[i]) / dd[i];
    if (a > b) std::swap(a, b);
    lo = std::max(lo, a);
    hi = std::min(hi, b);
    if (lo > hi) return false;
  }
  *t0 = lo;
  *t1 = hi;
  return true;
}
}  // namespace detail

inline RayBatch gen_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels) {
  RayBatch rays;
  rays.origins.reserve(pixels.size());
  const Vec3 dir = cam.ray_direction();
  for (const auto& [x, y] : pixels) {
    if (x < 0 || x >= cam.width || y < 0 || y >= cam.height)
      fail("gen_rays: pixel (" + std::to_string(x) + "," + std::to_string(y) +
           ") outside image");
    const Vec2 uv = cam.pixel_to_ndc(x, y);
    const Vec3 base = cam.unproject(uv.x, uv.y) - dir * 3.0;
    double t0, t1;
    rays.px.push_back(x);
    rays.py.push_back(y);
    rays.directions.push_back(dir);
    if (detail::cube_clip(base, dir, &t0, &t1) && t1 > t0) {
      rays.origins.push_back(base + dir * t0);
      rays.near.push_back(0.0);
      rays.far.push_back(t1 - t0);
      rays.valid.push_back(1);
    } else {
      rays.origins.push_back(base);
      rays.near.push_back(0.0);
      rays.far.push_back(0.0);
      rays.valid.push_back(0);
    }
  }
  return rays;
}

inline RayBatch gen_rays_full(const Camera& cam) {
  std::vector<std::pair<int, int>> pixels;
  pixels.reserve(static_cast<size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) pixels.emplace_back(x, y);
  return gen_rays(cam, pixels);
}

// ---------------------------------------------------------------------------
// Compositing (the occupancy rendering sum)
// ---------------------------------------------------------------------------

struct CompositeResult {
  Tensor rendered;                    // [R,C]
  Tensor acc_alpha;                   // [R]
  std::vector<double> weights;        // [R*S]
  std::vector<double> transmittance;  // [R*(S+1)], T[0]=1
};

// rendered_r = sum_j alpha_j * prod_{k<j} (1-alpha_k) * payload_j.
// Samples must already be depth-sorted; the sum is order-sensitive.
inline CompositeResult composite(const Tensor& alphas, const Tensor& payload) {
  if (alphas.rank() != 2) fail("composite: alphas must be [R,S]");
  if (payload.rank() != 3 || payload.dim(0) != alphas.dim(0) ||
      payload.dim(1) != alphas.dim(1))
    fail("composite: payload " + shape_str(payload.shape()) + " does not match alphas " +
         shape_str(alphas.shape()));
  const int64_t r = alphas.dim(0), s = alphas.dim(1), c = payload.dim(2);

  CompositeResult res;
  res.weights.assign(static_cast<size_t>(r * s), 0.0);
  res.transmittance.assign(static_cast<size_t>(r * (s + 1)), 0.0);
  Tensor rendered = Tensor::zeros({r, c});
  Tensor acc = Tensor::zeros({r});
  {
    const double* pa = alphas.data();
    const double* pp = payload.data();
    double* po = rendered.data();
    double* pacc = acc.data();
    for (int64_t i = 0; i < r; ++i) {
      double t = 1.0;
      res.transmittance[static_cast<size_t>(i * (s + 1))] = 1.0;
      for (int64_t j = 0; j < s; ++j) {
        const double a = pa[i * s + j];
        const double w = a * t;
        res.weights[static_cast<size_t>(i * s + j)] = w;
        for (int64_t ch = 0; ch < c; ++ch) po[i * c + ch] += w * pp[(i * s + j) * c + ch];
        pacc[i] += w;
        t *= (1.0 - a);
        res.transmittance[static_cast<size_t>(i * (s + 1) + j + 1)] = t;
      }
    }
  }

  auto weights_copy = res.weights;
  auto trans_copy = res.transmittance;
  autodiff::record(rendered, "composite", {alphas, payload},
                   [alphas, payload, weights_copy, trans_copy, r, s,
                    c](const std::vector<double>& go) {
    TensorImpl& ia = *alphas.impl();
    TensorImpl& ip = *payload.impl();
    const bool want_a = ia.needs_grad(), want_p = ip.needs_grad();
    if (want_a) ia.ensure_grad();
    if (want_p) ip.ensure_grad();
    const double* pa = ia.data.data();
    const double* pp = ip.data.data();
    for (int64_t i = 0; i < r; ++i) {
      if (want_p) {
        for (int64_t j = 0; j < s; ++j) {
          const double w = weights_copy[static_cast<size_t>(i * s + j)];
          for (int64_t ch = 0; ch < c; ++ch)
            ip.grad[static_cast<size_t>((i * s + j) * c + ch)] +=
                w * go[static_cast<size_t>(i * c + ch)];
        }
      }
      if (want_a) {
        // suffix_c = sum_{k>j} w_k payload_kc, updated walking j downward
        std::vector<double> suffix(static_cast<size_t>(c), 0.0);
        for (int64_t j = s - 1; j >= 0; --j) {
          const double tj = trans_copy[static_cast<size_t>(i * (s + 1) + j)];
          const double one_minus = std::max(1.0 - pa[i * s + j], 1e-12);
          double da = 0;
          for (int64_t ch = 0; ch < c; ++ch) {
            da += go[static_cast<size_t>(i * c + ch)] *
                  (tj * pp[(i * s + j) * c + ch] - suffix[static_cast<size_t>(ch)] / one_minus);
          }
          ia.grad[static_cast<size_t>(i * s + j)] += da;
          const double w = weights_copy[static_cast<size_t>(i * s + j)];
          for (int64_t ch = 0; ch < c; ++ch)
            suffix[static_cast<size_t>(ch)] += w * pp[(i * s + j) * c + ch];
        }
      }
    }
  });

  autodiff::record(acc, "accumulated_alpha", {alphas},
                   [alphas, trans_copy, r, s](const std::vector<double>& go) {
    TensorImpl& ia = *alphas.impl();
    if (!ia.needs_grad()) return;
    ia.ensure_grad();
    const double* pa = ia.data.data();
    // dA/da_j = prod_{k != j} (1 - a_k), via prefix (transmittance) and suffix products.
    for (int64_t i = 0; i < r; ++i) {
      double suffix = 1.0;
      std::vector<double> suf(static_cast<size_t>(s));
      for (int64_t j = s - 1; j >= 0; --j) {
        suf[static_cast<size_t>(j)] = suffix;
        suffix *= (1.0 - pa[i * s + j]);
      }
      for (int64_t j = 0; j < s; ++j)
        ia.grad[static_cast<size_t>(i * s + j)] +=
            go[static_cast<size_t>(i)] * trans_copy[static_cast<size_t>(i * (s + 1) + j)] *
            suf[static_cast<size_t>(j)];
    }
  });

  res.rendered = rendered;
  res.acc_alpha = acc;
  return res;
}

// ---------------------------------------------------------------------------
// Depth sampling
// ---------------------------------------------------------------------------

// One uniform draw per equal-length bin of [near, far]; ascending by construction.
inline std::vector<double> stratified_sample(double near, double far, int n, RngStream& rng) {
  if (n < 1) fail("stratified_sample: need at least one sample");
  std::vector<double> depths(static_cast<size_t>(n));
  const double step = (far - near) / n;
  for (int i = 0; i < n; ++i) depths[static_cast<size_t>(i)] = near + (i + rng.uniform()) * step;
  return depths;
}

// Inverse-transform draws from the piecewise-constant pdf over the n equal
// bins of [near, far] with the given (unnormalized) weights. Zero total
// weight falls back to stratified draws. Output is unsorted.
inline std::vector<double> importance_resample(const std::vector<double>& weights, double near,
                                               double far, int m, RngStream& rng) {
  if (m <= 0) return {};
  const int n = static_cast<int>(weights.size());
  if (n == 0) fail("importance_resample: empty weight vector");
  double total = 0;
  for (double w : weights) total += std::max(w, 0.0);
  if (total <= 0) return stratified_sample(near, far, m, rng);
  std::vector<double> cdf(static_cast<size_t>(n));
  double run = 0;
  for (int i = 0; i < n; ++i) {
    run += std::max(weights[static_cast<size_t>(i)], 0.0) / total;
    cdf[static_cast<size_t>(i)] = run;
  }
  cdf.back() = 1.0;
  const double step = (far - near) / n;
  std::vector<double> out(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double u = rng.uniform();
    const int bin = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const double lo = bin == 0 ? 0.0 : cdf[static_cast<size_t>(bin - 1)];
    const double hi = cdf[static_cast<size_t>(bin)];
    const double frac = hi > lo ? (u - lo) / (hi - lo) : 0.5;
    out[static_cast<size_t>(i)] = near + (bin + frac) * step;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchical rendering
// ---------------------------------------------------------------------------

// Evaluates per-point opacity [N] and a payload [N,C] for a flat point batch.
using FieldSampler =
    std::function<void(const std::vector<Vec3>& pts, Tensor* alpha, Tensor* payload)>;

struct RenderConfig {
  int n_coarse = 24;
  int n_fine = 24;
  double mask_threshold = 0.5;
  double warp_valid_eps = 0.1;
};

struct RayRender {
  Tensor color;      // [R,C], zero rows for invalid rays
  Tensor acc_alpha;  // [R]
  int64_t channels = 0;
};

// Coarse stratified pass, importance resampling from the coarse weights,
// then one composite over the depth-sorted union of samples.
inline RayRender render_rays(const FieldSampler& field, const RayBatch& rays,
                             const RenderConfig& cfg, RngStream rng) {
  std::vector<size_t> live;
  for (size_t i = 0; i < rays.size(); ++i)
    if (rays.valid[i]) live.push_back(i);
  const int64_t r = static_cast<int64_t>(live.size());
  const int nc = cfg.n_coarse, nf = cfg.n_fine;

  RayRender out;
  if (r == 0) {
    out.color = Tensor::zeros({static_cast<int64_t>(rays.size()), 1});
    out.acc_alpha = Tensor::zeros({static_cast<int64_t>(rays.size())});
    out.channels = 1;
    return out;
  }

  // coarse depths
  std::vector<std::vector<double>> depths(static_cast<size_t>(r));
  for (int64_t i = 0; i < r; ++i) {
    RngStream ray_rng = rng.child("coarse", live[static_cast<size_t>(i)]);
    depths[static_cast<size_t>(i)] =
        stratified_sample(rays.near[live[static_cast<size_t>(i)]],
                          rays.far[live[static_cast<size_t>(i)]], nc, ray_rng);
  }
  std::vector<Vec3> pts(static_cast<size_t>(r * nc));
  for (int64_t i = 0; i < r; ++i)
    for (int j = 0; j < nc; ++j)
      pts[static_cast<size_t>(i * nc + j)] =
          rays.point(live[static_cast<size_t>(i)], depths[static_cast<size_t>(i)][j]);
  Tensor alpha_c, payload_c;
  field(pts, &alpha_c, &payload_c);
  const int64_t c = payload_c.dim(1);
  out.channels = c;

  Tensor alpha_full, payload_full;
  std::vector<std::vector<double>> merged(depths);
  if (nf > 0) {
    CompositeResult coarse = composite(reshape(alpha_c, {r, nc}),
                                       reshape(payload_c, {r, nc, c}));
    // fine depths from the coarse weight histogram (detached)
    std::vector<Vec3> fine_pts(static_cast<size_t>(r * nf));
    std::vector<std::vector<double>> fine(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
      RngStream ray_rng = rng.child("fine", live[static_cast<size_t>(i)]);
      std::vector<double> w(coarse.weights.begin() + i * nc,
                            coarse.weights.begin() + (i + 1) * nc);
      fine[static_cast<size_t>(i)] =
          importance_resample(w, rays.near[live[static_cast<size_t>(i)]],
                              rays.far[live[static_cast<size_t>(i)]], nf, ray_rng);
      for (int j = 0; j < nf; ++j)
        fine_pts[static_cast<size_t>(i * nf + j)] =
            rays.point(live[static_cast<size_t>(i)], fine[static_cast<size_t>(i)][j]);
    }
    Tensor alpha_f, payload_f;
    field(fine_pts, &alpha_f, &payload_f);

    // depth-sorted union; gather indices address rows of [coarse ; fine]
    std::vector<int64_t> order(static_cast<size_t>(r * (nc + nf)));
    for (int64_t i = 0; i < r; ++i) {
      std::vector<std::pair<double, int64_t>> keyed;
      keyed.reserve(static_cast<size_t>(nc + nf));
      for (int j = 0; j < nc; ++j)
        keyed.emplace_back(depths[static_cast<size_t>(i)][j], i * nc + j);
      for (int j = 0; j < nf; ++j)
        keyed.emplace_back(fine[static_cast<size_t>(i)][j], r * nc + i * nf + j);
      std::sort(keyed.begin(), keyed.end());
      merged[static_cast<size_t>(i)].resize(static_cast<size_t>(nc + nf));
      for (int j = 0; j < nc + nf; ++j) {
        order[static_cast<size_t>(i * (nc + nf) + j)] = keyed[static_cast<size_t>(j)].second;
        merged[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            keyed[static_cast<size_t>(j)].first;
      }
    }
    Tensor alpha_cat = concat({alpha_c, alpha_f}, 0);
    Tensor payload_cat = concat({payload_c, payload_f}, 0);
    alpha_full = reshape(gather_rows(alpha_cat, order), {r, nc + nf});
    payload_full = reshape(gather_rows(payload_cat, order), {r, nc + nf, c});
  } else {
    alpha_full = reshape(alpha_c, {r, nc});
    payload_full = reshape(payload_c, {r, nc, c});
  }

  CompositeResult fine_pass = composite(alpha_full, payload_full);

  if (live.size() == rays.size()) {
    out.color = fine_pass.rendered;
    out.acc_alpha = fine_pass.acc_alpha;
    return out;
  }
  // scatter live rays back into the full batch (invalid rays stay zero)
  std::vector<int64_t> scatter(rays.size(), 0);
  Tensor zero_row = Tensor::zeros({1, c});
  Tensor zero_acc = Tensor::zeros({1});
  for (size_t i = 0; i < live.size(); ++i) scatter[live[i]] = static_cast<int64_t>(i) + 1;
  Tensor color_ext = concat({zero_row, fine_pass.rendered}, 0);
  Tensor acc_ext = concat({zero_acc, fine_pass.acc_alpha}, 0);
  out.color = gather_rows(color_ext, scatter);
  out.acc_alpha = gather_rows(acc_ext, scatter);
  return out;
}

// ---------------------------------------------------------------------------
// Whole-image rendering
// ---------------------------------------------------------------------------

enum class RenderPayload { Color, CompositedColor, Gamma, SourceGrid };

struct RenderedView {
  Image rgb;   // payload channels (2 or 3)
  Image acc;   // accumulated alpha, single channel
};

// Field sampler over a trained bundle; payload picked per render channel.
inline FieldSampler bundle_sampler(const FieldBundle& bundle, const PreparedScene& scene,
                                   RenderPayload payload) {
  return [&bundle, &scene, payload](const std::vector<Vec3>& pts, Tensor* alpha,
                                    Tensor* out_payload) {
    FieldSamples s = eval_field_bundle(bundle, scene, pts);
    *alpha = s.alpha;
    switch (payload) {
      case RenderPayload::Color:
        *out_payload = s.color;
        break;
      case RenderPayload::CompositedColor:
        *out_payload = s.final_color;
        break;
      case RenderPayload::Gamma: {
        if (bundle.cfg.fusion) {
          // (prediction, frontside, backside)
          Tensor g1 = slice(s.gamma, 1, 0, 1);
          Tensor g2 = slice(s.gamma, 1, 1, 1);
          Tensor g3 = slice(s.gamma, 1, 2, 1);
          *out_payload = concat({g3, g1, g2}, 1);
        } else {
          Tensor pred = add_scalar(neg(s.gamma), 1.0);
          *out_payload = concat({pred, s.gamma, Tensor::zeros(s.gamma.shape())}, 1);
        }
        break;
      }
      case RenderPayload::SourceGrid:
        *out_payload = projections_tensor(pts, scene.cond.source_cam);
        break;
    }
  };
}

// Exact-oracle sampler for analytic scenes (hard occupancy, surface texture).
inline FieldSampler analytic_sampler(const AnalyticScene& scene) {
  return [&scene](const std::vector<Vec3>& pts, Tensor* alpha, Tensor* payload) {
    const int64_t n = static_cast<int64_t>(pts.size());
    std::vector<double> a(static_cast<size_t>(n));
    std::vector<double> c(static_cast<size_t>(n) * 3);
    for (int64_t i = 0; i < n; ++i) {
      a[static_cast<size_t>(i)] = scene.occupancy(pts[static_cast<size_t>(i)]);
      const Vec3 col = scene.color(pts[static_cast<size_t>(i)]);
      c[static_cast<size_t>(i) * 3] = col.x;
      c[static_cast<size_t>(i) * 3 + 1] = col.y;
      c[static_cast<size_t>(i) * 3 + 2] = col.z;
    }
    *alpha = Tensor::from_data({n}, std::move(a));
    *payload = Tensor::from_data({n, 3}, std::move(c));
  };
}

inline RenderedView render_view(const FieldSampler& field, const Camera& cam,
                                const RenderConfig& cfg, RngStream rng,
                                int64_t chunk_rays = 4096) {
  RayBatch all = gen_rays_full(cam);
  RenderedView view;
  view.acc = Image::create(cam.width, cam.height, 1);
  int channels = -1;
  for (size_t start = 0; start < all.size(); start += static_cast<size_t>(chunk_rays)) {
    const size_t end = std::min(all.size(), start + static_cast<size_t>(chunk_rays));
    RayBatch chunk;
    chunk.origins.assign(all.origins.begin() + start, all.origins.begin() + end);
    chunk.directions.assign(all.directions.begin() + start, all.directions.begin() + end);
    chunk.near.assign(all.near.begin() + start, all.near.begin() + end);
    chunk.far.assign(all.far.begin() + start, all.far.begin() + end);
    chunk.valid.assign(all.valid.begin() + start, all.valid.begin() + end);
    chunk.px.assign(all.px.begin() + start, all.px.begin() + end);
    chunk.py.assign(all.py.begin() + start, all.py.begin() + end);
    RayRender rr = render_rays(field, chunk, cfg, rng);
    if (channels < 0) {
      channels = static_cast<int>(rr.channels);
      view.rgb = Image::create(cam.width, cam.height, channels);
    }
    for (size_t i = 0; i < chunk.size(); ++i) {
      const int x = chunk.px[i], y = chunk.py[i];
      for (int ch = 0; ch < channels; ++ch)
        view.rgb.at(ch, y, x) = rr.color.at({static_cast<int64_t>(i), ch});
      view.acc.at(0, y, x) = rr.acc_alpha.at({static_cast<int64_t>(i)});
    }
  }
  return view;
}

inline Image render_mask(const FieldSampler& field, const Camera& cam, const RenderConfig& cfg,
                         RngStream rng, double threshold = 0.5) {
  autodiff::NoGradGuard ng;
  RenderedView v = render_view(field, cam, cfg, rng);
  Image mask = Image::create(cam.width, cam.height, 1);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      mask.at(0, y, x) = v.acc.at(0, y, x) >= threshold ? 1.0 : 0.0;
  return mask;
}

// ---------------------------------------------------------------------------
// Warp fields
// ---------------------------------------------------------------------------

struct WarpField {
  int width = 0, height = 0;
  std::vector<double> u, v;
  std::vector<uint8_t> valid;

  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

// Volume-renders the source-projection payload from the target view, then
// normalizes by accumulated alpha where it exceeds eps. Composites of a
// partial-opacity ray bias coordinates toward zero, which the normalization
// undoes; pixels with A <= eps are marked invalid and carry (0,0).
inline WarpField render_warp_field(const FieldSampler& source_grid_field,
                                   const Camera& target_cam, const RenderConfig& cfg,
                                   RngStream rng) {
  autodiff::NoGradGuard ng;
  RenderedView view = render_view(source_grid_field, target_cam, cfg, rng);
  WarpField warp;
  warp.width = target_cam.width;
  warp.height = target_cam.height;
  const size_t n = static_cast<size_t>(warp.width) * warp.height;
  warp.u.assign(n, 0.0);
  warp.v.assign(n, 0.0);
  warp.valid.assign(n, 0);
  for (int y = 0; y < warp.height; ++y)
    for (int x = 0; x < warp.width; ++x) {
      const double a = view.acc.at(0, y, x);
      if (a > cfg.warp_valid_eps) {
        warp.u[warp.idx(x, y)] = view.rgb.at(0, y, x) / a;
        warp.v[warp.idx(x, y)] = view.rgb.at(1, y, x) / a;
        warp.valid[warp.idx(x, y)] = 1;
      }
    }
  return warp;
}

inline constexpr char kWarpMagic[] = "WARP1";

inline void save_warp(const WarpField& w, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail("save_warp: cannot write " + path);
  os.write(kWarpMagic, 5);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<uint32_t>(w.width));
  put_u32(static_cast<uint32_t>(w.height));
  for (size_t i = 0; i < w.u.size(); ++i) {
    float uf = static_cast<float>(w.u[i]);
    float vf = static_cast<float>(w.v[i]);
    uint32_t ub, vb;
    std::memcpy(&ub, &uf, 4);
    std::memcpy(&vb, &vf, 4);
    put_u32(ub);
    put_u32(vb);
    os.put(static_cast<char>(w.valid[i]));
  }
}

inline WarpField load_warp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_warp: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::string(magic, 5) != kWarpMagic)
    fail("load_warp: unknown magic in " + path);
  auto get_u32 = [&]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) | (b[3] << 24));
  };
  WarpField w;
  w.width = static_cast<int>(get_u32());
  w.height = static_cast<int>(get_u32());
  const size_t n = static_cast<size_t>(w.width) * w.height;
  w.u.resize(n);
  w.v.resize(n);
  w.valid.resize(n);
  for (size_t i = 0; i < n; ++i) {
    uint32_t ub = get_u32(), vb = get_u32();
    float uf, vf;
    std::memcpy(&uf, &ub, 4);
    std::memcpy(&vf, &vb, 4);
    w.u[i] = uf;
    w.v[i] = vf;
    w.valid[i] = static_cast<uint8_t>(is.get());
  }
  if (!is) fail("load_warp: truncated " + path);
  return w;
}

}  // namespace occufield
