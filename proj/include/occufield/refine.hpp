// SPDX-License-Identifier: Apache-2.0
//
// Refinement generator: residual multi-scale source encoder, feature
// warping through the rendered warp field, a feature-pyramid conditioner,
// and spatially-modulated style blocks (modulate, 3x3 conv, channelwise
// standardization, bias + noise) with 2x upsampling every two blocks.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "occufield/checkpoint.hpp"
#include "occufield/image.hpp"
#include "occufield/losses.hpp"
#include "occufield/nn.hpp"
#include "occufield/optim.hpp"
#include "occufield/renderer.hpp"

namespace occufield {

// ---------------------------------------------------------------------------
// Warp-field resampling and feature warping
// ---------------------------------------------------------------------------

// Bilinear resample of the warp field to (w,h); a pixel stays valid only when
// all contributing source pixels are valid.
inline WarpField resize_warp(const WarpField& warp, int w, int h) {
  if (warp.width == w && warp.height == h) return warp;
  WarpField out;
  out.width = w;
  out.height = h;
  const size_t n = static_cast<size_t>(w) * h;
  out.u.assign(n, 0.0);
  out.v.assign(n, 0.0);
  out.valid.assign(n, 0);
  auto axis = [](double c, int extent, int& i0, int& i1, double& f) {
    double half = 0.5 * (extent - 1);
    double x = (c + 1.0) * half;
    if (x <= 0) x = 0;
    if (x >= extent - 1) x = extent - 1;
    i0 = static_cast<int>(x);
    if (i0 > extent - 2) i0 = std::max(0, extent - 2);
    i1 = std::min(i0 + 1, extent - 1);
    f = x - i0;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double uu = (x + 0.5) * 2.0 / w - 1.0;
      const double vv = (y + 0.5) * 2.0 / h - 1.0;
      int x0, x1, y0, y1;
      double fx, fy;
      axis(uu, warp.width, x0, x1, fx);
      axis(vv, warp.height, y0, y1, fy);
      const size_t i00 = warp.idx(x0, y0), i10 = warp.idx(x1, y0);
      const size_t i01 = warp.idx(x0, y1), i11 = warp.idx(x1, y1);
      if (warp.valid[i00] && warp.valid[i10] && warp.valid[i01] && warp.valid[i11]) {
        const size_t o = out.idx(x, y);
        out.u[o] = (1 - fy) * ((1 - fx) * warp.u[i00] + fx * warp.u[i10]) +
                   fy * ((1 - fx) * warp.u[i01] + fx * warp.u[i11]);
        out.v[o] = (1 - fy) * ((1 - fx) * warp.v[i00] + fx * warp.v[i10]) +
                   fy * ((1 - fx) * warp.v[i01] + fx * warp.v[i11]);
        out.valid[o] = 1;
      }
    }
  return out;
}

// Per target location, bilinear sample of the source feature at f(u,v);
// invalid locations produce zero features.
inline Tensor warp_features(const Tensor& f_src, const WarpField& warp) {
  if (f_src.rank() != 3) fail("warp_features: expects [C,H,W] features");
  const int h = static_cast<int>(f_src.dim(1));
  const int w = static_cast<int>(f_src.dim(2));
  const WarpField scaled = resize_warp(warp, w, h);
  std::vector<double> uv(static_cast<size_t>(w) * h * 2);
  std::vector<double> mask(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = scaled.idx(x, y);
      uv[i * 2] = scaled.u[i];
      uv[i * 2 + 1] = scaled.v[i];
      mask[i] = scaled.valid[i] ? 1.0 : 0.0;
    }
  Tensor coords = Tensor::from_data({static_cast<int64_t>(w) * h, 2}, std::move(uv));
  Tensor sampled = grid_sample_bilinear(f_src, coords);             // [HW, C]
  Tensor planes = reshape(transpose2d(sampled), {f_src.dim(0), h, w});
  Tensor valid = Tensor::from_data({1, h, w}, std::move(mask));
  return mul(planes, valid);
}

// ---------------------------------------------------------------------------
// Source encoder (residual, halving per scale)
// ---------------------------------------------------------------------------

struct SourceEncoderConfig {
  std::vector<int> channels{16, 24, 32, 32};  // per scale, full res first
  int scales() const { return static_cast<int>(channels.size()); }
};

struct ResidualBlock {
  Tensor w1, b1, w2, b2;

  static ResidualBlock create(int ch, RngStream rng) {
    ResidualBlock b;
    const double stdev = std::sqrt(2.0 / (ch * 9));
    b.w1 = Tensor::randn({ch, ch, 3, 3}, rng, stdev, true);
    b.b1 = Tensor::zeros({ch}, true);
    b.w2 = Tensor::randn({ch, ch, 3, 3}, rng, stdev, true);
    b.b2 = Tensor::zeros({ch}, true);
    return b;
  }
  Tensor forward(const Tensor& x) const {
    Tensor y = conv2d(leaky_relu(conv2d(x, w1, b1, 1, 1), 0.2), w2, b2, 1, 1);
    return leaky_relu(add(x, y), 0.2);
  }
  void collect(const std::string& p, NamedTensors& out) const {
    out.emplace_back(p + "w1", w1);
    out.emplace_back(p + "b1", b1);
    out.emplace_back(p + "w2", w2);
    out.emplace_back(p + "b2", b2);
  }
  void load(const std::string& p, const NamedTensors& items) {
    w1.impl()->data = require_tensor(items, p + "w1").values();
    b1.impl()->data = require_tensor(items, p + "b1").values();
    w2.impl()->data = require_tensor(items, p + "w2").values();
    b2.impl()->data = require_tensor(items, p + "b2").values();
  }
  void params(std::vector<Tensor>& out) const {
    out.push_back(w1);
    out.push_back(b1);
    out.push_back(w2);
    out.push_back(b2);
  }
};

struct SourceEncoder {
  SourceEncoderConfig cfg;
  Tensor stem_w, stem_b;
  std::vector<Tensor> down_w, down_b;  // stride-2 between scales
  std::vector<ResidualBlock> blocks;   // one per scale

  static SourceEncoder create(const SourceEncoderConfig& cfg, RngStream rng) {
    SourceEncoder enc;
    enc.cfg = cfg;
    enc.stem_w = Tensor::randn({cfg.channels[0], 3, 3, 3}, rng.child("stem"),
                               std::sqrt(2.0 / 27.0), true);
    enc.stem_b = Tensor::zeros({cfg.channels[0]}, true);
    for (int s = 0; s < cfg.scales(); ++s) {
      enc.blocks.push_back(ResidualBlock::create(cfg.channels[static_cast<size_t>(s)],
                                                 rng.child("res", s)));
      if (s + 1 < cfg.scales()) {
        const int in = cfg.channels[static_cast<size_t>(s)];
        const int out = cfg.channels[static_cast<size_t>(s) + 1];
        enc.down_w.push_back(Tensor::randn({out, in, 3, 3}, rng.child("down", s),
                                           std::sqrt(2.0 / (in * 9)), true));
        enc.down_b.push_back(Tensor::zeros({out}, true));
      }
    }
    return enc;
  }

  // Full-resolution scale first; each next scale halves.
  std::vector<Tensor> forward(const Tensor& image) const {
    std::vector<Tensor> feats;
    Tensor x = leaky_relu(conv2d(image, stem_w, stem_b, 1, 1), 0.2);
    for (int s = 0; s < cfg.scales(); ++s) {
      x = blocks[static_cast<size_t>(s)].forward(x);
      feats.push_back(x);
      if (s + 1 < cfg.scales())
        x = leaky_relu(conv2d(x, down_w[static_cast<size_t>(s)],
                              down_b[static_cast<size_t>(s)], 2, 1), 0.2);
    }
    return feats;
  }

  void collect(const std::string& p, NamedTensors& out) const {
    out.emplace_back(p + "stem/w", stem_w);
    out.emplace_back(p + "stem/b", stem_b);
    for (size_t s = 0; s < blocks.size(); ++s)
      blocks[s].collect(p + "res" + std::to_string(s) + "/", out);
    for (size_t s = 0; s < down_w.size(); ++s) {
      out.emplace_back(p + "down" + std::to_string(s) + "/w", down_w[s]);
      out.emplace_back(p + "down" + std::to_string(s) + "/b", down_b[s]);
    }
  }
  void load(const std::string& p, const NamedTensors& items) {
    stem_w.impl()->data = require_tensor(items, p + "stem/w").values();
    stem_b.impl()->data = require_tensor(items, p + "stem/b").values();
    for (size_t s = 0; s < blocks.size(); ++s)
      blocks[s].load(p + "res" + std::to_string(s) + "/", items);
    for (size_t s = 0; s < down_w.size(); ++s) {
      down_w[s].impl()->data = require_tensor(items, p + "down" + std::to_string(s) + "/w").values();
      down_b[s].impl()->data = require_tensor(items, p + "down" + std::to_string(s) + "/b").values();
    }
  }
  void params(std::vector<Tensor>& out) const {
    out.push_back(stem_w);
    out.push_back(stem_b);
    for (const auto& b : blocks) b.params(out);
    for (size_t s = 0; s < down_w.size(); ++s) {
      out.push_back(down_w[s]);
      out.push_back(down_b[s]);
    }
  }
};

// ---------------------------------------------------------------------------
// Style block
// ---------------------------------------------------------------------------

struct StyleBlockParams {
  Tensor affine_scale_w, affine_scale_b;  // 1x1: cond -> feature channels
  Tensor affine_shift_w, affine_shift_b;
  Tensor conv_w;                          // 3x3, bias-free (bias added post-standardization)
  Tensor bias;                            // [C_out]
  Tensor noise_scale;                     // [C_out]
  bool upsample = false;

  static StyleBlockParams create(int in_ch, int out_ch, int cond_ch, bool upsample,
                                 RngStream rng) {
    StyleBlockParams p;
    p.upsample = upsample;
    p.affine_scale_w = Tensor::randn({in_ch, cond_ch, 1, 1}, rng.child("aw"),
                                     std::sqrt(1.0 / cond_ch), true);
    p.affine_scale_b = Tensor::full({in_ch}, 1.0, true);  // start near identity modulation
    p.affine_shift_w = Tensor::randn({in_ch, cond_ch, 1, 1}, rng.child("bw"),
                                     std::sqrt(1.0 / cond_ch), true);
    p.affine_shift_b = Tensor::zeros({in_ch}, true);
    p.conv_w = Tensor::randn({out_ch, in_ch, 3, 3}, rng.child("cw"),
                             std::sqrt(2.0 / (in_ch * 9)), true);
    p.bias = Tensor::zeros({out_ch}, true);
    p.noise_scale = Tensor::zeros({out_ch}, true);
    return p;
  }

  void collect(const std::string& p, NamedTensors& out) const {
    out.emplace_back(p + "affine_scale/w", affine_scale_w);
    out.emplace_back(p + "affine_scale/b", affine_scale_b);
    out.emplace_back(p + "affine_shift/w", affine_shift_w);
    out.emplace_back(p + "affine_shift/b", affine_shift_b);
    out.emplace_back(p + "conv/w", conv_w);
    out.emplace_back(p + "bias", bias);
    out.emplace_back(p + "noise_scale", noise_scale);
  }
  void load(const std::string& p, const NamedTensors& items) {
    affine_scale_w.impl()->data = require_tensor(items, p + "affine_scale/w").values();
    affine_scale_b.impl()->data = require_tensor(items, p + "affine_scale/b").values();
    affine_shift_w.impl()->data = require_tensor(items, p + "affine_shift/w").values();
    affine_shift_b.impl()->data = require_tensor(items, p + "affine_shift/b").values();
    conv_w.impl()->data = require_tensor(items, p + "conv/w").values();
    bias.impl()->data = require_tensor(items, p + "bias").values();
    noise_scale.impl()->data = require_tensor(items, p + "noise_scale").values();
  }
  void params(std::vector<Tensor>& out) const {
    out.push_back(affine_scale_w);
    out.push_back(affine_scale_b);
    out.push_back(affine_shift_w);
    out.push_back(affine_shift_b);
    out.push_back(conv_w);
    out.push_back(bias);
    out.push_back(noise_scale);
  }
};

// Modulate with (alpha, beta) from the warped condition, 3x3 conv,
// standardize each channel to zero mean / unit std over space, then add the
// bias and scaled per-pixel noise. Noise draws come from `noise_rng`; a null
// stream renders deterministically with zero noise.
inline Tensor style_block(const Tensor& features, const Tensor& condition,
                          const StyleBlockParams& p, RngStream* noise_rng) {
  Tensor f = p.upsample ? upsample2x_nearest(features) : features;
  if (condition.dim(1) != f.dim(1) || condition.dim(2) != f.dim(2))
    fail("style_block: condition " + shape_str(condition.shape()) +
         " does not match features " + shape_str(f.shape()));
  Tensor alpha = conv2d(condition, p.affine_scale_w, p.affine_scale_b, 1, 0);
  Tensor beta = conv2d(condition, p.affine_shift_w, p.affine_shift_b, 1, 0);
  Tensor modulated = add(mul(alpha, f), beta);
  Tensor conv_out = conv2d(modulated, p.conv_w, Tensor(), 1, 1);

  const int64_t ch = conv_out.dim(0), h = conv_out.dim(1), w = conv_out.dim(2);
  Tensor flat = reshape(conv_out, {ch, h * w});
  Tensor mu = mean_axis(flat, 1, /*keepdim=*/true);
  Tensor centered = sub(flat, mu);
  Tensor sigma = guard_min_add(sqrt_val(mean_axis(square(centered), 1, true)), 1e-8);
  Tensor standardized = div(centered, sigma);

  Tensor out = add(standardized, reshape(p.bias, {ch, 1}));
  if (noise_rng != nullptr) {
    Tensor noise = Tensor::randn({1, h * w}, *noise_rng);
    out = add(out, mul(reshape(p.noise_scale, {ch, 1}), noise));
  }
  return reshape(out, {ch, h, w});
}

// ---------------------------------------------------------------------------
// Refiner network
// ---------------------------------------------------------------------------

struct RefinerConfig {
  int resolution = 128;
  SourceEncoderConfig source;
  std::vector<int> pyramid_channels{32, 32, 64, 64};  // lowest to highest resolution
  int style_channels = 32;
  int blocks_per_scale = 2;

  int scales() const { return static_cast<int>(pyramid_channels.size()); }
  int lowest_resolution() const { return resolution >> (scales() - 1); }
  void validate() const {
    if (scales() < 2) fail("refiner: need at least two pyramid scales");
    if (static_cast<int>(source.channels.size()) != scales())
      fail("refiner: source encoder scale count must match the pyramid");
    if (resolution % (1 << (scales() - 1)) != 0)
      fail("refiner: resolution " + std::to_string(resolution) + " not divisible by " +
           std::to_string(1 << (scales() - 1)));
  }
};

struct RefinerNet {
  RefinerConfig cfg;
  SourceEncoder src_enc;
  // coarse image -> lowest scale
  std::vector<Tensor> coarse_w, coarse_b;
  // feature pyramid over warped sources (+mask); lowest scale first
  std::vector<Tensor> pyr_w, pyr_b;
  std::vector<StyleBlockParams> style;
  Tensor head_w, head_b;

  static RefinerNet create(const RefinerConfig& cfg, RngStream rng) {
    cfg.validate();
    RefinerNet net;
    net.cfg = cfg;
    net.src_enc = SourceEncoder::create(cfg.source, rng.child("src"));

    // coarse encoder: stride-2 convs down to the lowest scale
    int in = 3;
    for (int s = 0; s + 1 < cfg.scales(); ++s) {
      const int out = cfg.style_channels;
      net.coarse_w.push_back(Tensor::randn({out, in, 3, 3}, rng.child("coarse", s),
                                           std::sqrt(2.0 / (in * 9)), true));
      net.coarse_b.push_back(Tensor::zeros({out}, true));
      in = out;
    }

    // pyramid convs, lowest scale first; kernel 1 at the top scale for cost
    for (int s = 0; s < cfg.scales(); ++s) {
      const int src_ch = cfg.source.channels[static_cast<size_t>(cfg.scales() - 1 - s)];
      const int prev = s == 0 ? 0 : cfg.pyramid_channels[static_cast<size_t>(s - 1)];
      const int in_ch = src_ch + 1 + prev;  // warped features + mask + upsampled carry
      const int out_ch = cfg.pyramid_channels[static_cast<size_t>(s)];
      const int k = s + 1 == cfg.scales() ? 1 : 3;
      net.pyr_w.push_back(Tensor::randn({out_ch, in_ch, k, k}, rng.child("pyr", s),
                                        std::sqrt(2.0 / (in_ch * k * k)), true));
      net.pyr_b.push_back(Tensor::zeros({out_ch}, true));
    }

    // style stack: blocks_per_scale per scale, upsampling on entry to each new scale
    for (int s = 0; s < cfg.scales(); ++s)
      for (int b = 0; b < cfg.blocks_per_scale; ++b)
        net.style.push_back(StyleBlockParams::create(
            cfg.style_channels, cfg.style_channels,
            cfg.pyramid_channels[static_cast<size_t>(s)],
            /*upsample=*/s > 0 && b == 0, rng.child("style", s * 8 + b)));

    net.head_w = Tensor::randn({3, cfg.style_channels, 1, 1}, rng.child("head"), 0.05, true);
    net.head_b = Tensor::zeros({3}, true);
    return net;
  }

  // Box-downsampled foreground mask as a [1,h,w] constant tensor.
  static Tensor resize_mask(const Image& mask, int h, int w) {
    std::vector<double> data(static_cast<size_t>(h) * w, 0.0);
    const int fy = mask.height / h, fx = mask.width / w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx) s += mask.at(0, y * fy + dy, x * fx + dx);
        data[static_cast<size_t>(y) * w + x] = s / (fy * fx) >= 0.5 ? 1.0 : 0.0;
      }
    return Tensor::from_data({1, h, w}, std::move(data));
  }

  // coarse backside render + source image + warp field + target mask -> refined image
  Tensor forward(const Tensor& coarse, const Tensor& source, const WarpField& warp,
                 const Image& mask, RngStream* noise_rng) const {
    if (coarse.rank() != 3 || coarse.dim(1) != cfg.resolution || coarse.dim(2) != cfg.resolution)
      fail("refiner: coarse input " + shape_str(coarse.shape()) + " must be [3," +
           std::to_string(cfg.resolution) + "," + std::to_string(cfg.resolution) + "]");
    if (source.dim(1) != cfg.resolution || warp.width != cfg.resolution)
      fail("refiner: source/warp resolution mismatch");

    std::vector<Tensor> src_feats = src_enc.forward(source);  // full res first
    std::vector<Tensor> conds;                                // lowest scale first
    Tensor carry;
    for (int s = 0; s < cfg.scales(); ++s) {
      const Tensor& f_src = src_feats[static_cast<size_t>(cfg.scales() - 1 - s)];
      Tensor warped = warp_features(f_src, warp);
      const int h = static_cast<int>(warped.dim(1));
      Tensor m = resize_mask(mask, h, h);
      Tensor x = carry.defined() ? concat({upsample2x_nearest(carry), warped, m}, 0)
                                 : concat({warped, m}, 0);
      const int k = s + 1 == cfg.scales() ? 1 : 3;
      carry = leaky_relu(conv2d(x, pyr_w[static_cast<size_t>(s)],
                                pyr_b[static_cast<size_t>(s)], 1, k / 2), 0.2);
      conds.push_back(carry);
    }

    Tensor h = coarse;
    for (size_t i = 0; i < coarse_w.size(); ++i)
      h = leaky_relu(conv2d(h, coarse_w[i], coarse_b[i], 2, 1), 0.2);

    int scale = 0, in_scale = 0;
    for (size_t b = 0; b < style.size(); ++b) {
      if (in_scale == cfg.blocks_per_scale) {
        ++scale;
        in_scale = 0;
      }
      RngStream block_rng = noise_rng ? noise_rng->child("noise", b) : RngStream(0);
      h = style_block(h, conds[static_cast<size_t>(scale)], style[b],
                      noise_rng ? &block_rng : nullptr);
      ++in_scale;
    }
    return sigmoid(conv2d(h, head_w, head_b, 1, 0));
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    src_enc.params(out);
    for (size_t i = 0; i < coarse_w.size(); ++i) {
      out.push_back(coarse_w[i]);
      out.push_back(coarse_b[i]);
    }
    for (size_t i = 0; i < pyr_w.size(); ++i) {
      out.push_back(pyr_w[i]);
      out.push_back(pyr_b[i]);
    }
    for (const auto& s : style) s.params(out);
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
  }

  NamedTensors named_params() const {
    NamedTensors out;
    src_enc.collect("refine/src_enc/", out);
    for (size_t i = 0; i < coarse_w.size(); ++i) {
      out.emplace_back("refine/coarse" + std::to_string(i) + "/w", coarse_w[i]);
      out.emplace_back("refine/coarse" + std::to_string(i) + "/b", coarse_b[i]);
    }
    for (size_t i = 0; i < pyr_w.size(); ++i) {
      out.emplace_back("refine/pyr" + std::to_string(i) + "/w", pyr_w[i]);
      out.emplace_back("refine/pyr" + std::to_string(i) + "/b", pyr_b[i]);
    }
    for (size_t i = 0; i < style.size(); ++i)
      style[i].collect("refine/block" + std::to_string(i) + "/", out);
    out.emplace_back("refine/head/w", head_w);
    out.emplace_back("refine/head/b", head_b);
    return out;
  }
  void load_named_params(const NamedTensors& items) {
    src_enc.load("refine/src_enc/", items);
    for (size_t i = 0; i < coarse_w.size(); ++i) {
      coarse_w[i].impl()->data =
          require_tensor(items, "refine/coarse" + std::to_string(i) + "/w").values();
      coarse_b[i].impl()->data =
          require_tensor(items, "refine/coarse" + std::to_string(i) + "/b").values();
    }
    for (size_t i = 0; i < pyr_w.size(); ++i) {
      pyr_w[i].impl()->data =
          require_tensor(items, "refine/pyr" + std::to_string(i) + "/w").values();
      pyr_b[i].impl()->data =
          require_tensor(items, "refine/pyr" + std::to_string(i) + "/b").values();
    }
    for (size_t i = 0; i < style.size(); ++i)
      style[i].load("refine/block" + std::to_string(i) + "/", items);
    head_w.impl()->data = require_tensor(items, "refine/head/w").values();
    head_b.impl()->data = require_tensor(items, "refine/head/b").values();
  }
};

// ---------------------------------------------------------------------------
// Conditional MLP discriminator with an explicit input-gradient graph
// ---------------------------------------------------------------------------

// Operates on a pooled, flattened (image ; condition) pair. The R1 term needs
// d(||grad_x D||^2)/d(params); building grad_x D out of forward primitives
// (with the rectifier masks frozen at their forward values) keeps that
// differentiable without second-order tape support.
struct MlpDiscriminator {
  int input_dim = 0;
  Tensor w1, b1, w2, b2, w3;  // two hidden leaky layers, linear head

  static MlpDiscriminator create(int input_dim, int hidden, RngStream rng) {
    MlpDiscriminator d;
    d.input_dim = input_dim;
    d.w1 = Tensor::randn({input_dim, hidden}, rng.child("w1"), std::sqrt(2.0 / input_dim), true);
    d.b1 = Tensor::zeros({hidden}, true);
    d.w2 = Tensor::randn({hidden, hidden}, rng.child("w2"), std::sqrt(2.0 / hidden), true);
    d.b2 = Tensor::zeros({hidden}, true);
    d.w3 = Tensor::randn({hidden, 1}, rng.child("w3"), std::sqrt(1.0 / hidden), true);
    return d;
  }

  static constexpr double kSlope = 0.2;

  Tensor logit(const Tensor& x /*[1,input_dim]*/) const {
    Tensor h1 = leaky_relu(add(matmul(x, w1), b1), kSlope);
    Tensor h2 = leaky_relu(add(matmul(h1, w2), b2), kSlope);
    return reshape(matmul(h2, w3), {});
  }

  // ||grad_x D||^2 as a graph over the parameters, with rectifier slopes
  // taken from a NoGrad forward at x.
  Tensor input_grad_sqnorm(const Tensor& x) const {
    std::vector<double> m1v, m2v;
    {
      autodiff::NoGradGuard ng;
      Tensor z1 = add(matmul(x, w1), b1);
      for (int64_t i = 0; i < z1.numel(); ++i)
        m1v.push_back(z1.data()[i] >= 0 ? 1.0 : kSlope);
      Tensor h1 = leaky_relu(z1, kSlope);
      Tensor z2 = add(matmul(h1, w2), b2);
      for (int64_t i = 0; i < z2.numel(); ++i)
        m2v.push_back(z2.data()[i] >= 0 ? 1.0 : kSlope);
    }
    Tensor m1 = Tensor::from_data({1, static_cast<int64_t>(m1v.size())}, m1v);
    Tensor m2 = Tensor::from_data({1, static_cast<int64_t>(m2v.size())}, m2v);
    // grad_x = W1 (m1 . W2 (m2 . w3))
    Tensor t2 = mul(transpose2d(w3), m2);              // [1,hidden]
    Tensor t1 = mul(matmul(t2, transpose2d(w2)), m1);  // [1,hidden]
    Tensor gx = matmul(t1, transpose2d(w1));           // [1,input_dim]
    return sum_all(square(gx));
  }

  std::vector<Tensor> params() const { return {w1, b1, w2, b2, w3}; }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RefineSample {
  Image source;       // frontal view
  Image coarse_back;  // initial-stage backside render
  Image gt_back;      // ground-truth backside view
  Image mask;         // backside foreground mask
  WarpField warp;
};

struct RefineTrainConfig {
  int steps = 600;
  double generator_ratio = 0.8;  // lr = 2e-3 * ratio, beta2 = 0.99^ratio
  double lambda_vgg = 1.0;
  double lambda_l1 = 1.0;
  bool adversarial = false;
  double lambda_r1 = 10.0;
  double disc_ratio = 16.0 / 17.0;
  uint64_t seed = 1;
  int checkpoint_every = 200;
  int log_every = 10;
  std::string out_dir;  // empty = no checkpoints
  uint64_t perceptual_seed = 4242;
};

inline AdamConfig refine_adam_config(double ratio) {
  AdamConfig cfg;
  cfg.learning_rate = 2e-3 * ratio;
  cfg.beta1 = 0.0;
  cfg.beta2 = std::pow(0.99, ratio);
  return cfg;
}

struct RefineTrainResult {
  double first_loss = 0;
  double last_loss = 0;
  int steps_run = 0;
};

// Reconstruction-mode refinement training (masked L1 + perceptual); the
// adversarial term joins when cfg.adversarial is set. NaN loss aborts after
// the last good checkpoint is kept on disk.
inline RefineTrainResult train_refiner(RefinerNet& net, const std::vector<RefineSample>& data,
                                       const RefineTrainConfig& cfg, LossCsv* csv = nullptr) {
  if (data.empty()) fail("train_refiner: empty dataset");
  FeaturePyramidExtractor extractor =
      FeaturePyramidExtractor::create(5, 8, cfg.perceptual_seed);
  std::vector<Tensor> params = net.params();
  OptimState opt = make_adam(params, refine_adam_config(cfg.generator_ratio));

  MlpDiscriminator disc;
  std::vector<Tensor> disc_params;
  OptimState disc_opt;
  const int pool = std::max(1, net.cfg.resolution / 32);
  if (cfg.adversarial) {
    const int side = net.cfg.resolution / pool;
    disc = MlpDiscriminator::create(6 * side * side, 128, RngStream(cfg.seed).child("disc"));
    disc_params = disc.params();
    disc_opt = make_adam(disc_params, refine_adam_config(cfg.disc_ratio));
  }

  RngStream root(cfg.seed);
  RefineTrainResult result;
  auto save = [&](const std::string& name) {
    if (cfg.out_dir.empty()) return;
    save_checkpoint(cfg.out_dir + "/" + name, net.named_params());
  };

  for (int step = 0; step < cfg.steps; ++step) {
    RngStream it = root.child("refine_step", static_cast<uint64_t>(step));
    const RefineSample& sample = data[static_cast<size_t>(it.uniform_int(
        static_cast<int64_t>(data.size())))];
    RngStream noise = it.child("noise");

    Tensor coarse = sample.coarse_back.to_tensor();
    Tensor source = sample.source.to_tensor();
    Tensor target = sample.gt_back.to_tensor();
    Tensor mask = sample.mask.to_tensor();

    Tensor refined = net.forward(coarse, source, sample.warp, sample.mask, &noise);
    Tensor l1 = loss_l1_masked(refined, target, mask);
    Tensor vgg = cfg.lambda_vgg > 0 ? loss_perceptual(refined, target, mask, extractor)
                                    : Tensor::scalar(0.0);

    Tensor adv;
    if (cfg.adversarial) {
      Tensor fake_in = concat({avg_pool2d(refined, pool), avg_pool2d(coarse, pool)}, 0);
      Tensor fake_flat = reshape(fake_in, {1, disc.input_dim});
      adv = softplus(neg(disc.logit(fake_flat)));
    }
    Tensor total = loss_refine_total(adv, vgg, l1, cfg.lambda_vgg, cfg.lambda_l1);

    const double loss_value = total.value();
    if (!std::isfinite(loss_value)) {
      save("refiner_last.occf");
      fail("train_refiner: non-finite loss at step " + std::to_string(step) +
           "; last checkpoint retained");
    }
    if (step == 0) result.first_loss = loss_value;
    result.last_loss = loss_value;

    zero_grads(params);
    backward(total);
    adam_step(params, opt);

    if (cfg.adversarial) {
      autodiff::NoGradGuard* no = nullptr;  // discriminator pass keeps its own graph
      (void)no;
      Tensor refined_detached = net.forward(coarse, source, sample.warp, sample.mask, &noise)
                                    .detach();
      Tensor fake_flat =
          reshape(concat({avg_pool2d(refined_detached, pool), avg_pool2d(coarse, pool)}, 0),
                  {1, disc.input_dim});
      Tensor real_flat =
          reshape(concat({avg_pool2d(target, pool), avg_pool2d(coarse, pool)}, 0),
                  {1, disc.input_dim});
      Tensor r1 = disc.input_grad_sqnorm(real_flat);
      GanLossPair pair =
          loss_gan_pair(disc.logit(real_flat), disc.logit(fake_flat), r1, cfg.lambda_r1);
      zero_grads(disc_params);
      backward(pair.discriminator);
      adam_step(disc_params, disc_opt);
    }

    if (csv && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      csv->log(step, "refine_l1", l1.value());
      csv->log(step, "refine_vgg", vgg.value());
      csv->log(step, "refine_total", loss_value);
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save("refiner_step" + std::to_string(step + 1) + ".occf");
    result.steps_run = step + 1;
  }
  save("refiner_final.occf");
  return result;
}

}  // namespace occufield
