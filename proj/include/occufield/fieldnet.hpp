// SPDX-License-Identifier: Apache-2.0
//
// The implicit field: positional encoding, a skip-connected MLP over
// [encoded point ; condition], sigmoid occupancy/color heads, and the
// blend-weight compositing rules for the initial (scalar gamma) and fusion
// (softmax 3-gamma) stages.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "occufield/checkpoint.hpp"
#include "occufield/condition.hpp"
#include "occufield/encoders.hpp"
#include "occufield/image.hpp"
#include "occufield/proxy.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

// [p ; sin(2^l pi p) ; cos(2^l pi p) for l in 0..L-1], length 3 + 6L per point.
inline Tensor positional_encode(const std::vector<Vec3>& points, int frequencies) {
  if (frequencies < 0) fail("positional_encode: negative frequency count");
  const int64_t n = static_cast<int64_t>(points.size());
  const int64_t dim = 3 + 6 * frequencies;
  std::vector<double> data(static_cast<size_t>(n * dim));
  for (int64_t i = 0; i < n; ++i) {
    const double p[3] = {points[static_cast<size_t>(i)].x, points[static_cast<size_t>(i)].y,
                         points[static_cast<size_t>(i)].z};
    double* row = data.data() + i * dim;
    row[0] = p[0];
    row[1] = p[1];
    row[2] = p[2];
    double freq = M_PI;
    for (int l = 0; l < frequencies; ++l) {
      for (int c = 0; c < 3; ++c) {
        row[3 + 6 * l + c] = std::sin(freq * p[c]);
        row[3 + 6 * l + 3 + c] = std::cos(freq * p[c]);
      }
      freq *= 2.0;
    }
  }
  return Tensor::from_data({n, dim}, std::move(data));
}

struct FieldConfig {
  std::vector<int> widths{128, 128, 64, 64};
  int pe_frequencies = 6;
  int cond_dim = 24;
  bool fusion = false;

  int head_width() const { return fusion ? 7 : 5; }
  int input_dim() const { return 3 + 6 * pe_frequencies + cond_dim; }
};

// Skip-connected MLP; the full input re-concatenates before every hidden
// layer after the first. Head is linear with 5 (initial) or 7 (fusion) outputs.
struct FieldMlp {
  FieldConfig cfg;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static FieldMlp create(const FieldConfig& cfg, RngStream rng) {
    if (cfg.widths.empty()) fail("field mlp: no hidden layers");
    FieldMlp mlp;
    mlp.cfg = cfg;
    int in = cfg.input_dim();
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
      const int out = cfg.widths[i];
      RngStream layer = rng.child("field_layer", i);
      mlp.weights.push_back(Tensor::randn({in, out}, layer, std::sqrt(2.0 / in), true));
      mlp.biases.push_back(Tensor::zeros({out}, true));
      in = out + cfg.input_dim();  // skip concat feeds the next layer
    }
    RngStream head = rng.child("field_head");
    mlp.weights.push_back(
        Tensor::randn({cfg.widths.back(), cfg.head_width()}, head, 0.05, true));
    mlp.biases.push_back(Tensor::zeros({cfg.head_width()}, true));
    return mlp;
  }

  void check_finite() const {
    for (const auto& w : weights)
      for (int64_t i = 0; i < w.numel(); ++i)
        if (!std::isfinite(w.data()[i])) fail("field mlp: non-finite parameter");
  }

  // x: [N, input_dim] -> raw head [N, head_width]
  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != cfg.input_dim())
      fail("field mlp: input " + shape_str(x.shape()) + " does not match width " +
           std::to_string(cfg.input_dim()));
    check_finite();
    Tensor h = leaky_relu(add(matmul(x, weights[0]), biases[0]), 0.01);
    for (size_t i = 1; i < cfg.widths.size(); ++i)
      h = leaky_relu(add(matmul(concat({h, x}, 1), weights[i]), biases[i]), 0.01);
    return add(matmul(h, weights.back()), biases.back());
  }

  void collect_params(const std::string& prefix, NamedTensors& out) const {
    for (size_t i = 0; i < weights.size(); ++i) {
      const std::string tag = i + 1 == weights.size() ? "head" : "layer" + std::to_string(i);
      out.emplace_back(prefix + tag + "/w", weights[i]);
      out.emplace_back(prefix + tag + "/b", biases[i]);
    }
  }
  void load_params(const std::string& prefix, const NamedTensors& items) {
    for (size_t i = 0; i < weights.size(); ++i) {
      const std::string tag = i + 1 == weights.size() ? "head" : "layer" + std::to_string(i);
      Tensor w = require_tensor(items, prefix + tag + "/w");
      Tensor b = require_tensor(items, prefix + tag + "/b");
      if (w.shape() != weights[i].shape())
        fail("field mlp: checkpoint shape " + shape_str(w.shape()) + " != " +
             shape_str(weights[i].shape()));
      weights[i].impl()->data = w.values();
      biases[i].impl()->data = b.values();
    }
  }
  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (size_t i = 0; i < weights.size(); ++i) {
      out.push_back(weights[i]);
      out.push_back(biases[i]);
    }
    return out;
  }
};

struct FieldOutput {
  Tensor alpha;  // [N]
  Tensor color;  // [N,3]
  Tensor gamma;  // [N,1] initial, [N,3] simplex rows in fusion
};

// Split + activate the raw head: columns (c:3, alpha:1, gamma:rest).
inline FieldOutput field_head(const Tensor& raw, bool fusion) {
  FieldOutput out;
  out.color = sigmoid(slice(raw, 1, 0, 3));
  out.alpha = reshape(sigmoid(slice(raw, 1, 3, 1)), {raw.dim(0)});
  if (fusion)
    out.gamma = softmax(slice(raw, 1, 4, 3), 1);
  else
    out.gamma = sigmoid(slice(raw, 1, 4, 1));
  return out;
}

inline FieldOutput field_eval(const FieldMlp& mlp, const std::vector<Vec3>& points,
                              const Tensor& condition) {
  if (condition.rank() != 2 || condition.dim(0) != static_cast<int64_t>(points.size()))
    fail("field_eval: condition batch " + shape_str(condition.shape()) + " != " +
         std::to_string(points.size()) + " points");
  Tensor encoded = positional_encode(points, mlp.cfg.pe_frequencies);
  Tensor x = concat({encoded, condition}, 1);
  return field_head(mlp.forward(x), mlp.cfg.fusion);
}

// c' = gamma * source + (1 - gamma) * predicted
inline Tensor composite_color_initial(const Tensor& gamma, const Tensor& pred_color,
                                      const Tensor& source_sample) {
  return add(mul(gamma, source_sample), mul(add_scalar(neg(gamma), 1.0), pred_color));
}

// c' = g1 * source + g2 * backside + g3 * predicted, gamma rows on the simplex
inline Tensor composite_color_fusion(const Tensor& gamma3, const Tensor& pred_color,
                                     const Tensor& source_sample, const Tensor& back_sample) {
  Tensor g1 = slice(gamma3, 1, 0, 1);
  Tensor g2 = slice(gamma3, 1, 1, 1);
  Tensor g3 = slice(gamma3, 1, 2, 1);
  return add(add(mul(g1, source_sample), mul(g2, back_sample)), mul(g3, pred_color));
}

// ---------------------------------------------------------------------------
// Bundle: encoders + MLP + per-scene prepared features
// ---------------------------------------------------------------------------

struct FieldBundleConfig {
  ImageEncoderConfig image;
  VolumeEncoderConfig volume;
  std::vector<int> mlp_widths{128, 128, 64, 64};
  int pe_frequencies = 6;
  bool fusion = false;

  FieldConfig field() const {
    FieldConfig f;
    f.widths = mlp_widths;
    f.pe_frequencies = pe_frequencies;
    f.fusion = fusion;
    f.cond_dim = image.out_channels() * (fusion ? 2 : 1) + volume.out_channels();
    return f;
  }
};

struct FieldBundle {
  FieldBundleConfig cfg;
  ImageEncoder img_enc;
  VolumeEncoder vol_enc;
  FieldMlp mlp;

  static FieldBundle create(const FieldBundleConfig& cfg, RngStream rng) {
    FieldBundle b;
    b.cfg = cfg;
    b.img_enc = ImageEncoder::create(cfg.image, rng.child("img_enc"));
    b.vol_enc = VolumeEncoder::create(cfg.volume, rng.child("vol_enc"));
    b.mlp = FieldMlp::create(cfg.field(), rng.child("mlp"));
    return b;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& p : img_enc.params()) out.push_back(p);
    for (auto& p : vol_enc.params()) out.push_back(p);
    for (auto& p : mlp.params()) out.push_back(p);
    return out;
  }

  NamedTensors named_params() const {
    NamedTensors out;
    img_enc.collect_params("cond/img_enc/", out);
    vol_enc.collect_params("cond/vol_enc/", out);
    mlp.collect_params("fieldnet/", out);
    return out;
  }
  void load_named_params(const NamedTensors& items) {
    img_enc.load_params("cond/img_enc/", items);
    vol_enc.load_params("cond/vol_enc/", items);
    mlp.load_params("fieldnet/", items);
  }
};

// Per-scene inputs with encoder features; graph-connected while training.
struct PreparedScene {
  ConditionInputs cond;
  Image source;
  Image backside;        // fusion only
  bool has_backside = false;
};

inline PreparedScene prepare_scene(const FieldBundle& bundle, const Image& source,
                                   const Camera& source_cam, const ProxyVolume& proxy,
                                   const Image* backside = nullptr,
                                   const Camera* back_cam = nullptr) {
  if (bundle.cfg.fusion && (backside == nullptr || back_cam == nullptr))
    fail("prepare_scene: fusion bundle requires a backside view");
  PreparedScene ps;
  ps.source = source;
  ps.cond.f_img = bundle.img_enc.forward(source.to_tensor());
  ps.cond.f_vol = bundle.vol_enc.forward(proxy.to_tensor());
  ps.cond.source_cam = source_cam;
  ps.cond.fusion = bundle.cfg.fusion;
  if (bundle.cfg.fusion) {
    ps.backside = *backside;
    ps.has_backside = true;
    ps.cond.f_img_back = bundle.img_enc.forward(backside->to_tensor());
    ps.cond.back_cam = *back_cam;
  }
  return ps;
}

// Bilinear samples of a raw image at each point's camera projection.
inline Tensor image_samples_at(const Image& img, const Camera& cam,
                               const std::vector<Vec3>& points) {
  std::vector<double> data(points.size() * 3);
  double px[4];
  for (size_t i = 0; i < points.size(); ++i) {
    const Vec2 uv = cam.project(points[i]);
    img.sample_bilinear(uv.x, uv.y, px);
    data[i * 3] = px[0];
    data[i * 3 + 1] = px[1];
    data[i * 3 + 2] = px[2];
  }
  return Tensor::from_data({static_cast<int64_t>(points.size()), 3}, std::move(data));
}

struct FieldSamples {
  Tensor alpha;        // [N]
  Tensor color;        // [N,3] predicted c
  Tensor gamma;        // [N,1] or [N,3]
  Tensor final_color;  // [N,3] gamma-composited c'
};

inline FieldSamples eval_field_bundle(const FieldBundle& bundle, const PreparedScene& scene,
                                      const std::vector<Vec3>& points) {
  Tensor cond = build_condition(points, scene.cond);
  FieldOutput head = field_eval(bundle.mlp, points, cond);
  FieldSamples out;
  out.alpha = head.alpha;
  out.color = head.color;
  out.gamma = head.gamma;
  Tensor src = image_samples_at(scene.source, scene.cond.source_cam, points);
  if (bundle.cfg.fusion) {
    Tensor back = image_samples_at(scene.backside, scene.cond.back_cam, points);
    out.final_color = composite_color_fusion(head.gamma, head.color, src, back);
  } else {
    out.final_color = composite_color_initial(head.gamma, head.color, src);
  }
  return out;
}

}  // namespace occufield
