// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: squared-error occupancy + absolute-error color point
// reconstruction, per-ray volume rendering error on both color variants,
// masked L1, a multi-scale perceptual loss over a frozen random conv
// pyramid, and the non-saturating GAN pair with an R1 term.

#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "occufield/nn.hpp"
#include "occufield/rng.hpp"
#include "occufield/synth.hpp"
#include "occufield/tensor.hpp"

namespace occufield {

// ---------------------------------------------------------------------------
// Point supervision
// ---------------------------------------------------------------------------

struct PointSampleSet {
  std::vector<Vec3> occ_points;
  std::vector<double> occ_targets;   // {0,1}
  std::vector<Vec3> color_points;
  std::vector<Vec3> color_targets;
};

// Occupancy points: half uniform over the cube, half near-surface gaussian
// perturbations (sigma); color points near-surface with sigma/2.
inline PointSampleSet sample_points(const AnalyticScene& scene, int n_occ, int n_color,
                                    double sigma, RngStream rng) {
  if (n_occ < 1 || n_color < 1) fail("sample_points: counts must be >= 1");
  PointSampleSet set;
  set.occ_points.reserve(static_cast<size_t>(n_occ));
  RngStream occ_rng = rng.child("occ");
  for (int i = 0; i < n_occ; ++i) {
    Vec3 p;
    if (i % 2 == 0) {
      p = {occ_rng.uniform(-1, 1), occ_rng.uniform(-1, 1), occ_rng.uniform(-1, 1)};
    } else {
      p = scene.sample_surface(occ_rng);
      p += Vec3{occ_rng.normal(), occ_rng.normal(), occ_rng.normal()} * sigma;
    }
    set.occ_points.push_back(p);
    set.occ_targets.push_back(scene.occupancy(p));
  }
  RngStream col_rng = rng.child("color");
  for (int i = 0; i < n_color; ++i) {
    Vec3 p = scene.sample_surface(col_rng);
    p += Vec3{col_rng.normal(), col_rng.normal(), col_rng.normal()} * (sigma * 0.5);
    set.color_points.push_back(p);
    set.color_targets.push_back(scene.color(p));
  }
  return set;
}

inline Tensor targets_tensor(const std::vector<double>& v) {
  return Tensor::from_data({static_cast<int64_t>(v.size())}, v);
}
inline Tensor targets_tensor(const std::vector<Vec3>& v) {
  std::vector<double> d(v.size() * 3);
  for (size_t i = 0; i < v.size(); ++i) {
    d[i * 3] = v[i].x;
    d[i * 3 + 1] = v[i].y;
    d[i * 3 + 2] = v[i].z;
  }
  return Tensor::from_data({static_cast<int64_t>(v.size()), 3}, std::move(d));
}

// mean |alpha - alpha*|^2 + mean |c - c*| + mean |c' - c*|, color terms
// averaged over points and channels.
inline Tensor loss_recon(const Tensor& alpha_pred, const Tensor& alpha_target,
                         const Tensor& color_pred, const Tensor& final_color_pred,
                         const Tensor& color_target) {
  if (alpha_pred.shape() != alpha_target.shape())
    fail("loss_recon: occupancy prediction " + shape_str(alpha_pred.shape()) +
         " vs target " + shape_str(alpha_target.shape()));
  if (color_pred.shape() != color_target.shape() ||
      final_color_pred.shape() != color_target.shape())
    fail("loss_recon: color prediction/target shapes disagree");
  Tensor occ = mean_all(square(sub(alpha_pred, alpha_target)));
  Tensor col = mean_all(abs_val(sub(color_pred, color_target)));
  Tensor fin = mean_all(abs_val(sub(final_color_pred, color_target)));
  return add(add(occ, col), fin);
}

// mean |c_r - c*_r| summed over the two color variants.
inline Tensor loss_vol(const Tensor& rendered_color, const Tensor& rendered_final,
                       const Tensor& target) {
  if (rendered_color.shape() != target.shape() || rendered_final.shape() != target.shape())
    fail("loss_vol: rendered/target shapes disagree");
  return add(mean_all(abs_val(sub(rendered_color, target))),
             mean_all(abs_val(sub(rendered_final, target))));
}

// ---------------------------------------------------------------------------
// Image-space losses
// ---------------------------------------------------------------------------

inline Tensor loss_l1_masked(const Tensor& refined, const Tensor& target, const Tensor& mask) {
  if (refined.shape() != target.shape())
    fail("loss_l1_masked: image shapes " + shape_str(refined.shape()) + " vs " +
         shape_str(target.shape()));
  if (mask.rank() != 3 || mask.dim(1) != refined.dim(1) || mask.dim(2) != refined.dim(2))
    fail("loss_l1_masked: mask shape " + shape_str(mask.shape()) + " mismatch");
  return mean_all(abs_val(sub(mul(refined, mask), mul(target, mask))));
}

// Frozen random conv pyramid; level 0 keeps resolution, each further level
// halves it. Weights are seeded once and never trained.
struct FeaturePyramidExtractor {
  int levels = 5;
  int channels = 8;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static FeaturePyramidExtractor create(int levels, int channels, uint64_t seed) {
    if (levels < 1) fail("feature pyramid: need at least one level");
    FeaturePyramidExtractor fe;
    fe.levels = levels;
    fe.channels = channels;
    RngStream rng(seed);
    int in = 3;
    for (int i = 0; i < levels; ++i) {
      RngStream layer = rng.child("pyr", static_cast<uint64_t>(i));
      fe.weights.push_back(
          Tensor::randn({channels, in, 3, 3}, layer, std::sqrt(2.0 / (in * 9)), false));
      fe.biases.push_back(Tensor::zeros({channels}, false));
      in = channels;
    }
    return fe;
  }

  std::vector<Tensor> forward(const Tensor& img) const {
    std::vector<Tensor> feats;
    Tensor x = img;
    for (int i = 0; i < levels; ++i) {
      x = leaky_relu(conv2d(x, weights[static_cast<size_t>(i)],
                            biases[static_cast<size_t>(i)], i == 0 ? 1 : 2, 1), 0.2);
      feats.push_back(x);
    }
    return feats;
  }
};

// sum_i w_i * mean |phi_i(refined*M) - phi_i(target*M)| for caller-supplied weights.
inline Tensor perceptual_weighted(const Tensor& refined, const Tensor& target,
                                  const Tensor& mask, const FeaturePyramidExtractor& extractor,
                                  const std::vector<double>& scale_weights) {
  if (static_cast<int>(scale_weights.size()) != extractor.levels)
    fail("perceptual: weight count " + std::to_string(scale_weights.size()) +
         " does not match extractor levels " + std::to_string(extractor.levels));
  std::vector<Tensor> fr = extractor.forward(mul(refined, mask));
  std::vector<Tensor> ft = extractor.forward(mul(target, mask));
  Tensor total = Tensor::scalar(0.0);
  for (int i = 0; i < extractor.levels; ++i)
    total = add(total, mul_scalar(mean_all(abs_val(sub(fr[static_cast<size_t>(i)],
                                                       ft[static_cast<size_t>(i)]))),
                                  scale_weights[static_cast<size_t>(i)]));
  return total;
}

inline const std::vector<double>& perceptual_scale_weights() {
  static const std::vector<double> w = {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};
  return w;
}

inline Tensor loss_perceptual(const Tensor& refined, const Tensor& target, const Tensor& mask,
                              const FeaturePyramidExtractor& extractor) {
  if (extractor.levels != 5)
    fail("loss_perceptual: extractor must provide 5 scales, has " +
         std::to_string(extractor.levels));
  return perceptual_weighted(refined, target, mask, extractor, perceptual_scale_weights());
}

// ---------------------------------------------------------------------------
// Adversarial formulas
// ---------------------------------------------------------------------------

// g(x) = -log(1 + e^{-x})
inline Tensor gan_g(const Tensor& x) { return neg(softplus(neg(x))); }
inline double gan_g(double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); }

struct GanLossPair {
  Tensor generator;
  Tensor discriminator;
};

// Non-saturating pair; the discriminator side adds lambda * ||grad_x D||^2
// with the squared norm supplied by the caller's explicit gradient pass.
inline GanLossPair loss_gan_pair(const Tensor& disc_real_logit, const Tensor& disc_fake_logit,
                                 const Tensor& disc_input_grad_sqnorm, double lambda) {
  GanLossPair pair;
  pair.generator = softplus(neg(disc_fake_logit));
  Tensor d = add(softplus(disc_fake_logit), softplus(neg(disc_real_logit)));
  if (disc_input_grad_sqnorm.defined())
    d = add(d, mul_scalar(disc_input_grad_sqnorm, lambda));
  pair.discriminator = d;
  return pair;
}

inline Tensor loss_refine_total(const Tensor& adv, const Tensor& vgg, const Tensor& l1,
                                double lambda_vgg, double lambda_l1) {
  if (lambda_vgg < 0 || lambda_l1 < 0) fail("loss_refine_total: weights must be >= 0");
  Tensor total = add(mul_scalar(vgg, lambda_vgg), mul_scalar(l1, lambda_l1));
  if (adv.defined()) total = add(total, adv);
  return total;
}

// ---------------------------------------------------------------------------
// Loss curve CSV
// ---------------------------------------------------------------------------

class LossCsv {
 public:
  explicit LossCsv(const std::string& path) {
    const bool fresh = [&] {
      std::ifstream probe(path);
      return !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
    }();
    os_.open(path, std::ios::app);
    if (!os_) fail("LossCsv: cannot open " + path);
    if (fresh) os_ << "step,loss_name,value\n";
  }
  void log(int64_t step, const std::string& name, double value) {
    os_ << step << "," << name << "," << value << "\n";
  }
  void flush() { os_.flush(); }

 private:
  std::ofstream os_;
};

}  // namespace occufield
