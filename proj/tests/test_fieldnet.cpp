// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "occufield/fieldnet.hpp"
#include "occufield/synth.hpp"

using namespace occufield;

TEST(PositionalEncode, ZeroPoint) {
  Tensor enc = positional_encode({{0, 0, 0}}, 4);
  ASSERT_EQ(enc.shape(), (Shape{1, 27}));
  for (int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(enc.at({0, i}), 0.0);
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 3; ++c) {
      EXPECT_DOUBLE_EQ(enc.at({0, 3 + 6 * l + c}), 0.0);      // sin terms
      EXPECT_DOUBLE_EQ(enc.at({0, 3 + 6 * l + 3 + c}), 1.0);  // cos terms
    }
}

TEST(PositionalEncode, ZeroFrequenciesIsIdentity) {
  Tensor enc = positional_encode({{0.2, -0.5, 0.9}}, 0);
  ASSERT_EQ(enc.shape(), (Shape{1, 3}));
  EXPECT_DOUBLE_EQ(enc.at({0, 0}), 0.2);
  EXPECT_DOUBLE_EQ(enc.at({0, 1}), -0.5);
  EXPECT_DOUBLE_EQ(enc.at({0, 2}), 0.9);
}

TEST(PositionalEncode, LengthForSixFrequencies) {
  Tensor enc = positional_encode({{0.1, 0.2, 0.3}}, 6);
  EXPECT_EQ(enc.dim(1), 39);
}

TEST(PositionalEncode, FrequencyDoubling) {
  const double x = 0.37;
  Tensor enc = positional_encode({{x, 0, 0}}, 3);
  EXPECT_NEAR(enc.at({0, 3}), std::sin(M_PI * x), 1e-15);
  EXPECT_NEAR(enc.at({0, 9}), std::sin(2 * M_PI * x), 1e-15);
  EXPECT_NEAR(enc.at({0, 15}), std::sin(4 * M_PI * x), 1e-15);
}

namespace {
FieldMlp tiny_mlp(bool fusion, uint64_t seed = 3) {
  FieldConfig cfg;
  cfg.widths = {8, 6};
  cfg.pe_frequencies = 2;
  cfg.cond_dim = 4;
  cfg.fusion = fusion;
  return FieldMlp::create(cfg, RngStream(seed));
}
}  // namespace

TEST(FieldEval, ZeroFinalLayerGivesSigmoidMidpoint) {
  FieldMlp mlp = tiny_mlp(false);
  for (auto& v : mlp.weights.back().impl()->data) v = 0.0;
  for (auto& v : mlp.biases.back().impl()->data) v = 0.0;
  RngStream rng(5);
  std::vector<Vec3> pts = {{0.1, 0.2, 0.3}, {-0.4, 0.5, -0.6}};
  Tensor cond = Tensor::randn({2, 4}, rng);
  FieldOutput out = field_eval(mlp, pts, cond);
  for (int64_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(out.alpha.at({i}), 0.5);
    for (int64_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.color.at({i, c}), 0.5);
    EXPECT_DOUBLE_EQ(out.gamma.at({i, 0}), 0.5);
  }
}

TEST(FieldEval, FusionEqualLogitsGiveUniformGamma) {
  FieldMlp mlp = tiny_mlp(true);
  for (auto& v : mlp.weights.back().impl()->data) v = 0.0;
  for (auto& v : mlp.biases.back().impl()->data) v = 0.0;
  RngStream rng(6);
  std::vector<Vec3> pts = {{0.0, 0.1, 0.2}};
  FieldOutput out = field_eval(mlp, pts, Tensor::randn({1, 4}, rng));
  ASSERT_EQ(out.gamma.shape(), (Shape{1, 3}));
  double sum = 0;
  for (int64_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(out.gamma.at({0, c}), 1.0 / 3.0, 1e-15);
    sum += out.gamma.at({0, c});
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(FieldEval, BatchEqualsPerPointEvaluation) {
  FieldMlp mlp = tiny_mlp(false, 11);
  RngStream rng(7);
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i)
    pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  Tensor cond = Tensor::randn({6, 4}, rng);
  FieldOutput batched = field_eval(mlp, pts, cond);
  for (size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> row(4);
    for (int64_t j = 0; j < 4; ++j) row[static_cast<size_t>(j)] = cond.at({static_cast<int64_t>(i), j});
    FieldOutput single = field_eval(mlp, {pts[i]}, Tensor::from_data({1, 4}, row));
    EXPECT_EQ(single.alpha.at({0}), batched.alpha.at({static_cast<int64_t>(i)}));
    for (int64_t c = 0; c < 3; ++c)
      EXPECT_EQ(single.color.at({0, c}), batched.color.at({static_cast<int64_t>(i), c}));
  }
}

TEST(FieldEval, NanParameterRejected) {
  FieldMlp mlp = tiny_mlp(false);
  mlp.weights[0].impl()->data[0] = std::nan("");
  EXPECT_THROW(field_eval(mlp, {{0, 0, 0}}, Tensor::zeros({1, 4})), std::invalid_argument);
}

TEST(CompositeInitial, EndpointsAndBlend) {
  Tensor pred = Tensor::from_data({1, 3}, {0.2, 0.4, 0.6});
  Tensor src = Tensor::from_data({1, 3}, {1.0, 1.0, 1.0});
  Tensor c1 = composite_color_initial(Tensor::from_data({1, 1}, {1.0}), pred, src);
  for (int64_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(c1.at({0, c}), 1.0);
  Tensor c0 = composite_color_initial(Tensor::from_data({1, 1}, {0.0}), pred, src);
  EXPECT_DOUBLE_EQ(c0.at({0, 0}), 0.2);
  Tensor zero = Tensor::from_data({1, 3}, {0, 0, 0});
  Tensor q = composite_color_initial(Tensor::from_data({1, 1}, {0.25}), zero, src);
  for (int64_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(q.at({0, c}), 0.25);
}

TEST(CompositeFusion, SimplexCorners) {
  Tensor pred = Tensor::from_data({1, 3}, {0.5, 0.6, 0.7});
  Tensor src = Tensor::from_data({1, 3}, {0.9, 0.1, 0.2});
  Tensor back = Tensor::from_data({1, 3}, {0.3, 0.8, 0.4});
  Tensor g_src = composite_color_fusion(Tensor::from_data({1, 3}, {1, 0, 0}), pred, src, back);
  EXPECT_DOUBLE_EQ(g_src.at({0, 0}), 0.9);
  Tensor g_pred = composite_color_fusion(Tensor::from_data({1, 3}, {0, 0, 1}), pred, src, back);
  EXPECT_DOUBLE_EQ(g_pred.at({0, 1}), 0.6);
  Tensor red = Tensor::from_data({1, 3}, {1, 0, 0});
  Tensor green = Tensor::from_data({1, 3}, {0, 1, 0});
  Tensor blue = Tensor::from_data({1, 3}, {0, 0, 1});
  Tensor uniform = composite_color_fusion(
      Tensor::from_data({1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}), blue, red, green);
  for (int64_t c = 0; c < 3; ++c) EXPECT_NEAR(uniform.at({0, c}), 1.0 / 3.0, 1e-15);
}

// Composites stay inside the componentwise hull of their inputs.
TEST(Composite, ConvexHullProperty) {
  RngStream rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor pred = Tensor::rand_uniform({1, 3}, rng, 0, 1);
    Tensor src = Tensor::rand_uniform({1, 3}, rng, 0, 1);
    Tensor back = Tensor::rand_uniform({1, 3}, rng, 0, 1);
    Tensor logits = Tensor::randn({1, 3}, rng, 2.0);
    Tensor gamma = softmax(logits, 1);
    Tensor out = composite_color_fusion(gamma, pred, src, back);
    for (int64_t c = 0; c < 3; ++c) {
      const double lo = std::min({pred.at({0, c}), src.at({0, c}), back.at({0, c})});
      const double hi = std::max({pred.at({0, c}), src.at({0, c}), back.at({0, c})});
      EXPECT_GE(out.at({0, c}), lo - 1e-12);
      EXPECT_LE(out.at({0, c}), hi + 1e-12);
    }
    Tensor g1 = Tensor::rand_uniform({1, 1}, rng, 0, 1);
    Tensor out1 = composite_color_initial(g1, pred, src);
    for (int64_t c = 0; c < 3; ++c) {
      const double lo = std::min(pred.at({0, c}), src.at({0, c}));
      const double hi = std::max(pred.at({0, c}), src.at({0, c}));
      EXPECT_GE(out1.at({0, c}), lo - 1e-12);
      EXPECT_LE(out1.at({0, c}), hi + 1e-12);
    }
  }
}

TEST(FieldBundle, PreparedSceneEvalAndCheckpointRoundTrip) {
  FieldBundleConfig cfg;
  cfg.image.channels = {4, 8};
  cfg.image.strides = {2, 2};
  cfg.volume.channels = {4};
  cfg.mlp_widths = {8, 8};
  cfg.pe_frequencies = 2;
  FieldBundle bundle = FieldBundle::create(cfg, RngStream(21));

  AnalyticScene scene = capsule_person(2);
  GtView view = render_gt(scene, Camera::azimuth(0, 32, 32));
  ProxyVolume proxy = voxelize_proxy(scene, 16, 0.05);
  PreparedScene prep =
      prepare_scene(bundle, view.rgb, Camera::azimuth(0, 32, 32), proxy);
  std::vector<Vec3> pts = {{0, 0, 0}, {0.2, 0.3, -0.1}};
  FieldSamples s = eval_field_bundle(bundle, prep, pts);
  ASSERT_EQ(s.final_color.shape(), (Shape{2, 3}));
  for (int64_t c = 0; c < 3; ++c) {
    EXPECT_GE(s.final_color.at({0, c}), 0.0);
    EXPECT_LE(s.final_color.at({0, c}), 1.0);
  }

  const std::string path = testing::TempDir() + "/bundle.occf";
  NamedTensors items = bundle.named_params();
  save_checkpoint(path, items);
  FieldBundle loaded = FieldBundle::create(cfg, RngStream(99));  // different init
  loaded.load_named_params(load_checkpoint(path));
  PreparedScene prep2 = prepare_scene(loaded, view.rgb, Camera::azimuth(0, 32, 32), proxy);
  FieldSamples s2 = eval_field_bundle(loaded, prep2, pts);
  for (int64_t i = 0; i < s.alpha.numel(); ++i)
    EXPECT_EQ(s.alpha.data()[i], s2.alpha.data()[i]);
}
