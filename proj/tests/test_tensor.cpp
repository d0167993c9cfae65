// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "occufield/checkpoint.hpp"
#include "occufield/gradcheck.hpp"
#include "occufield/optim.hpp"
#include "occufield/tensor.hpp"

using namespace occufield;

TEST(Tensor, MatmulHandContraction) {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 3.0);
  EXPECT_DOUBLE_EQ(c.at({1, 0}), 7.0);
}

TEST(Tensor, MatmulShapeMismatchNamesShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
  }
}

TEST(Tensor, SoftmaxSymmetry) {
  Tensor x = Tensor::from_data({3}, {0, 0, 0});
  Tensor y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], 1.0 / 3.0, 1e-15);
}

TEST(Tensor, SoftmaxSimplexInvariant) {
  RngStream rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::randn({5, 7}, rng, 3.0);
    Tensor y = softmax(x, 1);
    for (int64_t r = 0; r < 5; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 7; ++c) {
        double v = y.at({r, c});
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, SigmoidAtZero) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).value(), 0.5);
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, /*requires_grad=*/true);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  ASSERT_EQ(x.grad().size(), 3u);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Backward, SigmoidDerivativeAtZero) {
  Tensor w = Tensor::scalar(0.0, /*requires_grad=*/true);
  Tensor loss = sigmoid(w);
  backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::zeros({2}, true);
  EXPECT_THROW(backward(x), std::invalid_argument);
}

TEST(Backward, NoGradLeafNeverReceivesGradient) {
  Tensor x = Tensor::from_data({2}, {1, 2}, /*requires_grad=*/true);
  Tensor y = Tensor::from_data({2}, {3, 4}, /*requires_grad=*/false);
  Tensor loss = sum_all(mul(x, y));
  backward(loss);
  EXPECT_TRUE(y.grad().empty());
  ASSERT_EQ(x.grad().size(), 2u);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Backward, UnreachableLeafHoldsZero) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor unused = Tensor::from_data({2}, {5, 6}, true);
  backward(sum_all(x));
  EXPECT_TRUE(unused.grad().empty());  // never touched == zero
}

TEST(Backward, DeterministicBitIdentical) {
  RngStream rng(5);
  Tensor a = Tensor::randn({4, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 4}, rng, 1.0, true);
  auto run = [&]() {
    a.zero_grad();
    b.zero_grad();
    Tensor y = mean_all(mul(sigmoid(matmul(a, b)), sub(a, b)));
    backward(y);
    return a.grad();
  };
  auto g1 = run();
  auto g2 = run();
  ASSERT_EQ(g1.size(), g2.size());
  for (size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}

TEST(Backward, TapeFreedAfterBackward) {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = mul(x, x);
  Tensor loss = sum_all(y);
  backward(loss);
  EXPECT_EQ(y.impl()->node, nullptr);
  EXPECT_EQ(loss.impl()->node, nullptr);
}

TEST(Backward, GradAccumulatesAcrossUses) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = add(mul(x, x), x);  // d/dx = 2x + 1 = 7
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Broadcast, RowBiasAndReduction) {
  Tensor m = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_data({3}, {10, 20, 30}, true);
  Tensor y = add(m, b);
  EXPECT_DOUBLE_EQ(y.at({1, 2}), 36.0);
  backward(sum_all(y));
  ASSERT_EQ(b.grad().size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(b.grad()[i], 2.0);  // reduced over rows
}

TEST(Broadcast, IncompatibleShapesRejected) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 4});
  try {
    add(a, b);
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,4]"), std::string::npos) << msg;
  }
}

TEST(Ops, ConcatAndSliceRoundTrip) {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from_data({2, 3}, {5, 6, 7, 8, 9, 10}, true);
  Tensor c = concat({a, b}, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 5}));
  EXPECT_DOUBLE_EQ(c.at({0, 2}), 5.0);
  EXPECT_DOUBLE_EQ(c.at({1, 4}), 10.0);
  Tensor back = slice(c, 1, 2, 3);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(back.at({r, k}), b.at({r, k}));
  backward(sum_all(mul(back, back)));
  for (double g : a.grad()) EXPECT_EQ(g, 0.0);  // a's columns fall outside the slice
  ASSERT_EQ(b.grad().size(), 6u);
  EXPECT_DOUBLE_EQ(b.grad()[0], 10.0);
}

TEST(Ops, GatherRowsScatterAddsInBackward) {
  Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor g = gather_rows(x, {2, 0, 2});
  EXPECT_DOUBLE_EQ(g.at({0, 1}), 6.0);
  backward(sum_all(g));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);  // row 1 unused
  EXPECT_DOUBLE_EQ(x.grad()[4], 2.0);  // row 2 used twice
}

TEST(Ops, MeanVarianceReduction) {
  Tensor x = Tensor::from_data({2, 4}, {1, 2, 3, 4, 4, 4, 4, 4});
  Tensor mu = mean_axis(x, 1);
  EXPECT_DOUBLE_EQ(mu.at({0}), 2.5);
  EXPECT_DOUBLE_EQ(mu.at({1}), 4.0);
  Tensor v = variance_axis(x, 1);
  EXPECT_DOUBLE_EQ(v.at({0}), 1.25);
  EXPECT_DOUBLE_EQ(v.at({1}), 0.0);
}

// Three-layer MLP against the finite-difference oracle.
TEST(GradCheck, RandomMlpMatchesFiniteDifferences) {
  RngStream rng(1234);
  for (uint64_t seed = 0; seed < 3; ++seed) {
    RngStream s = rng.child(seed);
    Tensor x = Tensor::randn({2, 4}, s);
    Tensor w1 = Tensor::randn({4, 5}, s, 0.7, true);
    Tensor b1 = Tensor::randn({5}, s, 0.2, true);
    Tensor w2 = Tensor::randn({5, 4}, s, 0.7, true);
    Tensor b2 = Tensor::randn({4}, s, 0.2, true);
    Tensor w3 = Tensor::randn({4, 1}, s, 0.7, true);
    GradFn op = [&x](const std::vector<Tensor>& in) {
      Tensor h1 = leaky_relu(add(matmul(x, in[0]), in[1]), 0.1);
      Tensor h2 = sigmoid(add(matmul(h1, in[2]), in[3]));
      return mean_all(matmul(h2, in[4]));
    };
    double err = grad_check(op, {w1, b1, w2, b2, w3});
    EXPECT_LT(err, 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, IdentitySumIsExact) {
  // Dyadic values and a power-of-two step keep the central difference exact.
  Tensor x = Tensor::from_data({4}, {1.0, 2.0, 4.0, -8.0}, true);
  double err = grad_check([](const std::vector<Tensor>& in) { return sum_all(in[0]); }, {x},
                          /*eps=*/0x1.0p-20);
  EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, PrimitivesTenSeeds) {
  struct Named {
    const char* name;
    GradFn fn;
  };
  std::vector<Named> cases = {
      {"add", [](const std::vector<Tensor>& i) { return mean_all(add(i[0], i[1])); }},
      {"sub", [](const std::vector<Tensor>& i) { return mean_all(sub(i[0], i[1])); }},
      {"mul", [](const std::vector<Tensor>& i) { return mean_all(mul(i[0], i[1])); }},
      {"div", [](const std::vector<Tensor>& i) {
         return mean_all(div(i[0], add_scalar(sigmoid(i[1]), 0.5)));
       }},
      {"matmul", [](const std::vector<Tensor>& i) {
         return mean_all(matmul(reshape(i[0], {3, 4}), reshape(i[1], {4, 3})));
       }},
      {"softmax", [](const std::vector<Tensor>& i) {
         return mean_all(mul(softmax(reshape(i[0], {3, 4}), 1), reshape(i[1], {3, 4})));
       }},
      {"leaky_relu", [](const std::vector<Tensor>& i) {
         return mean_all(leaky_relu(i[0], 0.2));
       }},
      {"sigmoid", [](const std::vector<Tensor>& i) { return mean_all(sigmoid(i[0])); }},
      {"softplus", [](const std::vector<Tensor>& i) { return mean_all(softplus(i[0])); }},
      {"exp", [](const std::vector<Tensor>& i) { return mean_all(exp_val(i[0])); }},
      {"sqrt_square", [](const std::vector<Tensor>& i) {
         return mean_all(sqrt_val(add_scalar(square(i[0]), 1.0)));
       }},
      {"sincos", [](const std::vector<Tensor>& i) {
         return mean_all(mul(sin_val(i[0]), cos_val(i[1])));
       }},
      {"mean_axis_var", [](const std::vector<Tensor>& i) {
         return mean_all(variance_axis(reshape(i[0], {3, 4}), 1));
       }},
      {"concat_slice", [](const std::vector<Tensor>& i) {
         Tensor c = concat({reshape(i[0], {3, 4}), reshape(i[1], {3, 4})}, 1);
         return mean_all(square(slice(c, 1, 2, 4)));
       }},
  };
  RngStream root(777);
  for (const auto& c : cases) {
    double worst = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      RngStream s = root.child(c.name).child(seed);
      Tensor a = Tensor::randn({12}, s, 1.0, true);
      Tensor b = Tensor::randn({12}, s, 1.0, true);
      worst = std::max(worst, grad_check(c.fn, {a, b}));
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  Tensor w = Tensor::from_data({3}, {1.0, 1.0, 1.0}, true);
  std::vector<Tensor> params{w};
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  OptimState st = make_adam(params, cfg);
  w.impl()->grad = {0.3, -2.0, 0.001};
  ASSERT_TRUE(adam_step(params, st));
  // Bias correction makes the first update -lr * g/|g| up to epsilon.
  EXPECT_NEAR(w.data()[0], 1.0 - 0.05, 1e-5);
  EXPECT_NEAR(w.data()[1], 1.0 + 0.05, 1e-5);
  EXPECT_NEAR(w.data()[2], 1.0 - 0.05, 1e-3);
  EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, ZeroGradDecaysMoments) {
  Tensor w = Tensor::from_data({1}, {2.0}, true);
  std::vector<Tensor> params{w};
  OptimState st = make_adam(params);
  w.impl()->grad = {1.0};
  adam_step(params, st);
  const double m_after_first = st.first_moment[0].data()[0];
  const double w_after_first = w.data()[0];
  w.zero_grad();  // zero gradient step
  adam_step(params, st);
  EXPECT_LT(std::abs(st.first_moment[0].data()[0]), std::abs(m_after_first));
  // update direction still follows decayed moment, magnitude shrinks
  EXPECT_NE(w.data()[0], w_after_first);
  EXPECT_EQ(st.step_count, 2);
}

TEST(Adam, NanGradSkipsUpdateWithWarning) {
  Tensor w = Tensor::from_data({1}, {2.0}, true);
  std::vector<Tensor> params{w};
  OptimState st = make_adam(params);
  w.impl()->grad = {std::nan("")};
  EXPECT_FALSE(adam_step(params, st));
  EXPECT_DOUBLE_EQ(w.data()[0], 2.0);
  EXPECT_EQ(st.step_count, 0);
}

TEST(Adam, QuadraticBowlConverges) {
  Tensor w = Tensor::scalar(-4.0, true);
  std::vector<Tensor> params{w};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  OptimState st = make_adam(params, cfg);
  for (int i = 0; i < 500; ++i) {
    zero_grads(params);
    Tensor loss = square(add_scalar(w, -3.0));
    backward(loss);
    adam_step(params, st);
  }
  EXPECT_LT(std::abs(w.value() - 3.0), 0.05);
}

TEST(Checkpoint, RoundTripAndMagicRejection) {
  RngStream rng(9);
  NamedTensors items;
  items.emplace_back("fieldnet/layer0/w", Tensor::randn({3, 4}, rng));
  items.emplace_back("meta/step", Tensor::scalar(123.0));
  const std::string path = testing::TempDir() + "/ckpt_roundtrip.occf";
  save_checkpoint(path, items);
  NamedTensors loaded = load_checkpoint(path);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].first, "fieldnet/layer0/w");
  ASSERT_EQ(loaded[0].second.shape(), (Shape{3, 4}));
  for (int64_t i = 0; i < 12; ++i)
    EXPECT_EQ(loaded[0].second.data()[i], items[0].second.data()[i]);
  EXPECT_EQ(require_tensor(loaded, "meta/step").value(), 123.0);

  const std::string bad = testing::TempDir() + "/bad_magic.occf";
  {
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE1junkjunkjunk";
  }
  EXPECT_THROW(load_checkpoint(bad), std::invalid_argument);
}

TEST(NoGrad, SuppressesTape) {
  Tensor x = Tensor::scalar(2.0, true);
  autodiff::NoGradGuard ng;
  Tensor y = mul(x, x);
  EXPECT_EQ(y.impl()->node, nullptr);
}
