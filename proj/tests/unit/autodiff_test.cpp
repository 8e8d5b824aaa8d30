#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "debias/autodiff/divergence.hpp"
#include "debias/autodiff/graph.hpp"
#include "debias/autodiff/ops.hpp"
#include "debias/autodiff/optim.hpp"

using namespace debias::ad;

TEST(Forward, SoftmaxOfZerosIsUniform) {
  Graph g;
  Var x = g.constant(Tensor::row({0.0, 0.0}));
  const Tensor& y = softmax(x).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Forward, MatmulByHand) {
  Graph g;
  Var a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = g.constant(Tensor({2, 1}, {1, 1}));
  const Tensor& c = matmul(a, b).value();
  ASSERT_EQ(c.rows(), 2u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_DOUBLE_EQ(c[1], 7.0);
}

TEST(Forward, LayerNormOfConstantRowIsZero) {
  Graph g;
  Var x = g.constant(Tensor::row({2.5, 2.5, 2.5, 2.5}));
  Var gamma = g.constant(Tensor::row({1, 1, 1, 1}));
  Var beta = g.constant(Tensor::row({0, 0, 0, 0}));
  for (double v : layer_norm(x, gamma, beta).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, SoftmaxRowsSumToOneAndLogSoftmaxAgrees) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t({4, 9});
    for (double& v : t.data()) v = n(rng);
    Graph g;
    Var x = g.constant(t);
    const Tensor& p = softmax(x).value();
    const Tensor& lp = log_softmax(x).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        s += p.at(r, c);
        EXPECT_GE(p.at(r, c), 0.0);
        EXPECT_NEAR(lp.at(r, c), std::log(p.at(r, c)), 1e-9);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Forward, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Backward, SquareDerivative) {
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0));
  g.backward(square(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SoftmaxCrossEntropyGradientIsPMinusOne) {
  Graph g;
  Var logits = g.leaf(Tensor::row({0.3, -1.2, 2.0, 0.1}));
  const std::pair<std::size_t, std::size_t> target{0, 2};
  Var nll = scale(sum(gather(log_softmax(logits), std::span(&target, 1))), -1.0);
  g.backward(nll);
  Graph probe;
  const double p = softmax(probe.constant(logits.value())).value()[2];
  EXPECT_NEAR(logits.grad()[2], p - 1.0, 1e-12);
}

TEST(Backward, ConstantLossGivesZeroGradient) {
  Graph g;
  Var x = g.leaf(Tensor::row({1.0, 2.0}));
  Var c = g.constant(Tensor::scalar(4.0));
  Var loss = add(mul(c, c), scale(sum(x), 0.0));
  g.backward(loss);
  for (double v : x.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonScalarLossIsRejected) {
  Graph g;
  Var x = g.leaf(Tensor::row({1.0, 2.0}));
  EXPECT_THROW(g.backward(square(x)), ShapeError);
}

TEST(Backward, NaNReportsProducingNode) {
  Graph g;
  Var x = g.leaf(Tensor::row({0.0, 1.0}));
  Var y = log(x);  // d/dx log(x) at 0 is inf
  Var loss = sum(y);
  try {
    g.backward(loss);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_EQ(e.node(), y.id());
  }
}

TEST(Backward, ParamGradientsAccumulateIntoTensor) {
  Tensor w({1, 2}, {1.0, -2.0});
  w.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Graph g;
    g.backward(sum(square(g.param(w))));
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], -8.0);
}

TEST(Backward, RepeatedEvaluationIsDeterministic) {
  std::mt19937_64 rng(11);
  for (const auto& c : debias::testing::primitive_cases()) {
    std::vector<Tensor> inputs;
    for (const auto& s : c.input_shapes) inputs.push_back(debias::testing::random_tensor(s, rng, c.domain));
    const Tensor w = debias::testing::random_tensor(debias::testing::output_shape(c, inputs), rng,
                                                    [](double x) { return x; });
    std::vector<std::vector<double>> g1, g2;
    debias::testing::eval_loss(c, inputs, &w, &g1);
    debias::testing::eval_loss(c, inputs, &w, &g2);
    EXPECT_EQ(g1, g2) << c.name;
  }
}

TEST(GradCheck, EveryPrimitiveMatchesCentralDifferences) {
  for (const auto& c : debias::testing::primitive_cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      EXPECT_LE(debias::testing::gradient_relative_error(c, 1000 + seed), 1e-5) << c.name << " seed " << seed;
    }
  }
}

TEST(Adam, OneStepWithUnitGradient) {
  AdamState st(AdamConfig{0.001, 0.9, 0.999, 1e-8}, std::vector<std::size_t>{1});
  std::vector<double> p{0.5};
  std::vector<double> g{1.0};
  st.step(p, g);
  EXPECT_NEAR(0.5 - p[0], 0.001, 1e-10);
  EXPECT_EQ(st.step_count(), 1u);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  AdamState st(AdamConfig{}, std::vector<std::size_t>{3});
  std::vector<double> p{0.1, -0.2, 0.3};
  const auto before = p;
  st.step(p, std::vector<double>{0.0, 0.0, 0.0});
  EXPECT_EQ(p, before);
}

TEST(Adam, BiasCorrectionKeepsConstantGradientStepsEqual) {
  AdamState st(AdamConfig{0.01, 0.9, 0.999, 1e-8}, std::vector<std::size_t>{1});
  std::vector<double> p{0.0};
  st.step(p, std::vector<double>{0.7});
  const double first = -p[0];
  st.step(p, std::vector<double>{0.7});
  const double second = -p[0] - first;
  EXPECT_NEAR(second, first, 1e-9);
}

TEST(Adam, NonFiniteGradientThrowsWithoutUpdating) {
  AdamState st(AdamConfig{}, std::vector<std::size_t>{2});
  std::vector<double> p{1.0, 2.0};
  EXPECT_THROW(st.step(p, std::vector<double>{0.1, std::nan("")}), NonFiniteError);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(st.step_count(), 0u);
}

TEST(Kl, IdenticalDistributionsGiveExactZero) {
  const std::vector<double> p{0.2, 0.3, 0.5};
  EXPECT_EQ(kl_categorical(p, p).value, 0.0);
}

TEST(Kl, PointMassAgainstUniform) {
  const std::vector<double> p{1.0, 0.0};
  const std::vector<double> q{0.5, 0.5};
  EXPECT_NEAR(kl_categorical(p, q).value, std::log(2.0), 1e-15);
}

TEST(Kl, ZeroDenominatorIsClampedAndFlagged) {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<double> q{1.0, 0.0};
  const auto r = kl_categorical(p, q);
  EXPECT_TRUE(r.clamped);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_NEAR(r.value, 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / kProbabilityFloor), 1e-9);
}

TEST(Kl, NonNegativeOnRandomSimplexPairs) {
  std::mt19937_64 rng(3);
  std::gamma_distribution<double> gam(0.5, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(6), q(6);
    double sp = 0, sq = 0;
    for (int i = 0; i < 6; ++i) {
      sp += p[i] = gam(rng);
      sq += q[i] = gam(rng);
    }
    for (int i = 0; i < 6; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    EXPECT_GE(kl_categorical(p, q).value, 0.0);
  }
}

TEST(Kl, RejectsMismatchedOrUnnormalisedInputs) {
  EXPECT_THROW(kl_categorical(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(kl_categorical(std::vector<double>{0.7, 0.7}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}
