#include "eegformer/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "test_support.hpp"

using namespace eegformer;
using testsupport::gradcheck;
using testsupport::rand_tensor;
using testsupport::rel_err;

namespace {

Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i * n + i) = 1.0;
  return t;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(identity(2), a);
  EXPECT_EQ(c.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandComputedProduct) {
  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.at(0), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a({2, 3});
  Tensor b({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4, 5)"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradOfSumEqualsRowSumsOfOther) {
  Rng rng(11);
  Tensor a = rand_tensor(rng, {3, 4});
  Tensor b = rand_tensor(rng, {4, 2});
  {
    Tape::Scope scope;
    Tensor loss = sum(matmul(a, b));
    backward(loss);
  }
  // d(sum(A·B))/dA[i][j] = sum_j' B[j][j']
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double row_sum = b.at(j * 2) + b.at(j * 2 + 1);
      EXPECT_NEAR(a.grad()[i * 4 + j], row_sum, 1e-12);
    }
  }
  // and against central differences
  a.zero_grad();
  b.zero_grad();
  const double err = gradcheck([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LT(err, 1e-6);
}

TEST(Matmul, BatchedLeadingAxes) {
  Rng rng(3);
  Tensor a = rand_tensor(rng, {2, 3, 4});
  Tensor w = rand_tensor(rng, {4, 5});
  Tensor c = matmul(a, w);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  Tensor weights = rand_tensor(rng, {2, 3, 5}, -1, 1, false);
  const double err =
      gradcheck([&] { return sum(mul(matmul(a, w), weights)); }, {a, w});
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, SymmetricInputs) {
  Tensor y = softmax(Tensor({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, HandComputedValues) {
  Tensor y = softmax(Tensor({3}, {1, 2, 3}));
  EXPECT_NEAR(y.at(0), 0.09003057, 1e-8);
  EXPECT_NEAR(y.at(1), 0.24472847, 1e-8);
  EXPECT_NEAR(y.at(2), 0.66524096, 1e-8);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tensor y = softmax(Tensor({2}, {1000, 0}));
  EXPECT_NEAR(y.at(0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(1), 0.0, 1e-12);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, RowsAreStochastic) {
  Rng rng(5);
  Tensor x = rand_tensor(rng, {7, 9}, -4, 4, false);
  Tensor y = softmax(x);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      const double v = y.at(r * 9 + j);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  Tensor x = rand_tensor(rng, {4, 5});
  Tensor w = rand_tensor(rng, {4, 5}, -1, 1, false);
  const double err = gradcheck([&] { return sum(mul(softmax(x), w)); }, {x});
  EXPECT_LT(err, 1e-4);
}

TEST(LayerNorm, ConstantRowBecomesBias) {
  Tensor x({1, 4}, {5, 5, 5, 5});
  Tensor y = layer_norm(x, Tensor::ones({4}), Tensor::zeros({4}));
  for (double v : y.values()) EXPECT_NEAR(v, 0.0, 1e-12);

  Tensor b({4}, {7, 7, 7, 7});
  Tensor y2 = layer_norm(x, Tensor::ones({4}), b);
  for (double v : y2.values()) EXPECT_NEAR(v, 7.0, 1e-12);
}

TEST(LayerNorm, HandComputedTwoElementRow) {
  // mean 2, population std 1: (1,3) -> (-1, 1) as eps -> 0
  Tensor x({1, 2}, {1, 3});
  Tensor y = layer_norm(x, Tensor::ones({2}), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y.at(0), -1.0, 1e-9);
  EXPECT_NEAR(y.at(1), 1.0, 1e-9);
}

TEST(LayerNorm, PreAffineRowMeansNearZero) {
  Rng rng(23);
  Tensor x = rand_tensor(rng, {6, 16}, -3.0, 3.0, false);
  Tensor y = layer_norm(x, Tensor::ones({16}), Tensor::zeros({16}));
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y.at(r * 16 + j);
    EXPECT_LT(std::abs(m / 16.0), 1e-9);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(29);
  Tensor x = rand_tensor(rng, {3, 8});
  Tensor g = rand_tensor(rng, {8}, 0.5, 1.5);
  Tensor b = rand_tensor(rng, {8}, -0.5, 0.5);
  Tensor w = rand_tensor(rng, {3, 8}, -1, 1, false);
  const double err =
      gradcheck([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
  EXPECT_LT(err, 1e-5);
}

TEST(LayerNorm, RejectsNonPositiveEps) {
  Tensor x({1, 2}, {1, 2});
  EXPECT_THROW(layer_norm(x, Tensor::ones({2}), Tensor::zeros({2}), 0.0),
               ParameterError);
}

TEST(Relu, ClampsNegativesAndRoutesGradient) {
  Tensor x({2}, {-1, 2});
  Tensor y = relu(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 2}));

  Rng rng(31);
  Tensor z = rand_tensor(rng, {4, 4}, -2, 2);
  Tensor w = rand_tensor(rng, {4, 4}, -1, 1, false);
  const double err = gradcheck([&] { return sum(mul(relu(z), w)); }, {z});
  EXPECT_LT(err, 1e-4);
}

TEST(Dropout, ZeroProbabilityIsIdentity) {
  Rng rng(37);
  Tensor x = rand_tensor(rng, {3, 3});
  Tensor y = dropout(x, 0.0, true, &rng);
  EXPECT_TRUE(y.same_storage(x));
  Tensor z = dropout(x, 0.5, false, nullptr);  // eval mode
  EXPECT_TRUE(z.same_storage(x));
}

TEST(Dropout, TrainingModeMasksAndRescales) {
  Rng rng(41);
  Tensor x = Tensor::ones({1000});
  Tensor y = dropout(x, 0.25, true, &rng);
  std::size_t kept = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    if (v != 0.0) ++kept;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.06);

  // identical seed, identical mask
  Rng r1(99), r2(99);
  Tensor a = dropout(x, 0.5, true, &r1);
  Tensor b = dropout(x, 0.5, true, &r2);
  EXPECT_EQ(a.values(), b.values());
}

TEST(Dropout, RejectsProbabilityOutOfRange) {
  Tensor x = Tensor::ones({4});
  Rng rng(1);
  EXPECT_THROW(dropout(x, 1.0, true, &rng), ParameterError);
  EXPECT_THROW(dropout(x, -0.1, true, &rng), ParameterError);
}

TEST(Dropout, BackwardUsesTheSavedMask) {
  Rng rng(43);
  Tensor x = Tensor::ones({64}, true);
  x.set_requires_grad(true);
  Tape::Scope scope;
  Tensor y = dropout(x, 0.5, true, &rng);
  Tensor loss = sum(y);
  backward(loss);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_DOUBLE_EQ(x.grad()[i], y.at(i));  // mask value equals output for ones input
  }
}

TEST(Mean, LastAxisOfOnes) {
  Tensor y = mean(Tensor::ones({3, 4}), 1);
  ASSERT_EQ(y.shape(), (Shape{3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Mean, MiddleAxisAndGradient) {
  Rng rng(47);
  Tensor x = rand_tensor(rng, {2, 5, 3});
  Tensor w = rand_tensor(rng, {2, 3}, -1, 1, false);
  Tensor y = mean(x, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  const double err = gradcheck([&] { return sum(mul(mean(x, 1), w)); }, {x});
  EXPECT_LT(err, 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(53);
  Tensor x = rand_tensor(rng, {3, 5});
  Tape::Scope scope;
  Tensor loss = sum(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Rng rng(59);
  Tensor x = rand_tensor(rng, {4, 2});
  Tape::Scope scope;
  Tensor loss = sum(mul(x, x));
  backward(loss);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(x.grad()[i], 2.0 * x.at(i), 1e-12);
  }
}

TEST(Backward, FanOutAccumulatesAdditively) {
  Tensor x({3}, {1, 2, 3}, true);
  Tape::Scope scope;
  Tensor y = add(x, x);
  Tensor loss = sum(y);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x({2}, {1, 2}, true);
  Tape::Scope scope;
  Tensor y = add(x, x);
  EXPECT_THROW(backward(y), ContractError);
}

TEST(Backward, RejectsEmptyTape) {
  Tensor x({1}, {1.0}, true);
  EXPECT_THROW(backward(x), ContractError);  // no active tape at all
  Tape::Scope scope;
  EXPECT_THROW(backward(x), ContractError);  // active but empty
}

TEST(Structural, TransposeRoundTripsAndPassesGradient) {
  Rng rng(61);
  Tensor x = rand_tensor(rng, {2, 3, 4});
  Tensor t = transpose(x, 1, 2);
  ASSERT_EQ(t.shape(), (Shape{2, 4, 3}));
  Tensor back = transpose(t, 1, 2);
  EXPECT_EQ(back.values(), x.values());

  Tensor w = rand_tensor(rng, {2, 4, 3}, -1, 1, false);
  const double err = gradcheck([&] { return sum(mul(transpose(x, 1, 2), w)); }, {x});
  EXPECT_LT(err, 1e-6);
}

TEST(Structural, ReshapeValidatesElementCount) {
  Tensor x({2, 3});
  EXPECT_THROW(reshape(x, {4, 2}), DimensionError);
  Tensor y = reshape(x, {3, 2});
  ASSERT_EQ(y.shape(), (Shape{3, 2}));
}

TEST(Attention, SingleTokenWindowReturnsValues) {
  Rng rng(67);
  Tensor q = rand_tensor(rng, {2, 1, 4}, -1, 1, false);
  Tensor k = rand_tensor(rng, {2, 1, 4}, -1, 1, false);
  Tensor v = rand_tensor(rng, {2, 1, 4}, -1, 1, false);
  Tensor out = attention(q, k, v, 2);
  for (std::size_t i = 0; i < v.numel(); ++i) {
    EXPECT_NEAR(out.at(i), v.at(i), 1e-15);
  }
}

TEST(Attention, WeightsAreRowStochastic) {
  Rng rng(71);
  Tensor q = rand_tensor(rng, {2, 5, 8}, -2, 2, false);
  Tensor k = rand_tensor(rng, {2, 5, 8}, -2, 2, false);
  Tensor v = rand_tensor(rng, {2, 5, 8}, -2, 2, false);
  std::vector<double> probs;
  attention(q, k, v, 4, &probs);
  ASSERT_EQ(probs.size(), 2u * 4u * 5u * 5u);
  for (std::size_t r = 0; r < probs.size() / 5; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += probs[r * 5 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

// Dual route: the fused attention op against the same computation composed
// from matmul/softmax/transpose primitives, per head.
TEST(Attention, MatchesCompositionOfPrimitives) {
  Rng rng(73);
  const std::size_t b = 2, w = 4, d = 6, h = 3, dh = d / h;
  Tensor q = rand_tensor(rng, {b, w, d}, -1.5, 1.5, false);
  Tensor k = rand_tensor(rng, {b, w, d}, -1.5, 1.5, false);
  Tensor v = rand_tensor(rng, {b, w, d}, -1.5, 1.5, false);
  Tensor fused = attention(q, k, v, h);

  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t hi = 0; hi < h; ++hi) {
      // gather per-head slices
      Tensor qh({w, dh}), kh({w, dh}), vh({w, dh});
      for (std::size_t t = 0; t < w; ++t) {
        for (std::size_t j = 0; j < dh; ++j) {
          const std::size_t src = bi * w * d + t * d + hi * dh + j;
          qh.at(t * dh + j) = q.at(src);
          kh.at(t * dh + j) = k.at(src);
          vh.at(t * dh + j) = v.at(src);
        }
      }
      Tensor scores = scale(matmul(qh, transpose(kh, 0, 1)), scl);
      Tensor ctx = matmul(softmax(scores), vh);
      for (std::size_t t = 0; t < w; ++t) {
        for (std::size_t j = 0; j < dh; ++j) {
          EXPECT_NEAR(ctx.at(t * dh + j), fused.at(bi * w * d + t * d + hi * dh + j),
                      1e-12);
        }
      }
    }
  }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(79);
  Tensor q = rand_tensor(rng, {2, 3, 4});
  Tensor k = rand_tensor(rng, {2, 3, 4});
  Tensor v = rand_tensor(rng, {2, 3, 4});
  Tensor w = rand_tensor(rng, {2, 3, 4}, -1, 1, false);
  const double err =
      gradcheck([&] { return sum(mul(attention(q, k, v, 2), w)); }, {q, k, v});
  EXPECT_LT(err, 1e-4);
}

TEST(Attention, RejectsBadHeadCount) {
  Tensor x({1, 2, 6});
  EXPECT_THROW(attention(x, x, x, 4), ParameterError);
  EXPECT_THROW(attention(x, x, x, 0), ParameterError);
}

TEST(Determinism, IdenticalSeedsGiveBitIdenticalResults) {
  auto run = [] {
    Rng rng(101);
    Tensor x = rand_tensor(rng, {3, 4, 8});
    Tensor w = rand_tensor(rng, {8, 8});
    Tape::Scope scope;
    Tensor y = attention(matmul(x, w), x, x, 2);
    Tensor loss = sum(mul(y, y));
    backward(loss);
    return std::make_pair(y.values(), w.grad());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Stability, NoNaNForLargeMagnitudeInputs) {
  Rng rng(103);
  Tensor x = rand_tensor(rng, {2, 4, 8}, -1e6, 1e6, false);
  Tensor y = softmax(x);
  Tensor n = layer_norm(x, Tensor::ones({8}), Tensor::zeros({8}));
  Tensor a = attention(x, x, x, 2);
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
  for (double v : n.values()) EXPECT_TRUE(std::isfinite(v));
  for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
}

// Randomized gradient sweep across every differentiable op on inputs in
// [-1, 1], per the module contract.
TEST(GradientSuite, RandomizedOpSweep) {
  Rng rng(107);
  for (int round = 0; round < 3; ++round) {
    Tensor a = rand_tensor(rng, {3, 4});
    Tensor b = rand_tensor(rng, {3, 4});
    Tensor wgt = rand_tensor(rng, {3, 4}, -1, 1, false);
    EXPECT_LT(gradcheck([&] { return sum(mul(add(a, b), wgt)); }, {a, b}), 1e-6);
    EXPECT_LT(gradcheck([&] { return sum(mul(mul(a, b), wgt)); }, {a, b}), 1e-4);
    EXPECT_LT(gradcheck([&] { return sum(mul(scale(a, -2.5), wgt)); }, {a}), 1e-6);
    Tensor bias = rand_tensor(rng, {4});
    EXPECT_LT(gradcheck([&] { return sum(mul(add_broadcast(a, bias), wgt)); },
                        {a, bias}),
              1e-6);
  }
}

}  // namespace
