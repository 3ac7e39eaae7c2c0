#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sbr/autodiff.hpp"
#include "sbr/errors.hpp"
#include "support.hpp"

namespace sbr {
namespace {

using ad::Var;
using test::Bilinear;
using test::MaxGradError;
using test::RandomTensor;

constexpr double kTol = 1e-6;

// Keeps entries at least `gap` away from each kink so finite differences
// never straddle one.
Tensor AwayFrom(Tensor t, std::initializer_list<double> kinks, double gap = 0.05) {
  for (double& v : t.values()) {
    for (double k : kinks) {
      if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap);
    }
  }
  return t;
}

TEST(Tensor, ShapeChecks) {
  EXPECT_THROW(Tensor(2, 3, std::vector<double>(5)), ShapeError);
  const Tensor t(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.shape(), (std::array<size_t, 2>{2, 3}));
  EXPECT_EQ(t.row(1)[0], 4.0);
}

TEST(Autodiff, FanOutAccumulates) {
  ad::Tape tape;
  const Var x = tape.Leaf(Tensor(1, 1, 3.0));
  tape.Backward(ad::Add(x, x));
  EXPECT_EQ(tape.Grad(x)(0, 0), 2.0);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  ad::Tape tape;
  const Var x = tape.Leaf(Tensor(1, 1, 3.0));
  const Var c = tape.Constant(Tensor(1, 1, 4.0));
  tape.Backward(ad::MatMul(x, c));
  EXPECT_EQ(tape.Grad(x)(0, 0), 4.0);
  EXPECT_TRUE(tape.Grad(c).empty());
  EXPECT_FALSE(tape.RequiresGrad(c));
}

TEST(Autodiff, MatMulAgainstHandDerivative) {
  Rng rng(1);
  const Tensor a = RandomTensor(rng, 3, 4);
  const Tensor b = RandomTensor(rng, 4, 2);
  ad::Tape tape;
  const Var va = tape.Leaf(a);
  const Var vb = tape.Leaf(b);
  tape.Backward(ad::Mean(ad::MatMul(va, vb)));
  // d mean(AB) / dA[i][k] = sum_j B[k][j] / 6
  for (size_t i = 0; i < 3; ++i) {
    for (size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(tape.Grad(va)(i, k), (b(k, 0) + b(k, 1)) / 6.0, 1e-15);
    }
  }
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::MatMul(x[0], x[1])); },
                         {a, b}),
            kTol);
}

TEST(Autodiff, ElementwiseOps) {
  Rng rng(2);
  const Tensor a = RandomTensor(rng, 3, 5);
  const Tensor b = RandomTensor(rng, 3, 5);
  const Tensor row = RandomTensor(rng, 1, 5);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Add(x[0], x[1])); },
                         {a, b}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Add(x[0], x[1])); },
                         {a, row}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Sub(x[0], x[1])); },
                         {a, b}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Scale(x[0], -2.5)); },
                         {a}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Relu(x[0])); },
                         {AwayFrom(a, {0.0})}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::Huber(x[0], 0.4)); },
                         {AwayFrom(a, {-0.4, 0.4})}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape&, auto x) { return ad::Mean(x[0]); }, {a}), kTol);
}

TEST(Autodiff, StructuralOps) {
  Rng rng(3);
  const Tensor a = RandomTensor(rng, 4, 3);
  const Tensor b = RandomTensor(rng, 4, 2);
  const Tensor c = RandomTensor(rng, 2, 3);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const Var parts[] = {x[0], x[1]};
                  return Bilinear(t, ad::ConcatCols(parts));
                },
                {a, b}),
            kTol);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const Var parts[] = {x[0], x[1], x[0]};
                  return Bilinear(t, ad::ConcatRows(parts));
                },
                {a, c}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t,
                            auto x) { return Bilinear(t, ad::Slice(x[0], 1, 2, 1, 2)); },
                         {a}),
            kTol);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const size_t index[] = {3, 0, 3, 3, 1};
                  return Bilinear(t, ad::GatherRows(x[0], index));
                },
                {a}),
            kTol);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const double mask[] = {1.0, 0.0, -2.0, 0.5};
                  return Bilinear(t, ad::ScaleRows(x[0], mask));
                },
                {a}),
            kTol);
}

TEST(Autodiff, SoftmaxLayerNormRotate) {
  Rng rng(4);
  const Tensor a = RandomTensor(rng, 3, 6, 2.0);
  const Tensor gain = RandomTensor(rng, 1, 6);
  const Tensor bias = RandomTensor(rng, 1, 6);
  EXPECT_LT(MaxGradError([](ad::Tape& t, auto x) { return Bilinear(t, ad::SoftmaxRows(x[0])); },
                         {a}),
            kTol);
  EXPECT_LT(MaxGradError([](ad::Tape& t,
                            auto x) { return Bilinear(t, ad::LayerNorm(x[0], x[1], x[2])); },
                         {a, gain, bias}),
            kTol);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const double angles[] = {0.3, -2.0, 3.1};
                  return Bilinear(t, ad::RotatePoints(x[0], angles));
                },
                {a}),
            kTol);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(5);
  ad::Tape tape;
  const Var s = ad::SoftmaxRows(tape.Constant(RandomTensor(rng, 4, 7, 30.0)));
  for (size_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (double v : s.value().row(r)) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  const Var one = ad::SoftmaxRows(tape.Constant(Tensor(1, 1, -500.0)));
  EXPECT_EQ(one.value()(0, 0), 1.0);
}

TEST(Autodiff, HuberValuesAndDerivatives) {
  ad::Tape tape;
  const Var x = tape.Leaf(Tensor(1, 2, std::vector<double>{0.5, 3.0}));
  const Var h = ad::Huber(x, 1.0);
  EXPECT_EQ(h.value()(0, 0), 0.125);
  EXPECT_EQ(h.value()(0, 1), 2.5);
  tape.Backward(ad::MatMul(h, tape.Constant(Tensor(2, 1, 1.0))));
  EXPECT_EQ(tape.Grad(x)(0, 0), 0.5);
  EXPECT_EQ(tape.Grad(x)(0, 1), 1.0);
  EXPECT_THROW(ad::Huber(x, 0.0), InvalidInputError);
}

TEST(Autodiff, RotatePointsQuarterTurn) {
  ad::Tape tape;
  const double angles[] = {std::numbers::pi / 2};
  const Var r = ad::RotatePoints(tape.Constant(Tensor(1, 4, std::vector<double>{1, 0, 0, 2})),
                                 angles);
  EXPECT_NEAR(r.value()(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(r.value()(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(r.value()(0, 2), -2.0, 1e-15);
  EXPECT_NEAR(r.value()(0, 3), 0.0, 1e-15);
}

TEST(Autodiff, SegmentAttentionGradients) {
  Rng rng(6);
  const Tensor q = RandomTensor(rng, 3, 4);
  const Tensor k = RandomTensor(rng, 5, 4);
  const Tensor v = RandomTensor(rng, 5, 4);
  EXPECT_LT(MaxGradError(
                [](ad::Tape& t, auto x) {
                  const size_t offsets[] = {0, 2, 2, 5};
                  return Bilinear(t, ad::SegmentAttention(x[0], x[1], x[2], offsets, 2));
                },
                {q, k, v}),
            kTol);
}

TEST(Autodiff, SegmentAttentionEmptyAndSingle) {
  Rng rng(7);
  ad::Tape tape;
  const Var q = tape.Constant(RandomTensor(rng, 2, 4));
  const Var k = tape.Constant(RandomTensor(rng, 1, 4));
  const Var v = tape.Constant(RandomTensor(rng, 1, 4));
  const size_t offsets[] = {0, 0, 1};
  const Var out = ad::SegmentAttention(q, k, v, offsets, 2);
  for (size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(out.value()(0, c), 0.0);
    EXPECT_DOUBLE_EQ(out.value()(1, c), v.value()(0, c));
  }
  const auto w = ad::SegmentAttentionWeights(q.value(), k.value(), offsets, 2);
  EXPECT_EQ(w, (std::vector<double>{1.0, 1.0}));
}

TEST(Autodiff, ShapeErrors) {
  ad::Tape tape;
  const Var a = tape.Constant(Tensor(2, 3));
  const Var b = tape.Constant(Tensor(2, 3));
  EXPECT_THROW(ad::MatMul(a, b), ShapeError);
  EXPECT_THROW(ad::Add(a, tape.Constant(Tensor(3, 2))), ShapeError);
  EXPECT_THROW(ad::Slice(a, 1, 2, 0, 1), ShapeError);
  EXPECT_THROW(tape.Backward(a), ShapeError);
  const size_t bad[] = {5};
  EXPECT_THROW(ad::GatherRows(a, bad), ShapeError);
  ad::Tape other;
  EXPECT_THROW(ad::Add(a, other.Constant(Tensor(2, 3))), ShapeError);
}

TEST(Autodiff, NonFiniteValuesAreRejected) {
  ad::Tape tape;
  const Var a = tape.Constant(Tensor(1, 1, std::numeric_limits<double>::max()));
  EXPECT_THROW(ad::Scale(a, 10.0), NumericError);
  ad::Tape lax(false);
  const Var b = lax.Constant(Tensor(1, 1, std::numeric_limits<double>::max()));
  EXPECT_TRUE(std::isinf(ad::Scale(b, 10.0).value()(0, 0)));
  const Var nan = lax.Constant(Tensor(1, 1, std::numeric_limits<double>::quiet_NaN()));
  EXPECT_TRUE(std::isnan(ad::Relu(nan).value()(0, 0)));
}

TEST(Autodiff, ParamGradientsLandInSink) {
  const Tensor w(2, 2, std::vector<double>{1, 2, 3, 4});
  Tensor sink(2, 2);
  for (int pass = 0; pass < 2; ++pass) {
    ad::Tape tape;
    const Var p = tape.Param(w, &sink);
    tape.Backward(ad::Mean(p));
  }
  for (double g : sink.values()) EXPECT_EQ(g, 0.5);
  ad::Tape tape;
  Tensor wrong(1, 2);
  EXPECT_THROW(tape.Param(w, &wrong), ShapeError);
}

}  // namespace
}  // namespace sbr
