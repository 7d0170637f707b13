#include <gtest/gtest.h>

#include <cmath>

#include "scv/grad_check.hpp"
#include "scv/ops.hpp"
#include "test_util.hpp"

using namespace scv;
using V = Var<double>;
using T = Tensor<double>;

namespace {

V apply(Tape<double>& t, OpKind k, std::vector<V> in, OpAttrs a = {}) {
  return apply_op<double>(t, k, std::span<const V>(in), a);
}

// Straightforward align_corners=false bilinear resize of one plane.
double ref_upsample(const std::vector<double>& g, std::size_t h, std::size_t w, std::size_t f, std::size_t oy,
                    std::size_t ox) {
  auto src = [&](std::size_t o, std::size_t n) {
    double s = (double(o) + 0.5) / double(f) - 0.5;
    s = std::clamp(s, 0.0, double(n - 1));
    return s;
  };
  const double sy = src(oy, h), sx = src(ox, w);
  const auto y0 = std::size_t(sy), x0 = std::size_t(sx);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - double(y0), fx = sx - double(x0);
  return (1 - fy) * ((1 - fx) * g[y0 * w + x0] + fx * g[y0 * w + x1]) +
         fy * ((1 - fx) * g[y1 * w + x0] + fx * g[y1 * w + x1]);
}

}  // namespace

TEST(Ops, AddElementwise) {
  Tape<double> t;
  V r = apply(t, OpKind::add, {make_constant(T(Shape{1, 2}, {1, 2})), make_constant(T(Shape{1, 2}, {3, 4}))});
  EXPECT_EQ(r.value(), T(Shape{1, 2}, {4, 6}));
}

TEST(Ops, AddPerChannelBiasOnly) {
  Tape<double> t;
  V x = make_constant(T(Shape{1, 2, 1, 2}, {1, 2, 3, 4}));
  V b = make_constant(T(Shape{2}, {10, 20}));
  EXPECT_EQ(add(t, x, b).value(), T(Shape{1, 2, 1, 2}, {11, 12, 23, 24}));
  EXPECT_THROW(add(t, x, make_constant(T(Shape{3}))), ShapeError);
  EXPECT_THROW(add(t, make_constant(T(Shape{2, 2})), make_constant(T(Shape{2}))), ShapeError);
}

TEST(Ops, ConvOfOnesIsNine) {
  Tape<double> t;
  OpAttrs a;
  a.stride = 1;
  a.pad = 0;
  V r = apply(t, OpKind::conv2d, {make_constant(T(Shape{1, 1, 3, 3}, 1.0)), make_constant(T(Shape{1, 1, 3, 3}, 1.0))},
              a);
  ASSERT_EQ(r.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(r.value()[0], 9.0);
}

TEST(Ops, ConvStrideAndPadGeometry) {
  Tape<double> t;
  V x = make_constant(T(Shape{2, 3, 8, 12}, 1.0));
  V w = make_constant(T(Shape{5, 3, 3, 3}, 1.0));
  V y = conv2d(t, x, w, V(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 5, 4, 6}));
  // Interior output sees all 27 taps; the top-left corner only 12.
  EXPECT_DOUBLE_EQ(y.value().at(1, 4, 1, 1), 27.0);
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 12.0);
  EXPECT_THROW(conv2d(t, x, make_constant(T(Shape{5, 2, 3, 3})), V(), 1, 1), ShapeError);
}

TEST(Ops, BilinearUpsampleMatchesScalarReference) {
  Tape<double> t;
  const std::vector<double> g{0, 1, 2, 3};
  V r = bilinear_upsample(t, make_constant(T(Shape{1, 1, 2, 2}, g)), 2);
  ASSERT_EQ(r.shape(), (Shape{1, 1, 4, 4}));
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(r.value().at(0, 0, y, x), ref_upsample(g, 2, 2, 2, y, x), 1e-15);
  EXPECT_DOUBLE_EQ(r.value().at(0, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(r.value().at(0, 0, 0, 3), 1.0);
  EXPECT_DOUBLE_EQ(r.value().at(0, 0, 3, 0), 2.0);
  EXPECT_DOUBLE_EQ(r.value().at(0, 0, 3, 3), 3.0);
  EXPECT_DOUBLE_EQ(r.value().at(0, 0, 1, 1), 0.75);
}

TEST(Ops, BilinearUpsampleFactorFourRandom) {
  Tape<double> t;
  const T in = test::random_tensor(Shape{1, 1, 3, 5}, 9);
  V r = bilinear_upsample(t, make_constant(in), 4);
  const std::vector<double> g(in.data().begin(), in.data().end());
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 20; ++x) EXPECT_NEAR(r.value().at(0, 0, y, x), ref_upsample(g, 3, 5, 4, y, x), 1e-14);
}

TEST(Ops, ConcatAndSlice) {
  Tape<double> t;
  V a = make_constant(T(Shape{1, 1, 1, 2}, {1, 2}));
  V b = make_constant(T(Shape{1, 2, 1, 2}, {3, 4, 5, 6}));
  V c = concat_channels<double>(t, {a, b});
  EXPECT_EQ(c.value(), T(Shape{1, 3, 1, 2}, {1, 2, 3, 4, 5, 6}));
  V s = slice(t, c, 1, 1, 3);
  EXPECT_EQ(s.value(), b.value());
  EXPECT_THROW(slice(t, c, 1, 2, 4), ShapeError);
  EXPECT_THROW(concat_channels<double>(t, {a, make_constant(T(Shape{1, 1, 2, 2}))}), ShapeError);
}

TEST(Ops, MatmulShapes) {
  Tape<double> t;
  V a = make_constant(T(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  V b = make_constant(T(Shape{3, 1}, {1, 0, -1}));
  EXPECT_EQ(matmul(t, a, b).value(), T(Shape{2, 1}, {-2, -2}));
  EXPECT_THROW(matmul(t, b, b), ShapeError);
}

TEST(Ops, NonFiniteOutputNamesOp) {
  Tape<double> t;
  V a = make_constant(T(Shape{2}, {1e308, 1.0}));
  try {
    (void)scale(t, a, 10.0);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

// Every op through the dispatcher, gradient-checked on at most 64 elements.
TEST(Ops, EveryOpPassesGradCheck) {
  struct Case {
    OpKind kind;
    std::vector<Shape> shapes;
    OpAttrs attrs;
  };
  OpAttrs conv;
  conv.stride = 1;
  conv.pad = 1;
  OpAttrs conv_s2;
  conv_s2.stride = 2;
  conv_s2.pad = 1;
  OpAttrs up;
  up.factor = 2;
  OpAttrs sl;
  sl.axis = 1;
  sl.begin = 1;
  sl.end = 3;
  OpAttrs sc;
  sc.scale = -1.7;
  const std::vector<Case> cases = {
      {OpKind::conv2d, {{1, 2, 4, 4}, {2, 2, 3, 3}, {2}}, conv},
      {OpKind::conv2d, {{1, 2, 5, 5}, {1, 2, 3, 3}}, conv_s2},
      {OpKind::matmul, {{3, 4}, {4, 2}}, {}},
      {OpKind::add, {{2, 3, 2, 2}, {3}}, {}},
      {OpKind::add, {{4, 4}, {4, 4}}, {}},
      {OpKind::sub, {{4, 4}, {4, 4}}, {}},
      {OpKind::mul, {{4, 4}, {4, 4}}, {}},
      {OpKind::scale, {{4, 4}}, sc},
      {OpKind::relu, {{4, 4}}, {}},
      {OpKind::sigmoid, {{4, 4}}, {}},
      {OpKind::tanh, {{4, 4}}, {}},
      {OpKind::concat_channels, {{1, 1, 2, 3}, {1, 2, 2, 3}}, {}},
      {OpKind::bilinear_upsample, {{1, 2, 2, 3}}, up},
      {OpKind::slice, {{1, 4, 2, 3}}, sl},
      {OpKind::sum, {{4, 4}}, {}},
      {OpKind::mean, {{4, 4}}, {}},
  };
  std::uint64_t seed = 100;
  for (const Case& c : cases) {
    std::vector<T> inputs;
    for (const Shape& s : c.shapes) {
      ASSERT_LE(shape_numel(s), 64u);
      T x = test::random_tensor(s, seed++);
      // Keep relu inputs away from the kink.
      if (c.kind == OpKind::relu)
        for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
      inputs.push_back(x);
    }
    const T weights = test::random_tensor(Shape{64}, seed++);
    ScalarFn<double> f = [&](Tape<double>& t, const std::vector<V>& in) {
      V y = apply_op<double>(t, c.kind, std::span<const V>(in), c.attrs);
      // Random linear functional so every output coordinate matters.
      const T w = T(y.shape(), std::vector<double>(weights.data().begin(), weights.data().begin() + y.value().size()));
      return sum(t, mul(t, y, make_constant(w)));
    };
    EXPECT_LT(grad_check(f, inputs, 1e-5), 1e-4) << op_name(c.kind);
  }
}

TEST(Ops, ApplyOpChecksArity) {
  Tape<double> t;
  EXPECT_THROW(apply(t, OpKind::relu, {}), ShapeError);
  EXPECT_THROW(apply(t, OpKind::add, {make_constant(T(Shape{1}))}), ShapeError);
}
