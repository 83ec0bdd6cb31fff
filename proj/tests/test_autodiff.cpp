#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hgru/autodiff.hpp"
#include "hgru/checks.hpp"
#include "hgru/grad_check.hpp"

using namespace hgru;

namespace {

using T = double;

Tensor<T> chw(std::size_t c, std::size_t h, std::size_t w, std::vector<T> v) { return Tensor<T>({c, h, w}, std::move(v)); }

// direct triple loop over the padded input
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2), h = x.dim(1), wd = x.dim(2);
  const long p = static_cast<long>(k / 2);
  Tensor<T> out({co, h, wd});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < wd; ++xx) {
        T s = b[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx) {
              const long yy = static_cast<long>(y + dy) - p, xi = static_cast<long>(xx + dx) - p;
              if (yy < 0 || xi < 0 || yy >= static_cast<long>(h) || xi >= static_cast<long>(wd)) continue;
              s += w[((o * ci + c) * k + dy) * k + dx] * x.at(c, yy, xi);
            }
        out.at(o, y, xx) = s;
      }
  return out;
}

}  // namespace

TEST(Conv2d, IdentityKernel) {
  Tape<T> t;
  auto y = conv2d(t.constant(chw(1, 1, 1, {5.0})), t.constant(Tensor<T>({1, 1, 1, 1}, {1.0})),
                  t.constant(Tensor<T>({1}, {0.0})));
  EXPECT_EQ(y.value()[0], 5.0);
}

TEST(Conv2d, OnesKernelZeroPadding) {
  Tape<T> t;
  auto y = conv2d(t.constant(Tensor<T>({1, 3, 3}, 1.0)), t.constant(Tensor<T>({1, 1, 3, 3}, 1.0)),
                  t.constant(Tensor<T>({1}, 0.0)));
  EXPECT_EQ(y.value().at(0, 1, 1), 9.0);
  EXPECT_EQ(y.value().at(0, 0, 0), 4.0);
  EXPECT_EQ(y.value().at(0, 0, 1), 6.0);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
  Rng rng(3);
  Tape<T> t;
  auto y = conv2d(t.constant(random_tensor(rng, {2, 5, 4})), t.constant(Tensor<T>({3, 2, 3, 3}, 0.0)),
                  t.constant(Tensor<T>({3}, {0.5, -1.0, 2.0})));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(y.value()[c * 20 + i], (std::vector<T>{0.5, -1.0, 2.0}[c]));
}

TEST(Conv2d, MatchesDirectSum) {
  Rng rng(4);
  for (std::size_t k : {1, 3, 5}) {
    auto x = random_tensor(rng, {3, 7, 6});
    auto w = random_tensor(rng, {4, 3, k, k});
    auto b = random_tensor(rng, {4});
    Tape<T> t;
    auto y = conv2d(t.constant(x), t.constant(w), t.constant(b));
    EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, w, b)), 1e-12) << "k=" << k;
  }
}

TEST(Conv2d, LinearInInputAndWeights) {
  Rng rng(5);
  auto x = random_tensor(rng, {2, 6, 6});
  auto w = random_tensor(rng, {3, 2, 3, 3});
  Tensor<T> zero({3}, 0.0);
  const T a = 2.5;
  Tensor<T> ax = x, aw = w;
  for (auto& v : ax.data()) v *= a;
  for (auto& v : aw.data()) v *= a;
  Tape<T> t;
  auto base = conv2d(t.constant(x), t.constant(w), t.constant(zero)).value();
  auto sx = conv2d(t.constant(ax), t.constant(w), t.constant(zero)).value();
  auto sw = conv2d(t.constant(x), t.constant(aw), t.constant(zero)).value();
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(sx[i], a * base[i], 1e-12);
    EXPECT_NEAR(sw[i], a * base[i], 1e-12);
  }
}

TEST(Conv2d, RejectsBadShapes) {
  Tape<T> t;
  auto x = t.constant(Tensor<T>({2, 4, 4}, 1.0));
  EXPECT_THROW(conv2d(x, t.constant(Tensor<T>({1, 2, 2, 2}, 1.0)), t.constant(Tensor<T>({1}, 0.0))), ShapeError);
  EXPECT_THROW(conv2d(x, t.constant(Tensor<T>({1, 3, 3, 3}, 1.0)), t.constant(Tensor<T>({1}, 0.0))), ShapeError);
  EXPECT_THROW(conv2d(x, t.constant(Tensor<T>({1, 2, 3, 3}, 1.0)), t.constant(Tensor<T>({2}, 0.0))), ShapeError);
}

TEST(Maxpool, Basic) {
  Tape<T> t;
  EXPECT_EQ(maxpool2(t.constant(chw(1, 2, 2, {1, 2, 3, 4}))).value()[0], 4.0);
  auto c = maxpool2(t.constant(Tensor<T>({2, 4, 6}, 1.5))).value();
  EXPECT_EQ(c.shape(), (Shape{2, 2, 3}));
  for (auto v : c.data()) EXPECT_EQ(v, 1.5);
}

TEST(Maxpool, TieGoesToFirstElement) {
  Tape<T> t;
  auto x = t.leaf(chw(1, 2, 2, {4, 4, 1, 2}));
  auto y = maxpool2(x);
  EXPECT_EQ(y.value()[0], 4.0);
  auto g = t.backward(sum(y));
  EXPECT_EQ(g.of(x)[0], 1.0);
  EXPECT_EQ(g.of(x)[1], 0.0);
  EXPECT_EQ(g.of(x)[2], 0.0);
  EXPECT_EQ(g.of(x)[3], 0.0);

  // finite differences on a copy nudged so (0,0) is the strict winner
  const T eps = 1e-6;
  auto f = [](const Tensor<T>& v) {
    Tape<T> tp;
    return maxpool2(tp.constant(v)).value()[0];
  };
  Tensor<T> p = chw(1, 2, 2, {4 + 1e-3, 4, 1, 2});
  Tensor<T> up = p, dn = p;
  up[0] += eps;
  dn[0] -= eps;
  EXPECT_NEAR((f(up) - f(dn)) / (2 * eps), 1.0, 1e-8);
  up = p;
  dn = p;
  up[1] += eps;
  dn[1] -= eps;
  EXPECT_NEAR((f(up) - f(dn)) / (2 * eps), 0.0, 1e-8);
}

TEST(Maxpool, RejectsOddSize) {
  Tape<T> t;
  EXPECT_THROW(maxpool2(t.constant(Tensor<T>({1, 3, 4}, 0.0))), ShapeError);
  EXPECT_THROW(maxpool2(t.constant(Tensor<T>({1, 4, 5}, 0.0))), ShapeError);
}

TEST(Upsample, ReplicatesAndRoundTrips) {
  Tape<T> t;
  auto u = upsample2(t.constant(chw(1, 1, 1, {1.0}))).value();
  EXPECT_EQ(u.shape(), (Shape{1, 2, 2}));
  for (auto v : u.data()) EXPECT_EQ(v, 1.0);

  Rng rng(6);
  auto x = random_tensor(rng, {3, 5, 7});
  EXPECT_EQ(maxpool2(upsample2(t.constant(x))).value(), x);
}

TEST(Upsample, GradientIsFour) {
  Tape<T> t;
  Rng rng(7);
  auto x = t.leaf(random_tensor(rng, {2, 3, 3}));
  auto g = t.backward(sum(upsample2(x)));
  for (auto v : g.of(x).data()) EXPECT_EQ(v, 4.0);
}

TEST(Elementwise, Values) {
  Tape<T> t;
  auto z = t.constant(Tensor<T>({1, 1, 1}, 0.0));
  EXPECT_EQ(sigmoid(z).value()[0], 0.5);
  EXPECT_EQ(hgru::tanh(z).value()[0], 0.0);
  Rng rng(8);
  auto x = t.constant(random_tensor(rng, {2, 3, 4}, -10, 10));
  auto s = add(one_minus(sigmoid(x)), sigmoid(x)).value();
  for (auto v : s.data()) EXPECT_NEAR(v, 1.0, 1e-15);
  auto r = relu(x).value();
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], std::max(0.0, x.value()[i]));
}

TEST(Elementwise, RejectsShapeMismatch) {
  Tape<T> t;
  auto a = t.constant(Tensor<T>({1, 2, 2}, 0.0));
  auto b = t.constant(Tensor<T>({1, 2, 3}, 0.0));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(sub(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
}

TEST(Concat, ShapeSliceAndGradient) {
  Rng rng(9);
  Tape<T> t;
  auto a = t.leaf(random_tensor(rng, {1, 3, 2}));
  auto b = t.leaf(random_tensor(rng, {2, 3, 2}));
  auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{3, 3, 2}));
  const Tensor<T> av = a.value(), bv = b.value();
  const Tensor<T> s0 = slice_channels(c, 0, 1).value();
  const Tensor<T> s1 = slice_channels(c, 1, 3).value();
  EXPECT_EQ(s0, av);
  EXPECT_EQ(s1, bv);
  auto g = t.backward(sum(c));
  for (auto v : g.of(a).data()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(concat_channels(a, t.constant(Tensor<T>({1, 2, 2}, 0.0))), ShapeError);
}

TEST(Backward, SumAndSquare) {
  Rng rng(10);
  Tape<T> t;
  auto x = t.leaf(random_tensor(rng, {2, 2, 3}));
  auto g1 = t.backward(sum(x));
  for (auto v : g1.of(x).data()) EXPECT_EQ(v, 1.0);
  auto l = sum(mul(x, x));
  auto g2 = t.backward(l);
  for (std::size_t i = 0; i < x.value().size(); ++i) EXPECT_EQ(g2.of(x)[i], 2 * x.value()[i]);
  EXPECT_EQ(g2.of(l)[0], 1.0);
}

TEST(Backward, RejectsNonScalar) {
  Tape<T> t;
  auto x = t.leaf(Tensor<T>({1, 2, 2}, 1.0));
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Backward, VisitsEachNodeOnceInReverseOrder) {
  Tape<T> t;
  auto x = t.leaf(Tensor<T>({1, 2, 2}, 1.0));
  auto y = add(mul(x, x), x);  // x used twice
  auto l = sum(y);
  auto g = t.backward(l);
  const auto& order = g.visit_order();
  for (std::size_t i = 1; i < order.size(); ++i) EXPECT_GT(order[i - 1], order[i]);
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  for (auto v : g.of(x).data()) EXPECT_EQ(v, 3.0);
  for (std::size_t id = 0; id < t.size(); ++id)
    for (auto in : t.node(id).inputs) EXPECT_LT(in, id);
}

TEST(Backward, ConvSigmoidSumMatchesFiniteDifferences) {
  Rng rng(11);
  ScalarFn f = [](Tape<T>&, std::span<const Var<T>> v) { return sum(sigmoid(conv2d(v[0], v[1], v[2]))); };
  auto r = grad_check(f, {random_tensor(rng, {2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, SumIsExact) {
  Rng rng(12);
  ScalarFn f = [](Tape<T>&, std::span<const Var<T>> v) { return sum(v[0]); };
  auto r = grad_check(f, {random_tensor(rng, {2, 3, 3})});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.checked, 18u);
}

TEST(GradCheck, SigmoidCeOfHeatmapStack) {
  Rng rng(13);
  auto z = random_tensor(rng, {3, 4, 4}, 0.0, 1.0);
  ScalarFn f = [z](Tape<T>&, std::span<const Var<T>> v) { return sigmoid_ce_mean(v[0], z); };
  EXPECT_LT(grad_check(f, {random_tensor(rng, {3, 4, 4}, -5, 5)}).max_rel_error, 1e-4);
}

TEST(GradCheck, RejectsNonScalarAndBadEps) {
  ScalarFn f = [](Tape<T>&, std::span<const Var<T>> v) { return v[0]; };
  EXPECT_THROW(grad_check(f, {Tensor<T>({1, 2, 2}, 1.0)}), std::invalid_argument);
  ScalarFn g = [](Tape<T>&, std::span<const Var<T>> v) { return sum(v[0]); };
  EXPECT_THROW(grad_check(g, {Tensor<T>({1, 2, 2}, 1.0)}, 0.0), std::invalid_argument);
}

TEST(GradCheck, EveryOpOnThreeShapes) {
  for (const auto& r : grad_check_suite("ops", 1)) EXPECT_LT(r.result.max_rel_error, 1e-4) << r.name;
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(14);
  auto x = random_tensor(rng, {4, 16, 16});
  auto w = random_tensor(rng, {8, 4, 3, 3});
  auto b = random_tensor(rng, {8});
  Tape<T> t1, t2;
  auto y1 = relu(conv2d(t1.constant(x), t1.constant(w), t1.constant(b))).value();
  auto y2 = relu(conv2d(t2.constant(x), t2.constant(w), t2.constant(b))).value();
  EXPECT_EQ(y1, y2);
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor<T>({2, 2}, std::vector<T>{1, 2, 3}), ShapeError);
  Tensor<T> a({2, 3, 4});
  EXPECT_EQ(a.size(), 24u);
}
