#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hgru/kernels.hpp"
#include "hgru/random.hpp"

using namespace hgru;

namespace {

template <typename T>
std::vector<T> rand_vec(Rng& rng, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1, 1));
  return v;
}

template <typename T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

struct Case {
  std::size_t ci, co, h, w, k;
};

const std::vector<Case> kCases{{1, 1, 1, 1, 3},  {3, 5, 7, 9, 3},   {16, 16, 32, 32, 3}, {4, 9, 5, 33, 3},
                               {2, 3, 6, 6, 1},  {3, 2, 8, 5, 5},   {5, 7, 2, 40, 3},    {8, 1, 17, 3, 3},
                               {2, 2, 4, 4, 7},  {36, 36, 8, 8, 3}, {1, 8, 16, 16, 3}};

template <typename T>
void check_all(double tol) {
  Rng rng(1);
  for (const Case& c : kCases) {
    const ConvDims d{c.ci, c.co, c.h, c.w, c.k};
    auto in = rand_vec<T>(rng, d.input_size());
    auto w = rand_vec<T>(rng, d.weight_size());
    auto b = rand_vec<T>(rng, c.co);
    auto go = rand_vec<T>(rng, d.output_size());
    std::vector<T> o1(d.output_size()), o2(d.output_size());
    kernels::conv2d_forward<T>(d, in, w, b, o1);
    reference::conv2d_forward<T>(d, in, w, b, o2);
    EXPECT_LT(max_diff(o1, o2), tol) << c.ci << "x" << c.co << " " << c.h << "x" << c.w << " k" << c.k;

    auto gi1 = rand_vec<T>(rng, d.input_size());
    auto gi2 = gi1;
    kernels::conv2d_backward_input<T>(d, go, w, gi1);
    reference::conv2d_backward_input<T>(d, go, w, gi2);
    EXPECT_LT(max_diff(gi1, gi2), tol);

    auto gw1 = rand_vec<T>(rng, d.weight_size());
    auto gw2 = gw1;
    auto gb1 = rand_vec<T>(rng, c.co);
    auto gb2 = gb1;
    kernels::conv2d_backward_params<T>(d, go, in, gw1, gb1);
    reference::conv2d_backward_params<T>(d, go, in, gw2, gb2);
    EXPECT_LT(max_diff(gw1, gw2), tol * std::sqrt(static_cast<double>(c.h * c.w)));
    EXPECT_LT(max_diff(gb1, gb2), tol * std::sqrt(static_cast<double>(c.h * c.w)));
  }
}

}  // namespace

TEST(Kernels, ConvMatchesReferenceDouble) { check_all<double>(1e-12); }
TEST(Kernels, ConvMatchesReferenceFloat) { check_all<float>(2e-4); }

TEST(Kernels, BackwardParamsSkipsEmptyOutputs) {
  Rng rng(2);
  const ConvDims d{3, 4, 8, 8, 3};
  auto in = rand_vec<double>(rng, d.input_size());
  auto go = rand_vec<double>(rng, d.output_size());
  std::vector<double> gb1(4, 0.0), gb2(4, 0.0), gw(d.weight_size(), 0.0);
  kernels::conv2d_backward_params<double>(d, go, in, {}, gb1);
  reference::conv2d_backward_params<double>(d, go, in, gw, gb2);
  EXPECT_LT(max_diff(gb1, gb2), 1e-12);
}

TEST(Kernels, RejectsBadBuffers) {
  const ConvDims d{2, 2, 4, 4, 3};
  std::vector<double> in(d.input_size()), w(d.weight_size()), b(2), out(d.output_size());
  std::vector<double> small(3);
  EXPECT_ANY_THROW(kernels::conv2d_forward<double>(d, small, w, b, out));
  const ConvDims even{2, 2, 4, 4, 2};
  std::vector<double> we(even.weight_size());
  EXPECT_ANY_THROW(kernels::conv2d_forward<double>(even, in, we, b, out));
}

TEST(Kernels, MaxpoolMatchesReference) {
  Rng rng(3);
  for (auto [c, h, w] : std::vector<std::array<std::size_t, 3>>{{1, 2, 2}, {3, 8, 6}, {16, 32, 32}}) {
    auto in = rand_vec<double>(rng, c * h * w);
    in[0] = in[1];  // a tie
    std::vector<double> o1(c * h * w / 4), o2(o1.size());
    std::vector<std::size_t> a1(o1.size()), a2(o1.size());
    kernels::maxpool2_forward<double>(c, h, w, in, o1, a1);
    reference::maxpool2_forward<double>(c, h, w, in, o2, a2);
    EXPECT_EQ(o1, o2);
    EXPECT_EQ(a1, a2);
  }
}

TEST(Kernels, UpsampleAndBackward) {
  Rng rng(4);
  const std::size_t c = 3, h = 5, w = 4;
  auto in = rand_vec<double>(rng, c * h * w);
  std::vector<double> out(4 * in.size());
  kernels::upsample2_forward<double>(c, h, w, in, out);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x)
        EXPECT_EQ(out[(ch * 2 * h + y) * 2 * w + x], in[(ch * h + y / 2) * w + x / 2]);
  auto go = rand_vec<double>(rng, out.size());
  std::vector<double> gi(in.size(), 0.0);
  kernels::upsample2_backward<double>(c, h, w, go, gi);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) s += go[(ch * 2 * h + 2 * y + dy) * 2 * w + 2 * x + dx];
        EXPECT_NEAR(gi[(ch * h + y) * w + x], s, 1e-14);
      }
}
