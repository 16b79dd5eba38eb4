#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "psic/error.hpp"
#include "psic/layers.hpp"
#include "psic/sh_core.hpp"
#include "conv_oracle.hpp"

using namespace psic;
using namespace psic::dcnn;

namespace {

Field random_field(int rank, int extent, int channels, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Field f(rank, extent, channels);
  for (auto& v : f.values) v = n(rng);
  return f;
}

std::vector<double> random_vector(std::size_t size, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(size);
  for (auto& x : v) x = n(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(BankShape, WeightCounts) {
  const BankShape s{6, 3, 3};
  EXPECT_EQ(s.taps(), 27u);
  EXPECT_EQ(s.channels(), 28);
  // sum over bands of (2n+1)^2 = 1 + 25 + 81 + 169
  EXPECT_EQ(s.weight_count(), 27u * 276u);
  EXPECT_EQ(s.band_offset(0), 0u);
  EXPECT_EQ(s.band_offset(1), 27u);
  EXPECT_EQ((BankShape{2, 1, 3}.weight_count()), 3u * 26u);
}

class CompositeConvOracle : public ::testing::TestWithParam<int> {};

TEST_P(CompositeConvOracle, MatchesDirectSummation) {
  const int rank = GetParam();
  for (int n_max : {2, 6}) {
    std::mt19937_64 rng(100 + rank * 10 + n_max);
    const BankShape shape{n_max, rank, 3};
    const int p = shape.channels();
    for (int extent : {1, 3, 4}) {
      const Field in = random_field(rank, extent, p, rng);
      CompositeFilterBank bank(shape);
      bank.weights() = random_vector(shape.weight_count(), rng);
      const auto bias = random_vector(p, rng);
      const Field got = composite_conv(in, bank.view(), bias);
      const Field want = psic::testing::naive_conv(in, shape, bank.weights(), bias);
      ASSERT_TRUE(got.same_shape(want));
      EXPECT_LT(max_abs_diff(got.values, want.values), 1e-12) << "rank " << rank << " extent " << extent;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Ranks, CompositeConvOracle, ::testing::Values(1, 2, 3));

TEST(CompositeConv, WeightAccessorMatchesLayout) {
  CompositeFilterBank bank(BankShape{4, 2, 3});
  bank.weight(4, 3, 7, 5) = 2.5;
  const std::size_t d = 9;
  const std::size_t expected = bank.shape().band_offset(2) + (5 * d + 3 + 4) * d + (7 + 4);
  EXPECT_EQ(bank.weights()[expected], 2.5);
  EXPECT_EQ(tap_offset(bank.shape(), 5, 0), 0);
  EXPECT_EQ(tap_offset(bank.shape(), 5, 1), 1);
}

TEST(CompositeConv, ZonalBankReducesToZonalConvolution) {
  std::mt19937_64 rng(9);
  const std::vector<double> xi = {0.8, -1.3, 0.45, 2.0};
  const BankShape shape{6, 3, 3};
  const Field in = random_field(3, 3, 28, rng);
  const std::vector<double> zero_bias(28, 0.0);
  const Field out = composite_conv(in, CompositeFilterBank::zonal(shape, xi).view(), zero_bias);
  for (std::size_t s = 0; s < in.sites(); ++s) {
    sh::ShVector c(6);
    for (int j = 0; j < 28; ++j) c[j] = in.at(s, j);
    const auto want = sh::zonal_convolve(c, sh::ZonalKernel{xi});
    for (int j = 0; j < 28; ++j) EXPECT_NEAR(out.at(s, j), want[j], 1e-12);
  }
  const Field same = composite_conv(in, CompositeFilterBank::identity(shape).view(), zero_bias);
  EXPECT_EQ(same.values, in.values);
}

TEST(CompositeConv, RejectsMismatchedShapes) {
  std::mt19937_64 rng(1);
  const BankShape shape{2, 2, 3};
  CompositeFilterBank bank(shape);
  const std::vector<double> bias(6, 0.0);
  EXPECT_THROW(composite_conv(random_field(3, 3, 6, rng), bank.view(), bias), ShapeError);
  EXPECT_THROW(composite_conv(random_field(2, 3, 15, rng), bank.view(), bias), ShapeError);
  EXPECT_THROW(composite_conv(random_field(2, 3, 6, rng), bank.view(), std::vector<double>(5)), ShapeError);
}

TEST(CompositeConv, BackwardMatchesFiniteDifferences) {
  for (int rank : {1, 2, 3}) {
    std::mt19937_64 rng(40 + rank);
    const BankShape shape{2, rank, 3};
    const Field in = random_field(rank, 3, 6, rng);
    CompositeFilterBank bank(shape);
    bank.weights() = random_vector(shape.weight_count(), rng);
    auto bias = random_vector(6, rng);
    const Field upstream = random_field(rank, 3, 6, rng);

    auto loss = [&](const Field& x, const std::vector<double>& w, const std::vector<double>& b) {
      CompositeFilterBank tmp(shape);
      tmp.weights() = w;
      const Field y = composite_conv(x, tmp.view(), b);
      double l = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) l += y.values[i] * upstream.values[i];
      return l;
    };

    std::vector<double> gw(shape.weight_count(), 0.0), gb(6, 0.0);
    Field gi(rank, 3, 6);
    composite_conv_backward(in, bank.view(), upstream, gw, gb, &gi);

    const double h = 1e-6;
    for (std::size_t i = 0; i < gw.size(); i += 7) {
      auto wp = bank.weights(), wm = bank.weights();
      wp[i] += h;
      wm[i] -= h;
      EXPECT_NEAR(gw[i], (loss(in, wp, bias) - loss(in, wm, bias)) / (2 * h), 1e-6);
    }
    for (std::size_t i = 0; i < gb.size(); ++i) {
      auto bp = bias, bm = bias;
      bp[i] += h;
      bm[i] -= h;
      EXPECT_NEAR(gb[i], (loss(in, bank.weights(), bp) - loss(in, bank.weights(), bm)) / (2 * h), 1e-6);
    }
    for (std::size_t i = 0; i < in.size(); ++i) {
      Field xp = in, xm = in;
      xp.values[i] += h;
      xm.values[i] -= h;
      EXPECT_NEAR(gi.values[i], (loss(xp, bank.weights(), bias) - loss(xm, bank.weights(), bias)) / (2 * h), 1e-6);
    }
  }
}

TEST(MaxPool, ReducesOneAxisWithLowestIndexTies) {
  Field in(2, 3, 1);
  // rows are the first axis
  in.values = {1, 5, 2,
               5, 0, 2,
               3, 5, 2};
  const auto along0 = pool2(in, 0);
  ASSERT_EQ(along0.out.rank, 1);
  EXPECT_EQ(along0.out.values, (std::vector<double>{5, 5, 2}));
  EXPECT_EQ(along0.argmax, (std::vector<std::uint32_t>{3, 1, 2}));
  const auto along1 = pool2(in, 1);
  EXPECT_EQ(along1.out.values, (std::vector<double>{5, 5, 5}));
  EXPECT_EQ(along1.argmax, (std::vector<std::uint32_t>{1, 3, 7}));

  std::vector<double> grad(9, 0.0);
  max_pool_backward(std::vector<double>{1.0, 2.0, 3.0}, along0.argmax, grad);
  EXPECT_EQ(grad, (std::vector<double>{0, 2, 3, 1, 0, 0, 0, 0, 0}));

  EXPECT_THROW(pool3(in, 0), ShapeError);
  const auto scalar = pool1(pool2(in, 0).out);
  EXPECT_EQ(scalar.out.rank, 0);
  EXPECT_EQ(scalar.out.values, (std::vector<double>{5}));
}

TEST(Dense, FclAndBackward) {
  std::mt19937_64 rng(12);
  const auto v = random_vector(4, rng);
  const auto w = random_vector(12, rng);
  const auto b = random_vector(3, rng);
  const auto y = fcl(v, w, b);
  for (int r = 0; r < 3; ++r) {
    double acc = b[r];
    for (int c = 0; c < 4; ++c) acc += w[r * 4 + c] * v[c];
    EXPECT_NEAR(y[r], acc, 1e-15);
  }
  const std::vector<double> g = {0.5, -1.0, 2.0};
  std::vector<double> gw(12, 0.0), gb(3, 0.0), gv(4, 0.0);
  fcl_backward(v, w, g, gw, gb, gv);
  for (int r = 0; r < 3; ++r) {
    EXPECT_EQ(gb[r], g[r]);
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(gw[r * 4 + c], g[r] * v[c], 1e-15);
  }
  for (int c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (int r = 0; r < 3; ++r) acc += w[r * 4 + c] * g[r];
    EXPECT_NEAR(gv[c], acc, 1e-14);
  }
}

TEST(Activations, ReluAndSoftmax) {
  EXPECT_EQ(relu(std::vector<double>{-1.0, 0.0, 2.0}), (std::vector<double>{0.0, 0.0, 2.0}));
  std::vector<double> g = {1.0, 1.0, 1.0};
  relu_backward(std::vector<double>{-1.0, 0.0, 2.0}, g);
  EXPECT_EQ(g, (std::vector<double>{0.0, 0.0, 1.0}));

  EXPECT_DOUBLE_EQ(softmax2(0.0, 0.0), 0.5);
  EXPECT_NEAR(softmax2(1.0, -1.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_EQ(softmax2(1000.0, -1000.0), 1.0);
  EXPECT_EQ(softmax2(-1000.0, 1000.0), 0.0);
  EXPECT_FALSE(std::isnan(softmax2(800.0, 800.0)));
}
