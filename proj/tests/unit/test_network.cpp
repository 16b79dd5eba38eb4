#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "gradient_check.hpp"
#include "psic/error.hpp"
#include "psic/network.hpp"

using namespace psic;
using namespace psic::dcnn;

namespace {

// Hand count: per tap a band-complete bank holds sum (2n+1)^2 weights and
// each conv adds P biases.
std::size_t hand_count(int n_max, bool per_direction) {
  const std::size_t p = static_cast<std::size_t>((n_max + 1) * (n_max + 2) / 2);
  std::size_t per_tap = 0;
  for (int n = 0; n <= n_max; n += 2) per_tap += static_cast<std::size_t>((2 * n + 1) * (2 * n + 1));
  const std::size_t l1 = 3 * (27 * per_tap + p);
  const std::size_t l2 = (per_direction ? 6 : 3) * (9 * per_tap + p);
  const std::size_t l3 = 6 * (3 * per_tap + p);
  const std::size_t fusion = 3 * (2 * p * p + p);
  const std::size_t merge = 3 * p * p + p;
  const std::size_t head = 2 * p + 2;
  return l1 + l2 + l3 + fusion + merge + head;
}

NetworkConfig small_config() {
  NetworkConfig c;
  c.radius = 1;
  c.n_max = 2;
  return c;
}

}  // namespace

TEST(ParamCount, CanonicalCountsForBothWirings) {
  NetworkConfig shared;
  NetworkConfig per_dir;
  per_dir.wiring = Layer2Wiring::PerDirectionConv;
  EXPECT_EQ(param_count(shared).total, 42338u);
  EXPECT_EQ(param_count(per_dir).total, 49874u);
  EXPECT_EQ(param_count(shared).total, hand_count(6, false));
  EXPECT_EQ(param_count(per_dir).total, hand_count(6, true));
  EXPECT_EQ(param_count(small_config()).total, hand_count(2, false));
}

TEST(ParamCount, BreakdownIsDeterministicAndSumsToTotal) {
  const auto a = param_count(NetworkConfig{});
  const auto b = param_count(NetworkConfig{});
  ASSERT_EQ(a.per_layer, b.per_layer);
  ASSERT_EQ(a.per_layer.size(), 6u);
  EXPECT_EQ(a.per_layer[0], (std::pair<std::string, std::size_t>{"layer1", 22440}));
  EXPECT_EQ(a.per_layer[1], (std::pair<std::string, std::size_t>{"layer2", 7536}));
  EXPECT_EQ(a.per_layer[2], (std::pair<std::string, std::size_t>{"layer3", 5136}));
  std::size_t sum = 0;
  for (const auto& [name, n] : a.per_layer) sum += n;
  EXPECT_EQ(sum, a.total);
}

TEST(NetworkLayout, BlocksAreContiguous) {
  const auto layout = NetworkLayout::build(NetworkConfig{});
  std::size_t cursor = 0;
  for (const auto& b : layout.blocks) {
    EXPECT_EQ(b.offset, cursor) << b.name;
    cursor += b.size;
  }
  EXPECT_EQ(cursor, layout.total);
  EXPECT_EQ(path_names().size(), 6u);
}

TEST(NetworkConfig, Validation) {
  NetworkConfig c;
  c.n_max = 3;
  EXPECT_THROW(c.validate(), DomainError);
  c = NetworkConfig{};
  c.kernel = 2;
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_EQ(layer2_wiring_from_string(to_string(Layer2Wiring::PerDirectionConv)), Layer2Wiring::PerDirectionConv);
  EXPECT_THROW(layer2_wiring_from_string("bogus"), DomainError);
}

TEST(Initialization, HeScaleAndZeroBiases) {
  const NetworkConfig cfg;
  const auto params = init_params(cfg, 5);
  const auto& layout = params.layout();
  for (std::size_t i = 0; i < layout.layer1.size(); ++i) {
    const auto& slot = layout.layer1[i];
    const auto bias = params.slice(slot.bias, 28);
    for (double b : bias) EXPECT_EQ(b, 0.0);
  }
  // Merge layer: fan_in = 3F = 84.
  const auto w = params.slice(layout.merge.weights, layout.merge.rows * layout.merge.cols);
  double ss = 0.0;
  for (double x : w) ss += x * x;
  EXPECT_NEAR(ss / static_cast<double>(w.size()), 2.0 / 84.0, 0.1 * 2.0 / 84.0);

  const auto again = init_params(cfg, 5);
  EXPECT_TRUE(std::equal(params.values().begin(), params.values().end(), again.values().begin()));
  const auto other = init_params(cfg, 6);
  EXPECT_FALSE(std::equal(params.values().begin(), params.values().end(), other.values().begin()));
}

TEST(Forward, OutputIsProbabilityAndDeterministic) {
  const NetworkConfig cfg;
  const auto params = init_params(cfg, 1);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 5; ++i) {
    const auto cube = psic::testing::random_cube(1, 6, rng);
    const double g = predict(params, cube);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
    EXPECT_EQ(g, forward(params, cube).gamma);
  }
}

TEST(Forward, RejectsWrongCubeGeometry) {
  const auto params = init_params(NetworkConfig{}, 1);
  EXPECT_THROW(predict(params, sh::ShCube(2, 6)), ShapeError);
  EXPECT_THROW(predict(params, sh::ShCube(1, 4)), ShapeError);
}

TEST(Backward, MatchesFiniteDifferencesOverSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = psic::testing::check_network_gradient(small_config(), seed);
    EXPECT_EQ(r.failures, 0u) << "seed " << seed << " worst " << r.worst_relative;
    EXPECT_EQ(r.parameters, param_count(small_config()).total);
  }
}

TEST(Backward, PerDirectionWiringMatchesFiniteDifferences) {
  NetworkConfig cfg = small_config();
  cfg.wiring = Layer2Wiring::PerDirectionConv;
  const auto r = psic::testing::check_network_gradient(cfg, 77);
  EXPECT_EQ(r.failures, 0u) << r.worst_relative;
}

TEST(Backward, RejectsStaleCache) {
  auto params = init_params(small_config(), 3);
  std::mt19937_64 rng(3);
  const auto cube = psic::testing::random_cube(1, 2, rng);
  const auto fwd = forward(params, cube);
  std::vector<double> grad(params.size(), 0.0);
  EXPECT_NO_THROW(backward(params, fwd.cache, 1, grad));
  params.mutable_values()[0] += 1.0;
  EXPECT_THROW(backward(params, fwd.cache, 1, grad), Error);
}

TEST(Dropout, FullKeepMatchesInferenceAndMaskIsScaled) {
  const auto params = init_params(NetworkConfig{}, 4);
  std::mt19937_64 rng(4);
  const auto cube = psic::testing::random_cube(1, 6, rng);
  std::mt19937_64 drop_rng(1);
  DropoutSpec keep_all{1.0, &drop_rng};
  EXPECT_EQ(forward(params, cube, &keep_all).gamma, predict(params, cube));

  DropoutSpec half{0.5, &drop_rng};
  const auto fwd = forward(params, cube, &half);
  for (double m : fwd.cache.dropout_mask) EXPECT_TRUE(m == 0.0 || m == 2.0);
}
