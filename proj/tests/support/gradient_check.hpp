#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "psic/network.hpp"

namespace psic::testing {

struct GradientCheck {
  std::size_t parameters = 0;
  std::size_t failures = 0;
  double worst_relative = 0.0;
};

inline sh::ShCube random_cube(int radius, int n_max, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  sh::ShCube cube(radius, n_max);
  for (auto& v : cube.data) v = n(rng);
  return cube;
}

/// Compares backward() with central differences of the loss over every
/// parameter. An entry fails when |a - f| > tol * max(|a|, |f|) and also
/// exceeds `abs_floor`, which absorbs the rounding noise of the difference
/// quotient for gradients that are zero up to cancellation.
inline GradientCheck check_network_gradient(const dcnn::NetworkConfig& cfg, std::uint64_t seed, double h = 1e-5,
                                            double tol = 1e-4, double abs_floor = 1e-9) {
  std::mt19937_64 rng(seed);
  dcnn::NetworkParams params = dcnn::init_params(cfg, seed);
  // Small random biases keep units away from exact ties.
  {
    std::normal_distribution<double> n(0.0, 0.05);
    auto v = params.mutable_values();
    for (auto& x : v) x += n(rng);
  }
  const sh::ShCube cube = random_cube(cfg.radius, cfg.n_max, rng);
  const int target = static_cast<int>(seed % 2);

  const auto fwd = dcnn::forward(params, cube);
  std::vector<double> grad(params.size(), 0.0);
  dcnn::backward(params, fwd.cache, target, grad);

  auto loss_at = [&](const std::vector<double>& values) {
    const dcnn::NetworkParams p(cfg, values);
    const auto f = dcnn::forward(p, cube);
    const double g = f.gamma;
    return target == 1 ? -std::log(g) : -std::log(1.0 - g);
  };

  GradientCheck out;
  std::vector<double> values(params.values().begin(), params.values().end());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double lp = loss_at(values);
    values[i] = saved - h;
    const double lm = loss_at(values);
    values[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double diff = std::abs(fd - grad[i]);
    const double scale = std::max(std::abs(fd), std::abs(grad[i]));
    ++out.parameters;
    if (scale > 0.0) out.worst_relative = std::max(out.worst_relative, diff > abs_floor ? diff / scale : 0.0);
    if (diff > tol * scale && diff > abs_floor) ++out.failures;
  }
  return out;
}

}  // namespace psic::testing
