#pragma once

#include <cstddef>
#include <vector>

#include "psic/layers.hpp"

namespace psic::testing {

using dcnn::BankShape;
using dcnn::Field;

// Coordinates of a row-major site index, first axis slowest.
inline std::vector<int> coords(std::size_t site, int rank, int extent) {
  std::vector<int> c(rank);
  for (int a = rank - 1; a >= 0; --a) {
    c[a] = static_cast<int>(site % extent);
    site /= extent;
  }
  return c;
}

// Direct summation with its own reading of the weight layout: bands in
// order, each [tap][l][k], taps row-major over offsets in [-1, 1]^rank.
inline Field naive_conv(const Field& in, const BankShape& shape, const std::vector<double>& w, const std::vector<double>& bias) {
  const int rank = shape.rank;
  const int e = in.extent;
  std::size_t taps = 1;
  for (int a = 0; a < rank; ++a) taps *= shape.kernel;
  Field out(rank, e, in.channels);
  std::size_t band_base = 0;
  for (int n = 0; n <= shape.n_max; n += 2) {
    const int d = 2 * n + 1;
    const int first = n * (n - 1) / 2;
    for (std::size_t s = 0; s < out.sites(); ++s) {
      const auto x = coords(s, rank, e);
      for (int l = 0; l < d; ++l) {
        double acc = bias[first + l];
        for (std::size_t t = 0; t < taps; ++t) {
          const auto off = coords(t, rank, shape.kernel);
          std::size_t src = 0;
          bool inside = true;
          for (int a = 0; a < rank; ++a) {
            const int xi = x[a] + off[a] - shape.kernel / 2;
            if (xi < 0 || xi >= e) inside = false;
            src = src * e + static_cast<std::size_t>(xi);
          }
          if (!inside) continue;
          for (int k = 0; k < d; ++k) {
            acc += w[band_base + (t * d + l) * d + k] * in.at(src, first + k);
          }
        }
        out.at(s, first + l) = acc;
      }
    }
    band_base += taps * d * d;
  }
  return out;
}

}  // namespace psic::testing
