#pragma once

#include <cstddef>
#include <vector>

namespace psic::dcnn {

/// A stack of P coefficient images over a cubic grid of `rank` spatial axes
/// (0 to 3), each of length `extent`. Channel-fastest: element (s, j) lives at
/// s * channels + j, where s is the row-major spatial site index with the
/// first axis varying slowest.
struct Field {
  int rank = 0;
  int extent = 1;
  int channels = 0;
  std::vector<double> values;

  Field() = default;
  Field(int rank, int extent, int channels);

  std::size_t sites() const;
  std::size_t size() const { return values.size(); }
  double& at(std::size_t site, int channel) { return values[site * channels + channel]; }
  double at(std::size_t site, int channel) const { return values[site * channels + channel]; }

  bool same_shape(const Field& other) const {
    return rank == other.rank && extent == other.extent && channels == other.channels;
  }
};

}  // namespace psic::dcnn
