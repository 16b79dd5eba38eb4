#include "psic/field.hpp"

#include "psic/error.hpp"

namespace psic::dcnn {

Field::Field(int rank, int extent, int channels) : rank(rank), extent(extent), channels(channels) {
  if (rank < 0 || rank > 3) throw ShapeError("field rank must be between 0 and 3");
  if (extent < 1 || channels < 1) throw ShapeError("field extent and channels must be positive");
  values.assign(sites() * static_cast<std::size_t>(channels), 0.0);
}

std::size_t Field::sites() const {
  std::size_t s = 1;
  for (int a = 0; a < rank; ++a) s *= static_cast<std::size_t>(extent);
  return s;
}

}  // namespace psic::dcnn
