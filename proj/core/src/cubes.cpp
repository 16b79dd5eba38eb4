#include <cmath>
#include <cstdio>

#include "psic/error.hpp"
#include "psic/io.hpp"
#include "psic/parallel.hpp"

namespace psic::io {
namespace {

void check_radius(const Dims& dims, int radius) {
  if (radius < 0) throw DomainError("neighborhood radius must be nonnegative");
  const auto m = static_cast<std::uint32_t>(2 * radius + 1);
  for (auto d : dims) {
    if (m > d) throw DomainError("neighborhood of radius " + std::to_string(radius) + " does not fit the volume");
  }
}

}  // namespace

std::vector<Voxel> interior_voxels(const Mask& mask, int radius) {
  check_radius(mask.dims, radius);
  const int n1 = static_cast<int>(mask.dims[0]);
  const int n2 = static_cast<int>(mask.dims[1]);
  const int n3 = static_cast<int>(mask.dims[2]);
  std::vector<Voxel> out;
  for (int x = radius; x < n1 - radius; ++x) {
    for (int y = radius; y < n2 - radius; ++y) {
      for (int z = radius; z < n3 - radius; ++z) {
        bool all = true;
        for (int dx = -radius; dx <= radius && all; ++dx) {
          for (int dy = -radius; dy <= radius && all; ++dy) {
            for (int dz = -radius; dz <= radius; ++dz) {
              const auto idx = mask.voxel_index(static_cast<std::uint32_t>(x + dx), static_cast<std::uint32_t>(y + dy),
                                                static_cast<std::uint32_t>(z + dz));
              if (!mask.inside(idx)) {
                all = false;
                break;
              }
            }
          }
        }
        if (all) out.push_back({x, y, z});
      }
    }
  }
  return out;
}

std::vector<DiffusionCube> extract_dcs(const Volume& volume, const Mask& mask, int radius) {
  if (volume.dims != mask.dims) throw ShapeError("mask dimensions differ from the volume");
  const auto centers = interior_voxels(mask, radius);
  const int k = static_cast<int>(volume.channels);
  std::vector<DiffusionCube> cubes;
  cubes.reserve(centers.size());
  for (const Voxel& c : centers) {
    DiffusionCube cube;
    cube.center = c;
    cube.radius = radius;
    cube.channels = k;
    cube.data.reserve(static_cast<std::size_t>(std::pow(2 * radius + 1, 3)) * k);
    for (int dx = -radius; dx <= radius; ++dx) {
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dz = -radius; dz <= radius; ++dz) {
          const auto v = volume.voxel(volume.voxel_index(static_cast<std::uint32_t>(c[0] + dx),
                                                         static_cast<std::uint32_t>(c[1] + dy),
                                                         static_cast<std::uint32_t>(c[2] + dz)));
          cube.data.insert(cube.data.end(), v.begin(), v.end());
        }
      }
    }
    cubes.push_back(std::move(cube));
  }
  return cubes;
}

std::vector<sh::ShCube> dcs_to_sh(std::span<const DiffusionCube> cubes, const sh::GradientScheme& scheme, int n_max,
                                  double reg) {
  const sh::ShFitter fitter(scheme, n_max, reg);
  const auto k = scheme.size();
  std::vector<sh::ShCube> out;
  out.reserve(cubes.size());
  for (const DiffusionCube& cube : cubes) {
    if (static_cast<std::size_t>(cube.channels) != k) throw ShapeError("cube channels do not match the scheme");
    sh::ShCube c(cube.radius, n_max);
    const std::size_t sites = c.sites();
    const auto p = static_cast<std::size_t>(c.channels());
    for (std::size_t s = 0; s < sites; ++s) {
      fitter.fit_into(std::span<const double>(cube.data).subspan(s * k, k),
                      std::span<double>(c.data).subspan(s * p, p));
    }
    out.push_back(std::move(c));
  }
  return out;
}

ShVolume fit_sh_volume(const Volume& volume, int n_max, double reg, unsigned threads) {
  const sh::ShFitter fitter(volume.scheme(), n_max, reg);
  ShVolume out;
  out.dims = volume.dims;
  out.n_max = n_max;
  const auto p = static_cast<std::size_t>(out.channels());
  const std::size_t k = volume.channels;
  const std::size_t n = volume.voxels();
  out.data.assign(n * p, 0.0);
  // Contiguous slabs of voxels per task; each voxel is fitted independently.
  constexpr std::size_t kSlab = 256;
  const std::size_t slabs = (n + kSlab - 1) / kSlab;
  parallel_for(slabs, threads, [&](std::size_t s) {
    std::vector<double> samples(k);
    const std::size_t end = std::min(n, (s + 1) * kSlab);
    for (std::size_t i = s * kSlab; i < end; ++i) {
      const auto v = volume.voxel(i);
      std::copy(v.begin(), v.end(), samples.begin());
      fitter.fit_into(samples, std::span<double>(out.data).subspan(i * p, p));
    }
  });
  return out;
}

sh::ShCube sh_cube_at(const ShVolume& coeffs, const Voxel& center, int radius) {
  for (int a = 0; a < 3; ++a) {
    if (center[a] - radius < 0 || center[a] + radius >= static_cast<int>(coeffs.dims[a])) {
      throw DomainError("neighborhood leaves the volume");
    }
  }
  sh::ShCube cube(radius, coeffs.n_max);
  const auto p = static_cast<std::size_t>(coeffs.channels());
  auto dst = cube.data.begin();
  for (int dx = -radius; dx <= radius; ++dx) {
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dz = -radius; dz <= radius; ++dz) {
        const auto src = coeffs.data.begin() +
                         static_cast<std::ptrdiff_t>(coeffs.voxel_index(center[0] + dx, center[1] + dy, center[2] + dz) * p);
        dst = std::copy(src, src + static_cast<std::ptrdiff_t>(p), dst);
      }
    }
  }
  return cube;
}

Volume sh_volume_container(const ShVolume& coeffs) {
  Volume v(coeffs.dims, static_cast<std::uint32_t>(coeffs.channels()));
  for (std::size_t i = 0; i < coeffs.data.size(); ++i) v.data[i] = static_cast<float>(coeffs.data[i]);
  return v;
}

Volume psic_map(const Dims& dims, std::span<const Voxel> voxels, std::span<const double> scores) {
  if (voxels.size() != scores.size()) throw ShapeError("one score per voxel is required");
  Volume map(dims, 1);
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const double s = scores[i];
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("PSIC scores must lie in [0, 1]");
    const Voxel& v = voxels[i];
    map.data[map.voxel_index(static_cast<std::uint32_t>(v[0]), static_cast<std::uint32_t>(v[1]),
                             static_cast<std::uint32_t>(v[2]))] = static_cast<float>(s);
  }
  return map;
}

std::vector<std::filesystem::path> export_psic(const std::filesystem::path& path, const Volume& map,
                                               const Mask& mask) {
  if (map.channels != 1) throw ShapeError("a PSIC map has one channel");
  if (map.dims != mask.dims) throw ShapeError("mask dimensions differ from the map");
  for (float s : map.data) {
    if (!(s >= 0.0F && s <= 1.0F)) throw DomainError("PSIC scores must lie in [0, 1]");
  }
  const auto [n1, n2, n3] = map.dims;
  std::vector<std::filesystem::path> written;
  std::vector<std::pair<std::filesystem::path, std::vector<std::uint8_t>>> slices;
  for (std::uint32_t z = 0; z < n3; ++z) {
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n1) * n2, 0);
    bool hit = false;
    for (std::uint32_t y = 0; y < n2; ++y) {
      for (std::uint32_t x = 0; x < n1; ++x) {
        const auto idx = map.voxel_index(x, y, z);
        if (!mask.inside(idx)) continue;
        hit = true;
        pixels[static_cast<std::size_t>(y) * n1 + x] =
            static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(map.data[idx])));
      }
    }
    if (!hit) continue;
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_z%03u.pgm", z);
    slices.emplace_back(path.parent_path() / (path.stem().string() + suffix), std::move(pixels));
  }
  write_volume(path, map);
  for (const auto& [p, pixels] : slices) {
    write_pgm(p, n1, n2, pixels);
    written.push_back(p);
  }
  return written;
}

}  // namespace psic::io
