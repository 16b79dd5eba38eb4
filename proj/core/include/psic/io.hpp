#pragma once

// DCB container: a little-endian 4-D array with its acquisition header.
//
//   offset  size        field
//   0       4           magic "DCB1"
//   4       2           version (u16, currently 1)
//   6       3 x 4       dims N1 N2 N3 (u32)
//   18      4           channels K (u32)
//   22      8           b-value (f64)
//   30      K x 3 x 8   gradient table, one (x, y, z) row per channel (f64)
//   ...     payload
//
// Volumes carry N1 N2 N3 K float32 values, channel-fastest: the value of
// channel k at voxel (x, y, z) is at ((x N2 + y) N3 + z) K + k. ROI masks use
// the same header with K = 1 and one byte per voxel (nonzero = inside). Maps
// that are not diffusion data (SH coefficients, PSIC scores) store b = 0 and
// zero gradient rows.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "psic/sh_core.hpp"

namespace psic::io {

inline constexpr std::uint16_t kDcbVersion = 1;

using Dims = std::array<std::uint32_t, 3>;

std::size_t voxel_count(const Dims& dims);

struct Volume {
  Dims dims{0, 0, 0};
  std::uint32_t channels = 0;
  double b_value = 0.0;
  std::vector<sh::Vec3> gradients;  ///< one row per channel
  std::vector<float> data;

  Volume() = default;
  /// Zero-filled volume with zero gradient rows.
  Volume(const Dims& dims, std::uint32_t channels);

  std::size_t voxels() const { return voxel_count(dims); }
  std::size_t voxel_index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
  std::span<const float> voxel(std::size_t index) const {
    return std::span<const float>(data).subspan(index * channels, channels);
  }
  std::span<float> voxel(std::size_t index) { return std::span<float>(data).subspan(index * channels, channels); }

  /// The acquisition as a gradient scheme. Throws DomainError when the
  /// header does not describe diffusion data.
  sh::GradientScheme scheme() const;

  bool operator==(const Volume&) const = default;
};

struct Mask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> data;

  Mask() = default;
  explicit Mask(const Dims& dims);

  std::size_t voxels() const { return voxel_count(dims); }
  std::size_t voxel_index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return (static_cast<std::size_t>(x) * dims[1] + y) * dims[2] + z;
  }
  bool inside(std::size_t index) const { return data[index] != 0; }
  std::size_t count() const;

  bool operator==(const Mask&) const = default;
};

/// Serialized bytes of a container (exactly what write_volume stores).
std::vector<std::uint8_t> encode_volume(const Volume& volume);
Volume decode_volume(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_mask(const Mask& mask);
Mask decode_mask(std::span<const std::uint8_t> bytes);

/// Writers are atomic: data goes to a temporary sibling that is renamed
/// over the target. Throw IoError on failure, leaving no partial file.
void write_volume(const std::filesystem::path& path, const Volume& volume);
Volume read_volume(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);
Mask read_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Binary 8-bit PGM (P5), row-major with `width` pixels per row.
void write_pgm(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
               std::span<const std::uint8_t> pixels);

// ---------------------------------------------------------------------------
// Diffusion cubes

using Voxel = std::array<int, 3>;

/// M x M x M x K block of raw signals around `center`, channel-fastest with
/// the same site ordering as ShCube.
struct DiffusionCube {
  Voxel center{0, 0, 0};
  int radius = 1;
  int channels = 0;
  std::vector<double> data;

  int extent() const { return 2 * radius + 1; }
  std::span<const double> site(int x, int y, int z) const {
    const auto m = static_cast<std::size_t>(extent());
    return std::span<const double>(data).subspan(((x * m + y) * m + z) * channels, channels);
  }
};

/// Voxels r of the mask whose whole (2L+1)^3 neighborhood lies inside the
/// mask, in lexicographic (x, y, z) order. Throws DomainError if 2L+1
/// exceeds a volume dimension or L < 0.
std::vector<Voxel> interior_voxels(const Mask& mask, int radius);

/// One cube per interior voxel. Throws ShapeError if dims disagree.
std::vector<DiffusionCube> extract_dcs(const Volume& volume, const Mask& mask, int radius);

/// Voxelwise SH fit of every cube. Throws ShapeError if the scheme does not
/// match the cube channel count.
std::vector<sh::ShCube> dcs_to_sh(std::span<const DiffusionCube> cubes, const sh::GradientScheme& scheme,
                                  int n_max, double reg = sh::kDefaultShRegularization);

/// SH coefficients of every voxel (P doubles per voxel, channel-fastest).
struct ShVolume {
  Dims dims{0, 0, 0};
  int n_max = 0;
  std::vector<double> data;

  int channels() const { return sh::num_coeffs(n_max); }
  std::size_t voxel_index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims[1] + static_cast<std::size_t>(y)) * dims[2] +
           static_cast<std::size_t>(z);
  }
};

/// Fits every voxel of a diffusion volume. Equivalent to dcs_to_sh applied
/// to each cube, without refitting voxels shared by neighboring cubes.
ShVolume fit_sh_volume(const Volume& volume, int n_max, double reg = sh::kDefaultShRegularization,
                       unsigned threads = 1);

/// The SH cube centered at `center` (neighborhood must lie in the volume).
sh::ShCube sh_cube_at(const ShVolume& coeffs, const Voxel& center, int radius);

/// SH volume as a container with P channels, b = 0 and zero gradients.
Volume sh_volume_container(const ShVolume& coeffs);

/// Single-channel map of `scores` at `voxels` (0 everywhere else).
/// Throws DomainError if a score lies outside [0, 1].
Volume psic_map(const Dims& dims, std::span<const Voxel> voxels, std::span<const double> scores);

/// Writes the map container to `path` and one 8-bit PGM per axial (z)
/// slice that intersects the mask, named <stem>_z<NNN>.pgm next to it. Pixel
/// (x, y) of a slice is round(255 score); out-of-mask pixels are black.
/// Returns the slice image paths.
std::vector<std::filesystem::path> export_psic(const std::filesystem::path& path, const Volume& map,
                                               const Mask& mask);

}  // namespace psic::io
