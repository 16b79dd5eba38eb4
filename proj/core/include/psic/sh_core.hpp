#pragma once

// Real, antipodally symmetric spherical harmonics.
//
// Basis convention: even degrees n = 0, 2, ..., n_max and orders l = -n..n.
// With N(n,m) = sqrt((2n+1)/(4 pi) * (n-m)!/(n+m)!) and P_n^m the associated
// Legendre function without the Condon-Shortley phase:
//
//   Y_{n,l}(theta, phi) = sqrt(2) N(n,|l|) P_n^|l|(cos theta) cos(|l| phi)   l < 0
//                       =         N(n,0)  P_n(cos theta)                     l = 0
//                       = sqrt(2) N(n,l)  P_n^l(cos theta) sin(l phi)        l > 0
//
// The basis is orthonormal on the unit sphere. Coefficients are stored
// lexicographically: degree ascending, then order from -n to +n, so the flat
// index of (n, l) is n(n-1)/2 + n + l.

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace psic::sh {

using Vec3 = Eigen::Vector3d;

/// Unit diffusion-encoding directions and their b-value (s/mm^2).
class GradientScheme {
 public:
  GradientScheme() = default;
  /// Throws DomainError unless every direction is unit length (1e-12),
  /// the list is nonempty, and b_value > 0.
  GradientScheme(std::vector<Vec3> directions, double b_value);

  const std::vector<Vec3>& directions() const { return directions_; }
  const Vec3& direction(std::size_t k) const { return directions_[k]; }
  double b_value() const { return b_value_; }
  std::size_t size() const { return directions_.size(); }

 private:
  std::vector<Vec3> directions_;
  double b_value_ = 0.0;
};

/// Number of even-degree coefficients up to n_max: (n_max+1)(n_max+2)/2.
/// Throws DomainError for odd or negative n_max.
int num_coeffs(int n_max);

/// Flat index of coefficient (n, l).
constexpr int coeff_index(int n, int l) { return n * (n - 1) / 2 + n + l; }

/// Degree n of the coefficient at flat index j.
int degree_of(int j);

/// Order l of the coefficient at flat index j.
int order_of(int j);

/// Number of even bands for n_max, (n_max+2)/2.
constexpr int num_bands(int n_max) { return n_max / 2 + 1; }

/// Legendre polynomial p_n(t) by the three-term recurrence.
/// Throws DomainError if |t| > 1 or n < 0.
double legendre_poly(int n, double t);

struct ShVector {
  int n_max = 0;
  Eigen::VectorXd coeffs;

  ShVector() = default;
  /// Zero vector of the right length.
  explicit ShVector(int n_max);
  /// Throws ShapeError if coeffs.size() != num_coeffs(n_max).
  ShVector(int n_max, Eigen::VectorXd coeffs);

  double operator[](int j) const { return coeffs[j]; }
  double& operator[](int j) { return coeffs[j]; }
  int size() const { return static_cast<int>(coeffs.size()); }
};

/// M x M x M x P block of SH coefficients, channel-fastest: the flat offset
/// of (x, y, z, j) is ((x * M + y) * M + z) * P + j.
struct ShCube {
  int radius = 1;
  int n_max = 6;
  std::vector<double> data;

  ShCube() = default;
  ShCube(int radius, int n_max);

  int extent() const { return 2 * radius + 1; }
  int channels() const { return num_coeffs(n_max); }
  std::size_t sites() const {
    const auto m = static_cast<std::size_t>(extent());
    return m * m * m;
  }
  double& at(int x, int y, int z, int j) {
    return data[((static_cast<std::size_t>(x) * extent() + y) * extent() + z) * channels() + j];
  }
  double at(int x, int y, int z, int j) const {
    return data[((static_cast<std::size_t>(x) * extent() + y) * extent() + z) * channels() + j];
  }
};

/// Legendre coefficients xi_n of a zonal kernel, one per even degree.
struct ZonalKernel {
  std::vector<double> legendre_coeffs;

  int n_max() const { return 2 * (static_cast<int>(legendre_coeffs.size()) - 1); }
};

/// Values Y_{n,l}(u) for all P basis functions at one direction.
Eigen::VectorXd sh_basis_row(const Vec3& u, int n_max);

/// K x P design matrix, entry (k, j) = Y_j(u_k).
Eigen::MatrixXd sh_basis(const GradientScheme& scheme, int n_max);

/// Diagonal Laplace-Beltrami eigenvalues n(n+1), one per coefficient.
Eigen::VectorXd laplace_beltrami_diagonal(int n_max);

/// Default Laplace-Beltrami regularization weight.
inline constexpr double kDefaultShRegularization = 0.006;

/// Precomputed regularized least-squares projector for a fixed scheme.
///
/// Solves argmin ||B c - s||^2 + reg ||Lambda c||^2 through the normal
/// equations (B^T B + reg Lambda^2) c = B^T s.
class ShFitter {
 public:
  /// Throws SingularSystemError when the normal matrix is not positive
  /// definite (for example K < P with reg = 0).
  ShFitter(const GradientScheme& scheme, int n_max, double reg);

  ShVector fit(std::span<const double> samples) const;
  /// Writes P coefficients into out.
  void fit_into(std::span<const double> samples, std::span<double> out) const;

  int n_max() const { return n_max_; }
  std::size_t num_samples() const { return static_cast<std::size_t>(projector_.cols()); }
  const Eigen::MatrixXd& projector() const { return projector_; }

 private:
  int n_max_;
  Eigen::MatrixXd projector_;  // P x K
};

ShVector fit_sh(std::span<const double> samples, const GradientScheme& scheme, int n_max,
                double reg = kDefaultShRegularization);

/// Sum over j of c_j Y_j(u).
double eval_sh(const ShVector& c, const Vec3& u);

/// Per-band scaling c~_{n,l} = xi_n c_{n,l}. Throws ShapeError on n_max mismatch.
ShVector zonal_convolve(const ShVector& c, const ZonalKernel& xi);

}  // namespace psic::sh
