#include "psic/sh_core.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "psic/error.hpp"

namespace psic::sh {

GradientScheme::GradientScheme(std::vector<Vec3> directions, double b_value)
    : directions_(std::move(directions)), b_value_(b_value) {
  if (directions_.empty()) throw DomainError("gradient scheme needs at least one direction");
  if (!(b_value_ > 0.0)) throw DomainError("b-value must be positive");
  for (std::size_t k = 0; k < directions_.size(); ++k) {
    if (std::abs(directions_[k].norm() - 1.0) > 1e-12) {
      throw DomainError("gradient direction " + std::to_string(k) + " is not unit length");
    }
  }
}

int num_coeffs(int n_max) {
  if (n_max < 0 || n_max % 2 != 0) {
    throw DomainError("n_max must be even and nonnegative, got " + std::to_string(n_max));
  }
  return (n_max + 1) * (n_max + 2) / 2;
}

int degree_of(int j) {
  int n = 0;
  while (coeff_index(n + 2, -(n + 2)) <= j) n += 2;
  return n;
}

int order_of(int j) {
  const int n = degree_of(j);
  return j - coeff_index(n, 0);
}

double legendre_poly(int n, double t) {
  if (n < 0) throw DomainError("Legendre degree must be nonnegative");
  if (!(std::abs(t) <= 1.0)) throw DomainError("Legendre argument outside [-1, 1]");
  if (n == 0) return 1.0;
  double prev = 1.0;
  double cur = t;
  for (int k = 1; k < n; ++k) {
    const double next = ((2.0 * k + 1.0) * t * cur - k * prev) / (k + 1.0);
    prev = cur;
    cur = next;
  }
  return cur;
}

ShVector::ShVector(int n_max) : n_max(n_max), coeffs(Eigen::VectorXd::Zero(num_coeffs(n_max))) {}

ShVector::ShVector(int n_max, Eigen::VectorXd c) : n_max(n_max), coeffs(std::move(c)) {
  if (coeffs.size() != num_coeffs(n_max)) throw ShapeError("ShVector length does not match n_max");
}

ShCube::ShCube(int radius, int n_max) : radius(radius), n_max(n_max) {
  if (radius < 0) throw DomainError("cube radius must be nonnegative");
  data.assign(sites() * static_cast<std::size_t>(num_coeffs(n_max)), 0.0);
}

Eigen::VectorXd sh_basis_row(const Vec3& u, int n_max) {
  const int p = num_coeffs(n_max);
  Eigen::VectorXd row(p);
  const double x = std::clamp(u.z(), -1.0, 1.0);
  const double sin_theta = std::sqrt(std::max(0.0, 1.0 - x * x));
  const double phi = std::atan2(u.y(), u.x());
  constexpr double four_pi = 4.0 * std::numbers::pi;

  // Column-wise over m: P_m^m, P_{m+1}^m, then upward in degree.
  std::vector<double> plm(static_cast<std::size_t>(n_max) + 1);
  double pmm = 1.0;
  for (int m = 0; m <= n_max; ++m) {
    if (m > 0) pmm *= (2.0 * m - 1.0) * sin_theta;
    plm[m] = pmm;
    if (m + 1 <= n_max) plm[m + 1] = x * (2.0 * m + 1.0) * pmm;
    for (int n = m + 2; n <= n_max; ++n) {
      plm[n] = (x * (2.0 * n - 1.0) * plm[n - 1] - (n + m - 1.0) * plm[n - 2]) / (n - m);
    }
    for (int n = (m % 2 == 0 ? m : m + 1); n <= n_max; n += 2) {
      const double norm = std::sqrt((2.0 * n + 1.0) / four_pi *
                                    std::exp(std::lgamma(n - m + 1.0) - std::lgamma(n + m + 1.0)));
      if (m == 0) {
        row[coeff_index(n, 0)] = norm * plm[n];
      } else {
        const double scaled = std::numbers::sqrt2 * norm * plm[n];
        row[coeff_index(n, -m)] = scaled * std::cos(m * phi);
        row[coeff_index(n, m)] = scaled * std::sin(m * phi);
      }
    }
  }
  return row;
}

Eigen::MatrixXd sh_basis(const GradientScheme& scheme, int n_max) {
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(scheme.size()), num_coeffs(n_max));
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    basis.row(static_cast<Eigen::Index>(k)) = sh_basis_row(scheme.direction(k), n_max).transpose();
  }
  return basis;
}

Eigen::VectorXd laplace_beltrami_diagonal(int n_max) {
  Eigen::VectorXd diag(num_coeffs(n_max));
  for (int j = 0; j < diag.size(); ++j) {
    const int n = degree_of(j);
    diag[j] = n * (n + 1.0);
  }
  return diag;
}

ShFitter::ShFitter(const GradientScheme& scheme, int n_max, double reg) : n_max_(n_max) {
  if (reg < 0.0) throw DomainError("SH regularization must be nonnegative");
  const Eigen::MatrixXd basis = sh_basis(scheme, n_max);
  const int p = num_coeffs(n_max);
  if (static_cast<int>(scheme.size()) < p && reg == 0.0) {
    throw SingularSystemError("fewer samples than SH coefficients without regularization");
  }
  Eigen::MatrixXd normal = basis.transpose() * basis;
  const Eigen::VectorXd lb = laplace_beltrami_diagonal(n_max);
  normal.diagonal() += reg * lb.cwiseProduct(lb);

  Eigen::LLT<Eigen::MatrixXd> llt(normal);
  if (llt.info() != Eigen::Success) throw SingularSystemError("SH normal equations are singular");
  const Eigen::VectorXd d = llt.matrixLLT().diagonal();
  if (d.minCoeff() <= 1e-10 * d.maxCoeff()) {
    throw SingularSystemError("SH normal equations are numerically singular");
  }
  projector_ = llt.solve(basis.transpose());
}

void ShFitter::fit_into(std::span<const double> samples, std::span<double> out) const {
  if (samples.size() != num_samples()) throw ShapeError("sample count does not match scheme");
  if (out.size() != static_cast<std::size_t>(projector_.rows())) throw ShapeError("output size mismatch");
  Eigen::Map<const Eigen::VectorXd> s(samples.data(), static_cast<Eigen::Index>(samples.size()));
  Eigen::Map<Eigen::VectorXd> c(out.data(), static_cast<Eigen::Index>(out.size()));
  c.noalias() = projector_ * s;
}

ShVector ShFitter::fit(std::span<const double> samples) const {
  ShVector c(n_max_);
  fit_into(samples, std::span<double>(c.coeffs.data(), static_cast<std::size_t>(c.coeffs.size())));
  return c;
}

ShVector fit_sh(std::span<const double> samples, const GradientScheme& scheme, int n_max, double reg) {
  return ShFitter(scheme, n_max, reg).fit(samples);
}

double eval_sh(const ShVector& c, const Vec3& u) {
  return sh_basis_row(u, c.n_max).dot(c.coeffs);
}

ShVector zonal_convolve(const ShVector& c, const ZonalKernel& xi) {
  if (xi.legendre_coeffs.empty() || xi.n_max() != c.n_max) {
    throw ShapeError("zonal kernel degree does not match SH vector");
  }
  ShVector out = c;
  for (int j = 0; j < out.size(); ++j) out[j] *= xi.legendre_coeffs[degree_of(j) / 2];
  return out;
}

}  // namespace psic::sh
