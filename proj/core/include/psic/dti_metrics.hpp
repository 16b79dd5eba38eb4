#pragma once

#include <Eigen/Core>

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "psic/sh_core.hpp"

namespace psic::dti {

/// Normalized signals are clamped to [kSignalFloor, 1] before taking logs.
inline constexpr double kSignalFloor = 1e-6;

/// ADC_k = -ln(clamp(s_k)) / b, in mm^2/s when b is in s/mm^2.
std::vector<double> adc(std::span<const double> signal, double b_value);

struct TensorFit {
  Eigen::Matrix3d tensor = Eigen::Matrix3d::Zero();
  Eigen::Vector3d eigenvalues = Eigen::Vector3d::Zero();  ///< descending
  Eigen::Matrix3d eigenvectors = Eigen::Matrix3d::Identity();  ///< columns match eigenvalues
  double residual = 0.0;  ///< RMS of the log-linear fit residual (ADC units)
  bool negative_eigenvalue = false;
};

/// Log-linear least-squares tensor estimator for one gradient scheme.
class TensorFitter {
 public:
  /// Throws SingularSystemError if the directions do not determine all six
  /// tensor entries (fewer than six, or coplanar/degenerate sets).
  explicit TensorFitter(const sh::GradientScheme& scheme);

  TensorFit fit(std::span<const double> signal) const;
  /// Fit from precomputed ADC samples.
  TensorFit fit_adc(std::span<const double> adc_samples) const;

  const Eigen::MatrixXd& design() const { return design_; }
  double b_value() const { return b_value_; }

 private:
  Eigen::MatrixXd design_;     // K x 6: x^2, y^2, z^2, 2xy, 2xz, 2yz
  Eigen::MatrixXd pseudo_inv_; // 6 x K
  double b_value_;
};

/// Row k of the tensor design matrix for direction u.
Eigen::Matrix<double, 1, 6> tensor_design_row(const sh::Vec3& u);

TensorFit fit_tensor(std::span<const double> signal, const sh::GradientScheme& scheme);

struct WestinMetrics {
  double md = 0.0;
  double fa = 0.0;
  double cl = 0.0;
  double cp = 0.0;
  bool degenerate = false;  ///< lambda_1 <= 0; cl and cp reported as 0
};

/// MD = mean eigenvalue, FA = sqrt(3/2) |lambda - MD| / |lambda| (evaluated
/// through pairwise eigenvalue differences),
/// CL = (l1 - l2) / l1, CP = (l2 - l3) / l1.
WestinMetrics westin_metrics(const TensorFit& fit);
WestinMetrics westin_metrics(const Eigen::Vector3d& eigenvalues_desc);

struct ModelFreeMetrics {
  double dv = 0.0;
  double asd = 0.0;
  double de = 0.0;
  double cvd = 0.0;
  bool zero_mean = false;  ///< mean ADC is zero; cvd reported as 0
};

/// ASD = mean ADC, CVD = population sd / mean, DE = sum ADC^2,
/// DV = (4 pi / 3) ASD^(3/2). Throws DomainError for fewer than two samples.
ModelFreeMetrics model_free_metrics(std::span<const double> adc_samples);

inline constexpr std::size_t kMetricCount = 8;

/// Metric names in the fixed report order.
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {"MD", "FA", "CL", "CP",
                                                                            "DV", "ASD", "DE", "CVD"};

struct MetricVector {
  double md = 0.0, fa = 0.0, cl = 0.0, cp = 0.0;
  double dv = 0.0, asd = 0.0, de = 0.0, cvd = 0.0;
  bool flagged = false;

  std::array<double, kMetricCount> to_array() const { return {md, fa, cl, cp, dv, asd, de, cvd}; }
};

MetricVector metric_vector(std::span<const double> signal, const TensorFitter& fitter);
MetricVector metric_vector(std::span<const double> signal, const sh::GradientScheme& scheme);

}  // namespace psic::dti
