#include "psic/dti_metrics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "psic/error.hpp"

namespace psic::dti {

std::vector<double> adc(std::span<const double> signal, double b_value) {
  if (!(b_value > 0.0)) throw DomainError("b-value must be positive");
  std::vector<double> out(signal.size());
  for (std::size_t k = 0; k < signal.size(); ++k) {
    out[k] = -std::log(std::clamp(signal[k], kSignalFloor, 1.0)) / b_value;
  }
  return out;
}

Eigen::Matrix<double, 1, 6> tensor_design_row(const sh::Vec3& u) {
  Eigen::Matrix<double, 1, 6> row;
  row << u.x() * u.x(), u.y() * u.y(), u.z() * u.z(), 2.0 * u.x() * u.y(), 2.0 * u.x() * u.z(),
      2.0 * u.y() * u.z();
  return row;
}

TensorFitter::TensorFitter(const sh::GradientScheme& scheme) : b_value_(scheme.b_value()) {
  if (scheme.size() < 6) throw SingularSystemError("tensor fit needs at least six directions");
  design_.resize(static_cast<Eigen::Index>(scheme.size()), 6);
  for (std::size_t k = 0; k < scheme.size(); ++k) {
    design_.row(static_cast<Eigen::Index>(k)) = tensor_design_row(scheme.direction(k));
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design_, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  if (sv[5] <= 1e-10 * sv[0]) throw SingularSystemError("gradient directions are rank deficient for a tensor fit");
  pseudo_inv_ = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
}

TensorFit TensorFitter::fit(std::span<const double> signal) const {
  const auto samples = adc(signal, b_value_);
  return fit_adc(samples);
}

TensorFit TensorFitter::fit_adc(std::span<const double> adc_samples) const {
  if (adc_samples.size() != static_cast<std::size_t>(design_.rows())) {
    throw ShapeError("sample count does not match gradient scheme");
  }
  Eigen::Map<const Eigen::VectorXd> y(adc_samples.data(), static_cast<Eigen::Index>(adc_samples.size()));
  const Eigen::Matrix<double, 6, 1> d = pseudo_inv_ * y;

  TensorFit fit;
  fit.tensor << d[0], d[3], d[4],
                d[3], d[1], d[5],
                d[4], d[5], d[2];
  fit.residual = std::sqrt((design_ * d - y).squaredNorm() / static_cast<double>(y.size()));

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(fit.tensor);
  // Eigen returns ascending order.
  for (int i = 0; i < 3; ++i) {
    fit.eigenvalues[i] = eig.eigenvalues()[2 - i];
    fit.eigenvectors.col(i) = eig.eigenvectors().col(2 - i);
  }
  fit.negative_eigenvalue = fit.eigenvalues[2] < 0.0;
  return fit;
}

TensorFit fit_tensor(std::span<const double> signal, const sh::GradientScheme& scheme) {
  return TensorFitter(scheme).fit(signal);
}

WestinMetrics westin_metrics(const Eigen::Vector3d& l) {
  WestinMetrics w;
  w.md = l.sum() / 3.0;
  const double norm = l.norm();
  // Pairwise form: exactly zero for equal eigenvalues.
  const double d01 = l[0] - l[1], d12 = l[1] - l[2], d20 = l[2] - l[0];
  w.fa = norm > 0.0 ? std::sqrt(0.5 * (d01 * d01 + d12 * d12 + d20 * d20)) / norm : 0.0;
  if (l[0] > 0.0) {
    w.cl = (l[0] - l[1]) / l[0];
    w.cp = (l[1] - l[2]) / l[0];
  } else {
    w.degenerate = true;
  }
  return w;
}

WestinMetrics westin_metrics(const TensorFit& fit) { return westin_metrics(fit.eigenvalues); }

ModelFreeMetrics model_free_metrics(std::span<const double> a) {
  if (a.size() < 2) throw DomainError("model-free metrics need at least two ADC samples");
  ModelFreeMetrics m;
  const double n = static_cast<double>(a.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double v : a) {
    sum += v;
    sum_sq += v * v;
  }
  m.asd = sum / n;
  m.de = sum_sq;
  double var = 0.0;
  for (double v : a) var += (v - m.asd) * (v - m.asd);
  var /= n;
  if (m.asd != 0.0) {
    m.cvd = std::sqrt(var) / m.asd;
  } else {
    m.zero_mean = true;
  }
  // Negative mean ADC only arises from signals above 1 that were clamped; keep DV real.
  m.dv = 4.0 * std::numbers::pi / 3.0 * std::pow(std::max(m.asd, 0.0), 1.5);
  return m;
}

MetricVector metric_vector(std::span<const double> signal, const TensorFitter& fitter) {
  const auto samples = adc(signal, fitter.b_value());
  const TensorFit fit = fitter.fit_adc(samples);
  const WestinMetrics w = westin_metrics(fit);
  const ModelFreeMetrics f = model_free_metrics(samples);
  MetricVector v;
  v.md = w.md;
  v.fa = w.fa;
  v.cl = w.cl;
  v.cp = w.cp;
  v.dv = f.dv;
  v.asd = f.asd;
  v.de = f.de;
  v.cvd = f.cvd;
  v.flagged = w.degenerate || f.zero_mean || fit.negative_eigenvalue;
  return v;
}

MetricVector metric_vector(std::span<const double> signal, const sh::GradientScheme& scheme) {
  return metric_vector(signal, TensorFitter(scheme));
}

}  // namespace psic::dti
