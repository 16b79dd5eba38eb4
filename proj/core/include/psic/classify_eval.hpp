#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace psic::eval {

inline constexpr int kLabelCn = 0;
inline constexpr int kLabelAd = 1;

struct MedianDecision {
  double median = 0.0;
  int label = kLabelCn;
};

/// Median of the scores (mean of the middle two for even counts); AD iff the
/// median is >= 0.5. Throws DomainError on an empty list.
MedianDecision median_psic_decision(std::span<const double> psic_values);

/// Per-class Gaussian densities of one metric within an ROI.
struct GaussianClassModel {
  double mean_cn = 0.0;
  double var_cn = 1.0;
  double mean_ad = 0.0;
  double var_ad = 1.0;
  /// A class variance was zero and floored at 1e-12 mean^2.
  bool variance_floored = false;
};

/// Sample means and unbiased variances. Throws DomainError if a class has
/// fewer than two values.
GaussianClassModel fit_gaussian_model(std::span<const double> values_cn, std::span<const double> values_ad);

double gaussian_log_density(double x, double mean, double var);

/// Delta = sum log p_AD(x_r) - sum log p_CN(x_r); AD iff Delta >= eta.
/// Throws DomainError on an empty observation list.
double lrt_statistic(const GaussianClassModel& model, std::span<const double> observed);

struct LogisticOptions {
  double l2 = 1e-4;
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
};

/// Affine-sigmoid model p = sigmoid(intercept + w . x). The penalty applies
/// to the intercept as well as the weights.
struct LogisticModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Norm of the penalized log-likelihood gradient at the returned model.
  double gradient_norm = 0.0;
};

/// Damped Newton maximization of the L2-penalized log-likelihood.
/// features is N x D (one row per sample). Non-convergence is reported
/// through `converged`; the partial model is returned.
LogisticModel logistic_fit(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options = {});

double logistic_predict(const LogisticModel& model, const Eigen::Ref<const Eigen::VectorXd>& feature);

/// Column-wise z-scoring learned from one set of rows.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  /// Zero-variance columns get scale 1.
  static Standardizer fit(const Eigen::MatrixXd& rows);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
};

struct RocPoint {
  double threshold = 0.0;  ///< positive iff score >= threshold
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Points from (0,0) at threshold +inf through one point per unique score,
/// ending at (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
};

/// Throws DomainError unless both classes are present and the lengths match.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);
double auc(std::span<const double> scores, std::span<const int> labels);

/// Threshold maximizing TPR - FPR, placed midway between the chosen score
/// and the next lower one (-inf when every sample is called positive,
/// +inf when none is).
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

/// Fraction of samples with (score >= threshold) == label.
double accuracy_at(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Scores a fold's model assigns to its own training subjects (for the
/// operating point) and to its held-out subjects, in index order.
struct FoldScores {
  std::vector<double> train_scores;
  std::vector<double> test_scores;
};

/// Fits on `train` and scores `train` and `test`. Must not read any data of
/// `test` subjects while fitting.
using FoldFitter =
    std::function<FoldScores(std::span<const std::size_t> train, std::span<const std::size_t> test)>;

struct CvResult {
  /// Held-out score of each subject.
  std::vector<double> scores;
  /// Held-out decision at the operating point chosen on the training fold.
  std::vector<int> predicted;
  double pa = 0.0;        ///< at the training-fold Youden point
  double pa_fixed = 0.0;  ///< at the fixed threshold
  double auc = 0.0;
};

/// Runs every fold (folds may execute concurrently, results are independent
/// of `threads`). Each subject must appear in exactly one fold.
CvResult cross_validate(std::span<const int> labels, const std::vector<std::vector<std::size_t>>& folds,
                        const FoldFitter& fitter, double fixed_threshold, unsigned threads = 1);

/// Leave-one-out: one fold per subject. Throws DomainError with fewer than
/// two subjects per class.
CvResult loocv(std::span<const int> labels, const FoldFitter& fitter, double fixed_threshold, unsigned threads = 1);

/// k folds with each class dealt round-robin after a seeded shuffle, so
/// class proportions are preserved in every fold.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

/// LRT classifier over per-subject voxel values of one metric: each fold
/// pools its training voxels per class and scores subjects by Delta.
FoldFitter lrt_fitter(const std::vector<std::vector<double>>& subject_values, std::span<const int> labels);

/// Logistic regression over per-subject feature rows, z-scored with
/// statistics of the training fold only.
FoldFitter logistic_fitter(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options = {});

}  // namespace psic::eval
