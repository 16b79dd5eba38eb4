#pragma once

// End-to-end operations on cohorts: SH preparation of subjects, diffusion
// cube sets, PSIC prediction, per-voxel metrics and the evaluation report
// comparing the network with the metric-based classifiers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "psic/classify_eval.hpp"
#include "psic/dti_metrics.hpp"
#include "psic/io.hpp"
#include "psic/manifest.hpp"
#include "psic/network.hpp"
#include "psic/training.hpp"

namespace psic::pipeline {

/// Network, training and preprocessing settings of a run.
struct RunConfig {
  dcnn::NetworkConfig network;
  training::TrainingConfig training;
  double sh_regularization = sh::kDefaultShRegularization;
  /// Subject folds of the network's cross-validated evaluation.
  int dnn_folds = 5;

  void validate() const;
};

/// JSON: {"network": {...}, "training": {...}, "sh_regularization": r,
/// "dnn_folds": k}; every key optional.
RunConfig parse_run_config(const std::string& json_text);
RunConfig read_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

/// One subject reduced to what the classifiers consume.
struct PreparedSubject {
  std::string id;
  int label = 0;
  io::ShVolume coeffs;
  /// Centers of the subject's diffusion cubes (interior ROI voxels).
  std::vector<io::Voxel> centers;
  /// Per-voxel metrics over every ROI voxel.
  std::vector<dti::MetricVector> metrics;
};

/// Loads the subject's volume and ROI mask, fits SH coefficients and
/// computes metrics. Throws IoError on missing files.
PreparedSubject prepare_subject(const io::SubjectEntry& entry, const std::string& roi, int n_max, int radius,
                                double sh_reg, unsigned threads);

std::vector<PreparedSubject> prepare_cohort(const io::CohortManifest& manifest, const std::string& roi,
                                            const RunConfig& config, unsigned threads);

/// SH cubes of every center of a subject, in center order.
std::vector<sh::ShCube> subject_cubes(const PreparedSubject& subject, int radius);

/// Labeled cubes of the listed subjects, subject by subject.
training::LabeledDcSet build_dc_set(std::span<const PreparedSubject> subjects, std::span<const std::size_t> which,
                                    int radius);
training::LabeledDcSet build_dc_set(std::span<const PreparedSubject> subjects, int radius);

/// Per-voxel metric vectors over every voxel of the mask.
std::vector<dti::MetricVector> roi_metrics(const io::Volume& volume, const io::Mask& mask);

struct PsicPrediction {
  std::vector<io::Voxel> centers;
  std::vector<double> scores;
  io::Volume map;  ///< one channel, 0 outside the scored voxels
};

/// Scores every interior ROI voxel of a volume.
PsicPrediction predict_volume(const dcnn::NetworkParams& params, const io::Volume& volume, const io::Mask& mask,
                              double sh_reg, unsigned threads);

inline constexpr std::size_t kReportColumns = 10;
/// MD FA CL CP DV ASD DE CVD LR DNN
const std::array<std::string, kReportColumns>& report_column_names();

struct RoiEvaluation {
  std::string roi;
  /// Leave-one-out results of the eight metric LRTs and the logistic
  /// regression, then the network's subject-fold cross-validation.
  std::array<eval::CvResult, kReportColumns> columns;
  /// Validation PA of the final epoch in each network fold.
  std::vector<double> dnn_fold_valid_pa;
  /// Subject ids in cohort order, with their labels.
  std::vector<std::string> subject_ids;
  std::vector<int> labels;
};

struct EvaluationReport {
  std::vector<RoiEvaluation> rois;
};

struct EvaluateOptions {
  unsigned threads = 1;
  /// Skips the network column (filled with NaN) for metric-only runs.
  bool run_dnn = true;
  /// Restricts the report to these ROIs; empty means every shared ROI.
  std::vector<std::string> rois;
};

/// Evaluation of one ROI from prepared subjects.
RoiEvaluation evaluate_roi(const std::string& roi, std::span<const PreparedSubject> subjects, const RunConfig& config,
                           const EvaluateOptions& options);

EvaluationReport evaluate(const io::CohortManifest& manifest, const RunConfig& config, const EvaluateOptions& options);

/// measure,roi,MD,...,DNN with rows PA (training-fold Youden operating
/// point), PA_FIXED (threshold 0 for LRTs, 0.5 otherwise) and AUC per ROI.
void write_report_csv(std::ostream& out, const EvaluationReport& report);

/// Median in-ROI PSIC of each subject under `params`.
std::vector<double> subject_median_psic(const dcnn::NetworkParams& params, std::span<const PreparedSubject> subjects,
                                        unsigned threads);

}  // namespace psic::pipeline
