#include "psic/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "json_config.hpp"
#include "psic/error.hpp"
#include "psic/parallel.hpp"

namespace psic::pipeline {
namespace {

constexpr std::uint64_t kFoldStream = 31;
constexpr std::uint64_t kFoldModelStream = 32;

std::vector<double> voxel_signal(const io::Volume& volume, std::size_t index) {
  const auto v = volume.voxel(index);
  return {v.begin(), v.end()};
}

eval::CvResult nan_result(std::size_t n) {
  eval::CvResult r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.scores.assign(n, nan);
  r.predicted.assign(n, 0);
  r.pa = r.pa_fixed = r.auc = nan;
  return r;
}

}  // namespace

void RunConfig::validate() const {
  network.validate();
  training.validate();
  if (!(sh_regularization >= 0.0)) throw DomainError("SH regularization must be nonnegative");
  if (dnn_folds < 2) throw DomainError("network evaluation needs at least two folds");
}

RunConfig parse_run_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("run config: ") + e.what());
  }
  detail::reject_unknown_keys(j, {"network", "training", "sh_regularization", "dnn_folds"}, "run config");
  RunConfig c;
  if (j.contains("network")) c.network = detail::network_config_from_json(j.at("network"));
  if (j.contains("training")) c.training = detail::training_config_from_json(j.at("training"));
  try {
    c.sh_regularization = j.value("sh_regularization", c.sh_regularization);
    c.dnn_folds = j.value("dnn_folds", c.dnn_folds);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string run_config_json(const RunConfig& c) {
  const nlohmann::json j = {{"network", detail::to_json(c.network)},
                            {"training", detail::to_json(c.training)},
                            {"sh_regularization", c.sh_regularization},
                            {"dnn_folds", c.dnn_folds}};
  return j.dump(2);
}

std::vector<dti::MetricVector> roi_metrics(const io::Volume& volume, const io::Mask& mask) {
  if (volume.dims != mask.dims) throw ShapeError("mask dimensions differ from the volume");
  const dti::TensorFitter fitter(volume.scheme());
  std::vector<dti::MetricVector> out;
  for (std::size_t i = 0; i < volume.voxels(); ++i) {
    if (mask.inside(i)) out.push_back(dti::metric_vector(voxel_signal(volume, i), fitter));
  }
  return out;
}

PreparedSubject prepare_subject(const io::SubjectEntry& entry, const std::string& roi, int n_max, int radius,
                                double sh_reg, unsigned threads) {
  const auto mask_it = entry.masks.find(roi);
  if (mask_it == entry.masks.end()) throw IoError("subject " + entry.id + " has no mask for ROI " + roi);
  const io::Volume volume = io::read_volume(entry.volume);
  const io::Mask mask = io::read_mask(mask_it->second);
  if (volume.dims != mask.dims) throw ShapeError("subject " + entry.id + ": mask dimensions differ from the volume");

  PreparedSubject s;
  s.id = entry.id;
  s.label = entry.label;
  s.coeffs = io::fit_sh_volume(volume, n_max, sh_reg, threads);
  s.centers = io::interior_voxels(mask, radius);
  if (s.centers.empty()) throw DomainError("subject " + entry.id + ": ROI " + roi + " has no interior voxels");
  s.metrics = roi_metrics(volume, mask);
  return s;
}

std::vector<PreparedSubject> prepare_cohort(const io::CohortManifest& manifest, const std::string& roi,
                                            const RunConfig& config, unsigned threads) {
  std::vector<PreparedSubject> out(manifest.subjects.size());
  parallel_for(out.size(), threads, [&](std::size_t i) {
    out[i] = prepare_subject(manifest.subjects[i], roi, config.network.n_max, config.network.radius,
                             config.sh_regularization, 1);
  });
  return out;
}

std::vector<sh::ShCube> subject_cubes(const PreparedSubject& subject, int radius) {
  std::vector<sh::ShCube> cubes;
  cubes.reserve(subject.centers.size());
  for (const auto& c : subject.centers) cubes.push_back(io::sh_cube_at(subject.coeffs, c, radius));
  return cubes;
}

training::LabeledDcSet build_dc_set(std::span<const PreparedSubject> subjects, std::span<const std::size_t> which,
                                    int radius) {
  training::LabeledDcSet set;
  for (std::size_t i : which) {
    for (auto& cube : subject_cubes(subjects[i], radius)) set.push_back(std::move(cube), subjects[i].label, subjects[i].id);
  }
  return set;
}

training::LabeledDcSet build_dc_set(std::span<const PreparedSubject> subjects, int radius) {
  std::vector<std::size_t> all(subjects.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return build_dc_set(subjects, all, radius);
}

PsicPrediction predict_volume(const dcnn::NetworkParams& params, const io::Volume& volume, const io::Mask& mask,
                              double sh_reg, unsigned threads) {
  if (volume.dims != mask.dims) throw ShapeError("mask dimensions differ from the volume");
  const auto& cfg = params.config();
  const io::ShVolume coeffs = io::fit_sh_volume(volume, cfg.n_max, sh_reg, threads);
  PsicPrediction out;
  out.centers = io::interior_voxels(mask, cfg.radius);
  std::vector<sh::ShCube> cubes;
  cubes.reserve(out.centers.size());
  for (const auto& c : out.centers) cubes.push_back(io::sh_cube_at(coeffs, c, cfg.radius));
  out.scores = training::predict_scores(params, cubes, threads);
  out.map = io::psic_map(volume.dims, out.centers, out.scores);
  return out;
}

const std::array<std::string, kReportColumns>& report_column_names() {
  static const std::array<std::string, kReportColumns> names = {"MD", "FA", "CL", "CP", "DV",
                                                                "ASD", "DE", "CVD", "LR", "DNN"};
  return names;
}

std::vector<double> subject_median_psic(const dcnn::NetworkParams& params, std::span<const PreparedSubject> subjects,
                                        unsigned threads) {
  std::vector<double> medians;
  medians.reserve(subjects.size());
  for (const auto& s : subjects) {
    const auto cubes = subject_cubes(s, params.config().radius);
    medians.push_back(eval::median_psic_decision(training::predict_scores(params, cubes, threads)).median);
  }
  return medians;
}

RoiEvaluation evaluate_roi(const std::string& roi, std::span<const PreparedSubject> subjects, const RunConfig& config,
                           const EvaluateOptions& options) {
  config.validate();
  RoiEvaluation r;
  r.roi = roi;
  for (const auto& s : subjects) {
    r.subject_ids.push_back(s.id);
    r.labels.push_back(s.label);
  }
  const std::size_t n = subjects.size();
  const unsigned threads = resolve_threads(options.threads);

  // Metric LRTs on pooled voxel values.
  for (std::size_t m = 0; m < dti::kMetricCount; ++m) {
    std::vector<std::vector<double>> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& mv : subjects[i].metrics) values[i].push_back(mv.to_array()[m]);
    }
    r.columns[m] = eval::loocv(r.labels, eval::lrt_fitter(values, r.labels), 0.0, threads);
  }

  // Logistic regression on ROI-mean metric vectors.
  Eigen::MatrixXd features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dti::kMetricCount);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& mv : subjects[i].metrics) {
      const auto a = mv.to_array();
      for (std::size_t m = 0; m < dti::kMetricCount; ++m) features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) += a[m];
    }
    features.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(subjects[i].metrics.size());
  }
  r.columns[8] = eval::loocv(r.labels, eval::logistic_fitter(features, r.labels), 0.5, threads);

  if (!options.run_dnn) {
    r.columns[9] = nan_result(n);
    return r;
  }

  // Network: stratified subject folds; scores are median PSIC per subject.
  const int radius = config.network.radius;
  std::vector<std::vector<sh::ShCube>> cubes(n);
  for (std::size_t i = 0; i < n; ++i) cubes[i] = subject_cubes(subjects[i], radius);
  const auto folds = eval::stratified_folds(r.labels, config.dnn_folds, derive_seed(config.training.seed, kFoldStream));

  auto fitter = [&](std::span<const std::size_t> train, std::span<const std::size_t> test) {
    training::LabeledDcSet set;
    for (std::size_t i : train) {
      for (const auto& c : cubes[i]) set.push_back(c, subjects[i].label, subjects[i].id);
    }
    dcnn::NetworkConfig net = config.network;
    training::TrainingConfig tc = config.training;
    net.seed = derive_seed(config.network.seed, kFoldModelStream, test.front());
    tc.seed = derive_seed(config.training.seed, kFoldModelStream, test.front());
    tc.threads = threads;
    const training::TrainResult trained = training::train(set, net, tc);
    r.dnn_fold_valid_pa.push_back(trained.history.empty() ? 0.0 : trained.history.back().valid_pa);

    auto score = [&](std::size_t i) {
      return eval::median_psic_decision(training::predict_scores(trained.params, cubes[i], threads)).median;
    };
    eval::FoldScores out;
    for (std::size_t i : train) out.train_scores.push_back(score(i));
    for (std::size_t i : test) out.test_scores.push_back(score(i));
    return out;
  };
  // Folds run one after another; each training run is itself parallel.
  r.columns[9] = eval::cross_validate(r.labels, folds, fitter, 0.5, 1);
  return r;
}

EvaluationReport evaluate(const io::CohortManifest& manifest, const RunConfig& config, const EvaluateOptions& options) {
  config.validate();
  const auto shared = manifest.roi_names();
  std::vector<std::string> rois = options.rois.empty() ? shared : options.rois;
  if (rois.empty()) throw IoError("the manifest defines no ROI shared by all subjects");
  EvaluationReport report;
  for (const auto& roi : rois) {
    if (std::find(shared.begin(), shared.end(), roi) == shared.end()) throw IoError("unknown ROI " + roi);
    const auto subjects = prepare_cohort(manifest, roi, config, resolve_threads(options.threads));
    report.rois.push_back(evaluate_roi(roi, subjects, config, options));
  }
  return report;
}

void write_report_csv(std::ostream& out, const EvaluationReport& report) {
  out << "measure,roi";
  for (const auto& name : report_column_names()) out << ',' << name;
  out << '\n';
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };
  for (const char* measure : {"PA", "PA_FIXED", "AUC"}) {
    for (const auto& r : report.rois) {
      out << measure << ',' << r.roi;
      for (const auto& c : r.columns) {
        const double v = std::string(measure) == "PA" ? c.pa : std::string(measure) == "PA_FIXED" ? c.pa_fixed : c.auc;
        out << ',' << cell(v);
      }
      out << '\n';
    }
  }
}

}  // namespace psic::pipeline
