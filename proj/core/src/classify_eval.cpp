#include "psic/classify_eval.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>

#include "psic/error.hpp"
#include "psic/parallel.hpp"

namespace psic::eval {
namespace {

void check_binary(std::span<const int> labels) {
  for (int t : labels) {
    if (t != kLabelCn && t != kLabelAd) throw DomainError("labels must be 0 (CN) or 1 (AD)");
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double unbiased_var(std::span<const double> v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Penalized negative log-likelihood of theta = (intercept, weights).
double penalized_nll(const Eigen::MatrixXd& xa, std::span<const int> labels, const Eigen::VectorXd& theta,
                     double l2) {
  const Eigen::VectorXd z = xa * theta;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) nll += softplus(z[i]) - labels[static_cast<std::size_t>(i)] * z[i];
  return nll + 0.5 * l2 * theta.squaredNorm();
}

}  // namespace

MedianDecision median_psic_decision(std::span<const double> psic_values) {
  if (psic_values.empty()) throw DomainError("median of an empty ROI");
  std::vector<double> v(psic_values.begin(), psic_values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double median = v[mid];
  if (v.size() % 2 == 0) {
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  return {median, median >= 0.5 ? kLabelAd : kLabelCn};
}

GaussianClassModel fit_gaussian_model(std::span<const double> values_cn, std::span<const double> values_ad) {
  if (values_cn.size() < 2 || values_ad.size() < 2) throw DomainError("each class needs at least two values");
  GaussianClassModel m;
  m.mean_cn = mean_of(values_cn);
  m.mean_ad = mean_of(values_ad);
  m.var_cn = unbiased_var(values_cn, m.mean_cn);
  m.var_ad = unbiased_var(values_ad, m.mean_ad);
  auto floor_var = [&m](double& var, double mean) {
    if (var > 0.0) return;
    var = std::max(1e-12 * mean * mean, std::numeric_limits<double>::min());
    m.variance_floored = true;
  };
  floor_var(m.var_cn, m.mean_cn);
  floor_var(m.var_ad, m.mean_ad);
  return m;
}

double gaussian_log_density(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

double lrt_statistic(const GaussianClassModel& model, std::span<const double> observed) {
  if (observed.empty()) throw DomainError("likelihood ratio of an empty observation list");
  double log_ad = 0.0;
  double log_cn = 0.0;
  for (double x : observed) {
    log_ad += gaussian_log_density(x, model.mean_ad, model.var_ad);
    log_cn += gaussian_log_density(x, model.mean_cn, model.var_cn);
  }
  return log_ad - log_cn;
}

LogisticModel logistic_fit(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options) {
  const Eigen::Index n = features.rows();
  const Eigen::Index dim = features.cols();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ShapeError("feature rows and labels disagree");
  check_binary(labels);

  Eigen::MatrixXd xa(n, dim + 1);
  xa.col(0).setOnes();
  xa.rightCols(dim) = features;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim + 1);
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) t[i] = labels[static_cast<std::size_t>(i)];

  auto gradient = [&](const Eigen::VectorXd& th, Eigen::VectorXd& prob) {
    const Eigen::VectorXd z = xa * th;
    prob.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) prob[i] = sigmoid(z[i]);
    return Eigen::VectorXd(xa.transpose() * (prob - t) + options.l2 * th);
  };

  LogisticModel model;
  Eigen::VectorXd prob;
  Eigen::VectorXd grad = gradient(theta, prob);
  double objective = penalized_nll(xa, labels, theta, options.l2);
  int iter = 0;
  for (; iter < options.max_iterations && grad.norm() >= options.gradient_tolerance; ++iter) {
    const Eigen::VectorXd w = prob.array() * (1.0 - prob.array());
    Eigen::MatrixXd hessian = xa.transpose() * w.asDiagonal() * xa;
    hessian.diagonal().array() += options.l2;
    const Eigen::VectorXd step = hessian.ldlt().solve(grad);

    double damping = 1.0;
    Eigen::VectorXd candidate = theta - step;
    double cand_obj = penalized_nll(xa, labels, candidate, options.l2);
    while (cand_obj > objective && damping > 1e-10) {
      damping *= 0.5;
      candidate = theta - damping * step;
      cand_obj = penalized_nll(xa, labels, candidate, options.l2);
    }
    if (cand_obj > objective) break;  // no descent possible at this precision
    theta = candidate;
    objective = cand_obj;
    grad = gradient(theta, prob);
  }
  model.intercept = theta[0];
  model.weights = theta.tail(dim);
  model.iterations = iter;
  model.gradient_norm = grad.norm();
  model.converged = model.gradient_norm < options.gradient_tolerance;
  return model;
}

double logistic_predict(const LogisticModel& model, const Eigen::Ref<const Eigen::VectorXd>& feature) {
  if (feature.size() != model.weights.size()) throw ShapeError("feature dimension mismatch");
  return sigmoid(model.intercept + model.weights.dot(feature));
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw DomainError("cannot standardize zero rows");
  Standardizer s;
  s.mean = rows.colwise().mean().transpose();
  s.scale.resize(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - s.mean[c]).square().mean();
    s.scale[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size()) throw ShapeError("feature dimension mismatch");
  return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels disagree in length");
  check_binary(labels);
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), kLabelAd));
  const auto negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) throw DomainError("ROC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0.0;
  double fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (labels[order[i]] == kLabelAd) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
    }
    curve.points.push_back({threshold, fp / negatives, tp / positives});
  }
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const RocPoint& a = curve.points[i - 1];
    const RocPoint& b = curve.points[i];
    area += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return area;
}

double auc(std::span<const double> scores, std::span<const int> labels) { return auc(roc_curve(scores, labels)); }

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
  const RocCurve curve = roc_curve(scores, labels);
  std::size_t best = 0;
  double best_j = -1.0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const double j = curve.points[i].tpr - curve.points[i].fpr;
    if (j > best_j) {
      best_j = j;
      best = i;
    }
  }
  const auto& pts = curve.points;
  if (best == 0) return std::numeric_limits<double>::infinity();
  if (best + 1 == pts.size()) return -std::numeric_limits<double>::infinity();
  return 0.5 * (pts[best].threshold + pts[best + 1].threshold);
}

double accuracy_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size() || scores.empty()) throw ShapeError("scores and labels disagree in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int predicted = scores[i] >= threshold ? kLabelAd : kLabelCn;
    if (predicted == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

CvResult cross_validate(std::span<const int> labels, const std::vector<std::vector<std::size_t>>& folds,
                        const FoldFitter& fitter, double fixed_threshold, unsigned threads) {
  check_binary(labels);
  const std::size_t n = labels.size();
  std::vector<int> seen(n, 0);
  for (const auto& fold : folds) {
    for (std::size_t i : fold) {
      if (i >= n) throw ShapeError("fold index out of range");
      ++seen[i];
    }
  }
  if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
    throw ShapeError("every subject must be held out exactly once");
  }

  std::vector<double> thresholds(folds.size());
  std::vector<std::vector<double>> test_scores(folds.size());
  parallel_for(folds.size(), threads, [&](std::size_t f) {
    std::vector<std::size_t> test = folds[f];
    std::sort(test.begin(), test.end());
    std::vector<std::size_t> train;
    train.reserve(n - test.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::binary_search(test.begin(), test.end(), i)) train.push_back(i);
    }
    FoldScores out = fitter(train, test);
    if (out.train_scores.size() != train.size() || out.test_scores.size() != test.size()) {
      throw ShapeError("fold fitter returned the wrong number of scores");
    }
    std::vector<int> train_labels;
    train_labels.reserve(train.size());
    for (std::size_t i : train) train_labels.push_back(labels[i]);
    thresholds[f] = youden_threshold(out.train_scores, train_labels);
    test_scores[f] = std::move(out.test_scores);
  });

  CvResult result;
  result.scores.assign(n, 0.0);
  result.predicted.assign(n, kLabelCn);
  std::size_t correct = 0;
  std::size_t correct_fixed = 0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> test = folds[f];
    std::sort(test.begin(), test.end());
    for (std::size_t j = 0; j < test.size(); ++j) {
      const std::size_t i = test[j];
      const double s = test_scores[f][j];
      result.scores[i] = s;
      result.predicted[i] = s >= thresholds[f] ? kLabelAd : kLabelCn;
      if (result.predicted[i] == labels[i]) ++correct;
      if ((s >= fixed_threshold ? kLabelAd : kLabelCn) == labels[i]) ++correct_fixed;
    }
  }
  result.pa = static_cast<double>(correct) / static_cast<double>(n);
  result.pa_fixed = static_cast<double>(correct_fixed) / static_cast<double>(n);
  result.auc = auc(result.scores, labels);
  return result;
}

CvResult loocv(std::span<const int> labels, const FoldFitter& fitter, double fixed_threshold, unsigned threads) {
  check_binary(labels);
  const auto ad = std::count(labels.begin(), labels.end(), kLabelAd);
  const auto cn = static_cast<std::ptrdiff_t>(labels.size()) - ad;
  if (ad < 2 || cn < 2) throw DomainError("leave-one-out needs at least two subjects per class");
  std::vector<std::vector<std::size_t>> folds(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) folds[i] = {i};
  return cross_validate(labels, folds, fitter, fixed_threshold, threads);
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  check_binary(labels);
  if (k < 2) throw DomainError("cross-validation needs at least two folds");
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::mt19937_64 rng(seed);
  std::size_t next = 0;
  for (int cls : {kLabelCn, kLabelAd}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i : members) {
      folds[next % folds.size()].push_back(i);
      ++next;
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  std::erase_if(folds, [](const auto& f) { return f.empty(); });
  return folds;
}

FoldFitter lrt_fitter(const std::vector<std::vector<double>>& subject_values, std::span<const int> labels) {
  if (subject_values.size() != labels.size()) throw ShapeError("subject values and labels disagree");
  check_binary(labels);
  auto values = std::make_shared<const std::vector<std::vector<double>>>(subject_values);
  auto lab = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  return [values, lab](std::span<const std::size_t> train, std::span<const std::size_t> test) {
    std::vector<double> cn;
    std::vector<double> ad;
    for (std::size_t i : train) {
      auto& dst = (*lab)[i] == kLabelAd ? ad : cn;
      dst.insert(dst.end(), (*values)[i].begin(), (*values)[i].end());
    }
    const GaussianClassModel model = fit_gaussian_model(cn, ad);
    FoldScores out;
    for (std::size_t i : train) out.train_scores.push_back(lrt_statistic(model, (*values)[i]));
    for (std::size_t i : test) out.test_scores.push_back(lrt_statistic(model, (*values)[i]));
    return out;
  };
}

FoldFitter logistic_fitter(const Eigen::MatrixXd& features, std::span<const int> labels,
                           const LogisticOptions& options) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("feature rows and labels disagree");
  check_binary(labels);
  auto x = std::make_shared<const Eigen::MatrixXd>(features);
  auto lab = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  return [x, lab, options](std::span<const std::size_t> train, std::span<const std::size_t> test) {
    auto gather = [&](std::span<const std::size_t> idx) {
      Eigen::MatrixXd rows(static_cast<Eigen::Index>(idx.size()), x->cols());
      for (std::size_t r = 0; r < idx.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = x->row(static_cast<Eigen::Index>(idx[r]));
      return rows;
    };
    const Eigen::MatrixXd train_rows = gather(train);
    const Standardizer z = Standardizer::fit(train_rows);
    const Eigen::MatrixXd train_z = z.apply(train_rows);
    std::vector<int> train_labels;
    for (std::size_t i : train) train_labels.push_back((*lab)[i]);
    const LogisticModel model = logistic_fit(train_z, train_labels, options);

    FoldScores out;
    for (Eigen::Index r = 0; r < train_z.rows(); ++r) {
      out.train_scores.push_back(logistic_predict(model, train_z.row(r).transpose()));
    }
    const Eigen::MatrixXd test_z = z.apply(gather(test));
    for (Eigen::Index r = 0; r < test_z.rows(); ++r) {
      out.test_scores.push_back(logistic_predict(model, test_z.row(r).transpose()));
    }
    return out;
  };
}

}  // namespace psic::eval
