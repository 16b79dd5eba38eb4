#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <numbers>
#include <random>
#include <set>

#include "psic/classify_eval.hpp"
#include "psic/error.hpp"

using namespace psic;
using namespace psic::eval;

namespace {

// Mann-Whitney form of the AUC, ties counted one half.
double auc_u_statistic(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

std::vector<int> balanced_labels(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

}  // namespace

TEST(MedianDecision, Examples) {
  EXPECT_EQ(median_psic_decision(std::vector<double>{0.2, 0.7, 0.6}).median, 0.6);
  EXPECT_EQ(median_psic_decision(std::vector<double>{0.2, 0.7, 0.6}).label, kLabelAd);
  const auto even = median_psic_decision(std::vector<double>{0.6, 0.4});
  EXPECT_DOUBLE_EQ(even.median, 0.5);
  EXPECT_EQ(even.label, kLabelAd);
  EXPECT_EQ(median_psic_decision(std::vector<double>{0.1, 0.49, 0.3, 0.9}).label, kLabelCn);
  EXPECT_THROW(median_psic_decision(std::vector<double>{}), DomainError);
}

TEST(GaussianModel, SampleMomentsAndDensity) {
  const std::vector<double> cn = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> ad = {10.0, 12.0};
  const auto m = fit_gaussian_model(cn, ad);
  EXPECT_DOUBLE_EQ(m.mean_cn, 2.5);
  EXPECT_DOUBLE_EQ(m.var_cn, 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mean_ad, 11.0);
  EXPECT_DOUBLE_EQ(m.var_ad, 2.0);
  EXPECT_FALSE(m.variance_floored);
  EXPECT_THROW(fit_gaussian_model(cn, std::vector<double>{1.0}), DomainError);

  EXPECT_NEAR(gaussian_log_density(1.0, 0.0, 4.0), -0.5 * std::log(2.0 * std::numbers::pi * 4.0) - 1.0 / 8.0, 1e-15);

  const auto floored = fit_gaussian_model(std::vector<double>{2.0, 2.0}, ad);
  EXPECT_TRUE(floored.variance_floored);
  EXPECT_NEAR(floored.var_cn, 4e-12, 1e-25);
}

TEST(Lrt, StatisticIsSumOfLogRatios) {
  GaussianClassModel m;
  m.mean_cn = 0.0;
  m.var_cn = 1.0;
  m.mean_ad = 2.0;
  m.var_ad = 4.0;
  const std::vector<double> x = {0.5, 1.5, 3.0};
  double want = 0.0;
  for (double v : x) want += gaussian_log_density(v, 2.0, 4.0) - gaussian_log_density(v, 0.0, 1.0);
  EXPECT_NEAR(lrt_statistic(m, x), want, 1e-13);
  EXPECT_LT(lrt_statistic(m, std::vector<double>{0.0}), 0.0);
  EXPECT_GT(lrt_statistic(m, std::vector<double>{4.0}), 0.0);
  EXPECT_THROW(lrt_statistic(m, std::vector<double>{}), DomainError);
}

TEST(Logistic, SatisfiesFirstOrderCondition) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  const int rows = 60;
  Eigen::MatrixXd x(rows, 3);
  std::vector<int> y(rows);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = n(rng);
    y[i] = (0.8 * x(i, 0) - 0.5 * x(i, 2) + 0.7 * n(rng)) > 0.0 ? 1 : 0;
  }
  LogisticOptions opts;
  const auto model = logistic_fit(x, y, opts);
  ASSERT_TRUE(model.converged);
  // d/dtheta [log-likelihood - l2/2 |theta|^2] with theta = (w, b).
  Eigen::VectorXd grad_w = -opts.l2 * model.weights;
  double grad_b = -opts.l2 * model.intercept;
  for (int i = 0; i < rows; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(model.intercept + x.row(i).dot(model.weights))));
    grad_w += (y[i] - p) * x.row(i).transpose();
    grad_b += y[i] - p;
  }
  EXPECT_LT(std::sqrt(grad_w.squaredNorm() + grad_b * grad_b), 1e-8);
  EXPECT_GT(model.weights[0], 0.0);
  EXPECT_LT(model.weights[2], 0.0);
  const double p0 = logistic_predict(model, x.row(0).transpose());
  EXPECT_GT(p0, 0.0);
  EXPECT_LT(p0, 1.0);
}

TEST(Logistic, SeparableDataStaysFinite) {
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  const auto model = logistic_fit(x, std::vector<int>{0, 0, 1, 1});
  EXPECT_TRUE(std::isfinite(model.weights[0]));
  EXPECT_GT(logistic_predict(model, Eigen::VectorXd::Constant(1, 2.0)), 0.99);
}

TEST(Standardizer, ZScoresWithPopulationSd) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 5, 2, 5, 3, 5;
  const auto s = Standardizer::fit(x);
  EXPECT_DOUBLE_EQ(s.mean[0], 2.0);
  EXPECT_DOUBLE_EQ(s.scale[0], std::sqrt(2.0 / 3.0));
  EXPECT_DOUBLE_EQ(s.scale[1], 1.0);
  const auto z = s.apply(x);
  EXPECT_NEAR(z.col(0).squaredNorm() / 3.0, 1.0, 1e-15);
  EXPECT_EQ(z(0, 1), 0.0);
}

TEST(Roc, CurveAndAucExamples) {
  const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
  const std::vector<int> y = {1, 0, 1, 0};
  const auto curve = roc_curve(s, y);
  ASSERT_EQ(curve.points.size(), 5u);
  EXPECT_TRUE(std::isinf(curve.points[0].threshold));
  EXPECT_EQ(curve.points[1].tpr, 0.5);
  EXPECT_EQ(curve.points[1].fpr, 0.0);
  EXPECT_EQ(curve.points.back().tpr, 1.0);
  EXPECT_EQ(curve.points.back().fpr, 1.0);
  EXPECT_DOUBLE_EQ(auc(curve), 0.75);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{1, 2}, std::vector<int>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(auc(std::vector<double>{1, 1}, std::vector<int>{0, 1}), 0.5);
  EXPECT_THROW(roc_curve(s, std::vector<int>{1, 1, 1, 1}), DomainError);
  EXPECT_THROW(roc_curve(s, std::vector<int>{1, 0}), ShapeError);
}

TEST(Roc, AucMatchesUStatisticWithTies) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> level(0, 5);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(25);
    std::vector<int> y(25);
    for (std::size_t i = 0; i < s.size(); ++i) {
      y[i] = coin(rng) ? 1 : 0;
      s[i] = level(rng) + (y[i] == 1 ? 0.5 * level(rng) : 0.0);
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(auc(s, y), auc_u_statistic(s, y), 1e-14);
  }
}

TEST(Youden, MidpointAndEndpoints) {
  const std::vector<double> s = {0.1, 0.3, 0.6, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(youden_threshold(s, y), 0.45);
  EXPECT_DOUBLE_EQ(accuracy_at(s, y, 0.45), 1.0);
  // Inverted scores: calling everything one class is optimal.
  const double t = youden_threshold(s, std::vector<int>{1, 1, 0, 0});
  EXPECT_TRUE(std::isinf(t));
  EXPECT_DOUBLE_EQ(accuracy_at(s, std::vector<int>{1, 1, 0, 0}, t), 0.5);
}

TEST(CrossValidation, LeaveOneOutNeverShowsTheHeldOutSubject) {
  const auto labels = balanced_labels(12);
  std::vector<std::set<std::size_t>> seen_train(12);
  std::mutex mu;
  FoldFitter spy = [&](std::span<const std::size_t> train, std::span<const std::size_t> test) {
    EXPECT_EQ(test.size(), 1u);
    EXPECT_EQ(train.size(), 11u);
    for (std::size_t i : train) EXPECT_NE(i, test[0]);
    {
      std::lock_guard<std::mutex> lock(mu);
      seen_train[test[0]] = std::set<std::size_t>(train.begin(), train.end());
    }
    FoldScores out;
    for (std::size_t i : train) out.train_scores.push_back(static_cast<double>(labels[i]));
    out.test_scores.push_back(static_cast<double>(test[0]));
    return out;
  };
  const auto r = loocv(labels, spy, 0.5, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(seen_train[i].size(), 11u);
    EXPECT_EQ(seen_train[i].count(i), 0u);
    EXPECT_EQ(r.scores[i], static_cast<double>(i));
  }
  EXPECT_THROW(loocv(std::vector<int>{0, 1, 1}, spy, 0.5), DomainError);
}

TEST(CrossValidation, ResultsDoNotDependOnThreads) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto labels = balanced_labels(20);
  std::vector<std::vector<double>> values(20);
  for (std::size_t i = 0; i < 20; ++i) {
    for (int k = 0; k < 30; ++k) values[i].push_back(n(rng) + 0.8 * labels[i]);
  }
  const auto fitter = lrt_fitter(values, labels);
  const auto a = loocv(labels, fitter, 0.0, 1);
  const auto b = loocv(labels, fitter, 0.0, 4);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.predicted, b.predicted);
  EXPECT_GT(a.auc, 0.9);
  EXPECT_GT(a.pa_fixed, 0.8);
}

TEST(CrossValidation, FoldsMustCoverEverySubjectOnce) {
  const auto labels = balanced_labels(4);
  FoldFitter dummy = [](std::span<const std::size_t> train, std::span<const std::size_t> test) {
    return FoldScores{std::vector<double>(train.size(), 0.0), std::vector<double>(test.size(), 0.0)};
  };
  EXPECT_THROW(cross_validate(labels, {{0, 1}, {1, 2, 3}}, dummy, 0.5), ShapeError);
  EXPECT_THROW(cross_validate(labels, {{0, 1}}, dummy, 0.5), ShapeError);
  EXPECT_NO_THROW(cross_validate(labels, {{0, 1}, {2, 3}}, dummy, 0.5));
}

TEST(StratifiedFolds, PreserveClassBalance) {
  std::vector<int> labels(40);
  for (std::size_t i = 20; i < 40; ++i) labels[i] = 1;
  const auto folds = stratified_folds(labels, 5, 17);
  ASSERT_EQ(folds.size(), 5u);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    int ad = 0;
    for (std::size_t i : f) {
      all.insert(i);
      ad += labels[i];
    }
    EXPECT_EQ(f.size(), 8u);
    EXPECT_EQ(ad, 4);
  }
  EXPECT_EQ(all.size(), 40u);
  EXPECT_EQ(stratified_folds(labels, 5, 17), folds);
  EXPECT_NE(stratified_folds(labels, 5, 18), folds);
}

TEST(NullBehaviour, RandomLabelsGiveChanceAuc) {
  // Features carry no label information. Leaving a subject out moves its own
  // class model away from it, so pooled held-out LRT scores are
  // anti-correlated with the labels and the null AUC sits below one half;
  // it must stay inside the chance band.
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  double lrt_sum = 0.0, lr_sum = 0.0;
  const int reps = 30;
  for (int rep = 0; rep < reps; ++rep) {
    const auto labels = balanced_labels(30);
    std::vector<std::vector<double>> values(30);
    Eigen::MatrixXd x(30, 4);
    for (std::size_t i = 0; i < 30; ++i) {
      const double subject = n(rng);
      for (int k = 0; k < 20; ++k) values[i].push_back(subject + 0.3 * n(rng));
      for (int j = 0; j < 4; ++j) x(static_cast<Eigen::Index>(i), j) = n(rng);
    }
    lrt_sum += loocv(labels, lrt_fitter(values, labels), 0.0).auc;
    lr_sum += loocv(labels, logistic_fitter(x, labels), 0.5).auc;
  }
  EXPECT_GE(lrt_sum / reps, 0.3);
  EXPECT_LE(lrt_sum / reps, 0.5);
  EXPECT_NEAR(lr_sum / reps, 0.5, 0.1);
}
