#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psic/network.hpp"
#include "psic/sh_core.hpp"

namespace psic::training {

/// Diffusion cubes (as SH coefficients) pooled over an ROI, with binary
/// labels (1 = pathological group) and the subject each cube came from.
struct LabeledDcSet {
  std::vector<sh::ShCube> samples;
  std::vector<int> labels;
  std::vector<std::string> subject_ids;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Throws ShapeError on unequal lengths or non-binary labels.
  void validate() const;
  void push_back(sh::ShCube cube, int label, std::string subject);
  LabeledDcSet subset(std::span<const std::size_t> indices) const;
};

enum class SplitMode { BySample, BySubject };

const char* to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& name);

struct TrainingConfig {
  double learning_rate = 0.5e-3;
  std::size_t batch_size = 256;
  int epochs = 200;
  double keep_prob = 0.7;
  /// Training : validation proportion.
  double split_train = 4.0;
  double split_valid = 1.0;
  SplitMode split_mode = SplitMode::BySample;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Return the parameters of the epoch with the best validation PA instead
  /// of the last epoch.
  bool keep_best = false;

  void validate() const;
};

struct AdamConfig {
  double learning_rate = 0.5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Randomized train/validation split in proportion train:valid. BySample
/// shuffles cubes individually; BySubject assigns whole subjects to one side.
/// Throws DomainError if either side would be empty.
std::pair<LabeledDcSet, LabeledDcSet> split_dataset(const LabeledDcSet& set, double train_parts,
                                                    double valid_parts, SplitMode mode, std::uint64_t seed);

/// -[t log g + (1 - t) log(1 - g)] with g clipped to [1e-12, 1 - 1e-12].
double cross_entropy(double gamma, int target);

/// One bias-corrected Adam update, params -= lr * m_hat / (sqrt(v_hat) + eps).
/// Throws DivergenceError (leaving params and state untouched) if any
/// gradient entry is not finite.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);
void adam_step(dcnn::NetworkParams& params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_pa = 0.0;
  double valid_pa = 0.0;
};

struct TrainResult {
  dcnn::NetworkParams params;
  std::vector<EpochRecord> history;
  int selected_epoch = 0;
};

/// Scores of every sample, computed in parallel; order matches the set.
std::vector<double> predict_scores(const dcnn::NetworkParams& params, std::span<const sh::ShCube> samples,
                                   unsigned threads = 1);

/// PA = 1 - mean |g_hat - t| with g_hat = 1 iff score >= 0.5.
double prediction_accuracy(std::span<const double> scores, std::span<const int> labels);
double prediction_accuracy(const dcnn::NetworkParams& params, const LabeledDcSet& set, unsigned threads = 1);

/// Mean cross-entropy gradient over `batch` (indices into set), reduced in a
/// fixed chunk order so the result does not depend on the thread count.
/// Returns the mean loss.
double batch_gradient(const dcnn::NetworkParams& params, const LabeledDcSet& set,
                      std::span<const std::size_t> batch, double keep_prob, std::uint64_t dropout_seed,
                      unsigned threads, std::vector<double>& grad);

/// Splits `set` per cfg and trains on the training part.
TrainResult train(const LabeledDcSet& set, const dcnn::NetworkConfig& net_cfg, const TrainingConfig& cfg);
/// Trains on an explicit training / validation pair. Throws DomainError if
/// the training set lacks either class, DivergenceError on a non-finite loss.
TrainResult train(const LabeledDcSet& train_set, const LabeledDcSet& valid_set, const dcnn::NetworkConfig& net_cfg,
                  const TrainingConfig& cfg);

/// epoch,mean_loss,train_pa,valid_pa
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace psic::training
