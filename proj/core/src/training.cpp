#include "psic/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include "psic/error.hpp"
#include "psic/parallel.hpp"

namespace psic::training {
namespace {

constexpr std::size_t kGradientChunk = 8;
constexpr std::size_t kPredictChunk = 32;

enum SeedStream : std::uint64_t { kSplitStream = 11, kShuffleStream = 12, kDropoutStream = 13 };

std::size_t train_count(std::size_t n, double train_parts, double valid_parts) {
  if (!(train_parts >= 0.0) || !(valid_parts >= 0.0) || train_parts + valid_parts <= 0.0) {
    throw DomainError("split proportions must be nonnegative and not both zero");
  }
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_parts / (train_parts + valid_parts)));
}

bool has_both_classes(const LabeledDcSet& set) {
  bool zero = false;
  bool one = false;
  for (int l : set.labels) (l == 0 ? zero : one) = true;
  return zero && one;
}

}  // namespace

void LabeledDcSet::validate() const {
  if (labels.size() != samples.size() || subject_ids.size() != samples.size()) {
    throw ShapeError("labeled set has unequal sample, label and subject counts");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ShapeError("labels must be 0 or 1");
  }
}

void LabeledDcSet::push_back(sh::ShCube cube, int label, std::string subject) {
  samples.push_back(std::move(cube));
  labels.push_back(label);
  subject_ids.push_back(std::move(subject));
}

LabeledDcSet LabeledDcSet::subset(std::span<const std::size_t> indices) const {
  LabeledDcSet out;
  out.samples.reserve(indices.size());
  out.labels.reserve(indices.size());
  out.subject_ids.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples.at(i), labels.at(i), subject_ids.at(i));
  return out;
}

const char* to_string(SplitMode mode) { return mode == SplitMode::BySample ? "by_sample" : "by_subject"; }

SplitMode split_mode_from_string(const std::string& name) {
  if (name == "by_sample") return SplitMode::BySample;
  if (name == "by_subject") return SplitMode::BySubject;
  throw DomainError("unknown split mode '" + name + "'");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (batch_size < 1) throw DomainError("batch size must be at least 1");
  if (epochs < 0) throw DomainError("epoch count must be nonnegative");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw DomainError("keep probability must lie in (0, 1]");
}

std::pair<LabeledDcSet, LabeledDcSet> split_dataset(const LabeledDcSet& set, double train_parts,
                                                    double valid_parts, SplitMode mode, std::uint64_t seed) {
  set.validate();
  if (set.empty()) throw DomainError("cannot split an empty set");
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> valid_idx;

  if (mode == SplitMode::BySample) {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = train_count(set.size(), train_parts, valid_parts);
    train_idx.assign(order.begin(), order.begin() + n_train);
    valid_idx.assign(order.begin() + n_train, order.end());
  } else {
    std::vector<std::string> subjects;
    std::unordered_map<std::string, std::size_t> first_seen;
    for (const auto& id : set.subject_ids) {
      if (first_seen.emplace(id, subjects.size()).second) subjects.push_back(id);
    }
    std::shuffle(subjects.begin(), subjects.end(), rng);
    const std::size_t n_train = train_count(subjects.size(), train_parts, valid_parts);
    std::unordered_map<std::string, bool> in_train;
    for (std::size_t s = 0; s < subjects.size(); ++s) in_train[subjects[s]] = s < n_train;
    for (std::size_t i = 0; i < set.size(); ++i) (in_train[set.subject_ids[i]] ? train_idx : valid_idx).push_back(i);
  }
  if (train_idx.empty()) throw DomainError("split leaves the training partition empty");
  if (valid_idx.empty()) throw DomainError("split leaves the validation partition empty");
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(valid_idx.begin(), valid_idx.end());
  return {set.subset(train_idx), set.subset(valid_idx)};
}

double cross_entropy(double gamma, int target) {
  const double g = std::clamp(gamma, 1e-12, 1.0 - 1e-12);
  return -(target * std::log(g) + (1 - target) * std::log(1.0 - g));
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("Adam parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw DivergenceError("non-finite gradient at parameter " + std::to_string(i) + "; Adam step aborted");
    }
  }
  ++state.t;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bias1;
    const double v_hat = state.v[i] / bias2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void adam_step(dcnn::NetworkParams& params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
  for (double g : grads) {
    if (!std::isfinite(g)) throw DivergenceError("non-finite gradient; Adam step aborted");
  }
  adam_step(params.mutable_values(), grads, state, cfg);
}

std::vector<double> predict_scores(const dcnn::NetworkParams& params, std::span<const sh::ShCube> samples,
                                   unsigned threads) {
  std::vector<double> scores(samples.size());
  const std::size_t chunks = (samples.size() + kPredictChunk - 1) / kPredictChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    dcnn::ForwardCache cache;
    const std::size_t end = std::min(samples.size(), (c + 1) * kPredictChunk);
    for (std::size_t i = c * kPredictChunk; i < end; ++i) scores[i] = dcnn::forward_into(params, samples[i], cache);
  });
  return scores;
}

double prediction_accuracy(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("score and label counts differ");
  if (scores.empty()) throw DomainError("prediction accuracy of an empty set");
  double err = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int predicted = scores[i] >= 0.5 ? 1 : 0;
    err += std::abs(predicted - labels[i]);
  }
  return 1.0 - err / static_cast<double>(scores.size());
}

double prediction_accuracy(const dcnn::NetworkParams& params, const LabeledDcSet& set, unsigned threads) {
  const auto scores = predict_scores(params, set.samples, threads);
  return prediction_accuracy(scores, set.labels);
}

double batch_gradient(const dcnn::NetworkParams& params, const LabeledDcSet& set,
                      std::span<const std::size_t> batch, double keep_prob, std::uint64_t dropout_seed,
                      unsigned threads, std::vector<double>& grad) {
  if (batch.empty()) throw DomainError("empty mini-batch");
  const std::size_t n_params = params.size();
  const std::size_t chunks = (batch.size() + kGradientChunk - 1) / kGradientChunk;
  std::vector<std::vector<double>> chunk_grads(chunks);
  std::vector<double> chunk_loss(chunks, 0.0);

  parallel_for(chunks, threads, [&](std::size_t c) {
    std::vector<double>& g = chunk_grads[c];
    g.assign(n_params, 0.0);
    dcnn::ForwardCache cache;
    const std::size_t end = std::min(batch.size(), (c + 1) * kGradientChunk);
    for (std::size_t b = c * kGradientChunk; b < end; ++b) {
      const std::size_t i = batch[b];
      std::mt19937_64 rng(derive_seed(dropout_seed, kDropoutStream, b));
      const dcnn::DropoutSpec dropout{keep_prob, &rng};
      dcnn::forward_into(params, set.samples[i], cache, keep_prob < 1.0 ? &dropout : nullptr);
      chunk_loss[c] += dcnn::backward(params, cache, set.labels[i], g);
    }
  });

  grad.assign(n_params, 0.0);
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::vector<double>& g = chunk_grads[c];
    for (std::size_t k = 0; k < n_params; ++k) grad[k] += g[k];
    loss += chunk_loss[c];
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= scale;
  return loss * scale;
}

TrainResult train(const LabeledDcSet& set, const dcnn::NetworkConfig& net_cfg, const TrainingConfig& cfg) {
  auto [train_set, valid_set] = split_dataset(set, cfg.split_train, cfg.split_valid, cfg.split_mode, cfg.seed);
  return train(train_set, valid_set, net_cfg, cfg);
}

TrainResult train(const LabeledDcSet& train_set, const LabeledDcSet& valid_set, const dcnn::NetworkConfig& net_cfg,
                  const TrainingConfig& cfg) {
  cfg.validate();
  train_set.validate();
  valid_set.validate();
  if (!has_both_classes(train_set)) throw DomainError("training set must contain both classes");

  TrainResult result;
  result.params = dcnn::init_params(net_cfg, net_cfg.seed);
  AdamState state(result.params.size());
  const AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const unsigned threads = resolve_threads(cfg.threads);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  double best_pa = -1.0;
  dcnn::NetworkParams best;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const std::uint64_t dropout_seed =
          derive_seed(derive_seed(cfg.seed, kDropoutStream, static_cast<std::uint64_t>(epoch)), batches);
      const double loss = batch_gradient(result.params, train_set, batch, cfg.keep_prob, dropout_seed, threads, grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
      }
      adam_step(result.params, grad, state, adam);
      loss_sum += loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    rec.train_pa = prediction_accuracy(result.params, train_set, threads);
    rec.valid_pa = valid_set.empty() ? 0.0 : prediction_accuracy(result.params, valid_set, threads);
    result.history.push_back(rec);
    if (cfg.keep_best && rec.valid_pa > best_pa) {
      best_pa = rec.valid_pa;
      best = result.params;
      result.selected_epoch = epoch;
    }
  }
  if (cfg.keep_best && result.selected_epoch > 0) {
    result.params = std::move(best);
  } else {
    result.selected_epoch = cfg.epochs;
  }
  return result;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,mean_loss,train_pa,valid_pa\n";
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(10);
  for (const auto& r : history) out << r.epoch << ',' << r.mean_loss << ',' << r.train_pa << ',' << r.valid_pa << '\n';
  out.flags(flags);
  out.precision(precision);
}

}  // namespace psic::training
