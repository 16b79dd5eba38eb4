#pragma once

// The PSIC network.
//
// Input: one ShCube (M x M x M x P). Topology, for spatial axes x, y, z:
//
//   layer 1  three branches; branch a: 3-D composite conv -> ReLU -> max pool along a
//   layer 2  per branch a 2-D composite conv -> ReLU -> max pool along each of
//            the two remaining axes (SharedConv), or one 2-D conv per pooling
//            direction (PerDirectionConv); six M x P arrays in total
//   layer 3  six 1-D composite convs -> ReLU -> pool over the last axis -> six P-vectors
//   fusion   the two vectors of each layer-1 branch -> FCL (2P -> F) -> ReLU
//   merge    concatenated 3F vector -> [dropout] -> FCL (3F -> G) -> ReLU
//   head     linear G -> 2 giving (alpha, beta), gamma = softmax2(alpha, beta)
//
// gamma is the score of the pathological class (target label 1).

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psic/field.hpp"
#include "psic/layers.hpp"
#include "psic/sh_core.hpp"

namespace psic::dcnn {

enum class Layer2Wiring { SharedConv, PerDirectionConv };

const char* to_string(Layer2Wiring wiring);
Layer2Wiring layer2_wiring_from_string(const std::string& name);

struct NetworkConfig {
  int radius = 1;
  int n_max = 6;
  int kernel = 3;
  Layer2Wiring wiring = Layer2Wiring::SharedConv;
  int fusion_width = 0;  ///< 0 means P
  int merge_width = 0;   ///< 0 means P
  std::uint64_t seed = 0;

  int extent() const { return 2 * radius + 1; }
  int channels() const { return sh::num_coeffs(n_max); }
  int fusion_out() const { return fusion_width > 0 ? fusion_width : channels(); }
  int merge_out() const { return merge_width > 0 ? merge_width : channels(); }
  /// Throws DomainError on an invalid combination.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

/// A named contiguous slice of the flat parameter vector.
struct ParamBlock {
  std::string name;
  std::string layer;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Offsets of every parameter block in canonical order: layer-1 banks and
/// biases (branches x, y, z), layer-2 banks and biases, the six layer-3 banks
/// and biases, three fusion FCLs, the merge FCL and the head.
struct NetworkLayout {
  struct ConvSlot {
    BankShape shape;
    std::size_t weights = 0;
    std::size_t bias = 0;
  };
  struct DenseSlot {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t weights = 0;
    std::size_t bias = 0;
  };

  std::vector<ConvSlot> layer1;  // 3
  std::vector<ConvSlot> layer2;  // 3 (shared) or 6 (per direction)
  std::vector<ConvSlot> layer3;  // 6
  std::vector<DenseSlot> fusion; // 3
  DenseSlot merge;
  DenseSlot head;
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  static NetworkLayout build(const NetworkConfig& config);
};

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> per_layer;
};

ParamCount param_count(const NetworkConfig& config);

/// The full parameter vector theta with its layout. Every mutable access
/// assigns a fresh revision, which lets backward() detect caches produced
/// with different parameter values.
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(const NetworkConfig& config);
  NetworkParams(const NetworkConfig& config, std::vector<double> values);

  const NetworkConfig& config() const { return config_; }
  const NetworkLayout& layout() const { return layout_; }
  std::span<const double> values() const { return values_; }
  std::span<double> mutable_values();
  std::size_t size() const { return values_.size(); }
  std::uint64_t revision() const { return revision_; }

  std::span<const double> slice(std::size_t offset, std::size_t size) const {
    return std::span<const double>(values_).subspan(offset, size);
  }

 private:
  NetworkConfig config_;
  NetworkLayout layout_;
  std::vector<double> values_;
  std::uint64_t revision_ = 0;
};

/// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed);

/// Inverted dropout on the merge-layer input: kept units are scaled by 1/keep_prob.
struct DropoutSpec {
  double keep_prob = 1.0;
  std::mt19937_64* rng = nullptr;
};

/// Everything backward() needs: activations, pooling argmax and dropout mask.
struct ForwardCache {
  std::uint64_t revision = 0;
  bool valid = false;

  Field input;
  std::vector<Field> pre1;            // per branch
  std::vector<PoolResult> p1;
  std::vector<Field> pre2;            // per layer-2 conv
  std::vector<PoolResult> p2;         // six
  std::vector<Field> pre3;            // six
  std::vector<PoolResult> p3;         // six
  std::vector<std::vector<double>> fusion_pre, fusion_out;  // three
  std::vector<double> merge_in, dropout_mask, merge_in_dropped;
  std::vector<double> merge_pre, merge_out;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.5;
};

struct ForwardResult {
  double gamma = 0.5;
  ForwardCache cache;
};

ForwardResult forward(const NetworkParams& params, const sh::ShCube& input,
                      const DropoutSpec* dropout = nullptr);
/// Reuses the buffers of an existing cache; returns gamma.
double forward_into(const NetworkParams& params, const sh::ShCube& input, ForwardCache& cache,
                    const DropoutSpec* dropout = nullptr);
/// Inference only.
double predict(const NetworkParams& params, const sh::ShCube& input);

/// Accumulates the gradient of the two-class cross-entropy
/// -[t log gamma + (1 - t) log(1 - gamma)] into grad (size params.size()).
/// Returns the loss. Throws Error if the cache was produced with a different
/// parameter revision.
double backward(const NetworkParams& params, const ForwardCache& cache, int target, std::span<double> grad);

/// Names of the six pooling paths in layer order, e.g. "x.y" = branch x, then
/// pooled along the first remaining axis.
const std::vector<std::string>& path_names();

}  // namespace psic::dcnn
