#pragma once

// Building blocks of the spatial-spherical network: composite convolution,
// ReLU, single-axis max pooling, fully connected maps and the two-class
// softmax. Every forward operation has a matching backward routine that
// accumulates gradients into caller-provided storage.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "psic/field.hpp"

namespace psic::dcnn {

/// Geometry of a composite filter bank.
///
/// Band n (even, n <= n_max) holds (2n+1)^2 spatial filters w_{n,l}^k, each
/// with kernel^rank taps. Weights are stored band after band; inside a band
/// the layout is [tap][l][k], taps enumerated row-major over the spatial
/// offsets (first axis slowest), l the output order and k the input order.
struct BankShape {
  int n_max = 6;
  int rank = 3;
  int kernel = 3;

  std::size_t taps() const;
  std::size_t band_offset(int band) const;
  std::size_t weight_count() const;
  int channels() const;
};

struct FilterBankView {
  BankShape shape;
  std::span<const double> weights;
};

/// Owning filter bank, used by tests and tools; the network itself keeps its
/// banks inside the flat parameter vector.
class CompositeFilterBank {
 public:
  explicit CompositeFilterBank(BankShape shape);

  /// Center-tap delta on the l == k diagonal, zero elsewhere.
  static CompositeFilterBank identity(BankShape shape);
  /// Center-tap delta scaled by xi_n on the diagonal of band n.
  static CompositeFilterBank zonal(BankShape shape, std::span<const double> legendre_coeffs);

  const BankShape& shape() const { return shape_; }
  double& weight(int n, int l, int k, std::size_t tap);
  double weight(int n, int l, int k, std::size_t tap) const;
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  FilterBankView view() const { return {shape_, weights_}; }

 private:
  std::size_t index(int n, int l, int k, std::size_t tap) const;

  BankShape shape_;
  std::vector<double> weights_;
};

/// Spatial offset of `tap` along `axis`, in [-kernel/2, kernel/2].
int tap_offset(const BankShape& shape, std::size_t tap, int axis);

/// out_{n,l} = sum_k in_{n,k} (*) w_{n,l}^k + b_{n,l}, band by band.
///
/// The spatial operator is the cross-correlation used by deep-learning
/// frameworks, out(x) = sum_t w(t) in(x + t), with zero padding and an output
/// of the same spatial size. Throws ShapeError on rank, channel or bias
/// mismatch.
Field composite_conv(const Field& in, const FilterBankView& bank, std::span<const double> bias);
void composite_conv_into(const Field& in, const FilterBankView& bank, std::span<const double> bias,
                         Field& out);

/// Accumulates d(loss)/d(weights) and d(loss)/d(bias); if grad_in is given
/// (same shape as in) the input gradient is accumulated into it as well.
void composite_conv_backward(const Field& in, const FilterBankView& bank, const Field& grad_out,
                             std::span<double> grad_weights, std::span<double> grad_bias,
                             Field* grad_in);

Field relu(const Field& in);
std::vector<double> relu(std::span<const double> in);
/// Zeroes grad entries whose pre-activation is not positive.
void relu_backward(std::span<const double> pre_activation, std::span<double> grad);

/// Max pooling along one spatial axis. argmax[i] is the flat input index
/// (site * channels + channel) that produced output element i; ties resolve
/// to the lowest coordinate along the pooled axis.
struct PoolResult {
  Field out;
  std::vector<std::uint32_t> argmax;
};

PoolResult max_pool(const Field& in, int axis);
/// Rank-checked wrappers: pool3 collapses one axis of a 3-D field, pool2 one
/// axis of a 2-D field, pool1 the only axis of a 1-D field.
PoolResult pool3(const Field& in, int axis);
PoolResult pool2(const Field& in, int axis);
PoolResult pool1(const Field& in);

/// grad_in[argmax[i]] += grad_out[i].
void max_pool_backward(std::span<const double> grad_out, std::span<const std::uint32_t> argmax,
                       std::span<double> grad_in);

/// Fully connected map W v + b, W row-major with rows = b.size().
std::vector<double> fcl(std::span<const double> v, std::span<const double> w, std::span<const double> b);
void fcl_into(std::span<const double> v, std::span<const double> w, std::span<const double> b,
              std::span<double> out);
/// Accumulates grad_w += grad_out v^T, grad_b += grad_out and, if grad_v is
/// nonempty, grad_v += W^T grad_out.
void fcl_backward(std::span<const double> v, std::span<const double> w, std::span<const double> grad_out,
                  std::span<double> grad_w, std::span<double> grad_b, std::span<double> grad_v);

/// e^alpha / (e^alpha + e^beta), evaluated with a max shift.
double softmax2(double alpha, double beta);

}  // namespace psic::dcnn
