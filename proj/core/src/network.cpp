#include "psic/network.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "psic/error.hpp"

namespace psic::dcnn {
namespace {

std::atomic<std::uint64_t> g_next_revision{1};

std::uint64_t next_revision() { return g_next_revision.fetch_add(1, std::memory_order_relaxed); }

constexpr const char* kAxisNames[3] = {"x", "y", "z"};

// Axes left after pooling branch `a`, in ascending order.
std::pair<int, int> remaining_axes(int a) {
  switch (a) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    default: return {0, 1};
  }
}

double clipped_log(double v) { return std::log(std::clamp(v, 1e-12, 1.0 - 1e-12)); }

}  // namespace

const char* to_string(Layer2Wiring wiring) {
  return wiring == Layer2Wiring::SharedConv ? "shared-conv" : "per-direction-conv";
}

Layer2Wiring layer2_wiring_from_string(const std::string& name) {
  if (name == "shared-conv") return Layer2Wiring::SharedConv;
  if (name == "per-direction-conv") return Layer2Wiring::PerDirectionConv;
  throw DomainError("unknown layer-2 wiring '" + name + "'");
}

void NetworkConfig::validate() const {
  if (radius < 0) throw DomainError("network radius must be nonnegative");
  if (n_max < 0 || n_max % 2 != 0) throw DomainError("network n_max must be even and nonnegative");
  if (kernel < 1 || kernel % 2 == 0) throw DomainError("filter size must be odd and positive");
  if (fusion_width < 0 || merge_width < 0) throw DomainError("FCL widths must be nonnegative");
}

const std::vector<std::string>& path_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (int a = 0; a < 3; ++a) {
      const auto [first, second] = remaining_axes(a);
      n.push_back(std::string(kAxisNames[a]) + "." + kAxisNames[first]);
      n.push_back(std::string(kAxisNames[a]) + "." + kAxisNames[second]);
    }
    return n;
  }();
  return names;
}

NetworkLayout NetworkLayout::build(const NetworkConfig& config) {
  config.validate();
  NetworkLayout layout;
  const std::size_t p = static_cast<std::size_t>(config.channels());
  std::size_t cursor = 0;
  auto add_block = [&](const std::string& name, const std::string& layer, std::size_t size) {
    layout.blocks.push_back({name, layer, cursor, size});
    const std::size_t at = cursor;
    cursor += size;
    return at;
  };
  auto add_conv = [&](const std::string& name, const std::string& layer, int rank) {
    ConvSlot slot;
    slot.shape = BankShape{config.n_max, rank, config.kernel};
    slot.weights = add_block(name + ".weights", layer, slot.shape.weight_count());
    slot.bias = add_block(name + ".bias", layer, p);
    return slot;
  };
  auto add_dense = [&](const std::string& name, const std::string& layer, std::size_t rows,
                       std::size_t cols) {
    DenseSlot slot{rows, cols, 0, 0};
    slot.weights = add_block(name + ".weights", layer, rows * cols);
    slot.bias = add_block(name + ".bias", layer, rows);
    return slot;
  };

  for (int a = 0; a < 3; ++a) layout.layer1.push_back(add_conv(std::string("conv1.") + kAxisNames[a], "layer1", 3));
  if (config.wiring == Layer2Wiring::SharedConv) {
    for (int a = 0; a < 3; ++a) layout.layer2.push_back(add_conv(std::string("conv2.") + kAxisNames[a], "layer2", 2));
  } else {
    for (const auto& path : path_names()) layout.layer2.push_back(add_conv("conv2." + path, "layer2", 2));
  }
  for (const auto& path : path_names()) layout.layer3.push_back(add_conv("conv3." + path, "layer3", 1));

  const std::size_t f = static_cast<std::size_t>(config.fusion_out());
  const std::size_t g = static_cast<std::size_t>(config.merge_out());
  for (int a = 0; a < 3; ++a) {
    layout.fusion.push_back(add_dense(std::string("fusion.") + kAxisNames[a], "fusion", f, 2 * p));
  }
  layout.merge = add_dense("merge", "merge", g, 3 * f);
  layout.head = add_dense("head", "head", 2, g);
  layout.total = cursor;
  return layout;
}

ParamCount param_count(const NetworkConfig& config) {
  const NetworkLayout layout = NetworkLayout::build(config);
  ParamCount count;
  count.total = layout.total;
  for (const ParamBlock& b : layout.blocks) {
    if (count.per_layer.empty() || count.per_layer.back().first != b.layer) {
      count.per_layer.emplace_back(b.layer, 0);
    }
    count.per_layer.back().second += b.size;
  }
  return count;
}

NetworkParams::NetworkParams(const NetworkConfig& config)
    : config_(config), layout_(NetworkLayout::build(config)), values_(layout_.total, 0.0),
      revision_(next_revision()) {}

NetworkParams::NetworkParams(const NetworkConfig& config, std::vector<double> values)
    : config_(config), layout_(NetworkLayout::build(config)), values_(std::move(values)),
      revision_(next_revision()) {
  if (values_.size() != layout_.total) throw ShapeError("parameter vector length does not match config");
}

std::span<double> NetworkParams::mutable_values() {
  revision_ = next_revision();
  return values_;
}

NetworkParams init_params(const NetworkConfig& config, std::uint64_t seed) {
  NetworkParams params(config);
  const NetworkLayout& layout = params.layout();
  std::span<double> theta = params.mutable_values();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto init_conv = [&](const NetworkLayout::ConvSlot& slot) {
    const std::size_t taps = slot.shape.taps();
    for (int band = 0; band < sh::num_bands(slot.shape.n_max); ++band) {
      const std::size_t d = 4 * band + 1;
      const double sd = std::sqrt(2.0 / static_cast<double>(d * taps));
      const std::size_t begin = slot.weights + slot.shape.band_offset(band);
      for (std::size_t i = 0; i < d * d * taps; ++i) theta[begin + i] = sd * normal(rng);
    }
  };
  auto init_dense = [&](const NetworkLayout::DenseSlot& slot) {
    const double sd = std::sqrt(2.0 / static_cast<double>(slot.cols));
    for (std::size_t i = 0; i < slot.rows * slot.cols; ++i) theta[slot.weights + i] = sd * normal(rng);
  };
  for (const auto& s : layout.layer1) init_conv(s);
  for (const auto& s : layout.layer2) init_conv(s);
  for (const auto& s : layout.layer3) init_conv(s);
  for (const auto& s : layout.fusion) init_dense(s);
  init_dense(layout.merge);
  init_dense(layout.head);
  return params;
}

double forward_into(const NetworkParams& params, const sh::ShCube& input, ForwardCache& cache,
                    const DropoutSpec* dropout) {
  const NetworkConfig& cfg = params.config();
  const NetworkLayout& layout = params.layout();
  if (input.radius != cfg.radius || input.n_max != cfg.n_max || input.data.size() != input.sites() * input.channels()) {
    throw ShapeError("input cube does not match the network configuration");
  }
  const int m = cfg.extent();
  const int p = cfg.channels();
  auto conv_view = [&](const NetworkLayout::ConvSlot& s) {
    return FilterBankView{s.shape, params.slice(s.weights, s.shape.weight_count())};
  };
  auto bias_of = [&](const NetworkLayout::ConvSlot& s) { return params.slice(s.bias, static_cast<std::size_t>(p)); };

  if (!cache.input.same_shape(Field(3, m, p))) cache.input = Field(3, m, p);
  std::copy(input.data.begin(), input.data.end(), cache.input.values.begin());

  cache.pre1.resize(3);
  cache.p1.resize(3);
  cache.pre2.resize(layout.layer2.size());
  cache.p2.resize(6);
  cache.pre3.resize(6);
  cache.p3.resize(6);
  Field activated;

  for (int a = 0; a < 3; ++a) {
    composite_conv_into(cache.input, conv_view(layout.layer1[a]), bias_of(layout.layer1[a]), cache.pre1[a]);
    cache.p1[a] = pool3(relu(cache.pre1[a]), a);
  }

  for (int a = 0; a < 3; ++a) {
    if (cfg.wiring == Layer2Wiring::SharedConv) {
      composite_conv_into(cache.p1[a].out, conv_view(layout.layer2[a]), bias_of(layout.layer2[a]), cache.pre2[a]);
      activated = relu(cache.pre2[a]);
      cache.p2[2 * a] = pool2(activated, 0);
      cache.p2[2 * a + 1] = pool2(activated, 1);
    } else {
      for (int d = 0; d < 2; ++d) {
        const int slot = 2 * a + d;
        composite_conv_into(cache.p1[a].out, conv_view(layout.layer2[slot]), bias_of(layout.layer2[slot]),
                            cache.pre2[slot]);
        cache.p2[slot] = pool2(relu(cache.pre2[slot]), d);
      }
    }
  }

  for (int i = 0; i < 6; ++i) {
    composite_conv_into(cache.p2[i].out, conv_view(layout.layer3[i]), bias_of(layout.layer3[i]), cache.pre3[i]);
    cache.p3[i] = pool1(relu(cache.pre3[i]));
  }

  const std::size_t f = static_cast<std::size_t>(cfg.fusion_out());
  cache.fusion_pre.resize(3);
  cache.fusion_out.resize(3);
  std::vector<double> pair(2 * static_cast<std::size_t>(p));
  cache.merge_in.assign(3 * f, 0.0);
  for (int a = 0; a < 3; ++a) {
    std::copy(cache.p3[2 * a].out.values.begin(), cache.p3[2 * a].out.values.end(), pair.begin());
    std::copy(cache.p3[2 * a + 1].out.values.begin(), cache.p3[2 * a + 1].out.values.end(), pair.begin() + p);
    const auto& slot = layout.fusion[a];
    cache.fusion_pre[a].resize(f);
    fcl_into(pair, params.slice(slot.weights, slot.rows * slot.cols), params.slice(slot.bias, slot.rows),
             cache.fusion_pre[a]);
    cache.fusion_out[a] = relu(cache.fusion_pre[a]);
    std::copy(cache.fusion_out[a].begin(), cache.fusion_out[a].end(), cache.merge_in.begin() + a * f);
  }

  cache.dropout_mask.assign(cache.merge_in.size(), 1.0);
  if (dropout != nullptr && dropout->keep_prob < 1.0) {
    if (!(dropout->keep_prob > 0.0) || dropout->rng == nullptr) throw DomainError("invalid dropout settings");
    const double scale = 1.0 / dropout->keep_prob;
    for (double& mask : cache.dropout_mask) {
      const double u = static_cast<double>((*dropout->rng)() >> 11) * 0x1.0p-53;
      mask = u < dropout->keep_prob ? scale : 0.0;
    }
  }
  cache.merge_in_dropped.resize(cache.merge_in.size());
  for (std::size_t i = 0; i < cache.merge_in.size(); ++i) {
    cache.merge_in_dropped[i] = cache.merge_in[i] * cache.dropout_mask[i];
  }

  const auto& ms = layout.merge;
  cache.merge_pre.resize(ms.rows);
  fcl_into(cache.merge_in_dropped, params.slice(ms.weights, ms.rows * ms.cols), params.slice(ms.bias, ms.rows),
           cache.merge_pre);
  cache.merge_out = relu(cache.merge_pre);

  const auto& hs = layout.head;
  double logits[2];
  fcl_into(cache.merge_out, params.slice(hs.weights, hs.rows * hs.cols), params.slice(hs.bias, hs.rows), logits);
  cache.alpha = logits[0];
  cache.beta = logits[1];
  cache.gamma = softmax2(cache.alpha, cache.beta);
  cache.revision = params.revision();
  cache.valid = true;
  return cache.gamma;
}

ForwardResult forward(const NetworkParams& params, const sh::ShCube& input, const DropoutSpec* dropout) {
  ForwardResult r;
  r.gamma = forward_into(params, input, r.cache, dropout);
  return r;
}

double predict(const NetworkParams& params, const sh::ShCube& input) {
  ForwardCache cache;
  return forward_into(params, input, cache, nullptr);
}

double backward(const NetworkParams& params, const ForwardCache& cache, int target, std::span<double> grad) {
  if (!cache.valid || cache.revision != params.revision()) {
    throw Error("forward cache is stale: parameters changed since the forward pass");
  }
  if (target != 0 && target != 1) throw DomainError("target label must be 0 or 1");
  if (grad.size() != params.size()) throw ShapeError("gradient buffer size mismatch");

  const NetworkConfig& cfg = params.config();
  const NetworkLayout& layout = params.layout();
  const int m = cfg.extent();
  const int p = cfg.channels();
  const std::size_t f = static_cast<std::size_t>(cfg.fusion_out());
  auto conv_view = [&](const NetworkLayout::ConvSlot& s) {
    return FilterBankView{s.shape, params.slice(s.weights, s.shape.weight_count())};
  };
  auto grad_slice = [&](std::size_t offset, std::size_t size) { return grad.subspan(offset, size); };

  const double gamma = cache.gamma;
  const double loss = -(target * clipped_log(gamma) + (1 - target) * clipped_log(1.0 - gamma));
  const double d_logits[2] = {gamma - target, target - gamma};

  // Head.
  const auto& hs = layout.head;
  std::vector<double> d_merge(layout.merge.rows, 0.0);
  fcl_backward(cache.merge_out, params.slice(hs.weights, hs.rows * hs.cols), d_logits,
               grad_slice(hs.weights, hs.rows * hs.cols), grad_slice(hs.bias, hs.rows), d_merge);
  relu_backward(cache.merge_pre, d_merge);

  // Merge and dropout.
  const auto& ms = layout.merge;
  std::vector<double> d_merge_in(ms.cols, 0.0);
  fcl_backward(cache.merge_in_dropped, params.slice(ms.weights, ms.rows * ms.cols), d_merge,
               grad_slice(ms.weights, ms.rows * ms.cols), grad_slice(ms.bias, ms.rows), d_merge_in);
  for (std::size_t i = 0; i < d_merge_in.size(); ++i) d_merge_in[i] *= cache.dropout_mask[i];

  // Fusion -> gradients of the six pooled layer-3 vectors.
  std::vector<std::vector<double>> d_vec(6, std::vector<double>(p, 0.0));
  std::vector<double> pair(2 * static_cast<std::size_t>(p));
  std::vector<double> d_pair(2 * static_cast<std::size_t>(p));
  for (int a = 0; a < 3; ++a) {
    std::vector<double> d_fusion(d_merge_in.begin() + a * f, d_merge_in.begin() + (a + 1) * f);
    relu_backward(cache.fusion_pre[a], d_fusion);
    std::copy(cache.p3[2 * a].out.values.begin(), cache.p3[2 * a].out.values.end(), pair.begin());
    std::copy(cache.p3[2 * a + 1].out.values.begin(), cache.p3[2 * a + 1].out.values.end(), pair.begin() + p);
    std::fill(d_pair.begin(), d_pair.end(), 0.0);
    const auto& slot = layout.fusion[a];
    fcl_backward(pair, params.slice(slot.weights, slot.rows * slot.cols), d_fusion,
                 grad_slice(slot.weights, slot.rows * slot.cols), grad_slice(slot.bias, slot.rows), d_pair);
    std::copy(d_pair.begin(), d_pair.begin() + p, d_vec[2 * a].begin());
    std::copy(d_pair.begin() + p, d_pair.end(), d_vec[2 * a + 1].begin());
  }

  // Layer 3 -> gradients of the six layer-2 pooled outputs.
  std::vector<Field> d_p2(6, Field(1, m, p));
  for (int i = 0; i < 6; ++i) {
    Field d_pre3(1, m, p);
    max_pool_backward(d_vec[i], cache.p3[i].argmax, d_pre3.values);
    relu_backward(cache.pre3[i].values, d_pre3.values);
    const auto& slot = layout.layer3[i];
    composite_conv_backward(cache.p2[i].out, conv_view(slot), d_pre3,
                            grad_slice(slot.weights, slot.shape.weight_count()), grad_slice(slot.bias, p), &d_p2[i]);
  }

  // Layer 2 -> gradients of the three layer-1 pooled outputs.
  std::vector<Field> d_p1(3, Field(2, m, p));
  for (int a = 0; a < 3; ++a) {
    if (cfg.wiring == Layer2Wiring::SharedConv) {
      Field d_pre2(2, m, p);
      max_pool_backward(d_p2[2 * a].values, cache.p2[2 * a].argmax, d_pre2.values);
      max_pool_backward(d_p2[2 * a + 1].values, cache.p2[2 * a + 1].argmax, d_pre2.values);
      relu_backward(cache.pre2[a].values, d_pre2.values);
      const auto& slot = layout.layer2[a];
      composite_conv_backward(cache.p1[a].out, conv_view(slot), d_pre2,
                              grad_slice(slot.weights, slot.shape.weight_count()), grad_slice(slot.bias, p),
                              &d_p1[a]);
    } else {
      for (int d = 0; d < 2; ++d) {
        const int s = 2 * a + d;
        Field d_pre2(2, m, p);
        max_pool_backward(d_p2[s].values, cache.p2[s].argmax, d_pre2.values);
        relu_backward(cache.pre2[s].values, d_pre2.values);
        const auto& slot = layout.layer2[s];
        composite_conv_backward(cache.p1[a].out, conv_view(slot), d_pre2,
                                grad_slice(slot.weights, slot.shape.weight_count()), grad_slice(slot.bias, p),
                                &d_p1[a]);
      }
    }
  }

  // Layer 1; the input gradient is not needed.
  for (int a = 0; a < 3; ++a) {
    Field d_pre1(3, m, p);
    max_pool_backward(d_p1[a].values, cache.p1[a].argmax, d_pre1.values);
    relu_backward(cache.pre1[a].values, d_pre1.values);
    const auto& slot = layout.layer1[a];
    composite_conv_backward(cache.input, conv_view(slot), d_pre1, grad_slice(slot.weights, slot.shape.weight_count()),
                            grad_slice(slot.bias, p), nullptr);
  }
  return loss;
}

}  // namespace psic::dcnn
