#include "psic/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <tuple>

#include "psic/error.hpp"
#include "psic/sh_core.hpp"

namespace psic::dcnn {
namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

struct PlanEntry {
  std::uint32_t out_site;
  std::uint32_t in_site;
  std::uint32_t tap;
};

// All (output site, input site, tap) triples with the input inside the grid.
std::vector<PlanEntry> build_plan(int rank, int extent, int kernel) {
  const std::size_t sites = ipow(static_cast<std::size_t>(extent), rank);
  const std::size_t taps = ipow(static_cast<std::size_t>(kernel), rank);
  const int half = kernel / 2;
  std::vector<PlanEntry> plan;
  std::array<int, 3> pos{};
  std::array<int, 3> off{};
  for (std::size_t s = 0; s < sites; ++s) {
    std::size_t rem = s;
    for (int a = rank - 1; a >= 0; --a) {
      pos[a] = static_cast<int>(rem % extent);
      rem /= extent;
    }
    for (std::size_t t = 0; t < taps; ++t) {
      std::size_t trem = t;
      for (int a = rank - 1; a >= 0; --a) {
        off[a] = static_cast<int>(trem % kernel) - half;
        trem /= kernel;
      }
      std::size_t in_site = 0;
      bool inside = true;
      for (int a = 0; a < rank; ++a) {
        const int q = pos[a] + off[a];
        if (q < 0 || q >= extent) {
          inside = false;
          break;
        }
        in_site = in_site * extent + q;
      }
      if (inside) {
        plan.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(in_site),
                        static_cast<std::uint32_t>(t)});
      }
    }
  }
  return plan;
}

const std::vector<PlanEntry>& conv_plan(int rank, int extent, int kernel) {
  thread_local std::map<std::tuple<int, int, int>, std::vector<PlanEntry>> cache;
  const auto key = std::make_tuple(rank, extent, kernel);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_plan(rank, extent, kernel)).first;
  return it->second;
}

// One band of the forward pass. D > 0 fixes the band width at compile time;
// D == 0 handles any width.
template <int D>
void conv_band(const std::vector<PlanEntry>& plan, const double* wt, const double* x_base, double* y_base, int p,
               int off, int d_runtime) {
  const int d = D > 0 ? D : d_runtime;
  const std::size_t dd = static_cast<std::size_t>(d) * d;
  std::array<double, 64> fixed{};
  std::vector<double> dynamic;
  double* a = fixed.data();
  if (d > 64) {
    dynamic.resize(static_cast<std::size_t>(d));
    a = dynamic.data();
  }
  std::size_t i = 0;
  while (i < plan.size()) {
    const std::uint32_t site = plan[i].out_site;
    double* y = y_base + static_cast<std::size_t>(site) * p + off;
    for (int l = 0; l < d; ++l) a[l] = y[l];
    for (; i < plan.size() && plan[i].out_site == site; ++i) {
      const double* w = wt + plan[i].tap * dd;
      const double* x = x_base + static_cast<std::size_t>(plan[i].in_site) * p + off;
      for (int k = 0; k < d; ++k) {
        const double xk = x[k];
        const double* wk = w + k * d;
        for (int l = 0; l < d; ++l) a[l] += wk[l] * xk;
      }
    }
    for (int l = 0; l < d; ++l) y[l] = a[l];
  }
}

template <int D>
void conv_band_backward(const std::vector<PlanEntry>& plan, const double* w_band, const double* x_base,
                        const double* g_base, double* gw_band, double* gi_base, int p, int off, int d_runtime) {
  const int d = D > 0 ? D : d_runtime;
  const std::size_t dd = static_cast<std::size_t>(d) * d;
  for (const PlanEntry& e : plan) {
    const std::size_t tap_off = static_cast<std::size_t>(e.tap) * dd;
    const double* g = g_base + static_cast<std::size_t>(e.out_site) * p + off;
    const double* x = x_base + static_cast<std::size_t>(e.in_site) * p + off;
    double* gw = gw_band + tap_off;
    const double* w = w_band + tap_off;
    double* gi = gi_base != nullptr ? gi_base + static_cast<std::size_t>(e.in_site) * p + off : nullptr;
    for (int l = 0; l < d; ++l) {
      const double gl = g[l];
      if (gl == 0.0) continue;
      double* gwl = gw + l * d;
      for (int k = 0; k < d; ++k) gwl[k] += gl * x[k];
      if (gi != nullptr) {
        const double* wl = w + l * d;
        for (int k = 0; k < d; ++k) gi[k] += wl[k] * gl;
      }
    }
  }
}

void check_conv_args(const Field& in, const FilterBankView& bank, std::span<const double> bias) {
  const BankShape& s = bank.shape;
  if (s.kernel < 1 || s.kernel % 2 == 0) throw ShapeError("filter size must be odd");
  if (in.rank != s.rank) throw ShapeError("field rank does not match filter bank rank");
  if (in.channels != s.channels()) throw ShapeError("field channels do not match filter bank bands");
  if (bank.weights.size() != s.weight_count()) throw ShapeError("filter bank weight count mismatch");
  if (bias.size() != static_cast<std::size_t>(s.channels())) throw ShapeError("bias length mismatch");
}

}  // namespace

std::size_t BankShape::taps() const { return ipow(static_cast<std::size_t>(kernel), rank); }

std::size_t BankShape::band_offset(int band) const {
  std::size_t offset = 0;
  for (int b = 0; b < band; ++b) {
    const std::size_t d = 4 * b + 1;
    offset += d * d * taps();
  }
  return offset;
}

std::size_t BankShape::weight_count() const { return band_offset(sh::num_bands(n_max)); }

int BankShape::channels() const { return sh::num_coeffs(n_max); }

CompositeFilterBank::CompositeFilterBank(BankShape shape) : shape_(shape) {
  if (shape_.kernel < 1 || shape_.kernel % 2 == 0) throw ShapeError("filter size must be odd");
  if (shape_.rank < 1 || shape_.rank > 3) throw ShapeError("filter rank must be 1, 2 or 3");
  weights_.assign(shape_.weight_count(), 0.0);
}

std::size_t CompositeFilterBank::index(int n, int l, int k, std::size_t tap) const {
  const std::size_t d = 2 * n + 1;
  return shape_.band_offset(n / 2) + (tap * d + static_cast<std::size_t>(l + n)) * d +
         static_cast<std::size_t>(k + n);
}

double& CompositeFilterBank::weight(int n, int l, int k, std::size_t tap) { return weights_[index(n, l, k, tap)]; }

double CompositeFilterBank::weight(int n, int l, int k, std::size_t tap) const {
  return weights_[index(n, l, k, tap)];
}

CompositeFilterBank CompositeFilterBank::identity(BankShape shape) {
  std::vector<double> ones(static_cast<std::size_t>(sh::num_bands(shape.n_max)), 1.0);
  return zonal(shape, ones);
}

CompositeFilterBank CompositeFilterBank::zonal(BankShape shape, std::span<const double> legendre_coeffs) {
  if (legendre_coeffs.size() != static_cast<std::size_t>(sh::num_bands(shape.n_max))) {
    throw ShapeError("one Legendre coefficient per even band is required");
  }
  CompositeFilterBank bank(shape);
  const std::size_t center = bank.shape().taps() / 2;
  for (int n = 0; n <= shape.n_max; n += 2) {
    for (int l = -n; l <= n; ++l) bank.weight(n, l, l, center) = legendre_coeffs[n / 2];
  }
  return bank;
}

int tap_offset(const BankShape& shape, std::size_t tap, int axis) {
  std::size_t rem = tap;
  for (int a = shape.rank - 1; a > axis; --a) rem /= shape.kernel;
  return static_cast<int>(rem % shape.kernel) - shape.kernel / 2;
}

Field composite_conv(const Field& in, const FilterBankView& bank, std::span<const double> bias) {
  Field out;
  composite_conv_into(in, bank, bias, out);
  return out;
}

void composite_conv_into(const Field& in, const FilterBankView& bank, std::span<const double> bias,
                         Field& out) {
  check_conv_args(in, bank, bias);
  const int p = in.channels;
  if (!out.same_shape(in)) out = Field(in.rank, in.extent, p);
  const std::size_t sites = in.sites();
  for (std::size_t s = 0; s < sites; ++s) std::copy(bias.begin(), bias.end(), out.values.begin() + s * p);

  const auto& plan = conv_plan(in.rank, in.extent, bank.shape.kernel);
  const double* x_base = in.values.data();
  double* y_base = out.values.data();
  // Weights transposed to [tap][k][l] so the innermost loop runs over
  // independent outputs and vectorizes.
  thread_local std::vector<double> wt;
  for (int band = 0; band < sh::num_bands(bank.shape.n_max); ++band) {
    const int n = 2 * band;
    const int d = 2 * n + 1;
    const std::size_t dd = static_cast<std::size_t>(d) * d;
    const int off = sh::coeff_index(n, -n);
    const double* w_band = bank.weights.data() + bank.shape.band_offset(band);
    const std::size_t taps = bank.shape.taps();
    wt.resize(taps * dd);
    for (std::size_t t = 0; t < taps; ++t) {
      for (int l = 0; l < d; ++l) {
        for (int k = 0; k < d; ++k) wt[t * dd + k * d + l] = w_band[t * dd + l * d + k];
      }
    }
    switch (d) {
      case 1: conv_band<1>(plan, wt.data(), x_base, y_base, p, off, d); break;
      case 5: conv_band<5>(plan, wt.data(), x_base, y_base, p, off, d); break;
      case 9: conv_band<9>(plan, wt.data(), x_base, y_base, p, off, d); break;
      case 13: conv_band<13>(plan, wt.data(), x_base, y_base, p, off, d); break;
      default: conv_band<0>(plan, wt.data(), x_base, y_base, p, off, d); break;
    }
  }
}

void composite_conv_backward(const Field& in, const FilterBankView& bank, const Field& grad_out,
                             std::span<double> grad_weights, std::span<double> grad_bias,
                             Field* grad_in) {
  check_conv_args(in, bank, grad_bias);
  if (!grad_out.same_shape(in)) throw ShapeError("output gradient shape mismatch");
  if (grad_weights.size() != bank.weights.size()) throw ShapeError("weight gradient size mismatch");
  if (grad_in != nullptr && !grad_in->same_shape(in)) throw ShapeError("input gradient shape mismatch");
  const int p = in.channels;
  const std::size_t sites = in.sites();
  for (std::size_t s = 0; s < sites; ++s) {
    for (int j = 0; j < p; ++j) grad_bias[j] += grad_out.values[s * p + j];
  }

  const auto& plan = conv_plan(in.rank, in.extent, bank.shape.kernel);
  double* gi_base = grad_in != nullptr ? grad_in->values.data() : nullptr;
  for (int band = 0; band < sh::num_bands(bank.shape.n_max); ++band) {
    const int n = 2 * band;
    const int d = 2 * n + 1;
    const int off = sh::coeff_index(n, -n);
    const std::size_t band_off = bank.shape.band_offset(band);
    const double* w = bank.weights.data() + band_off;
    double* gw = grad_weights.data() + band_off;
    const double* x = in.values.data();
    const double* g = grad_out.values.data();
    switch (d) {
      case 1: conv_band_backward<1>(plan, w, x, g, gw, gi_base, p, off, d); break;
      case 5: conv_band_backward<5>(plan, w, x, g, gw, gi_base, p, off, d); break;
      case 9: conv_band_backward<9>(plan, w, x, g, gw, gi_base, p, off, d); break;
      case 13: conv_band_backward<13>(plan, w, x, g, gw, gi_base, p, off, d); break;
      default: conv_band_backward<0>(plan, w, x, g, gw, gi_base, p, off, d); break;
    }
  }
}

Field relu(const Field& in) {
  Field out = in;
  for (double& v : out.values) v = std::max(0.0, v);
  return out;
}

std::vector<double> relu(std::span<const double> in) {
  std::vector<double> out(in.begin(), in.end());
  for (double& v : out) v = std::max(0.0, v);
  return out;
}

void relu_backward(std::span<const double> pre_activation, std::span<double> grad) {
  if (pre_activation.size() != grad.size()) throw ShapeError("ReLU gradient size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre_activation[i] > 0.0)) grad[i] = 0.0;
  }
}

PoolResult max_pool(const Field& in, int axis) {
  if (in.rank < 1) throw ShapeError("cannot pool a field without spatial axes");
  if (axis < 0 || axis >= in.rank) throw ShapeError("pooling axis out of range");
  const int m = in.extent;
  const int p = in.channels;
  PoolResult r{Field(in.rank - 1, m, p), {}};
  r.argmax.resize(r.out.size());

  // Input site = outer * (m * inner) + i * inner + inner_index.
  std::size_t inner = 1;
  for (int a = axis + 1; a < in.rank; ++a) inner *= m;
  const std::size_t outer = r.out.sites() / inner;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t q = 0; q < inner; ++q) {
      const std::size_t out_site = o * inner + q;
      for (int j = 0; j < p; ++j) {
        std::size_t best = (o * m * inner + q) * p + j;
        double best_value = in.values[best];
        for (int i = 1; i < m; ++i) {
          const std::size_t idx = ((o * m + i) * inner + q) * p + j;
          if (in.values[idx] > best_value) {
            best_value = in.values[idx];
            best = idx;
          }
        }
        r.out.values[out_site * p + j] = best_value;
        r.argmax[out_site * p + j] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

PoolResult pool3(const Field& in, int axis) {
  if (in.rank != 3) throw ShapeError("pool3 expects a 3-D field");
  return max_pool(in, axis);
}

PoolResult pool2(const Field& in, int axis) {
  if (in.rank != 2) throw ShapeError("pool2 expects a 2-D field");
  return max_pool(in, axis);
}

PoolResult pool1(const Field& in) {
  if (in.rank != 1) throw ShapeError("pool1 expects a 1-D field");
  return max_pool(in, 0);
}

void max_pool_backward(std::span<const double> grad_out, std::span<const std::uint32_t> argmax,
                       std::span<double> grad_in) {
  if (grad_out.size() != argmax.size()) throw ShapeError("pooling gradient size mismatch");
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[argmax[i]] += grad_out[i];
}

std::vector<double> fcl(std::span<const double> v, std::span<const double> w, std::span<const double> b) {
  std::vector<double> out(b.size());
  fcl_into(v, w, b, out);
  return out;
}

void fcl_into(std::span<const double> v, std::span<const double> w, std::span<const double> b,
              std::span<double> out) {
  if (w.size() != v.size() * b.size() || out.size() != b.size()) {
    throw ShapeError("fully connected layer shape mismatch");
  }
  const std::size_t cols = v.size();
  for (std::size_t r = 0; r < b.size(); ++r) {
    const double* wr = w.data() + r * cols;
    double acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * v[c];
    out[r] = acc;
  }
}

void fcl_backward(std::span<const double> v, std::span<const double> w, std::span<const double> grad_out,
                  std::span<double> grad_w, std::span<double> grad_b, std::span<double> grad_v) {
  const std::size_t rows = grad_out.size();
  const std::size_t cols = v.size();
  if (w.size() != rows * cols || grad_w.size() != w.size() || grad_b.size() != rows ||
      (!grad_v.empty() && grad_v.size() != cols)) {
    throw ShapeError("fully connected gradient shape mismatch");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = grad_out[r];
    grad_b[r] += g;
    if (g == 0.0) continue;
    double* gw = grad_w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gw[c] += g * v[c];
    if (!grad_v.empty()) {
      const double* wr = w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) grad_v[c] += wr[c] * g;
    }
  }
}

double softmax2(double alpha, double beta) {
  const double top = std::max(alpha, beta);
  const double ea = std::exp(alpha - top);
  const double eb = std::exp(beta - top);
  return ea / (ea + eb);
}

}  // namespace psic::dcnn
