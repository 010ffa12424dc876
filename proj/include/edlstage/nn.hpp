#pragma once

// Convolution + MLP evidence backbone with hand-written gradients.
//
// Input: one-channel W x F image (time rows, feature columns).
//   conv1 -> ReLU -> maxpool1 -> conv2 -> ReLU -> maxpool2 -> flatten
//   -> dense1 -> ReLU -> dense2 -> ReLU -> dense3 -> ReLU -> output (identity)
//
// Parameters live in one flat vector. Block order (each weight block is
// followed by its bias): conv1, conv2, dense1, dense2, dense3, output.
// Conv weights are indexed [out][in][kh][kw], dense weights [out][in].

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "edlstage/dirichlet.hpp"
#include "edlstage/error.hpp"
#include "edlstage/random.hpp"

namespace edlstage::nn {

struct ConvSpec {
  std::size_t out_channels = 8;
  std::size_t kernel_h = 2;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct PoolSpec {
  std::size_t window_h = 1;
  std::size_t window_w = 2;

  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

inline constexpr std::size_t kHiddenDense = 3;

struct BackboneConfig {
  std::size_t input_rows = 4;
  std::size_t input_cols = 32;
  ConvSpec conv1{8, 2, 3, 1, 1};
  PoolSpec pool1{1, 2};
  ConvSpec conv2{16, 2, 2, 1, 1};
  PoolSpec pool2{1, 2};
  std::array<std::size_t, kHiddenDense> dense{64, 32, 16};
  std::size_t output_dim = kNumStages;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct Shape3 {
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return channels * rows * cols; }
  std::size_t index(std::size_t c, std::size_t r, std::size_t k) const noexcept {
    return (c * rows + r) * cols + k;
  }

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct ModelLayout {
  Shape3 input, conv1_out, pool1_out, conv2_out, pool2_out;
  std::array<std::size_t, kHiddenDense + 2> widths{};  // flat, dense..., output
  std::size_t conv1_w = 0, conv1_b = 0, conv2_w = 0, conv2_b = 0;
  std::array<std::size_t, kHiddenDense + 1> dense_w{}, dense_b{};
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;
};

namespace detail {

inline Shape3 conv_shape(const Shape3& in, const ConvSpec& s, const char* layer) {
  if (s.out_channels == 0 || s.kernel_h == 0 || s.kernel_w == 0 || s.stride_h == 0 || s.stride_w == 0) {
    throw ConfigError(std::string(layer) + ": channels, kernel and stride must be positive");
  }
  if (s.kernel_h > in.rows || s.kernel_w > in.cols) {
    throw ConfigError(std::string(layer) + ": kernel " + std::to_string(s.kernel_h) + "x" +
                      std::to_string(s.kernel_w) + " larger than input " + std::to_string(in.rows) +
                      "x" + std::to_string(in.cols));
  }
  return {s.out_channels, (in.rows - s.kernel_h) / s.stride_h + 1, (in.cols - s.kernel_w) / s.stride_w + 1};
}

inline Shape3 pool_shape(const Shape3& in, const PoolSpec& s, const char* layer) {
  if (s.window_h == 0 || s.window_w == 0) throw ConfigError(std::string(layer) + ": pool window must be positive");
  if (s.window_h > in.rows || s.window_w > in.cols) {
    throw ConfigError(std::string(layer) + ": pool window " + std::to_string(s.window_h) + "x" +
                      std::to_string(s.window_w) + " larger than input " + std::to_string(in.rows) +
                      "x" + std::to_string(in.cols));
  }
  return {in.channels, in.rows / s.window_h, in.cols / s.window_w};
}

}  // namespace detail

inline ModelLayout make_layout(const BackboneConfig& cfg) {
  ModelLayout L;
  if (cfg.input_rows == 0 || cfg.input_cols == 0) throw ConfigError("input: rows and cols must be positive");
  if (cfg.output_dim == 0) throw ConfigError("output: output_dim must be positive");
  for (std::size_t i = 0; i < kHiddenDense; ++i) {
    if (cfg.dense[i] == 0) throw ConfigError("dense" + std::to_string(i + 1) + ": width must be positive");
    if (i > 0 && cfg.dense[i] >= cfg.dense[i - 1]) {
      throw ConfigError("dense" + std::to_string(i + 1) + ": widths must be strictly decreasing");
    }
  }
  L.input = {1, cfg.input_rows, cfg.input_cols};
  L.conv1_out = detail::conv_shape(L.input, cfg.conv1, "conv1");
  L.pool1_out = detail::pool_shape(L.conv1_out, cfg.pool1, "pool1");
  L.conv2_out = detail::conv_shape(L.pool1_out, cfg.conv2, "conv2");
  L.pool2_out = detail::pool_shape(L.conv2_out, cfg.pool2, "pool2");

  L.widths[0] = L.pool2_out.size();
  for (std::size_t i = 0; i < kHiddenDense; ++i) L.widths[i + 1] = cfg.dense[i];
  L.widths[kHiddenDense + 1] = cfg.output_dim;

  auto add = [&](std::string name, std::size_t count) {
    L.blocks.push_back({std::move(name), L.total, count});
    L.total += count;
    return L.blocks.back().offset;
  };
  L.conv1_w = add("conv1.weight", cfg.conv1.out_channels * 1 * cfg.conv1.kernel_h * cfg.conv1.kernel_w);
  L.conv1_b = add("conv1.bias", cfg.conv1.out_channels);
  L.conv2_w = add("conv2.weight",
                  cfg.conv2.out_channels * cfg.conv1.out_channels * cfg.conv2.kernel_h * cfg.conv2.kernel_w);
  L.conv2_b = add("conv2.bias", cfg.conv2.out_channels);
  for (std::size_t i = 0; i <= kHiddenDense; ++i) {
    const std::string name = i < kHiddenDense ? "dense" + std::to_string(i + 1) : std::string("output");
    L.dense_w[i] = add(name + ".weight", L.widths[i + 1] * L.widths[i]);
    L.dense_b[i] = add(name + ".bias", L.widths[i + 1]);
  }
  return L;
}

// ---------------------------------------------------------------------------
// Layer primitives. Backward functions accumulate into parameter gradients
// and overwrite the input gradient (skipped when `dx` is empty).

inline void conv2d_forward(const Shape3& in, std::span<const double> x, const ConvSpec& s,
                           std::span<const double> w, std::span<const double> b, const Shape3& out,
                           std::span<double> y) {
  const std::size_t kh = s.kernel_h, kw = s.kernel_w;
  for (std::size_t o = 0; o < out.channels; ++o) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      for (std::size_t j = 0; j < out.cols; ++j) {
        double acc = b[o];
        for (std::size_t c = 0; c < in.channels; ++c) {
          const double* wk = &w[((o * in.channels + c) * kh) * kw];
          for (std::size_t u = 0; u < kh; ++u) {
            const double* xr = &x[in.index(c, i * s.stride_h + u, j * s.stride_w)];
            for (std::size_t v = 0; v < kw; ++v) acc += wk[u * kw + v] * xr[v];
          }
        }
        y[out.index(o, i, j)] = acc;
      }
    }
  }
}

inline void conv2d_backward(const Shape3& in, std::span<const double> x, const ConvSpec& s,
                            std::span<const double> w, const Shape3& out, std::span<const double> dy,
                            std::span<double> dw, std::span<double> db, std::span<double> dx) {
  const std::size_t kh = s.kernel_h, kw = s.kernel_w;
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < out.channels; ++o) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      for (std::size_t j = 0; j < out.cols; ++j) {
        const double g = dy[out.index(o, i, j)];
        if (g == 0.0) continue;
        db[o] += g;
        for (std::size_t c = 0; c < in.channels; ++c) {
          const std::size_t wbase = ((o * in.channels + c) * kh) * kw;
          for (std::size_t u = 0; u < kh; ++u) {
            const std::size_t xbase = in.index(c, i * s.stride_h + u, j * s.stride_w);
            for (std::size_t v = 0; v < kw; ++v) {
              dw[wbase + u * kw + v] += g * x[xbase + v];
              if (!dx.empty()) dx[xbase + v] += g * w[wbase + u * kw + v];
            }
          }
        }
      }
    }
  }
}

// Non-overlapping max pooling (stride = window). Ties go to the first
// element in row-major order within the window.
inline void maxpool_forward(const Shape3& in, std::span<const double> x, const PoolSpec& s,
                            const Shape3& out, std::span<double> y, std::span<std::size_t> argmax) {
  for (std::size_t c = 0; c < out.channels; ++c) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      for (std::size_t j = 0; j < out.cols; ++j) {
        std::size_t best = in.index(c, i * s.window_h, j * s.window_w);
        for (std::size_t u = 0; u < s.window_h; ++u) {
          for (std::size_t v = 0; v < s.window_w; ++v) {
            const std::size_t idx = in.index(c, i * s.window_h + u, j * s.window_w + v);
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[out.index(c, i, j)] = x[best];
        argmax[out.index(c, i, j)] = best;
      }
    }
  }
}

inline void maxpool_backward(std::span<const double> dy, std::span<const std::size_t> argmax,
                             std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t k = 0; k < dy.size(); ++k) dx[argmax[k]] += dy[k];
}

inline void dense_forward(std::size_t in_dim, std::size_t out_dim, std::span<const double> x,
                          std::span<const double> w, std::span<const double> b, std::span<double> y) {
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double* row = &w[o * in_dim];
    double acc = b[o];
    for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

inline void dense_backward(std::size_t in_dim, std::size_t out_dim, std::span<const double> x,
                           std::span<const double> w, std::span<const double> dy, std::span<double> dw,
                           std::span<double> db, std::span<double> dx) {
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    db[o] += g;
    double* drow = &dw[o * in_dim];
    const double* row = &w[o * in_dim];
    for (std::size_t i = 0; i < in_dim; ++i) drow[i] += g * x[i];
    if (!dx.empty()) {
      for (std::size_t i = 0; i < in_dim; ++i) dx[i] += g * row[i];
    }
  }
}

inline void relu(std::span<const double> pre, std::span<double> act) {
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

// Gradient through ReLU, in place on `g`.
inline void relu_backward(std::span<const double> pre, std::span<double> g) {
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (!(pre[i] > 0.0)) g[i] = 0.0;
  }
}

// ---------------------------------------------------------------------------

class EvidenceModel {
 public:
  EvidenceModel() : EvidenceModel(BackboneConfig{}) {}

  explicit EvidenceModel(const BackboneConfig& config, std::uint64_t seed = 0)
      : config_(config), layout_(make_layout(config)), seed_(seed), params_(layout_.total, 0.0) {}

  EvidenceModel(const BackboneConfig& config, std::uint64_t seed, std::vector<double> params)
      : config_(config), layout_(make_layout(config)), seed_(seed), params_(std::move(params)) {
    if (params_.size() != layout_.total) {
      throw ShapeError("parameter count " + std::to_string(params_.size()) +
                       " does not match layout size " + std::to_string(layout_.total));
    }
  }

  const BackboneConfig& config() const noexcept { return config_; }
  const ModelLayout& layout() const noexcept { return layout_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::size_t input_size() const noexcept { return layout_.input.size(); }
  std::size_t output_dim() const noexcept { return config_.output_dim; }

  friend bool operator==(const EvidenceModel& a, const EvidenceModel& b) {
    return a.config_ == b.config_ && a.seed_ == b.seed_ && a.params_ == b.params_;
  }

 private:
  BackboneConfig config_;
  ModelLayout layout_;
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
};

// Weights ~ U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)), biases zero.
inline EvidenceModel init(const BackboneConfig& config, std::uint64_t seed) {
  EvidenceModel m(config, seed);
  const ModelLayout& L = m.layout();
  Rng rng(seed);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) m.params()[offset + i] = rng.uniform(-limit, limit);
  };
  fill(L.conv1_w, config.conv1.out_channels * config.conv1.kernel_h * config.conv1.kernel_w,
       config.conv1.kernel_h * config.conv1.kernel_w);
  fill(L.conv2_w, config.conv2.out_channels * config.conv1.out_channels * config.conv2.kernel_h * config.conv2.kernel_w,
       config.conv1.out_channels * config.conv2.kernel_h * config.conv2.kernel_w);
  for (std::size_t i = 0; i <= kHiddenDense; ++i) fill(L.dense_w[i], L.widths[i + 1] * L.widths[i], L.widths[i]);
  return m;
}

// Per-sample scratch, reusable across calls with the same model shape.
struct Activations {
  std::vector<double> conv1_pre, conv1_act, pool1;
  std::vector<std::size_t> pool1_idx;
  std::vector<double> conv2_pre, conv2_act, pool2;
  std::vector<std::size_t> pool2_idx;
  std::array<std::vector<double>, kHiddenDense + 1> dense_pre;
  std::array<std::vector<double>, kHiddenDense> dense_act;
  // backward scratch
  std::vector<double> g_a, g_b, g_pool1, g_conv1, g_pool2, g_conv2;

  void resize(const ModelLayout& L) {
    conv1_pre.resize(L.conv1_out.size());
    conv1_act.resize(L.conv1_out.size());
    pool1.resize(L.pool1_out.size());
    pool1_idx.resize(L.pool1_out.size());
    conv2_pre.resize(L.conv2_out.size());
    conv2_act.resize(L.conv2_out.size());
    pool2.resize(L.pool2_out.size());
    pool2_idx.resize(L.pool2_out.size());
    for (std::size_t i = 0; i <= kHiddenDense; ++i) dense_pre[i].resize(L.widths[i + 1]);
    for (std::size_t i = 0; i < kHiddenDense; ++i) dense_act[i].resize(L.widths[i + 1]);
    std::size_t widest = 0;
    for (auto w : L.widths) widest = std::max(widest, w);
    g_a.resize(widest);
    g_b.resize(widest);
    g_pool1.resize(L.pool1_out.size());
    g_conv1.resize(L.conv1_out.size());
    g_pool2.resize(L.pool2_out.size());
    g_conv2.resize(L.conv2_out.size());
  }

  std::span<const double> logits() const { return dense_pre[kHiddenDense]; }
};

namespace detail {

inline void check_input(const EvidenceModel& m, std::size_t got) {
  if (got != m.input_size()) {
    throw ShapeError("input has " + std::to_string(got) + " values, model expects " +
                     std::to_string(m.config().input_rows) + "x" + std::to_string(m.config().input_cols) +
                     " = " + std::to_string(m.input_size()));
  }
}

}  // namespace detail

inline std::span<const double> forward(const EvidenceModel& m, std::span<const double> x, Activations& a) {
  detail::check_input(m, x.size());
  const ModelLayout& L = m.layout();
  const BackboneConfig& c = m.config();
  const auto p = m.params();
  a.resize(L);

  conv2d_forward(L.input, x, c.conv1, p.subspan(L.conv1_w), p.subspan(L.conv1_b), L.conv1_out, a.conv1_pre);
  relu(a.conv1_pre, a.conv1_act);
  maxpool_forward(L.conv1_out, a.conv1_act, c.pool1, L.pool1_out, a.pool1, a.pool1_idx);
  conv2d_forward(L.pool1_out, a.pool1, c.conv2, p.subspan(L.conv2_w), p.subspan(L.conv2_b), L.conv2_out, a.conv2_pre);
  relu(a.conv2_pre, a.conv2_act);
  maxpool_forward(L.conv2_out, a.conv2_act, c.pool2, L.pool2_out, a.pool2, a.pool2_idx);

  std::span<const double> h = a.pool2;
  for (std::size_t i = 0; i <= kHiddenDense; ++i) {
    dense_forward(L.widths[i], L.widths[i + 1], h, p.subspan(L.dense_w[i]), p.subspan(L.dense_b[i]), a.dense_pre[i]);
    if (i < kHiddenDense) {
      relu(a.dense_pre[i], a.dense_act[i]);
      h = a.dense_act[i];
    }
  }
  return a.logits();
}

inline std::vector<double> forward(const EvidenceModel& m, std::span<const double> x) {
  Activations a;
  const auto f = forward(m, x, a);
  return {f.begin(), f.end()};
}

/// Accumulates d(grad_f . f)/d(theta) into `grad`, using the activations
/// left by the matching forward() call.
inline void backward(const EvidenceModel& m, std::span<const double> x, Activations& a,
                     std::span<const double> grad_f, std::span<double> grad) {
  const ModelLayout& L = m.layout();
  const BackboneConfig& c = m.config();
  const auto p = m.params();
  if (grad_f.size() != m.output_dim()) {
    throw ShapeError("grad_f has " + std::to_string(grad_f.size()) + " entries, model outputs " +
                     std::to_string(m.output_dim()));
  }
  if (grad.size() != m.param_count()) throw ShapeError("gradient buffer size mismatch");

  std::span<double> g_out(a.g_a.data(), L.widths[kHiddenDense + 1]);
  std::copy(grad_f.begin(), grad_f.end(), g_out.begin());
  std::span<double> g_cur = g_out;
  bool in_a = true;
  for (std::size_t i = kHiddenDense + 1; i-- > 0;) {
    const std::span<const double> layer_in =
        i == 0 ? std::span<const double>(a.pool2) : std::span<const double>(a.dense_act[i - 1]);
    std::span<double> g_in = i == 0 ? std::span<double>(a.g_pool2)
                                    : std::span<double>((in_a ? a.g_b : a.g_a).data(), L.widths[i]);
    dense_backward(L.widths[i], L.widths[i + 1], layer_in, p.subspan(L.dense_w[i]), g_cur,
                   grad.subspan(L.dense_w[i]), grad.subspan(L.dense_b[i]), g_in);
    if (i > 0) relu_backward(a.dense_pre[i - 1], g_in);
    g_cur = g_in;
    in_a = !in_a;
  }
  maxpool_backward(a.g_pool2, a.pool2_idx, a.g_conv2);
  relu_backward(a.conv2_pre, a.g_conv2);
  conv2d_backward(L.pool1_out, a.pool1, c.conv2, p.subspan(L.conv2_w), L.conv2_out, a.g_conv2,
                  grad.subspan(L.conv2_w), grad.subspan(L.conv2_b), a.g_pool1);
  maxpool_backward(a.g_pool1, a.pool1_idx, a.g_conv1);
  relu_backward(a.conv1_pre, a.g_conv1);
  conv2d_backward(L.input, x, c.conv1, p.subspan(L.conv1_w), L.conv1_out, a.g_conv1, grad.subspan(L.conv1_w),
                  grad.subspan(L.conv1_b), {});
}

inline std::vector<double> backward(const EvidenceModel& m, std::span<const double> x,
                                    std::span<const double> grad_f) {
  Activations a;
  forward(m, x, a);
  std::vector<double> grad(m.param_count(), 0.0);
  backward(m, x, a, grad_f, grad);
  return grad;
}

// ReLU on/off pattern plus pooling routes. Two parameter settings with the
// same signature lie in the same linear piece of the network.
inline std::vector<std::size_t> activation_signature(const Activations& a) {
  std::vector<std::size_t> sig;
  auto mask = [&](const std::vector<double>& v) {
    for (double x : v) sig.push_back(x > 0.0 ? 1 : 0);
  };
  mask(a.conv1_pre);
  mask(a.conv2_pre);
  for (std::size_t i = 0; i < kHiddenDense; ++i) mask(a.dense_pre[i]);
  sig.insert(sig.end(), a.pool1_idx.begin(), a.pool1_idx.end());
  sig.insert(sig.end(), a.pool2_idx.begin(), a.pool2_idx.end());
  return sig;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

inline void optimizer_step(std::span<double> params, std::span<const double> grads, AdamState& s, double lr) {
  if (grads.size() != params.size()) throw ShapeError("gradient/parameter size mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw DivergenceError("non-finite gradient at parameter " + std::to_string(i));
    }
  }
  if (s.m.size() != params.size()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

inline void optimizer_step(EvidenceModel& model, std::span<const double> grads, AdamState& s, double lr) {
  optimizer_step(model.params(), grads, s, lr);
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   line 1: "edlstage-checkpoint 1"
//   line 2: JSON header {config, seed, epoch, param_count, layout, meta}
//   rest:   param_count little-endian IEEE-754 float64 values

inline nlohmann::json to_json(const BackboneConfig& c) {
  auto conv = [](const ConvSpec& s) {
    return nlohmann::json{{"out_channels", s.out_channels}, {"kernel", {s.kernel_h, s.kernel_w}},
                          {"stride", {s.stride_h, s.stride_w}}};
  };
  auto pool = [](const PoolSpec& s) { return nlohmann::json{{"window", {s.window_h, s.window_w}}}; };
  return {{"input", {c.input_rows, c.input_cols}},
          {"conv1", conv(c.conv1)},
          {"pool1", pool(c.pool1)},
          {"conv2", conv(c.conv2)},
          {"pool2", pool(c.pool2)},
          {"dense", c.dense},
          {"output_dim", c.output_dim}};
}

inline BackboneConfig backbone_from_json(const nlohmann::json& j) {
  auto conv = [](const nlohmann::json& s) {
    return ConvSpec{s.at("out_channels").get<std::size_t>(), s.at("kernel").at(0).get<std::size_t>(),
                    s.at("kernel").at(1).get<std::size_t>(), s.at("stride").at(0).get<std::size_t>(),
                    s.at("stride").at(1).get<std::size_t>()};
  };
  auto pool = [](const nlohmann::json& s) {
    return PoolSpec{s.at("window").at(0).get<std::size_t>(), s.at("window").at(1).get<std::size_t>()};
  };
  BackboneConfig c;
  c.input_rows = j.at("input").at(0).get<std::size_t>();
  c.input_cols = j.at("input").at(1).get<std::size_t>();
  c.conv1 = conv(j.at("conv1"));
  c.pool1 = pool(j.at("pool1"));
  c.conv2 = conv(j.at("conv2"));
  c.pool2 = pool(j.at("pool2"));
  c.dense = j.at("dense").get<std::array<std::size_t, kHiddenDense>>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  return c;
}

struct Checkpoint {
  EvidenceModel model;
  std::size_t epoch = 0;
  nlohmann::json meta = nlohmann::json::object();
};

inline constexpr const char* kCheckpointMagic = "edlstage-checkpoint 1";

inline void write_checkpoint(const Checkpoint& ck, std::ostream& os) {
  const EvidenceModel& m = ck.model;
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& b : m.layout().blocks) layout.push_back({{"name", b.name}, {"offset", b.offset}, {"count", b.count}});
  const nlohmann::json header{{"config", to_json(m.config())},  {"seed", m.seed()},
                              {"epoch", ck.epoch},               {"param_count", m.param_count()},
                              {"layout", layout},                {"meta", ck.meta}};
  os << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (double v : m.params()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFU);
    os.write(bytes, 8);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic, header_line;
  if (!std::getline(is, magic) || magic != kCheckpointMagic) throw FormatError("not an edlstage checkpoint");
  if (!std::getline(is, header_line)) throw FormatError("checkpoint header missing");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  try {
    const BackboneConfig cfg = backbone_from_json(header.at("config"));
    const auto count = header.at("param_count").get<std::size_t>();
    std::vector<double> params(count);
    for (std::size_t k = 0; k < count; ++k) {
      unsigned char bytes[8];
      if (!is.read(reinterpret_cast<char*>(bytes), 8)) {
        throw FormatError("checkpoint truncated at parameter " + std::to_string(k));
      }
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
      params[k] = std::bit_cast<double>(bits);
    }
    ck.model = EvidenceModel(cfg, header.at("seed").get<std::uint64_t>(), std::move(params));
    ck.epoch = header.at("epoch").get<std::size_t>();
    if (header.contains("meta")) ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(ck, os);
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace edlstage::nn
