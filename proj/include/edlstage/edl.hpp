#pragma once

// Evidential training and prediction.
//
// The backbone emits one logit f_k per stage, read as a log density ratio
// between stage k and a shared out-of-distribution source. Training pairs
// every real window with a bit-flipped copy and minimises
//
//   L1 = -[ w_real  * mean_real  log sigma(f_y(x))
//         + w_noisy * mean_noisy sum_k log(1 - sigma(f_k(x~))) ]
//   L  = L1 + beta(epoch) * mean_real KL[ Dir(alpha_{-y}) || Dir(1) ]
//
// with evidence e = exp(min(f, 30)) and alpha = e + 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "edlstage/data.hpp"
#include "edlstage/dirichlet.hpp"
#include "edlstage/error.hpp"
#include "edlstage/nn.hpp"
#include "edlstage/parallel.hpp"
#include "edlstage/random.hpp"

namespace edlstage {

inline constexpr double kLogitClamp = 30.0;

enum class AnnealMode : std::uint8_t {
  Reciprocal,  // w_as = 1/epoch below the threshold epoch, then 1
  Linear,      // w_as = min(1, epoch/as)
};

inline std::string to_string(AnnealMode m) { return m == AnnealMode::Reciprocal ? "reciprocal" : "linear"; }

inline AnnealMode parse_anneal_mode(const std::string& s) {
  if (s == "reciprocal") return AnnealMode::Reciprocal;
  if (s == "linear") return AnnealMode::Linear;
  throw ConfigError("unknown anneal mode '" + s + "' (expected reciprocal or linear)");
}

struct LossConfig {
  double w_real = 0.65;
  double w_noisy = 0.35;
  double w_kl = 0.3;
  std::size_t anneal_epochs = 25;
  double ood_flip_p = 0.4;
  AnnealMode anneal = AnnealMode::Reciprocal;
  bool rebalance = false;

  void validate() const {
    if (w_real < 0 || w_noisy < 0 || w_kl < 0) throw ConfigError("loss weights must be >= 0");
    if (std::abs(w_real + w_noisy - 1.0) > 1e-9) {
      throw ConfigError("w_real + w_noisy must equal 1, got " + std::to_string(w_real + w_noisy));
    }
    if (anneal_epochs < 1) throw ConfigError("anneal_epochs must be >= 1");
    require_probability(ood_flip_p, "ood_flip_p");
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline double beta_schedule(std::size_t epoch, const LossConfig& cfg) {
  if (epoch < 1) throw ConfigError("epoch numbering starts at 1");
  const double e = static_cast<double>(epoch);
  double w_as = 1.0;
  if (cfg.anneal == AnnealMode::Reciprocal) {
    w_as = epoch < cfg.anneal_epochs ? 1.0 / e : 1.0;
  } else {
    w_as = std::min(1.0, e / static_cast<double>(cfg.anneal_epochs));
  }
  return cfg.w_kl * w_as;
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit_to_evidence(double f) { return std::exp(std::min(f, kLogitClamp)); }

inline DirichletParams alpha_from_logits(std::span<const double> f) {
  std::vector<double> alpha(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (std::isnan(f[k])) throw InvalidEvidenceError("logit " + std::to_string(k) + " is NaN");
    alpha[k] = logit_to_evidence(f[k]) + 1.0;
  }
  return DirichletParams(std::move(alpha));
}

using Logits = std::vector<double>;

struct L1Terms {
  double value = 0.0;
  std::vector<Logits> grad_real;
  std::vector<Logits> grad_noisy;
};

/// Bernoulli density-ratio loss with gradients w.r.t. every logit.
/// Either batch may be empty (its term is dropped), not both. `weights`,
/// when given, scales each real sample's term.
inline L1Terms loss_l1_terms(std::span<const Logits> f_real, std::span<const int> classes,
                             std::span<const Logits> f_noisy, const LossConfig& cfg,
                             std::span<const double> weights = {}) {
  if (f_real.empty() && f_noisy.empty()) throw DomainError("loss_l1: both batches are empty");
  if (classes.size() != f_real.size()) throw ShapeError("loss_l1: one class per real sample required");
  if (!weights.empty() && weights.size() != f_real.size()) throw ShapeError("loss_l1: weight count mismatch");
  L1Terms out;
  out.grad_real.resize(f_real.size());
  out.grad_noisy.resize(f_noisy.size());
  if (!f_real.empty()) {
    const double scale = cfg.w_real / static_cast<double>(f_real.size());
    for (std::size_t i = 0; i < f_real.size(); ++i) {
      const auto k = static_cast<std::size_t>(classes[i]);
      if (k >= f_real[i].size()) throw DomainError("loss_l1: class index out of range");
      const double w = weights.empty() ? 1.0 : weights[i];
      const double f = f_real[i][k];
      out.value += scale * w * softplus(-f);
      out.grad_real[i].assign(f_real[i].size(), 0.0);
      out.grad_real[i][k] = -scale * w * sigmoid(-f);
    }
  }
  if (!f_noisy.empty()) {
    const double scale = cfg.w_noisy / static_cast<double>(f_noisy.size());
    for (std::size_t i = 0; i < f_noisy.size(); ++i) {
      out.grad_noisy[i].resize(f_noisy[i].size());
      for (std::size_t k = 0; k < f_noisy[i].size(); ++k) {
        out.value += scale * softplus(f_noisy[i][k]);
        out.grad_noisy[i][k] = scale * sigmoid(f_noisy[i][k]);
      }
    }
  }
  return out;
}

inline double loss_l1(std::span<const Logits> f_real, std::span<const int> classes,
                      std::span<const Logits> f_noisy, const LossConfig& cfg) {
  return loss_l1_terms(f_real, classes, f_noisy, cfg).value;
}

namespace detail {

inline std::vector<double> without(std::span<const double> v, std::size_t k) {
  std::vector<double> out;
  out.reserve(v.size() - 1);
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j != k) out.push_back(v[j]);
  }
  return out;
}

}  // namespace detail

// Regulariser on the off-class pseudocounts (true class removed).
inline double loss_l2(const DirichletParams& alpha, std::size_t true_class) {
  if (true_class >= alpha.size()) throw DomainError("loss_l2: class index out of range");
  return kl_to_uniform(detail::without(alpha.alpha(), true_class));
}

// d loss_l2 / d f for logits f (through the clamped exponential).
inline Logits loss_l2_logit_gradient(std::span<const double> f, std::size_t true_class) {
  const DirichletParams alpha = alpha_from_logits(f);
  const auto sub = detail::without(alpha.alpha(), true_class);
  const auto d_alpha = kl_to_uniform_gradient(sub);
  Logits grad(f.size(), 0.0);
  for (std::size_t j = 0, s = 0; j < f.size(); ++j) {
    if (j == true_class) continue;
    // alpha_j = exp(f_j) + 1 below the clamp, constant above it.
    grad[j] = f[j] < kLogitClamp ? d_alpha[s] * (alpha[j] - 1.0) : 0.0;
    ++s;
  }
  return grad;
}

struct Prediction {
  int stage = 0;
  std::vector<double> p_hat;
  double u = 1.0;
  DirichletParams alpha{std::vector<double>(kNumStages, 1.0)};
};

inline Prediction predict_from_logits(std::span<const double> f) {
  Prediction p;
  p.alpha = alpha_from_logits(f);
  p.p_hat = mean(p.alpha);
  p.u = uncertainty(p.alpha);
  const auto a = p.alpha.alpha();
  p.stage = static_cast<int>(std::max_element(a.begin(), a.end()) - a.begin());
  return p;
}

inline Prediction predict(const nn::EvidenceModel& model, const Window& x) {
  return predict_from_logits(nn::forward(model, x.as_input()));
}

inline std::vector<Prediction> predict_all(const nn::EvidenceModel& model, std::span<const Window> xs,
                                           std::size_t threads = 1) {
  std::vector<Prediction> out(xs.size());
  constexpr std::size_t kChunk = 256;
  const std::size_t n_chunks = (xs.size() + kChunk - 1) / kChunk;
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    nn::Activations acts;
    std::vector<double> input;
    for (std::size_t i = c * kChunk; i < std::min(xs.size(), (c + 1) * kChunk); ++i) {
      input.assign(xs[i].features.begin(), xs[i].features.end());
      out[i] = predict_from_logits(nn::forward(model, input, acts));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Batch objective over model parameters.

struct BatchObjective {
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;  // mean KL over real samples, before beta
  std::vector<double> grad;
};

/// Total loss L1 + beta * mean L2 for one batch and, when `with_grad`, its
/// gradient w.r.t. every model parameter. Work is split into fixed chunks
/// whose partial sums are reduced in chunk order, so the result does not
/// depend on `threads`.
inline BatchObjective batch_objective(const nn::EvidenceModel& model, std::span<const std::vector<double>> real,
                                      std::span<const int> classes, std::span<const std::vector<double>> noisy,
                                      const LossConfig& cfg, double beta, std::span<const double> weights = {},
                                      bool with_grad = true, std::size_t threads = 1) {
  if (real.empty() && noisy.empty()) throw DomainError("batch_objective: empty batch");
  if (classes.size() != real.size()) throw ShapeError("batch_objective: one class per real sample required");
  const std::size_t n_real = real.size();
  const std::size_t total = n_real + noisy.size();
  constexpr std::size_t kChunk = 8;
  const std::size_t n_chunks = (total + kChunk - 1) / kChunk;
  const double real_scale = n_real ? cfg.w_real / static_cast<double>(n_real) : 0.0;
  const double noisy_scale = noisy.empty() ? 0.0 : cfg.w_noisy / static_cast<double>(noisy.size());
  const double kl_scale = n_real ? beta / static_cast<double>(n_real) : 0.0;

  struct Partial {
    double l1 = 0.0, kl = 0.0;
    std::vector<double> grad;
  };
  std::vector<Partial> parts(n_chunks);
  parallel_for(n_chunks, threads, [&](std::size_t c) {
    Partial& part = parts[c];
    if (with_grad) part.grad.assign(model.param_count(), 0.0);
    nn::Activations acts;
    Logits g;
    for (std::size_t idx = c * kChunk; idx < std::min(total, (c + 1) * kChunk); ++idx) {
      const bool is_real = idx < n_real;
      const auto& x = is_real ? real[idx] : noisy[idx - n_real];
      const auto f = nn::forward(model, x, acts);
      g.assign(f.size(), 0.0);
      if (is_real) {
        const auto k = static_cast<std::size_t>(classes[idx]);
        if (k >= f.size()) throw DomainError("batch_objective: class index out of range");
        const double w = weights.empty() ? 1.0 : weights[idx];
        part.l1 += real_scale * w * softplus(-f[k]);
        g[k] -= real_scale * w * sigmoid(-f[k]);
        const DirichletParams alpha = alpha_from_logits(f);
        part.kl += loss_l2(alpha, k);
        if (with_grad && kl_scale != 0.0) {
          const Logits gk = loss_l2_logit_gradient(f, k);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += kl_scale * gk[j];
        }
      } else {
        for (std::size_t j = 0; j < f.size(); ++j) {
          part.l1 += noisy_scale * softplus(f[j]);
          g[j] += noisy_scale * sigmoid(f[j]);
        }
      }
      if (with_grad) nn::backward(model, x, acts, g, part.grad);
    }
  });

  BatchObjective out;
  double kl_sum = 0.0;
  if (with_grad) out.grad.assign(model.param_count(), 0.0);
  for (const Partial& p : parts) {
    out.l1 += p.l1;
    kl_sum += p.kl;
    if (with_grad) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += p.grad[i];
    }
  }
  out.l2 = n_real ? kl_sum / static_cast<double>(n_real) : 0.0;
  out.loss = out.l1 + beta * out.l2;
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double mean_u_correct = std::numeric_limits<double>::quiet_NaN();
  double mean_u_incorrect = std::numeric_limits<double>::quiet_NaN();
  double beta = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"epoch", e.epoch},
          {"train_loss", num(e.train_loss)},
          {"val_loss", num(e.val_loss)},
          {"val_accuracy", num(e.val_accuracy)},
          {"mean_u_correct", num(e.mean_u_correct)},
          {"mean_u_incorrect", num(e.mean_u_incorrect)},
          {"beta", num(e.beta)}};
}

struct TrainResult {
  nn::EvidenceModel model;
  std::vector<EpochLog> log;
};

// Per-sample weights with mean 1 that equalise the total weight per class.
inline std::vector<double> balanced_weights(std::span<const Window> ws) {
  const auto counts = class_counts(ws);
  const std::size_t present = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  std::vector<double> w(ws.size(), 1.0);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const auto c = counts[static_cast<std::size_t>(ws[i].target)];
    w[i] = static_cast<double>(ws.size()) / (static_cast<double>(present) * static_cast<double>(c));
  }
  return w;
}

namespace detail {

// Loss, accuracy and uncertainty split on a held-out set. The noisy half of
// the loss uses a generator seeded from (seed, epoch) so it is reproducible.
inline void validation_stats(const nn::EvidenceModel& model, std::span<const Window> val, const LossConfig& cfg,
                             double beta, std::uint64_t seed, std::size_t threads, EpochLog& entry) {
  if (val.empty()) return;
  std::vector<std::vector<double>> real, noisy;
  std::vector<int> classes;
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * (entry.epoch + 1)));
  for (const Window& w : val) {
    real.push_back(w.as_input());
    classes.push_back(w.target);
    noisy.push_back(apply_window_noise(w, cfg.ood_flip_p, cfg.ood_flip_p, rng).as_input());
  }
  entry.val_loss = batch_objective(model, real, classes, noisy, cfg, beta, {}, false, threads).loss;
  const auto preds = predict_all(model, val, threads);
  std::size_t correct = 0;
  double u_ok = 0.0, u_bad = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (preds[i].stage == val[i].target) {
      ++correct;
      u_ok += preds[i].u;
    } else {
      u_bad += preds[i].u;
    }
  }
  const std::size_t wrong = val.size() - correct;
  entry.val_accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
  if (correct) entry.mean_u_correct = u_ok / static_cast<double>(correct);
  if (wrong) entry.mean_u_incorrect = u_bad / static_cast<double>(wrong);
}

}  // namespace detail

/// Trains an evidence model. Each batch of real windows is paired with an
/// equally sized batch of fresh OOD copies (every bit flipped with
/// probability cfg.ood_flip_p). Deterministic under opts.seed for any
/// thread count.
inline TrainResult train(std::span<const Window> train_set, std::span<const Window> val_set,
                         const nn::BackboneConfig& bcfg, const LossConfig& lcfg, const TrainOptions& opts,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  lcfg.validate();
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  TrainResult result{nn::init(bcfg, opts.seed), {}};
  if (opts.epochs == 0) return result;
  if (train_set.empty()) throw ConfigError("training set is empty");
  const std::size_t input_size = result.model.input_size();
  if (train_set.front().features.size() != input_size) {
    throw ShapeError("windows are " + std::to_string(train_set.front().rows) + "x" +
                     std::to_string(train_set.front().cols) + ", model expects " +
                     std::to_string(bcfg.input_rows) + "x" + std::to_string(bcfg.input_cols));
  }

  const std::vector<double> class_weight = lcfg.rebalance ? balanced_weights(train_set) : std::vector<double>{};
  Rng rng(opts.seed ^ 0xA5A5A5A5DEADBEEFULL);
  nn::AdamState adam;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<std::vector<double>> real, noisy;
  std::vector<int> classes;
  std::vector<double> weights;
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double beta = beta_schedule(epoch, lcfg);
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      real.clear();
      noisy.clear();
      classes.clear();
      weights.clear();
      for (std::size_t i = start; i < end; ++i) {
        const Window& w = train_set[order[i]];
        real.push_back(w.as_input());
        classes.push_back(w.target);
        if (!class_weight.empty()) weights.push_back(class_weight[order[i]]);
        noisy.push_back(apply_window_noise(w, lcfg.ood_flip_p, lcfg.ood_flip_p, rng).as_input());
      }
      BatchObjective obj;
      try {
        obj = batch_objective(result.model, real, classes, noisy, lcfg, beta, weights, true, opts.threads);
      } catch (const InvalidEvidenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                              e.what());
      }
      if (!std::isfinite(obj.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index));
      }
      try {
        nn::optimizer_step(result.model, obj.grad, adam, opts.lr);
      } catch (const DivergenceError& e) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                              e.what());
      }
      loss_sum += obj.loss * static_cast<double>(end - start);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.beta = beta;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    try {
      detail::validation_stats(result.model, val_set, lcfg, beta, opts.seed, opts.threads, entry);
    } catch (const InvalidEvidenceError& e) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ", validation: " + e.what());
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace edlstage
