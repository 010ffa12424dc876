#pragma once

// Comparison classifiers on flattened windows: softmax regression,
// k-nearest-neighbours and a constant majority-class predictor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "edlstage/data.hpp"
#include "edlstage/dirichlet.hpp"
#include "edlstage/error.hpp"
#include "edlstage/random.hpp"

namespace edlstage::baselines {

struct FlatSample {
  std::vector<double> x;
  int y = 0;
};

inline std::vector<FlatSample> flatten(std::span<const Window> ws) {
  std::vector<FlatSample> out;
  out.reserve(ws.size());
  for (const Window& w : ws) out.push_back({w.as_input(), w.target});
  return out;
}

template <class Scores>
int argmax_lowest(const Scores& s) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < s.size(); ++k) {
    if (s[k] > s[best]) best = k;
  }
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Multinomial logistic regression

struct LogRegOptions {
  double l2_penalty = 1e-4;
  std::size_t epochs = 30;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t n_classes = kNumStages;
};

struct LogRegModel {
  std::size_t n_features = 0;
  std::size_t n_classes = kNumStages;
  // Row c holds the n_features weights of class c followed by its bias.
  std::vector<double> weights;
  std::optional<int> constant_class;
  std::string warning;

  std::vector<double> scores(std::span<const double> x) const {
    std::vector<double> s(n_classes, 0.0);
    const std::size_t stride = n_features + 1;
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double* w = &weights[c * stride];
      double acc = w[n_features];
      for (std::size_t i = 0; i < n_features; ++i) acc += w[i] * x[i];
      s[c] = acc;
    }
    return s;
  }

  int predict(std::span<const double> x) const {
    if (constant_class) return *constant_class;
    if (x.size() != n_features) {
      throw ShapeError("logreg: expected " + std::to_string(n_features) + " features, got " +
                       std::to_string(x.size()));
    }
    return argmax_lowest(scores(x));
  }
};

/// Mean cross-entropy + (l2/2)*||W||^2 (biases unpenalised) over `samples`;
/// adds the gradient into `grad` when it is non-empty.
inline double logreg_objective(const LogRegModel& m, std::span<const FlatSample> samples, double l2,
                               std::span<double> grad) {
  const std::size_t stride = m.n_features + 1;
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  double loss = 0.0;
  std::vector<double> p(m.n_classes);
  for (const FlatSample& s : samples) {
    const auto z = m.scores(s.x);
    const double zmax = *std::max_element(z.begin(), z.end());
    double norm = 0.0;
    for (std::size_t c = 0; c < m.n_classes; ++c) norm += std::exp(z[c] - zmax);
    const double log_norm = zmax + std::log(norm);
    loss += (log_norm - z[static_cast<std::size_t>(s.y)]) * inv_n;
    if (grad.empty()) continue;
    for (std::size_t c = 0; c < m.n_classes; ++c) {
      const double g = (std::exp(z[c] - log_norm) - (static_cast<int>(c) == s.y ? 1.0 : 0.0)) * inv_n;
      if (g == 0.0) continue;
      double* gw = &grad[c * stride];
      for (std::size_t i = 0; i < m.n_features; ++i) gw[i] += g * s.x[i];
      gw[m.n_features] += g;
    }
  }
  for (std::size_t c = 0; c < m.n_classes; ++c) {
    for (std::size_t i = 0; i < m.n_features; ++i) {
      const double w = m.weights[c * stride + i];
      loss += 0.5 * l2 * w * w;
      if (!grad.empty()) grad[c * stride + i] += l2 * w;
    }
  }
  return loss;
}

inline LogRegModel logreg_train(std::span<const FlatSample> samples, const LogRegOptions& opts = {}) {
  if (samples.empty()) throw ConfigError("logreg: empty training set");
  LogRegModel m;
  m.n_features = samples.front().x.size();
  m.n_classes = opts.n_classes;
  m.weights.assign(m.n_classes * (m.n_features + 1), 0.0);
  std::vector<std::size_t> present(m.n_classes, 0);
  for (const auto& s : samples) {
    if (s.x.size() != m.n_features) throw ShapeError("logreg: inconsistent feature count");
    if (s.y < 0 || static_cast<std::size_t>(s.y) >= m.n_classes) throw DomainError("logreg: class out of range");
    ++present[static_cast<std::size_t>(s.y)];
  }
  if (std::count_if(present.begin(), present.end(), [](auto c) { return c > 0; }) == 1) {
    m.constant_class = samples.front().y;
    m.warning = "logreg: single-class training set, using constant predictor for class " +
                std::to_string(samples.front().y);
    return m;
  }

  Rng rng(opts.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(m.weights.size());
  std::vector<FlatSample> batch;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      logreg_objective(m, batch, opts.l2_penalty, grad);
      for (std::size_t i = 0; i < grad.size(); ++i) m.weights[i] -= opts.lr * grad[i];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// k-nearest neighbours (Euclidean; distance ties -> lower sample index,
// vote ties -> lower class)

inline int knn_predict(std::span<const FlatSample> train, std::span<const double> x, std::size_t k,
                       std::size_t n_classes = kNumStages) {
  if (train.empty()) throw ConfigError("knn: empty training set");
  if (k < 1 || k > train.size()) {
    throw ConfigError("knn: k must lie in [1, " + std::to_string(train.size()) + "], got " + std::to_string(k));
  }
  // Squared distances are enough for ranking.
  std::vector<std::pair<double, std::size_t>> dist(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& t = train[i].x;
    if (t.size() != x.size()) throw ShapeError("knn: feature count mismatch");
    double d = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double diff = t[j] - x[j];
      d += diff * diff;
    }
    dist[i] = {d, i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> votes(n_classes, 0);
  for (std::size_t i = 0; i < k; ++i) ++votes.at(static_cast<std::size_t>(train[dist[i].second].y));
  return argmax_lowest(votes);
}

struct KnnClassifier {
  std::vector<FlatSample> train;
  std::size_t k = 5;

  int predict(std::span<const double> x) const { return knn_predict(train, x, k); }
};

// ---------------------------------------------------------------------------

struct MajorityClassifier {
  int cls = 0;

  int predict(std::span<const double>) const { return cls; }
};

inline MajorityClassifier majority_baseline(std::span<const FlatSample> samples,
                                            std::size_t n_classes = kNumStages) {
  if (samples.empty()) throw ConfigError("majority: empty training set");
  std::vector<std::size_t> counts(n_classes, 0);
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.y));
  return {argmax_lowest(counts)};
}

}  // namespace edlstage::baselines
