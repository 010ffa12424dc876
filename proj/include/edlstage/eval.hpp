#pragma once

// Metrics, uncertainty analysis, the observation/label noise sweep and
// permutation feature importance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edlstage/baselines.hpp"
#include "edlstage/data.hpp"
#include "edlstage/edl.hpp"
#include "edlstage/error.hpp"
#include "edlstage/nn.hpp"
#include "edlstage/parallel.hpp"
#include "edlstage/random.hpp"

namespace edlstage::eval {

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;  // support-weighted
  double recall = 0.0;     // support-weighted
  double f1 = 0.0;         // support-weighted
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
  std::size_t total = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport classification_metrics(std::span<const int> pred, std::span<const int> truth,
                                            std::size_t n_classes = kNumStages) {
  if (pred.size() != truth.size()) {
    throw ShapeError("metrics: " + std::to_string(pred.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  if (pred.empty()) throw DomainError("metrics: no samples");
  MetricsReport r;
  r.total = pred.size();
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++r.confusion.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(pred[i]));
  }
  std::size_t diag = 0;
  for (std::size_t c = 0; c < n_classes; ++c) diag += r.confusion[c][c];
  r.accuracy = static_cast<double>(diag) / static_cast<double>(r.total);
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t k = 0; k < n_classes; ++k) {
      support += r.confusion[c][k];
      predicted += r.confusion[k][c];
    }
    if (support == 0) continue;
    const double tp = static_cast<double>(r.confusion[c][c]);
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = tp / static_cast<double>(support);
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    const double w = static_cast<double>(support) / static_cast<double>(r.total);
    r.precision += w * precision;
    r.recall += w * recall;
    r.f1 += w * f1;
  }
  return r;
}

struct FiveNumber {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;

  friend bool operator==(const FiveNumber&, const FiveNumber&) = default;
};

// Linear interpolation between closest ranks: position q * (n - 1).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DomainError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline FiveNumber five_number_summary(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {values.front(), quantile_sorted(values, 0.25), quantile_sorted(values, 0.5),
          quantile_sorted(values, 0.75), values.back()};
}

struct UncertaintySample {
  std::vector<double> values;
  std::optional<FiveNumber> summary;  // empty partition -> no summary

  bool empty() const noexcept { return values.empty(); }
  double mean() const {
    return values.empty() ? std::numeric_limits<double>::quiet_NaN()
                          : std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }

  friend bool operator==(const UncertaintySample&, const UncertaintySample&) = default;
};

struct UncertaintySplit {
  UncertaintySample correct;
  UncertaintySample incorrect;

  friend bool operator==(const UncertaintySplit&, const UncertaintySplit&) = default;
};

inline UncertaintySplit uncertainty_split(std::span<const Prediction> preds, std::span<const int> truth) {
  if (preds.size() != truth.size()) throw ShapeError("uncertainty_split: length mismatch");
  UncertaintySplit s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    (preds[i].stage == truth[i] ? s.correct : s.incorrect).values.push_back(preds[i].u);
  }
  for (UncertaintySample* part : {&s.correct, &s.incorrect}) {
    if (!part->empty()) part->summary = five_number_summary(part->values);
  }
  return s;
}

struct MannWhitney {
  double u = 0.0;        // U statistic of the first sample
  double z = 0.0;        // normal approximation, continuity- and tie-corrected
  double p_greater = 1;  // one-sided p for "first sample tends to be larger"
};

inline MannWhitney mann_whitney_greater(std::span<const double> x, std::span<const double> y) {
  MannWhitney r;
  const std::size_t nx = x.size(), ny = y.size(), n = nx + ny;
  if (nx == 0 || ny == 0) return r;
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(n);
  for (double v : x) pooled.emplace_back(v, true);
  for (double v : y) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_x = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) rank_sum_x += mid_rank;
    }
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double dnx = static_cast<double>(nx), dny = static_cast<double>(ny), dn = static_cast<double>(n);
  r.u = rank_sum_x - dnx * (dnx + 1) / 2;
  const double mu = dnx * dny / 2;
  const double var = dnx * dny / 12.0 * ((dn + 1) - tie_term / (dn * (dn - 1)));
  if (var <= 0.0) return r;
  r.z = (r.u - mu - 0.5) / std::sqrt(var);
  r.p_greater = 0.5 * std::erfc(r.z / std::sqrt(2.0));
  return r;
}

// ---------------------------------------------------------------------------

struct EvalReport {
  MetricsReport metrics;
  UncertaintySplit split;
  double mean_u = 0.0;
  std::vector<Prediction> predictions;
};

inline std::vector<int> targets(std::span<const Window> ws) {
  std::vector<int> t;
  t.reserve(ws.size());
  for (const Window& w : ws) t.push_back(w.target);
  return t;
}

inline EvalReport evaluate(const nn::EvidenceModel& model, std::span<const Window> ws, std::size_t threads = 1) {
  if (ws.empty()) throw DomainError("evaluate: empty window set");
  EvalReport r;
  r.predictions = predict_all(model, ws, threads);
  const auto truth = targets(ws);
  std::vector<int> pred;
  pred.reserve(ws.size());
  double u_sum = 0.0;
  for (const auto& p : r.predictions) {
    pred.push_back(p.stage);
    u_sum += p.u;
  }
  r.metrics = classification_metrics(pred, truth);
  r.split = uncertainty_split(r.predictions, truth);
  r.mean_u = u_sum / static_cast<double>(ws.size());
  return r;
}

template <class Classifier>
MetricsReport evaluate_baseline(const Classifier& clf, std::span<const Window> ws, std::size_t threads = 1) {
  std::vector<int> pred(ws.size());
  parallel_for(ws.size(), threads, [&](std::size_t i) { pred[i] = clf.predict(ws[i].as_input()); });
  return classification_metrics(pred, targets(ws));
}

struct SweepCell {
  double p_obs = 0.0;
  double p_label = 0.0;
  MetricsReport model;
  MetricsReport baseline;
  UncertaintySplit split;
  double mean_u = 0.0;
  std::vector<double> u_values;  // every window, in test-set order
};

struct SweepReport {
  std::uint64_t seed = 0;
  std::string baseline_name;
  std::vector<double> levels;
  std::vector<SweepCell> cells;  // p_obs-major order

  const SweepCell& cell(double p_obs, double p_label) const {
    for (const auto& c : cells) {
      if (c.p_obs == p_obs && c.p_label == p_label) return c;
    }
    throw DomainError("no sweep cell for (" + std::to_string(p_obs) + ", " + std::to_string(p_label) + ")");
  }
};

inline std::vector<Window> corrupt(std::span<const Window> ws, double p_obs, double p_label, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Window> out;
  out.reserve(ws.size());
  for (const Window& w : ws) out.push_back(apply_window_noise(w, p_obs, p_label, rng));
  return out;
}

/// Evaluates the model and a baseline on independently corrupted copies of
/// `test` for every (p_obs, p_label) in levels x levels. Cell i uses noise
/// seed `seed + i`.
template <class Baseline>
SweepReport noise_sweep(const nn::EvidenceModel& model, const Baseline& baseline, std::string baseline_name,
                        std::span<const Window> test, std::span<const double> levels, std::uint64_t seed,
                        std::size_t threads = 1) {
  if (test.empty()) throw DomainError("noise_sweep: empty test set");
  SweepReport rep;
  rep.seed = seed;
  rep.baseline_name = std::move(baseline_name);
  rep.levels.assign(levels.begin(), levels.end());
  std::size_t index = 0;
  for (double p_obs : levels) {
    for (double p_label : levels) {
      const auto noisy = corrupt(test, p_obs, p_label, seed + index);
      EvalReport ev = evaluate(model, noisy, threads);
      SweepCell cell;
      cell.p_obs = p_obs;
      cell.p_label = p_label;
      cell.model = ev.metrics;
      cell.baseline = evaluate_baseline(baseline, noisy, threads);
      cell.split = std::move(ev.split);
      cell.mean_u = ev.mean_u;
      for (const auto& p : ev.predictions) cell.u_values.push_back(p.u);
      rep.cells.push_back(std::move(cell));
      ++index;
    }
  }
  return rep;
}

inline const std::vector<double>& default_noise_levels() {
  static const std::vector<double> levels{0.0, 0.2, 0.4};
  return levels;
}

// ---------------------------------------------------------------------------
// JSON output

inline nlohmann::json to_json(const MetricsReport& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"confusion", m.confusion}, {"total", m.total}};
}

inline nlohmann::json to_json(const UncertaintySample& s, bool with_values) {
  nlohmann::json j{{"count", s.values.size()}};
  if (s.summary) {
    j["min"] = s.summary->min;
    j["q1"] = s.summary->q1;
    j["median"] = s.summary->median;
    j["q3"] = s.summary->q3;
    j["max"] = s.summary->max;
    j["mean"] = s.mean();
  } else {
    j["empty"] = true;
  }
  if (with_values) j["values"] = s.values;
  return j;
}

inline nlohmann::json to_json(const UncertaintySplit& s, bool with_values) {
  return {{"correct", to_json(s.correct, with_values)}, {"incorrect", to_json(s.incorrect, with_values)}};
}

inline nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"p_obs", c.p_obs},
                     {"p_label", c.p_label},
                     {"model", to_json(c.model)},
                     {"baseline", to_json(c.baseline)},
                     {"mean_u", c.mean_u},
                     {"u", c.u_values},
                     {"uncertainty", to_json(c.split, true)}});
  }
  return {{"seed", r.seed}, {"baseline", r.baseline_name}, {"levels", r.levels}, {"cells", cells}};
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << j.dump(1) << '\n';
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Permutation importance

inline std::vector<std::string> feature_names(std::size_t f_obs, std::size_t f_label = kNumLabelBits) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < f_obs; ++i) names.push_back("o_" + std::to_string(i + 1));
  for (std::size_t i = 0; i < f_label; ++i) names.push_back("l_" + std::to_string(i + 1));
  return names;
}

struct ImportanceReport {
  std::vector<std::string> names;
  std::vector<double> score;
  std::vector<bool> omitted;  // column identical across all windows
  std::vector<std::vector<double>> per_repeat;  // [repeat][feature]
  double clean_accuracy = 0.0;
  std::size_t repeats = 0;
};

/// score[j] = mean over repeats of (clean accuracy - accuracy after shuffling
/// feature column j, i.e. its whole W-row slice, across windows).
/// `predict_batch` maps a window span to predicted stages.
template <class PredictBatch>
ImportanceReport permutation_importance(PredictBatch&& predict_batch, std::span<const Window> ws,
                                        std::size_t repeats, std::uint64_t seed) {
  if (ws.empty()) throw DomainError("permutation_importance: empty window set");
  const std::size_t rows = ws.front().rows, cols = ws.front().cols;
  const auto truth = targets(ws);
  auto accuracy = [&](std::span<const Window> xs) {
    const std::vector<int> pred = predict_batch(xs);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(xs.size());
  };
  ImportanceReport rep;
  rep.names = feature_names(ws.front().obs_cols, cols - ws.front().obs_cols);
  rep.repeats = repeats;
  rep.clean_accuracy = accuracy(ws);
  rep.score.assign(cols, 0.0);
  rep.omitted.assign(cols, false);
  rep.per_repeat.assign(repeats, std::vector<double>(cols, 0.0));

  auto column_equal = [&](const Window& a, const Window& b, std::size_t j) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (a.at(r, j) != b.at(r, j)) return false;
    }
    return true;
  };
  for (std::size_t j = 0; j < cols; ++j) {
    rep.omitted[j] = std::all_of(ws.begin(), ws.end(), [&](const Window& w) { return column_equal(w, ws.front(), j); });
  }

  Rng rng(seed);
  std::vector<std::size_t> perm(ws.size());
  std::vector<Window> shuffled(ws.begin(), ws.end());
  for (std::size_t rep_i = 0; rep_i < repeats; ++rep_i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (rep.omitted[j]) continue;
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(perm));
      for (std::size_t i = 0; i < ws.size(); ++i) {
        for (std::size_t r = 0; r < rows; ++r) shuffled[i].features[r * cols + j] = ws[perm[i]].at(r, j);
      }
      const double drop = rep.clean_accuracy - accuracy(shuffled);
      rep.per_repeat[rep_i][j] = drop;
      for (std::size_t i = 0; i < ws.size(); ++i) {
        for (std::size_t r = 0; r < rows; ++r) shuffled[i].features[r * cols + j] = ws[i].at(r, j);
      }
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) s += rep.per_repeat[r][j];
    rep.score[j] = repeats ? s / static_cast<double>(repeats) : 0.0;
  }
  return rep;
}

inline auto model_batch_predictor(const nn::EvidenceModel& model, std::size_t threads = 1) {
  return [&model, threads](std::span<const Window> xs) {
    const auto preds = predict_all(model, xs, threads);
    std::vector<int> out;
    out.reserve(preds.size());
    for (const auto& p : preds) out.push_back(p.stage);
    return out;
  };
}

inline nlohmann::json to_json(const ImportanceReport& r) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t j = 0; j < r.names.size(); ++j) {
    std::vector<double> reps;
    for (const auto& row : r.per_repeat) reps.push_back(row[j]);
    features.push_back({{"name", r.names[j]}, {"score", r.score[j]}, {"omitted", static_cast<bool>(r.omitted[j])},
                        {"per_repeat", reps}});
  }
  return {{"clean_accuracy", r.clean_accuracy}, {"repeats", r.repeats}, {"features", features}};
}

}  // namespace edlstage::eval
