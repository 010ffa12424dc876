#pragma once

// Central finite-difference check of the training objective gradient.
// Only forward evaluations are used on the numeric side.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "edlstage/edl.hpp"
#include "edlstage/nn.hpp"
#include "edlstage/random.hpp"

namespace edlstage::gradcheck {

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
// near-zero components from being judged on round-off alone.
inline constexpr double kRelativeFloor = 1e-6;

inline double relative_error(double analytic, double numeric, double floor = kRelativeFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct Report {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;

  bool passed(double tol) const { return checked > 0 && max_relative_error < tol; }
};

struct Problem {
  std::vector<std::vector<double>> real;
  std::vector<int> classes;
  std::vector<std::vector<double>> noisy;
  LossConfig loss;
  double beta = 0.3;
};

// Random continuous inputs keep ReLU and pooling kinks away from the probe.
inline Problem random_problem(const nn::EvidenceModel& m, std::size_t n_real, std::size_t n_noisy, Rng& rng) {
  Problem p;
  auto sample = [&] {
    std::vector<double> x(m.input_size());
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    return x;
  };
  for (std::size_t i = 0; i < n_real; ++i) {
    p.real.push_back(sample());
    p.classes.push_back(static_cast<int>(rng.below(m.output_dim())));
  }
  for (std::size_t i = 0; i < n_noisy; ++i) p.noisy.push_back(sample());
  return p;
}

// Randomises weights and biases (biases are zero after init, which puts
// many units exactly on a ReLU kink).
inline nn::EvidenceModel random_model(const nn::BackboneConfig& cfg, Rng& rng, double scale = 0.5) {
  nn::EvidenceModel m(cfg, 0);
  for (double& v : m.params()) v = rng.uniform(-scale, scale);
  return m;
}

inline std::vector<std::vector<std::size_t>> signatures(const nn::EvidenceModel& m, const Problem& p) {
  std::vector<std::vector<std::size_t>> sigs;
  nn::Activations a;
  for (const auto& x : p.real) {
    nn::forward(m, x, a);
    sigs.push_back(nn::activation_signature(a));
  }
  for (const auto& x : p.noisy) {
    nn::forward(m, x, a);
    sigs.push_back(nn::activation_signature(a));
  }
  return sigs;
}

/// Compares batch_objective's analytic gradient with central differences
/// for every parameter (or every `stride`-th one). Coordinates whose
/// perturbation moves any ReLU mask or pooling route are skipped.
inline Report check(nn::EvidenceModel model, const Problem& p, double eps = 1e-5, std::size_t stride = 1) {
  const BatchObjective obj = batch_objective(model, p.real, p.classes, p.noisy, p.loss, p.beta);
  const auto base_sig = signatures(model, p);
  Report rep;
  auto loss_at = [&]() { return batch_objective(model, p.real, p.classes, p.noisy, p.loss, p.beta, {}, false).loss; };
  for (std::size_t i = 0; i < model.param_count(); i += stride) {
    const double orig = model.params()[i];
    model.params()[i] = orig + eps;
    const double up = loss_at();
    const bool kink_up = signatures(model, p) != base_sig;
    model.params()[i] = orig - eps;
    const double down = loss_at();
    const bool kink_down = signatures(model, p) != base_sig;
    model.params()[i] = orig;
    if (kink_up || kink_down) {
      ++rep.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2 * eps);
    const double err = relative_error(obj.grad[i], numeric);
    ++rep.checked;
    if (err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_index = i;
    }
  }
  return rep;
}

// Reduced backbone for a 4 x 8 input.
inline nn::BackboneConfig small_config() {
  nn::BackboneConfig c;
  c.input_rows = 4;
  c.input_cols = 8;
  c.conv1 = {3, 2, 3, 1, 1};
  c.pool1 = {1, 2};
  c.conv2 = {4, 2, 2, 1, 1};
  c.pool2 = {1, 1};
  c.dense = {8, 6, 4};
  return c;
}

}  // namespace edlstage::gradcheck
