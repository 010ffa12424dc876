// Acceptance gate. Prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails. The end-to-end criteria share one default run
// (2000 episodes, default training); determinism repeats that run.

#include <algorithm>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "edlstage/edlstage.hpp"

namespace fs = std::filesystem;
using namespace edlstage;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %2d %-24s %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void dirichlet_exactness() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(4);
    std::vector<double> alpha(k);
    for (double& a : alpha) a = 1.0 + rng.uniform(0.0, 100.0);
    const DirichletParams d(alpha);
    const auto m = mean(d);
    const auto v = variance(d);
    const double u = uncertainty(d);
    long double s = 0;
    for (double a : alpha) s += a;
    for (std::size_t j = 0; j < k; ++j) {
      const long double aj = alpha[j];
      worst = std::max(worst, static_cast<double>(std::fabs(m[j] - aj / s)));
      worst = std::max(worst, static_cast<double>(std::fabs(v[j] - aj * (s - aj) / (s * s * (s + 1)))));
    }
    worst = std::max(worst, static_cast<double>(std::fabs(u - static_cast<long double>(k) / s)));
  }
  const double t = seconds_since(t0);
  report(1, "dirichlet-exactness", worst <= 1e-12 && t < 1.0, fmt("max err %.2e, %.3f s", worst, t));
}

void kl_oracle() {
  const auto t0 = Clock::now();
  boost::math::quadrature::tanh_sinh<double> integrator;
  double worst = 0.0;
  for (double a : {1.0, 2.5, 7.0, 20.0}) {
    for (double b : {1.0, 1.5, 4.0, 12.0, 40.0}) {
      const double log_norm = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
      auto p_log_p = [&](double x) {
        if (x <= 0.0 || x >= 1.0) return 0.0;
        const double lp = (a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - log_norm;
        return std::exp(lp) * lp;
      };
      const double oracle = integrator.integrate(p_log_p, 0.0, 1.0, 1e-13);
      worst = std::max(worst, std::fabs(kl_to_uniform(std::vector<double>{a, b}) - oracle));
    }
  }
  const double t = seconds_since(t0);
  report(2, "kl-quadrature", worst <= 1e-6 && t < 5.0, fmt("20 points, max err %.2e, %.3f s", worst, t));
}

void gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(202);
  const auto model = gradcheck::random_model(gradcheck::small_config(), rng);
  const auto problem = gradcheck::random_problem(model, 4, 4, rng);
  const auto rep = gradcheck::check(model, problem);
  const double t = seconds_since(t0);
  report(3, "gradient-fidelity", rep.passed(1e-4) && t < 30.0,
         fmt("max rel err %.2e over %zu params (%zu kinks skipped), %.2f s", rep.max_relative_error, rep.checked,
             rep.skipped_kinks, t));
}

void rm_equivalence() {
  const auto t0 = Clock::now();
  const SimConfig cfg;
  std::size_t mismatched = 0, steps = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Trace tr = run_episode(cfg, 5000 + seed);
    const auto states = replay(tr);
    bool same = states.size() == tr.size();
    for (std::size_t i = 0; same && i < states.size(); ++i) same = to_index(states[i]) == tr.steps[i].stage;
    mismatched += same ? 0 : 1;
    steps += tr.size();
  }
  const double t = seconds_since(t0);
  report(4, "rm-equivalence", mismatched == 0 && t < 10.0,
         fmt("%zu/1000 episodes differ over %zu steps, %.2f s", mismatched, steps, t));
}

void noise_rate() {
  Rng rng(303);
  const Bits zeros(100000, 0);
  bool ok = true;
  std::string detail;
  for (double p : {0.2, 0.4}) {
    const Bits flipped = flip_noise(zeros, p, rng);
    const double rate = static_cast<double>(std::count(flipped.begin(), flipped.end(), 1)) / 1e5;
    ok = ok && std::fabs(rate - p) <= 0.01;
    detail += fmt("p=%.1f rate %.4f  ", p, rate);
  }
  report(5, "noise-rate", ok, detail);
}

struct RunFiles {
  fs::path dataset, checkpoint, sweep;
};

struct RunResult {
  nn::Checkpoint checkpoint;
  pipeline::Partitions parts;
  eval::SweepReport sweep;
  double train_seconds = 0.0;
};

// simulate -> train -> sweep at defaults with fixed seeds, writing each artifact
RunResult full_run(const RunFiles& files) {
  RunResult r;
  const auto t0 = Clock::now();
  const Dataset d = pipeline::simulate(pipeline::SimulateArgs{});
  write_dataset(d, files.dataset);
  pipeline::TrainArgs args;
  args.train.seed = 1;
  auto out = pipeline::train_on(d, args);
  r.train_seconds = seconds_since(t0);
  nn::write_checkpoint(out.checkpoint, files.checkpoint);
  const auto logreg = pipeline::make_baseline("logreg", out.parts.train, 1);
  r.sweep = eval::noise_sweep(out.checkpoint.model, logreg, logreg.name(), out.parts.test,
                              eval::default_noise_levels(), 1);
  eval::write_json(eval::to_json(r.sweep), files.sweep);
  r.checkpoint = std::move(out.checkpoint);
  r.parts = std::move(out.parts);
  return r;
}

void end_to_end(const RunResult& run) {
  const auto& test = run.parts.test;
  const auto& model = run.checkpoint.model;
  const auto clean = eval::evaluate(model, test);

  std::vector<double> base_acc;
  for (const char* name : {"logreg", "knn", "majority"}) {
    const auto clf = pipeline::make_baseline(name, run.parts.train, 1);
    base_acc.push_back(eval::evaluate_baseline(clf, test).accuracy);
  }
  const double acc = clean.metrics.accuracy;
  const double best = std::max(base_acc[0], base_acc[1]);
  report(6, "end-to-end-learning",
         acc >= 0.60 && acc > base_acc[2] && acc >= best - 0.10 && run.train_seconds < 600.0,
         fmt("acc %.4f, logreg %.4f, knn %.4f, majority %.4f, simulate+train %.0f s", acc, base_acc[0],
             base_acc[1], base_acc[2], run.train_seconds));

  const auto& split = clean.split;
  if (split.incorrect.values.size() < 20) {
    std::printf("warning: only %zu incorrect test windows, uncertainty separation skipped\n",
                split.incorrect.values.size());
    report(7, "uncertainty-separation", true, "skipped");
  } else {
    const auto mw = eval::mann_whitney_greater(split.incorrect.values, split.correct.values);
    const double mi = split.incorrect.summary->median, mc = split.correct.summary->median;
    report(7, "uncertainty-separation", mi > mc && mw.p_greater < 0.01,
           fmt("median u incorrect %.4f vs correct %.4f, p %.2e", mi, mc, mw.p_greater));
  }

  const auto& c00 = run.sweep.cell(0.0, 0.0);
  const auto& c20 = run.sweep.cell(0.2, 0.0);
  const auto& c40 = run.sweep.cell(0.4, 0.0);
  const auto mw = eval::mann_whitney_greater(c40.u_values, c00.u_values);
  report(8, "ood-uncertainty-rise",
         c40.mean_u - c00.mean_u >= 0.10 && mw.p_greater < 0.01 && test.size() >= 500,
         fmt("mean u %.4f -> %.4f on %zu windows, p %.2e", c00.mean_u, c40.mean_u, test.size(), mw.p_greater));

  report(9, "monotone-trend", c20.mean_u >= c00.mean_u - 0.02 && c40.mean_u >= c20.mean_u - 0.02 &&
                                  c40.mean_u >= c00.mean_u,
         fmt("mean u %.4f, %.4f, %.4f", c00.mean_u, c20.mean_u, c40.mean_u));
}

void label_bit_importance(const RunResult& run) {
  const auto predictor = eval::model_batch_predictor(run.checkpoint.model);
  const auto imp = eval::permutation_importance(predictor, run.parts.test, 5, 1);
  const std::size_t l1 = imp.names.size() - 2, l2 = imp.names.size() - 1;
  // the gap must also hold in every repeat, not only on average
  std::size_t wins = 0;
  for (const auto& rep : imp.per_repeat) wins += rep[l1] > rep[l2] ? 1 : 0;
  report(11, "label-bit-importance", imp.score[l1] > imp.score[l2] && wins == imp.repeats,
         fmt("l_1 %.4f vs l_2 %.4f, l_1 ahead in %zu/%zu repeats", imp.score[l1], imp.score[l2], wins,
             imp.repeats));
}

}  // namespace

int main() {
  dirichlet_exactness();
  kl_oracle();
  gradient_fidelity();
  rm_equivalence();
  noise_rate();

  const fs::path dir = fs::temp_directory_path() / "edlstage_acceptance";
  fs::create_directories(dir);
  const RunFiles a{dir / "a.data", dir / "a.ckpt", dir / "a.json"};
  const RunFiles b{dir / "b.data", dir / "b.ckpt", dir / "b.json"};
  try {
    const RunResult first = full_run(a);
    end_to_end(first);
    full_run(b);
    const bool same_data = slurp(a.dataset) == slurp(b.dataset);
    const bool same_ckpt = slurp(a.checkpoint) == slurp(b.checkpoint);
    const bool same_sweep = slurp(a.sweep) == slurp(b.sweep);
    report(10, "determinism", same_data && same_ckpt && same_sweep,
           fmt("dataset %s, checkpoint %s, sweep %s", same_data ? "identical" : "differs",
               same_ckpt ? "identical" : "differs", same_sweep ? "identical" : "differs"));
    label_bit_importance(first);
  } catch (const std::exception& e) {
    std::printf("error: %s\n", e.what());
    ++failures;
  }
  fs::remove_all(dir);
  std::printf("%s: %d criterion failure(s)\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
