#pragma once

// End-to-end steps shared by the command-line tool and the acceptance
// suite: simulate -> train -> evaluate / sweep / importance.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <variant>
#include <vector>

#include "edlstage/baselines.hpp"
#include "edlstage/data.hpp"
#include "edlstage/edl.hpp"
#include "edlstage/eval.hpp"
#include "edlstage/nn.hpp"

namespace edlstage::pipeline {

struct SimulateArgs {
  std::size_t episodes = 2000;
  SimConfig sim;
  std::size_t window_len = 4;
  LabelMode label_mode = LabelMode::Pulse;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

inline Dataset simulate(const SimulateArgs& a) {
  return simulate_dataset(a.sim, a.episodes, a.seed, a.window_len, a.label_mode, a.threads);
}

struct Partitions {
  std::vector<Window> train, val, test;
};

inline Partitions partition(const Dataset& d, const SplitRatios& ratios, std::uint64_t seed) {
  const auto parts = split(d, ratios, seed);
  return {parts[0].windows(), parts[1].windows(), parts[2].windows()};
}

struct TrainArgs {
  nn::BackboneConfig backbone;  // input shape is taken from the dataset
  LossConfig loss;
  TrainOptions train;
  SplitRatios ratios;
  std::uint64_t split_seed = 7;
};

struct TrainOutput {
  nn::Checkpoint checkpoint;
  std::vector<EpochLog> log;
  Partitions parts;
};

inline nlohmann::json loss_to_json(const LossConfig& c) {
  return {{"w_real", c.w_real},   {"w_noisy", c.w_noisy},
          {"w_kl", c.w_kl},       {"anneal_epochs", c.anneal_epochs},
          {"ood_flip_p", c.ood_flip_p}, {"anneal", to_string(c.anneal)},
          {"rebalance", c.rebalance}};
}

inline TrainOutput train_on(const Dataset& d, TrainArgs args,
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
  args.backbone.input_rows = d.meta.window_len;
  args.backbone.input_cols = d.meta.f_obs + d.meta.f_label;
  TrainOutput out;
  out.parts = partition(d, args.ratios, args.split_seed);
  TrainResult res = train(out.parts.train, out.parts.val, args.backbone, args.loss, args.train, on_epoch);
  out.log = std::move(res.log);
  out.checkpoint.model = std::move(res.model);
  out.checkpoint.epoch = args.train.epochs;
  out.checkpoint.meta = {
      {"split", {{"seed", args.split_seed}, {"ratios", {args.ratios.train, args.ratios.val, args.ratios.test}}}},
      {"data",
       {{"n_nodes", d.meta.sim.n_nodes}, {"window_len", d.meta.window_len}, {"f_obs", d.meta.f_obs},
        {"f_label", d.meta.f_label}, {"dataset_seed", d.meta.seed}}},
      {"loss", loss_to_json(args.loss)},
      {"train",
       {{"epochs", args.train.epochs}, {"batch_size", args.train.batch_size}, {"lr", args.train.lr},
        {"seed", args.train.seed}}}};
  return out;
}

inline void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& e : log) os << to_json(e).dump() << '\n';
}

// Split used when the checkpoint was trained (defaults if it carries none).
inline Partitions checkpoint_partitions(const Dataset& d, const nn::Checkpoint& ck) {
  SplitRatios ratios;
  std::uint64_t seed = TrainArgs{}.split_seed;
  if (ck.meta.contains("split")) {
    const auto& s = ck.meta.at("split");
    seed = s.at("seed").get<std::uint64_t>();
    ratios = {s.at("ratios").at(0).get<double>(), s.at("ratios").at(1).get<double>(),
              s.at("ratios").at(2).get<double>()};
  }
  return partition(d, ratios, seed);
}

inline void require_compatible(const nn::EvidenceModel& m, const Dataset& d) {
  const auto& c = m.config();
  const std::size_t cols = d.meta.f_obs + d.meta.f_label;
  if (c.input_rows != d.meta.window_len || c.input_cols != cols) {
    throw ShapeError("checkpoint expects " + std::to_string(c.input_rows) + "x" + std::to_string(c.input_cols) +
                     " windows but dataset provides " + std::to_string(d.meta.window_len) + "x" +
                     std::to_string(cols));
  }
}

// ---------------------------------------------------------------------------
// Baseline selection

class AnyBaseline {
 public:
  using Variant = std::variant<baselines::LogRegModel, baselines::KnnClassifier, baselines::MajorityClassifier>;

  AnyBaseline(std::string name, Variant impl) : name_(std::move(name)), impl_(std::move(impl)) {}

  int predict(std::span<const double> x) const {
    return std::visit([&](const auto& clf) { return clf.predict(x); }, impl_);
  }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  Variant impl_;
};

inline AnyBaseline make_baseline(const std::string& name, std::span<const Window> train_windows,
                                 std::uint64_t seed, std::size_t knn_k = 5) {
  auto samples = baselines::flatten(train_windows);
  if (name == "logreg") {
    baselines::LogRegOptions opts;
    opts.seed = seed;
    return {name, baselines::logreg_train(samples, opts)};
  }
  if (name == "knn") return {name, baselines::KnnClassifier{std::move(samples), knn_k}};
  if (name == "majority") return {name, baselines::majority_baseline(samples)};
  throw ConfigError("unknown baseline '" + name + "' (expected logreg, knn or majority)");
}

// ---------------------------------------------------------------------------

inline nlohmann::json eval_to_json(const eval::EvalReport& r) {
  return {{"metrics", eval::to_json(r.metrics)},
          {"mean_u", r.mean_u},
          {"uncertainty", eval::to_json(r.split, false)}};
}

}  // namespace edlstage::pipeline
