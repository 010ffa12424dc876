// edlstage command-line tool.
//
//   edlstage simulate   --out data.txt [--episodes N ...]
//   edlstage train      --data data.txt --checkpoint model.ckpt [--log train.jsonl]
//   edlstage eval       --data data.txt --checkpoint model.ckpt
//   edlstage baselines  --data data.txt --checkpoint model.ckpt
//   edlstage sweep      --data data.txt --checkpoint model.ckpt --out sweep.json
//   edlstage importance --data data.txt --checkpoint model.ckpt --out importance.json
//   edlstage gradcheck
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edlstage/edlstage.hpp"
#include "edlstage/gradcheck.hpp"

namespace {

using namespace edlstage;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

void print_counts(const std::vector<Window>& ws, std::ostream& os) {
  const auto c = class_counts(ws);
  os << "windows: " << ws.size() << " (stage0=" << c[0] << " stage1=" << c[1] << " stage2=" << c[2] << ")\n";
}

std::vector<Window> select(const pipeline::Partitions& parts, const std::string& which, const Dataset& d) {
  if (which == "test") return parts.test;
  if (which == "val") return parts.val;
  if (which == "train") return parts.train;
  if (which == "all") return d.windows();
  throw ConfigError("unknown partition '" + which + "'");
}

struct Loaded {
  Dataset data;
  nn::Checkpoint ck;
  pipeline::Partitions parts;
};

Loaded load(const std::string& data_path, const std::string& ck_path) {
  Loaded l;
  l.data = read_dataset(data_path);
  l.ck = nn::read_checkpoint(ck_path);
  pipeline::require_compatible(l.ck.model, l.data);
  l.parts = pipeline::checkpoint_partitions(l.data, l.ck);
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attack-stage inference with evidential uncertainty"};
  app.set_config("--config", "", "TOML/INI file supplying flag values (flags on the command line win)");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  // simulate
  pipeline::SimulateArgs sim_args;
  std::string sim_out, label_mode = "pulse";
  auto* sim = app.add_subcommand("simulate", "Run attack episodes and write a windowed dataset");
  sim->add_option("--episodes", sim_args.episodes, "Number of episodes")->capture_default_str();
  sim->add_option("--nodes", sim_args.sim.n_nodes, "Nodes in the LAN")->capture_default_str();
  sim->add_option("--entry", sim_args.sim.entry_node, "Entry node index")->capture_default_str();
  sim->add_option("--max-steps", sim_args.sim.max_steps, "Step budget per episode")->capture_default_str();
  sim->add_option("--epsilon", sim_args.sim.epsilon, "Attacker exploration probability")->capture_default_str();
  sim->add_flag("--blocked-terminates", sim_args.sim.blocked_terminates, "End the episode on a blocked goal attempt");
  sim->add_option("--window", sim_args.window_len, "Rolling window length")->capture_default_str();
  sim->add_option("--label-mode", label_mode, "pulse or latched label bits")
      ->check(CLI::IsMember({"pulse", "latched"}))
      ->capture_default_str();
  sim->add_option("--out", sim_out, "Dataset file to write")->required();

  // train
  pipeline::TrainArgs train_args;
  std::string train_data, train_ck, train_log, anneal_mode = "reciprocal";
  std::vector<double> ratios{0.8, 0.1, 0.1};
  auto* tr = app.add_subcommand("train", "Train the evidential model");
  tr->add_option("--data", train_data, "Dataset file")->required();
  tr->add_option("--checkpoint", train_ck, "Checkpoint to write")->required();
  tr->add_option("--log", train_log, "Per-epoch JSON-lines log");
  tr->add_option("--epochs", train_args.train.epochs, "Training epochs")->capture_default_str();
  tr->add_option("--batch-size", train_args.train.batch_size, "Real samples per batch")->capture_default_str();
  tr->add_option("--lr", train_args.train.lr, "Adam learning rate")->capture_default_str();
  tr->add_option("--w-real", train_args.loss.w_real, "Weight of the real-sample term")->capture_default_str();
  tr->add_option("--w-noisy", train_args.loss.w_noisy, "Weight of the noisy-sample term")->capture_default_str();
  tr->add_option("--w-kl", train_args.loss.w_kl, "KL regulariser weight")->capture_default_str();
  tr->add_option("--anneal-epochs", train_args.loss.anneal_epochs, "Annealing threshold epoch")->capture_default_str();
  tr->add_option("--anneal-mode", anneal_mode, "reciprocal or linear")
      ->check(CLI::IsMember({"reciprocal", "linear"}))
      ->capture_default_str();
  tr->add_option("--ood-p", train_args.loss.ood_flip_p, "Bit-flip probability for OOD samples")->capture_default_str();
  tr->add_flag("--rebalance", train_args.loss.rebalance, "Weight real samples to equalise classes");
  tr->add_option("--split", ratios, "train/val/test ratios")->expected(3)->capture_default_str();
  tr->add_option("--split-seed", train_args.split_seed, "Seed of the episode split")->capture_default_str();
  tr->add_option("--conv1-channels", train_args.backbone.conv1.out_channels)->capture_default_str();
  tr->add_option("--conv2-channels", train_args.backbone.conv2.out_channels)->capture_default_str();
  tr->add_option("--dense", train_args.backbone.dense, "Three decreasing hidden widths")
      ->expected(3)
      ->capture_default_str();

  // eval / baselines / sweep / importance share inputs
  std::string data_path, ck_path, out_path, partition = "test", baseline = "logreg";
  std::size_t knn_k = 5, repeats = 5, max_windows = 0;
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--data", data_path, "Dataset file")->required();
    sub->add_option("--checkpoint", ck_path, "Checkpoint file")->required();
    sub->add_option("--partition", partition, "test, val, train or all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}))
        ->capture_default_str();
  };
  auto* ev = app.add_subcommand("eval", "Metrics and uncertainty split on one partition");
  add_inputs(ev);
  ev->add_option("--out", out_path, "Also write the report as JSON");

  auto* bl = app.add_subcommand("baselines", "Logistic regression, kNN and majority-class metrics");
  add_inputs(bl);
  bl->add_option("--k", knn_k, "Neighbours for kNN")->capture_default_str();
  bl->add_option("--out", out_path, "Also write the report as JSON");

  std::vector<double> levels = eval::default_noise_levels();
  auto* sw = app.add_subcommand("sweep", "Observation x label noise sweep");
  add_inputs(sw);
  sw->add_option("--out", out_path, "Sweep report (JSON)")->required();
  sw->add_option("--baseline", baseline, "logreg, knn or majority")
      ->check(CLI::IsMember({"logreg", "knn", "majority"}))
      ->capture_default_str();
  sw->add_option("--k", knn_k, "Neighbours for kNN")->capture_default_str();
  sw->add_option("--levels", levels, "Noise levels applied on both axes")->capture_default_str();

  auto* im = app.add_subcommand("importance", "Permutation feature importance");
  add_inputs(im);
  im->add_option("--out", out_path, "Importance report (JSON)")->required();
  im->add_option("--repeats", repeats, "Permutations per feature")->capture_default_str();
  im->add_option("--max-windows", max_windows, "Use at most this many windows (0 = all)")->capture_default_str();

  double tolerance = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the training gradient");
  gc->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*sim) {
      sim_args.seed = g.seed;
      sim_args.threads = g.threads;
      sim_args.label_mode = parse_label_mode(label_mode);
      const Dataset d = pipeline::simulate(sim_args);
      write_dataset(d, sim_out);
      std::cout << "episodes: " << sim_args.episodes << "\n";
      print_counts(d.windows(), std::cout);
    } else if (*tr) {
      train_args.train.seed = g.seed;
      train_args.train.threads = g.threads;
      train_args.loss.anneal = parse_anneal_mode(anneal_mode);
      train_args.ratios = {ratios[0], ratios[1], ratios[2]};
      const Dataset d = read_dataset(train_data);
      const auto t0 = std::chrono::steady_clock::now();
      auto out = pipeline::train_on(d, train_args, [](const EpochLog& e) { std::cout << to_json(e).dump() << '\n'; });
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      nn::write_checkpoint(out.checkpoint, train_ck);
      if (!train_log.empty()) pipeline::write_train_log(out.log, train_log);
      std::cerr << "trained " << train_args.train.epochs << " epochs in " << secs << " s\n";
    } else if (*ev) {
      const Loaded l = load(data_path, ck_path);
      const auto ws = select(l.parts, partition, l.data);
      const auto report = eval::evaluate(l.ck.model, ws, g.threads);
      const auto j = pipeline::eval_to_json(report);
      std::cout << j.dump(1) << '\n';
      if (!out_path.empty()) eval::write_json(j, out_path);
    } else if (*bl) {
      const Loaded l = load(data_path, ck_path);
      const auto ws = select(l.parts, partition, l.data);
      nlohmann::json j = nlohmann::json::object();
      for (const std::string name : {"logreg", "knn", "majority"}) {
        const auto clf = pipeline::make_baseline(name, l.parts.train, g.seed, knn_k);
        j[name] = eval::to_json(eval::evaluate_baseline(clf, ws, g.threads));
      }
      std::cout << j.dump(1) << '\n';
      if (!out_path.empty()) eval::write_json(j, out_path);
    } else if (*sw) {
      const Loaded l = load(data_path, ck_path);
      const auto ws = select(l.parts, partition, l.data);
      const auto clf = pipeline::make_baseline(baseline, l.parts.train, g.seed, knn_k);
      const auto rep = eval::noise_sweep(l.ck.model, clf, baseline, ws, levels, g.seed, g.threads);
      eval::write_json(eval::to_json(rep), out_path);
      for (const auto& c : rep.cells) {
        std::cout << "p_obs=" << c.p_obs << " p_label=" << c.p_label << " acc=" << c.model.accuracy
                  << " baseline_acc=" << c.baseline.accuracy << " mean_u=" << c.mean_u << '\n';
      }
    } else if (*im) {
      const Loaded l = load(data_path, ck_path);
      auto ws = select(l.parts, partition, l.data);
      if (max_windows > 0 && ws.size() > max_windows) ws.resize(max_windows);
      const auto rep =
          eval::permutation_importance(eval::model_batch_predictor(l.ck.model, g.threads), ws, repeats, g.seed);
      eval::write_json(eval::to_json(rep), out_path);
      for (std::size_t j = 0; j < rep.names.size(); ++j) {
        std::cout << rep.names[j] << ' ' << (rep.omitted[j] ? std::string("omitted") : std::to_string(rep.score[j]))
                  << '\n';
      }
    } else if (*gc) {
      Rng rng(g.seed);
      const auto model = gradcheck::random_model(gradcheck::small_config(), rng);
      const auto problem = gradcheck::random_problem(model, 4, 4, rng);
      const auto rep = gradcheck::check(model, problem);
      std::cout << "checked=" << rep.checked << " skipped_kinks=" << rep.skipped_kinks
                << " max_relative_error=" << rep.max_relative_error << '\n';
      if (!rep.passed(tolerance)) {
        std::cout << "FAIL\n";
        return kExitRuntime;
      }
      std::cout << "PASS\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
