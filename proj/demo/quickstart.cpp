// Small end-to-end run: simulate a few hundred episodes, train briefly,
// and print accuracy plus mean uncertainty on clean and corrupted test windows.

#include <iostream>

#include "edlstage/edlstage.hpp"

int main() {
  using namespace edlstage;

  pipeline::SimulateArgs sim;
  sim.episodes = 300;
  sim.seed = 11;
  const Dataset data = pipeline::simulate(sim);

  pipeline::TrainArgs args;
  args.train.epochs = 5;
  args.train.seed = 3;
  const auto out = pipeline::train_on(data, args, [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << " loss " << e.train_loss << '\n';
  });
  const auto& model = out.checkpoint.model;

  const auto clean = eval::evaluate(model, out.parts.test);
  const auto noisy = eval::evaluate(model, eval::corrupt(out.parts.test, 0.4, 0.0, 5));
  std::cout << "test windows: " << out.parts.test.size() << '\n'
            << "clean accuracy " << clean.metrics.accuracy << ", mean u " << clean.mean_u << '\n'
            << "p_obs=0.4 accuracy " << noisy.metrics.accuracy << ", mean u " << noisy.mean_u << '\n';

  const Window& w = out.parts.test.front();
  const Prediction p = predict(model, w);
  std::cout << "first window: true stage " << w.target << ", predicted " << p.stage << " (u=" << p.u << ")\n";
}
