#include <catch_amalgamated.hpp>
#include <cmath>

#include "edlstage/edl.hpp"
#include "edlstage/gradcheck.hpp"

using namespace edlstage;
using Catch::Matchers::WithinAbs;

namespace {

// 4 x 8 windows whose class is written into two columns of every row.
std::vector<Window> toy_windows(std::size_t n, Rng& rng) {
  std::vector<Window> ws;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 3);
    Window w{4, 8, 6, Bits(32, 0), cls, i, 0};
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 2; c < 8; ++c) w.features[r * 8 + c] = static_cast<std::uint8_t>(rng.below(2));
      w.features[r * 8 + 0] = cls == 1;
      w.features[r * 8 + 1] = cls == 2;
    }
    ws.push_back(std::move(w));
  }
  return ws;
}

double accuracy(const nn::EvidenceModel& m, std::span<const Window> ws) {
  std::size_t ok = 0;
  for (const auto& w : ws) ok += predict(m, w).stage == w.target;
  return static_cast<double>(ok) / static_cast<double>(ws.size());
}

}  // namespace

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.w_real = 0.7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  c.ood_flip_p = 1.5;
  CHECK_THROWS_AS(c.validate(), DomainError);
  CHECK(parse_anneal_mode("linear") == AnnealMode::Linear);
  CHECK_THROWS_AS(parse_anneal_mode("cosine"), ConfigError);
}

TEST_CASE("beta schedule") {
  LossConfig c;
  CHECK_THAT(beta_schedule(1, c), WithinAbs(0.3, 1e-15));
  CHECK_THAT(beta_schedule(10, c), WithinAbs(0.03, 1e-15));
  CHECK_THAT(beta_schedule(24, c), WithinAbs(0.3 / 24, 1e-15));
  CHECK_THAT(beta_schedule(25, c), WithinAbs(0.3, 1e-15));
  CHECK_THAT(beta_schedule(80, c), WithinAbs(0.3, 1e-15));
  CHECK_THROWS_AS(beta_schedule(0, c), ConfigError);
  c.anneal = AnnealMode::Linear;
  CHECK_THAT(beta_schedule(5, c), WithinAbs(0.3 * 5 / 25, 1e-15));
  CHECK_THAT(beta_schedule(30, c), WithinAbs(0.3, 1e-15));
}

TEST_CASE("loss_l1 examples") {
  const LossConfig c;
  const std::vector<Logits> zero{{0, 0, 0}};
  const std::vector<int> cls{1};
  CHECK_THAT(loss_l1(zero, cls, {}, c), WithinAbs(0.65 * std::log(2.0), 1e-15));
  CHECK_THAT(loss_l1({}, {}, zero, c), WithinAbs(0.35 * 3 * std::log(2.0), 1e-15));
  CHECK_THAT(loss_l1(zero, cls, zero, c), WithinAbs(0.65 * std::log(2.0) + 0.35 * 3 * std::log(2.0), 1e-15));

  // perfect discrimination drives the loss to zero
  double prev = INFINITY;
  for (double s : {1.0, 5.0, 20.0, 60.0}) {
    const std::vector<Logits> real{{-s, s, -s}}, noisy{{-s, -s, -s}};
    const double l = loss_l1(real, cls, noisy, c);
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-25);
  CHECK_THROWS_AS(loss_l1({}, {}, {}, c), DomainError);
}

TEST_CASE("loss_l1 logit gradient") {
  Rng rng(3);
  LossConfig c;
  std::vector<Logits> real(5, Logits(3)), noisy(4, Logits(3));
  std::vector<int> cls;
  for (auto& f : real) {
    for (double& v : f) v = rng.uniform(-4, 4);
    cls.push_back(static_cast<int>(rng.below(3)));
  }
  for (auto& f : noisy) {
    for (double& v : f) v = rng.uniform(-4, 4);
  }
  const std::vector<double> weights{0.5, 1.5, 1.0, 2.0, 0.25};
  const auto terms = loss_l1_terms(real, cls, noisy, c, weights);
  const double h = 1e-6;
  for (std::size_t i = 0; i < real.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      auto up = real, down = real;
      up[i][k] += h;
      down[i][k] -= h;
      const double fd =
          (loss_l1_terms(up, cls, noisy, c, weights).value - loss_l1_terms(down, cls, noisy, c, weights).value) / (2 * h);
      CHECK_THAT(terms.grad_real[i][k], WithinAbs(fd, 1e-8));
    }
  }
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      auto up = noisy, down = noisy;
      up[i][k] += h;
      down[i][k] -= h;
      const double fd = (loss_l1(real, cls, up, c) - loss_l1(real, cls, down, c)) / (2 * h);
      CHECK_THAT(terms.grad_noisy[i][k], WithinAbs(fd, 1e-8));
    }
  }
}

TEST_CASE("loss_l2 examples") {
  CHECK_THAT(loss_l2(DirichletParams({5, 1, 1}), 0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(loss_l2(DirichletParams({5, 2, 2}), 0), WithinAbs(0.12509280256139, 1e-12));
  CHECK_THAT(loss_l2(DirichletParams({5, 3.5, 1.25}), 0),
             WithinAbs(loss_l2(DirichletParams({5, 1.25, 3.5}), 0), 1e-15));
  CHECK(loss_l2(DirichletParams({2, 7, 1}), 1) > 0.0);
  CHECK_THROWS_AS(loss_l2(DirichletParams({2, 2, 2}), 3), DomainError);
}

TEST_CASE("loss_l2 logit gradient") {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    Logits f{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const std::size_t k = rng.below(3);
    const auto g = loss_l2_logit_gradient(f, k);
    CHECK(g[k] == 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      // lgamma rounding (~1e-13 at large alpha) swamps a 1e-6 step
      auto up = f, down = f;
      up[j] += 1e-4;
      down[j] -= 1e-4;
      const double fd = (loss_l2(alpha_from_logits(up), k) - loss_l2(alpha_from_logits(down), k)) / 2e-4;
      CHECK_THAT(g[j], WithinAbs(fd, 1e-7 * std::max(1.0, std::abs(fd))));
    }
  }
  // above the clamp the evidence is constant
  CHECK(loss_l2_logit_gradient(Logits{0, 40, 1}, 0)[1] == 0.0);
}

TEST_CASE("predictions from logits") {
  const auto p0 = predict_from_logits(Logits{0, 0, 0});
  CHECK(p0.stage == 0);
  CHECK_THAT(p0.u, WithinAbs(0.5, 1e-15));
  for (double v : p0.p_hat) CHECK_THAT(v, WithinAbs(1.0 / 3, 1e-15));

  const auto p1 = predict_from_logits(Logits{std::log(10.0), -800, -800});
  CHECK(p1.stage == 0);
  CHECK_THAT(p1.alpha[0], WithinAbs(11.0, 1e-12));
  CHECK_THAT(p1.u, WithinAbs(3.0 / 13, 1e-14));

  const auto p2 = predict_from_logits(Logits{-50, -60, -70});
  CHECK_THAT(p2.u, WithinAbs(1.0, 1e-15));
  CHECK(p2.u <= 1.0);

  // clamp keeps huge logits finite
  const auto p3 = predict_from_logits(Logits{1e6, 0, 0});
  CHECK(std::isfinite(p3.alpha[0]));
  CHECK(p3.stage == 0);
  CHECK_THROWS_AS(predict_from_logits(Logits{NAN, 0, 0}), InvalidEvidenceError);

  // ties go to the lowest class
  CHECK(predict_from_logits(Logits{1, 2, 2}).stage == 1);
}

TEST_CASE("predicted stage is invariant to increasing transforms of the evidence") {
  Rng rng(5);
  for (int rep = 0; rep < 500; ++rep) {
    Logits f{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const int stage = predict_from_logits(f).stage;
    for (auto g : {+[](double x) { return x + 3.0; }, +[](double x) { return 2 * x - 1; },
                   +[](double x) { return std::log(std::exp(x) + 5.0); }}) {
      Logits t{g(f[0]), g(f[1]), g(f[2])};
      CHECK(predict_from_logits(t).stage == stage);
    }
  }
}

TEST_CASE("batch objective gradient and thread independence") {
  Rng rng(6);
  const auto m = gradcheck::random_model(gradcheck::small_config(), rng);
  const auto p = gradcheck::random_problem(m, 20, 20, rng);
  const auto one = batch_objective(m, p.real, p.classes, p.noisy, p.loss, 0.2, {}, true, 1);
  const auto four = batch_objective(m, p.real, p.classes, p.noisy, p.loss, 0.2, {}, true, 4);
  CHECK(one.loss == four.loss);
  CHECK(one.grad == four.grad);
  const auto no_grad = batch_objective(m, p.real, p.classes, p.noisy, p.loss, 0.2, {}, false, 1);
  CHECK(no_grad.loss == one.loss);
  CHECK_THAT(one.loss, WithinAbs(one.l1 + 0.2 * one.l2, 1e-14));

  auto small = p;
  small.real.resize(3);
  small.classes.resize(3);
  small.noisy.resize(2);
  small.beta = 0.7;
  CHECK(gradcheck::check(m, small).passed(1e-4));
}

TEST_CASE("training") {
  Rng rng(7);
  const auto ws = toy_windows(60, rng);
  const auto cfg = gradcheck::small_config();
  TrainOptions opts;
  opts.seed = 11;
  opts.batch_size = 16;
  opts.lr = 3e-3;

  SECTION("zero epochs returns the initialised model") {
    opts.epochs = 0;
    const auto r = train(ws, {}, cfg, LossConfig{}, opts);
    CHECK(r.model == nn::init(cfg, 11));
    CHECK(r.log.empty());
  }
  SECTION("separable toy task is learned within 400 epochs") {
    opts.epochs = 400;
    std::size_t epochs_needed = 0;
    nn::EvidenceModel model;
    const auto r = train(ws, ws, cfg, LossConfig{}, opts, [&](const EpochLog& e) {
      if (epochs_needed == 0 && e.val_accuracy == 1.0) epochs_needed = e.epoch;
    });
    INFO("first epoch at 100%: " << epochs_needed);
    CHECK(epochs_needed > 0);
    CHECK(accuracy(r.model, ws) == 1.0);
    REQUIRE(r.log.size() == 400);
    CHECK(r.log[0].beta == 0.3);
    CHECK(r.log[9].beta == Catch::Approx(0.03));
    CHECK(r.log.back().train_loss < r.log.front().train_loss);
  }
  SECTION("same seed gives identical parameters for any thread count") {
    opts.epochs = 3;
    const auto a = train(ws, ws, cfg, LossConfig{}, opts);
    opts.threads = 3;
    const auto b = train(ws, ws, cfg, LossConfig{}, opts);
    CHECK(a.model == b.model);
    CHECK(a.log.back().val_loss == b.log.back().val_loss);
    opts.seed = 12;
    CHECK_FALSE(train(ws, ws, cfg, LossConfig{}, opts).model == a.model);
  }
  SECTION("rebalancing weights") {
    const auto w = balanced_weights(ws);
    double total = 0;
    for (double v : w) total += v;
    CHECK_THAT(total / static_cast<double>(w.size()), WithinAbs(1.0, 1e-12));
    LossConfig lc;
    lc.rebalance = true;
    opts.epochs = 2;
    CHECK_NOTHROW(train(ws, {}, cfg, lc, opts));
  }
  SECTION("bad inputs") {
    opts.epochs = 1;
    CHECK_THROWS_AS(train({}, {}, cfg, LossConfig{}, opts), ConfigError);
    CHECK_THROWS_AS(train(ws, {}, nn::BackboneConfig{}, LossConfig{}, opts), ShapeError);
  }
  SECTION("divergence is reported with context") {
    opts.epochs = 1;
    opts.lr = 1e308;
    opts.batch_size = 8;
    CHECK_THROWS_MATCHES(train(ws, {}, cfg, LossConfig{}, opts), DivergenceError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("epoch 1")));
  }
}
