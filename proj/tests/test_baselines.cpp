#include <catch_amalgamated.hpp>

#include "edlstage/baselines.hpp"

using namespace edlstage;
using namespace edlstage::baselines;
using Catch::Matchers::WithinAbs;

TEST_CASE("logistic regression separates two clusters") {
  std::vector<FlatSample> s;
  Rng rng(1);
  for (int i = 0; i < 40; ++i) {
    s.push_back({{rng.uniform(-3, -1)}, 0});
    s.push_back({{rng.uniform(1, 3)}, 1});
  }
  LogRegOptions o;
  o.seed = 4;
  const auto m = logreg_train(s, o);
  std::size_t ok = 0;
  for (const auto& x : s) ok += m.predict(x.x) == x.y;
  CHECK(ok == s.size());
  CHECK(m.warning.empty());
  // deterministic under the seed
  CHECK(logreg_train(s, o).weights == m.weights);
}

TEST_CASE("zero weights predict the lowest class") {
  LogRegModel m;
  m.n_features = 2;
  m.weights.assign(3 * 3, 0.0);
  CHECK(m.predict(std::vector<double>{4.0, -1.0}) == 0);
  CHECK_THROWS_AS(m.predict(std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("single-class training data gives a constant predictor") {
  const std::vector<FlatSample> s{{{1.0, 0.0}, 2}, {{0.0, 1.0}, 2}};
  const auto m = logreg_train(s);
  REQUIRE(m.constant_class.has_value());
  CHECK(m.predict(std::vector<double>{5.0, 5.0}) == 2);
  CHECK_FALSE(m.warning.empty());
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(2);
  std::vector<FlatSample> s;
  for (int i = 0; i < 12; ++i) {
    s.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 1)},
                 static_cast<int>(rng.below(3))});
  }
  LogRegModel m;
  m.n_features = 4;
  m.weights.resize(3 * 5);
  for (double& w : m.weights) w = rng.uniform(-1, 1);
  const double l2 = 0.01;
  std::vector<double> grad(m.weights.size(), 0.0);
  logreg_objective(m, s, l2, grad);
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    LogRegModel up = m, down = m;
    up.weights[i] += 1e-6;
    down.weights[i] -= 1e-6;
    const double fd = (logreg_objective(up, s, l2, {}) - logreg_objective(down, s, l2, {})) / 2e-6;
    CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(std::abs(fd), 1e-3));
  }
}

TEST_CASE("k-nearest neighbours") {
  // five points in the plane
  const std::vector<FlatSample> pts{{{0, 0}, 0}, {{1, 0}, 1}, {{0, 2}, 1}, {{3, 3}, 2}, {{4, 3}, 2}};
  CHECK(knn_predict(pts, std::vector<double>{3, 3}, 1) == 2);
  CHECK(knn_predict(pts, std::vector<double>{0, 2}, 1) == 1);
  // k = |train|: global majority, with the 1/2 vote tie going to class 1
  CHECK(knn_predict(pts, std::vector<double>{100, 100}, 5) == 1);

  // query (1, 1): squared distances 2, 1, 2, 8, 13. The three nearest are
  // points 1, 0, 2 (0 before 2 on the distance tie), votes {0: 1, 1: 2}.
  CHECK(knn_predict(pts, std::vector<double>{1, 1}, 3) == 1);
  // query (2, 2): squared distances 8, 5, 4, 2, 5. Nearest three are 3, 2,
  // then point 1 wins the tie with point 4 at distance 5, votes {1: 2, 2: 1}.
  CHECK(knn_predict(pts, std::vector<double>{2, 2}, 3) == 1);
  // query (3, 2): squared distances 13, 8, 9, 1, 2 -> points 3, 4, 1.
  CHECK(knn_predict(pts, std::vector<double>{3, 2}, 3) == 2);
  // k = 2 with one vote each: lower class wins
  CHECK(knn_predict(pts, std::vector<double>{0.4, 0}, 2) == 0);

  CHECK_THROWS_AS(knn_predict({}, std::vector<double>{0, 0}, 1), ConfigError);
  CHECK_THROWS_AS(knn_predict(pts, std::vector<double>{0, 0}, 6), ConfigError);
  CHECK_THROWS_AS(knn_predict(pts, std::vector<double>{0, 0}, 0), ConfigError);
}

TEST_CASE("majority classifier") {
  CHECK(majority_baseline(std::vector<FlatSample>{{{}, 0}, {{}, 0}, {{}, 1}}).cls == 0);
  CHECK(majority_baseline(std::vector<FlatSample>{{{}, 1}, {{}, 2}}).cls == 1);
  std::vector<FlatSample> s;
  for (int y : {2, 2, 1, 2, 0, 1, 2}) s.push_back({{}, y});
  const auto m = majority_baseline(s);
  std::size_t ok = 0;
  for (const auto& x : s) ok += m.predict(x.x) == x.y;
  CHECK_THAT(ok / double(s.size()), WithinAbs(4.0 / 7, 1e-15));
  CHECK_THROWS_AS(majority_baseline(std::vector<FlatSample>{}), ConfigError);
}

TEST_CASE("baselines beat the majority class on simulated windows") {
  const Dataset d = simulate_dataset(SimConfig{}, 300, 5, 4);
  const auto parts = split(d, {}, 1);
  const auto train = baselines::flatten(parts[0].windows());
  const auto test = baselines::flatten(parts[2].windows());
  auto acc = [&](auto&& clf) {
    std::size_t ok = 0;
    for (const auto& s : test) ok += clf.predict(s.x) == s.y;
    return ok / double(test.size());
  };
  const double maj = acc(majority_baseline(train));
  CHECK(acc(logreg_train(train)) > maj);
  CHECK(acc(KnnClassifier{train, 5}) > maj);
}
