#include <catch_amalgamated.hpp>
#include <set>
#include <sstream>

#include "edlstage/data.hpp"

using namespace edlstage;

namespace {

std::vector<StepRecord> fake_episode(std::size_t T, std::uint64_t id = 0, std::size_t f_obs = 3) {
  std::vector<StepRecord> eps;
  for (std::size_t t = 0; t < T; ++t) {
    Bits obs(f_obs, 0);
    obs[t % f_obs] = 1;
    eps.push_back({id, t, obs, Bits{static_cast<std::uint8_t>(t == 1), 0}, t >= 1 ? 1 : 0});
  }
  return eps;
}

std::string serialise(const Dataset& d) {
  std::ostringstream os;
  write_dataset(d, os);
  return os.str();
}

Dataset parse(const std::string& s) {
  std::istringstream is(s);
  return read_dataset(is);
}

}  // namespace

TEST_CASE("encode_observation layout") {
  SimConfig c;
  c.n_nodes = 3;
  auto s = new_episode(c, 1);
  CHECK(encode_observation(s) == Bits{1, 1, 0, 0, 0, 0, 0, 0, 0});
  for (std::size_t i = 0; i < 3; ++i) s.discovered[i] = s.owned[i] = s.harvested[i] = 1;
  CHECK(encode_observation(s) == Bits(9, 1));
  CHECK(encode_observation(new_episode(SimConfig{}, 1)).size() == 30);
}

TEST_CASE("rolling windows") {
  SECTION("T=10, w=4 gives 7 windows in chronological order") {
    const auto ep = fake_episode(10);
    const auto ws = windows(ep, 4);
    REQUIRE(ws.size() == 7);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      CHECK(ws[i].rows == 4);
      CHECK(ws[i].cols == 5);
      CHECK(ws[i].last_step == i + 3);
      for (std::size_t r = 0; r < 4; ++r) {
        const auto& rec = ep[i + r];
        for (std::size_t c = 0; c < 3; ++c) CHECK(ws[i].at(r, c) == rec.obs[c]);
        CHECK(ws[i].at(r, 3) == rec.labels[0]);
      }
    }
  }
  SECTION("T=2, w=4 gives one left-padded window") {
    const auto ep = fake_episode(2);
    const auto ws = windows(ep, 4);
    REQUIRE(ws.size() == 1);
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(ws[0].at(0, c) == 0);
      CHECK(ws[0].at(1, c) == 0);
    }
    CHECK(ws[0].at(2, 0) == 1);
    CHECK(ws[0].at(3, 1) == 1);
    CHECK(ws[0].at(3, 3) == 1);
    CHECK(ws[0].target == 1);
  }
  SECTION("empty episode and invalid width") {
    CHECK(windows(std::vector<StepRecord>{}, 4).empty());
    CHECK_THROWS_AS(windows(fake_episode(3), 0), ConfigError);
  }
}

TEST_CASE("window targets follow the replayed stage sequence") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Trace t = run_episode(SimConfig{}, seed);
    const auto recs = episode_records(t, seed);
    const auto stages = replay(t);
    const auto ws = windows(recs, 4);
    if (t.size() < 4) {
      REQUIRE(ws.size() == 1);
      CHECK(ws[0].target == to_index(stages.back()));
      continue;
    }
    REQUIRE(ws.size() == t.size() - 3);
    for (std::size_t i = 0; i < ws.size(); ++i) CHECK(ws[i].target == to_index(stages[i + 3]));
  }
}

TEST_CASE("episode records carry pulse or latched labels") {
  const Trace t = run_episode(SimConfig{}, 5);
  const auto pulse = episode_records(t, 0, LabelMode::Pulse);
  const auto latched = episode_records(t, 0, LabelMode::Latched);
  int c_pulses = 0;
  for (std::size_t i = 0; i < pulse.size(); ++i) {
    c_pulses += pulse[i].labels[0];
    CHECK(latched[i].labels[0] == (pulse[i].stage >= 1 ? 1 : 0));
    CHECK(latched[i].labels[1] == (pulse[i].stage == 2 ? 1 : 0));
    CHECK(latched[i].stage == pulse[i].stage);
  }
  CHECK(c_pulses <= 1);
}

TEST_CASE("flip_noise") {
  Rng rng(2);
  Bits bits(1000);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = static_cast<std::uint8_t>(rng.below(2));
  const Bits copy = bits;
  CHECK(flip_noise(bits, 0.0, rng) == bits);
  const Bits flipped = flip_noise(bits, 1.0, rng);
  for (std::size_t i = 0; i < bits.size(); ++i) CHECK(flipped[i] == 1 - bits[i]);
  CHECK(bits == copy);
  CHECK_THROWS_AS(flip_noise(bits, -0.1, rng), DomainError);
  CHECK_THROWS_AS(flip_noise(bits, 1.1, rng), DomainError);

  for (double p : {0.2, 0.4}) {
    const Bits zeros(100000, 0);
    const Bits out = flip_noise(zeros, p, rng);
    std::size_t ones = 0;
    for (auto b : out) {
      CHECK(b <= 1);
      ones += b;
    }
    CHECK(std::abs(ones / 1e5 - p) <= 0.01);
  }
}

TEST_CASE("apply_window_noise") {
  const auto ws = windows(fake_episode(10, 0, 30), 4);
  Rng rng(4);
  const Window& w = ws[2];
  CHECK(apply_window_noise(w, 0, 0, rng) == w);

  const Window lab = apply_window_noise(w, 0, 1, rng);
  CHECK(lab.target == w.target);
  for (std::size_t r = 0; r < w.rows; ++r) {
    for (std::size_t c = 0; c < w.cols; ++c) {
      CHECK(lab.at(r, c) == (c < w.obs_cols ? w.at(r, c) : 1 - w.at(r, c)));
    }
  }

  std::size_t flips = 0, cells = 0;
  while (cells < 100000) {
    const Window n = apply_window_noise(w, 0.4, 0.4, rng);
    CHECK(n.target == w.target);
    for (std::size_t i = 0; i < w.features.size(); ++i) flips += n.features[i] != w.features[i];
    cells += w.features.size();
  }
  CHECK(std::abs(static_cast<double>(flips) / static_cast<double>(cells) - 0.4) <= 0.01);
  CHECK_THROWS_AS(apply_window_noise(w, 0.5, 2.0, rng), DomainError);
}

TEST_CASE("simulated dataset") {
  const Dataset d = simulate_dataset(SimConfig{}, 50, 9, 4);
  CHECK(d.episode_ids().size() == 50);
  const auto ws = d.windows();
  const auto counts = class_counts(ws);
  CHECK(counts[0] > 0);
  CHECK(counts[1] > 0);
  CHECK(counts[2] > 0);
  CHECK(counts[2] < counts[0]);
  CHECK(counts[2] < counts[1]);
  for (const auto& w : ws) CHECK(w.cols == 32);
  // parallel generation gives the same records
  CHECK(simulate_dataset(SimConfig{}, 50, 9, 4, LabelMode::Pulse, 3) == d);
  CHECK(simulate_dataset(SimConfig{}, 0, 9, 4).records.empty());
}

TEST_CASE("dataset file round trip") {
  SECTION("empty dataset") {
    Dataset d;
    d.meta.seed = 12;
    d.meta.sim.seed = 12;
    CHECK(parse(serialise(d)) == d);
  }
  SECTION("simulated dataset is byte stable") {
    const Dataset d = simulate_dataset(SimConfig{}, 80, 3, 4, LabelMode::Latched);
    REQUIRE(d.windows().size() >= 1000);
    const std::string s = serialise(d);
    const Dataset back = parse(s);
    CHECK(back == d);
    CHECK(serialise(back) == s);
  }
}

TEST_CASE("malformed dataset files") {
  const Dataset d = simulate_dataset(SimConfig{}, 3, 3, 4);
  std::string s = serialise(d);

  SECTION("corrupt byte in a record names the line") {
    // line 5 (header is line 1)
    std::size_t pos = 0;
    for (int i = 0; i < 4; ++i) pos = s.find('\n', pos) + 1;
    const std::size_t bits_at = s.find(' ', s.find(' ', pos) + 1) + 3;
    s[bits_at] = 'x';
    try {
      parse(s);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 5);
      CHECK(std::string(e.what()).find("line 5") != std::string::npos);
    }
  }
  SECTION("wrong bit count is a format error") {
    std::istringstream head(s);
    std::string header;
    std::getline(head, header);
    const std::string bad = header + "\n0 0 0101 00 0\n";
    CHECK_THROWS_AS(parse(bad), FormatError);
  }
  SECTION("bad header") {
    CHECK_THROWS_AS(parse("not-a-dataset\n"), ParseError);
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(parse("edlstage-dataset format_version=1\n"), ParseError);
  }
  SECTION("missing fields") {
    CHECK_THROWS_AS(parse(s + "7 7 0\n"), ParseError);
  }
}

TEST_CASE("split by episode") {
  const Dataset d = simulate_dataset(SimConfig{}, 10, 1, 4);
  const auto parts = split(d, {}, 5);
  CHECK(parts[0].episode_ids().size() == 8);
  CHECK(parts[1].episode_ids().size() == 1);
  CHECK(parts[2].episode_ids().size() == 1);

  std::set<std::uint64_t> all;
  std::size_t total = 0;
  for (const auto& p : parts) {
    for (auto id : p.episode_ids()) CHECK(all.insert(id).second);
    total += p.records.size();
    CHECK(p.meta == d.meta);
  }
  CHECK(all.size() == 10);
  CHECK(total == d.records.size());

  const auto again = split(d, {}, 5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(again[i] == parts[i]);

  const Dataset two = simulate_dataset(SimConfig{}, 2, 1, 4);
  CHECK_THROWS_AS(split(two, {}, 5), ConfigError);
  CHECK_THROWS_AS(split(d, {0.5, 0.5, 0.5}, 5), ConfigError);
  CHECK_THROWS_AS(split(d, {1.0, 0.0, 0.0}, 5), ConfigError);
}
