#pragma once

// Feature encoding, rolling windows, bit-flip noise, dataset files, splits.
//
// Per-step feature row (F = 3 * n_nodes + 2 columns):
//   column 3*i + 0   node i discovered
//   column 3*i + 1   node i owned
//   column 3*i + 2   node i harvested (local credential search done)
//   column F - 2     label c (credentials acquired)
//   column F - 1     label g (goal achieved)
// Actions are not part of the features.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "edlstage/dirichlet.hpp"
#include "edlstage/error.hpp"
#include "edlstage/parallel.hpp"
#include "edlstage/random.hpp"
#include "edlstage/rm.hpp"
#include "edlstage/sim.hpp"
#include "edlstage/text.hpp"

namespace edlstage {

using Bits = std::vector<std::uint8_t>;

inline constexpr std::size_t kNumLabelBits = 2;
inline constexpr int kDatasetFormatVersion = 1;

enum class LabelMode : std::uint8_t { Pulse, Latched };

inline std::string to_string(LabelMode m) { return m == LabelMode::Pulse ? "pulse" : "latched"; }

inline LabelMode parse_label_mode(const std::string& s) {
  if (s == "pulse") return LabelMode::Pulse;
  if (s == "latched") return LabelMode::Latched;
  throw ConfigError("unknown label mode '" + s + "' (expected pulse or latched)");
}

struct StepRecord {
  std::uint64_t episode_id = 0;
  std::uint64_t step = 0;
  Bits obs;
  Bits labels;
  int stage = 0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

inline Bits encode_observation(const WorldState& state) {
  Bits bits;
  bits.reserve(3 * state.n_nodes());
  for (std::size_t i = 0; i < state.n_nodes(); ++i) {
    bits.push_back(state.discovered[i]);
    bits.push_back(state.owned[i]);
    bits.push_back(state.harvested[i]);
  }
  return bits;
}

inline std::vector<StepRecord> episode_records(const Trace& trace, std::uint64_t episode_id,
                                               LabelMode mode = LabelMode::Pulse) {
  const std::vector<LabelVector> pulses = trace_labels(trace);
  const std::vector<RmState> stages = replay(pulses);
  const std::vector<LabelVector> labels = mode == LabelMode::Pulse ? pulses : latch(pulses);
  std::vector<StepRecord> records;
  records.reserve(trace.size());
  for (std::size_t t = 0; t < trace.size(); ++t) {
    records.push_back({episode_id, static_cast<std::uint64_t>(t),
                       encode_observation(trace.steps[t].state),
                       Bits{static_cast<std::uint8_t>(labels[t].c), static_cast<std::uint8_t>(labels[t].g)},
                       to_index(stages[t])});
  }
  return records;
}

// W x F binary matrix, row-major, oldest step first.
struct Window {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t obs_cols = 0;  // columns [0, obs_cols) are observation bits
  Bits features;
  int target = 0;
  std::uint64_t episode_id = 0;
  std::uint64_t last_step = 0;

  std::uint8_t at(std::size_t r, std::size_t c) const { return features[r * cols + c]; }

  std::vector<double> as_input() const { return {features.begin(), features.end()}; }

  friend bool operator==(const Window&, const Window&) = default;
};

/// Stride-1 rolling windows over one episode's records.
///
/// T >= w gives T - w + 1 windows; a shorter non-empty episode is left-padded
/// with zero rows into exactly one window. The target is the stage of the
/// window's last step.
inline std::vector<Window> windows(std::span<const StepRecord> episode, std::size_t w) {
  if (w < 1) throw ConfigError("window length must be >= 1");
  std::vector<Window> out;
  if (episode.empty()) return out;
  const std::size_t f_obs = episode.front().obs.size();
  const std::size_t cols = f_obs + episode.front().labels.size();
  const std::size_t T = episode.size();
  const std::size_t n_windows = T >= w ? T - w + 1 : 1;
  out.reserve(n_windows);
  for (std::size_t first = 0; first < n_windows; ++first) {
    // Index of the step occupying the last row.
    const std::size_t last = T >= w ? first + w - 1 : T - 1;
    Window win{w, cols, f_obs, Bits(w * cols, 0), episode[last].stage, episode[last].episode_id,
               episode[last].step};
    for (std::size_t r = 0; r < w; ++r) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(last) - static_cast<std::ptrdiff_t>(w - 1 - r);
      if (src < 0) continue;
      const StepRecord& rec = episode[static_cast<std::size_t>(src)];
      std::copy(rec.obs.begin(), rec.obs.end(), win.features.begin() + r * cols);
      std::copy(rec.labels.begin(), rec.labels.end(), win.features.begin() + r * cols + f_obs);
    }
    out.push_back(std::move(win));
  }
  return out;
}

// Windows for a record stream holding several episodes back to back.
inline std::vector<Window> windows_by_episode(std::span<const StepRecord> records, std::size_t w) {
  std::vector<Window> out;
  std::size_t begin = 0;
  while (begin < records.size()) {
    std::size_t end = begin + 1;
    while (end < records.size() && records[end].episode_id == records[begin].episode_id) ++end;
    auto part = windows(records.subspan(begin, end - begin), w);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    begin = end;
  }
  return out;
}

inline void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw DomainError(std::string(what) + " must lie in [0, 1], got " + std::to_string(p));
  }
}

inline Bits flip_noise(std::span<const std::uint8_t> bits, double p, Rng& rng) {
  require_probability(p, "flip probability");
  Bits out(bits.begin(), bits.end());
  for (auto& b : out) {
    if (rng.bernoulli(p)) b ^= 1U;
  }
  return out;
}

// Observation columns flip at p_obs, label columns at p_label. The target is
// ground truth and never changes. One uniform draw per cell, row-major.
inline Window apply_window_noise(const Window& win, double p_obs, double p_label, Rng& rng) {
  require_probability(p_obs, "observation flip probability");
  require_probability(p_label, "label flip probability");
  Window out = win;
  for (std::size_t r = 0; r < win.rows; ++r) {
    for (std::size_t c = 0; c < win.cols; ++c) {
      const double p = c < win.obs_cols ? p_obs : p_label;
      if (rng.bernoulli(p)) out.features[r * win.cols + c] ^= 1U;
    }
  }
  return out;
}

inline std::array<std::size_t, kNumStages> class_counts(std::span<const Window> ws) {
  std::array<std::size_t, kNumStages> counts{};
  for (const Window& w : ws) ++counts.at(static_cast<std::size_t>(w.target));
  return counts;
}

struct DatasetMeta {
  int format_version = kDatasetFormatVersion;
  SimConfig sim;
  LabelMode label_mode = LabelMode::Pulse;
  std::size_t window_len = 4;
  std::size_t f_obs = 30;
  std::size_t f_label = kNumLabelBits;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<StepRecord> records;

  std::vector<Window> windows() const { return windows_by_episode(records, meta.window_len); }

  std::vector<std::uint64_t> episode_ids() const {
    std::set<std::uint64_t> ids;
    for (const auto& r : records) ids.insert(r.episode_id);
    return {ids.begin(), ids.end()};
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Simulates `n_episodes` episodes (episode i seeded with seed + i) and
/// annotates each step by replaying the reward machine.
inline Dataset simulate_dataset(const SimConfig& sim, std::size_t n_episodes, std::uint64_t seed,
                                std::size_t window_len, LabelMode mode = LabelMode::Pulse,
                                std::size_t threads = 1) {
  sim.validate();
  if (window_len < 1) throw ConfigError("window length must be >= 1");
  Dataset d;
  d.meta.sim = sim;
  d.meta.sim.seed = seed;
  d.meta.label_mode = mode;
  d.meta.window_len = window_len;
  d.meta.f_obs = 3 * sim.n_nodes;
  d.meta.seed = seed;
  std::vector<std::vector<StepRecord>> per_episode(n_episodes);
  parallel_for(n_episodes, threads, [&](std::size_t i) {
    per_episode[i] = episode_records(run_episode(sim, seed + i), i, mode);
  });
  for (auto& ep : per_episode) {
    d.records.insert(d.records.end(), std::make_move_iterator(ep.begin()), std::make_move_iterator(ep.end()));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dataset file
//
//   edlstage-dataset format_version=1 n_nodes=10 entry_node=0 max_steps=60 ...
//   <episode_id> <step> <obs bits> <label bits> <stage>
//   ...

namespace detail {

inline std::string bits_to_string(const Bits& bits) {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? '1' : '0';
  return s;
}

inline Bits bits_from_string(std::string_view s, std::size_t line, const char* field) {
  Bits bits(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') {
      throw ParseError(line, std::string(field) + " contains non-binary character '" + s[i] + "'");
    }
    bits[i] = static_cast<std::uint8_t>(s[i] - '0');
  }
  return bits;
}

}  // namespace detail

inline void write_dataset(const Dataset& d, std::ostream& os) {
  const DatasetMeta& m = d.meta;
  os << "edlstage-dataset"
     << " format_version=" << m.format_version << " n_nodes=" << m.sim.n_nodes
     << " entry_node=" << m.sim.entry_node << " max_steps=" << m.sim.max_steps
     << " epsilon=" << text::format_double(m.sim.epsilon)
     << " blocked_terminates=" << (m.sim.blocked_terminates ? 1 : 0)
     << " label_mode=" << to_string(m.label_mode) << " window_len=" << m.window_len
     << " f_obs=" << m.f_obs << " f_label=" << m.f_label << " seed=" << m.seed << '\n';
  for (const StepRecord& r : d.records) {
    os << r.episode_id << ' ' << r.step << ' ' << detail::bits_to_string(r.obs) << ' '
       << detail::bits_to_string(r.labels) << ' ' << r.stage << '\n';
  }
}

inline Dataset read_dataset(std::istream& is) {
  Dataset d;
  std::string line;
  if (!std::getline(is, line)) throw ParseError(1, "missing dataset header");
  const auto head = text::split_ws(line);
  if (head.empty() || head[0] != "edlstage-dataset") {
    throw ParseError(1, "header must start with 'edlstage-dataset'");
  }
  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = 1; i < head.size(); ++i) {
    const auto eq = head[i].find('=');
    if (eq == std::string_view::npos) throw ParseError(1, "expected key=value, got '" + std::string(head[i]) + "'");
    kv.emplace(std::string(head[i].substr(0, eq)), std::string(head[i].substr(eq + 1)));
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(1, std::string("header is missing '") + key + "'");
    return it->second;
  };
  auto get_uint = [&](const char* key) {
    auto v = text::parse_uint(get(key));
    if (!v) throw ParseError(1, std::string("header field '") + key + "' is not an unsigned integer");
    return *v;
  };
  DatasetMeta& m = d.meta;
  m.format_version = static_cast<int>(get_uint("format_version"));
  if (m.format_version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset format_version " + std::to_string(m.format_version));
  }
  m.sim.n_nodes = get_uint("n_nodes");
  m.sim.entry_node = get_uint("entry_node");
  m.sim.max_steps = get_uint("max_steps");
  const auto eps = text::parse_double(get("epsilon"));
  if (!eps) throw ParseError(1, "header field 'epsilon' is not a number");
  m.sim.epsilon = *eps;
  m.sim.blocked_terminates = get_uint("blocked_terminates") != 0;
  try {
    m.label_mode = parse_label_mode(get("label_mode"));
  } catch (const ConfigError& e) {
    throw ParseError(1, e.what());
  }
  m.window_len = get_uint("window_len");
  m.f_obs = get_uint("f_obs");
  m.f_label = get_uint("f_label");
  m.seed = get_uint("seed");
  m.sim.seed = m.seed;
  if (m.window_len < 1) throw FormatError("window_len must be >= 1");
  if (m.f_obs != 3 * m.sim.n_nodes) {
    throw FormatError("f_obs=" + std::to_string(m.f_obs) + " inconsistent with n_nodes=" +
                      std::to_string(m.sim.n_nodes));
  }
  if (m.f_label != kNumLabelBits) throw FormatError("f_label must be 2, got " + std::to_string(m.f_label));

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 5) {
      throw ParseError(line_no, "expected 5 fields, got " + std::to_string(tok.size()));
    }
    StepRecord r;
    const auto ep = text::parse_uint(tok[0]);
    const auto st = text::parse_uint(tok[1]);
    const auto stage = text::parse_uint(tok[4]);
    if (!ep) throw ParseError(line_no, "bad episode_id '" + std::string(tok[0]) + "'");
    if (!st) throw ParseError(line_no, "bad step '" + std::string(tok[1]) + "'");
    if (!stage || *stage >= kNumStages) throw ParseError(line_no, "bad stage '" + std::string(tok[4]) + "'");
    r.episode_id = *ep;
    r.step = *st;
    r.obs = detail::bits_from_string(tok[2], line_no, "obs");
    r.labels = detail::bits_from_string(tok[3], line_no, "labels");
    r.stage = static_cast<int>(*stage);
    if (r.obs.size() != m.f_obs || r.labels.size() != m.f_label) {
      throw FormatError("line " + std::to_string(line_no) + ": shape mismatch, expected " +
                        std::to_string(m.f_obs) + "+" + std::to_string(m.f_label) + " bits, got " +
                        std::to_string(r.obs.size()) + "+" + std::to_string(r.labels.size()));
    }
    d.records.push_back(std::move(r));
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_dataset(d, os);
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  return read_dataset(is);
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;

  friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

/// Partitions by episode so that no episode contributes windows to two
/// partitions. Returns {train, val, test}.
inline std::array<Dataset, 3> split(const Dataset& d, const SplitRatios& ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  std::vector<std::uint64_t> ids = d.episode_ids();
  const std::size_t n = ids.size();
  if (n < 3) throw ConfigError("need at least 3 episodes to split, got " + std::to_string(n));
  Rng rng(seed);
  rng.shuffle(std::span<std::uint64_t>(ids));

  auto count = [&](double r) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r * static_cast<double>(n))));
  };
  std::size_t n_val = count(ratios.val);
  std::size_t n_test = count(ratios.test);
  while (n_val + n_test >= n) {
    if (n_val >= n_test && n_val > 1) {
      --n_val;
    } else {
      --n_test;
    }
  }
  const std::size_t n_train = n - n_val - n_test;

  std::map<std::uint64_t, int> part;
  for (std::size_t i = 0; i < n; ++i) part[ids[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);

  std::array<Dataset, 3> out;
  for (auto& o : out) o.meta = d.meta;
  for (const StepRecord& r : d.records) out[static_cast<std::size_t>(part.at(r.episode_id))].records.push_back(r);
  return out;
}

}  // namespace edlstage
