#pragma once

// Three-state reward machine for the switched-LAN task:
//
//   (0) --c--> (1) --g--> (2)
//
// c = credentials acquired, g = goal achieved. Missing edges are self-loops
// so the automaton is total; state 2 is absorbing.

#include <cstdint>
#include <span>
#include <vector>

#include "edlstage/sim.hpp"

namespace edlstage {

enum class RmState : std::uint8_t { Initial = 0, CredentialsHeld = 1, GoalAchieved = 2 };

inline int to_index(RmState s) { return static_cast<int>(s); }

struct LabelVector {
  bool c = false;
  bool g = false;

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

// `blocked` carries no proposition.
inline LabelVector labelling_fn(const StepEvents& events) {
  return {events.credential_acquired, events.goal_achieved};
}

inline RmState rm_step(RmState state, LabelVector labels) {
  switch (state) {
    case RmState::Initial:
      return labels.c ? RmState::CredentialsHeld : RmState::Initial;
    case RmState::CredentialsHeld:
      return labels.g ? RmState::GoalAchieved : RmState::CredentialsHeld;
    case RmState::GoalAchieved:
      return RmState::GoalAchieved;
  }
  return state;
}

inline std::vector<RmState> replay(std::span<const LabelVector> labels) {
  std::vector<RmState> stages;
  stages.reserve(labels.size());
  RmState state = RmState::Initial;
  for (const LabelVector& l : labels) {
    state = rm_step(state, l);
    stages.push_back(state);
  }
  return stages;
}

inline std::vector<LabelVector> trace_labels(const Trace& trace) {
  std::vector<LabelVector> labels;
  labels.reserve(trace.size());
  for (const TraceStep& s : trace.steps) labels.push_back(labelling_fn(s.events));
  return labels;
}

inline std::vector<RmState> replay(const Trace& trace) { return replay(trace_labels(trace)); }

// Level version of a pulse sequence: each bit stays set once it has fired.
inline std::vector<LabelVector> latch(std::span<const LabelVector> pulses) {
  std::vector<LabelVector> out;
  out.reserve(pulses.size());
  LabelVector level;
  for (const LabelVector& p : pulses) {
    level.c = level.c || p.c;
    level.g = level.g || p.g;
    out.push_back(level);
  }
  return out;
}

}  // namespace edlstage
