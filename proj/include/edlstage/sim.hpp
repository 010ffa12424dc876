#pragma once

// Switched-LAN capture-the-flag environment.
//
// Every node can reach every other node. The attacker starts owning the
// entry node, must harvest the credential stored on one random node, and can
// only access the goal node (guarded by an IPS) while holding it. Credential
// and goal placement are redrawn for every episode.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "edlstage/error.hpp"
#include "edlstage/random.hpp"

namespace edlstage {

struct SimConfig {
  std::size_t n_nodes = 10;
  std::size_t entry_node = 0;
  std::size_t max_steps = 60;
  std::uint64_t seed = 0;
  // Probability that the attacker ignores its greedy preference and picks a
  // uniformly random valid action.
  double epsilon = 0.3;
  // When set, a blocked goal attempt ends the episode.
  bool blocked_terminates = false;

  void validate() const {
    if (n_nodes < 3) {
      throw ConfigError("n_nodes must be >= 3 (entry, credential and goal need distinct nodes), got " +
                        std::to_string(n_nodes));
    }
    if (entry_node >= n_nodes) {
      throw ConfigError("entry_node " + std::to_string(entry_node) + " out of range for " +
                        std::to_string(n_nodes) + " nodes");
    }
    if (max_steps < n_nodes) {
      throw ConfigError("max_steps must be >= n_nodes, got " + std::to_string(max_steps));
    }
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
      throw ConfigError("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
    }
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct WorldState {
  std::vector<std::uint8_t> discovered;
  std::vector<std::uint8_t> owned;
  std::vector<std::uint8_t> harvested;
  std::size_t entry_node = 0;
  std::size_t credential_node = 0;
  std::size_t goal_node = 0;
  bool credential_held = false;
  bool goal_reached = false;
  bool blocked_out = false;  // set only when blocked attempts terminate
  std::size_t step_count = 0;

  std::size_t n_nodes() const noexcept { return owned.size(); }

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

enum class ActionKind : std::uint8_t { LateralMove, LocalHarvest, AccessGoal };

struct Action {
  ActionKind kind = ActionKind::AccessGoal;
  std::size_t source = 0;  // owned node the move starts from / node harvested
  std::size_t target = 0;  // LateralMove destination

  static Action lateral_move(std::size_t from, std::size_t to) {
    return {ActionKind::LateralMove, from, to};
  }
  static Action local_harvest(std::size_t node) { return {ActionKind::LocalHarvest, node, node}; }
  static Action access_goal() { return {ActionKind::AccessGoal, 0, 0}; }

  friend bool operator==(const Action&, const Action&) = default;
};

struct StepEvents {
  bool credential_acquired = false;
  bool goal_achieved = false;
  bool blocked = false;

  friend bool operator==(const StepEvents&, const StepEvents&) = default;
};

inline WorldState new_episode(const SimConfig& config, Rng& rng) {
  config.validate();
  const std::size_t n = config.n_nodes;
  WorldState state;
  state.discovered.assign(n, 0);
  state.owned.assign(n, 0);
  state.harvested.assign(n, 0);
  state.entry_node = config.entry_node;
  state.discovered[config.entry_node] = 1;
  state.owned[config.entry_node] = 1;

  // Uniform draw of an ordered pair of distinct non-entry nodes.
  auto non_entry = [&](std::size_t idx) { return idx < config.entry_node ? idx : idx + 1; };
  const std::size_t cred = rng.below(n - 1);
  std::size_t goal = rng.below(n - 2);
  if (goal >= cred) ++goal;
  state.credential_node = non_entry(cred);
  state.goal_node = non_entry(goal);
  return state;
}

inline WorldState new_episode(const SimConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return new_episode(config, rng);
}

inline bool is_terminated(const WorldState& state) { return state.goal_reached || state.blocked_out; }

namespace detail {

inline void require_node(const WorldState& state, std::size_t node, const char* role) {
  if (node >= state.n_nodes()) {
    throw InvalidActionError(std::string(role) + " node " + std::to_string(node) +
                             " out of range for " + std::to_string(state.n_nodes()) + " nodes");
  }
}

inline void require_owned(const WorldState& state, std::size_t node, const char* role) {
  require_node(state, node, role);
  if (!state.owned[node]) {
    throw InvalidActionError(std::string(role) + " node " + std::to_string(node) + " is not owned");
  }
}

}  // namespace detail

// In-place transition. Throws InvalidActionError without modifying `state`.
inline StepEvents apply_action(WorldState& state, const Action& action,
                               bool blocked_terminates = false) {
  if (is_terminated(state)) throw InvalidActionError("episode already terminated");
  StepEvents events;
  switch (action.kind) {
    case ActionKind::LateralMove:
      detail::require_owned(state, action.source, "source");
      detail::require_node(state, action.target, "target");
      state.discovered[action.target] = 1;
      state.owned[action.target] = 1;
      break;
    case ActionKind::LocalHarvest:
      detail::require_owned(state, action.source, "harvest");
      state.harvested[action.source] = 1;
      if (action.source == state.credential_node && !state.credential_held) {
        state.credential_held = true;
        events.credential_acquired = true;
      }
      break;
    case ActionKind::AccessGoal:
      if (state.credential_held) {
        state.goal_reached = true;
        events.goal_achieved = true;
      } else {
        events.blocked = true;
        if (blocked_terminates) state.blocked_out = true;
      }
      break;
  }
  ++state.step_count;
  return events;
}

inline std::pair<WorldState, StepEvents> step(const WorldState& state, const Action& action,
                                              bool blocked_terminates = false) {
  WorldState next = state;
  StepEvents events = apply_action(next, action, blocked_terminates);
  return {std::move(next), events};
}

inline std::vector<Action> valid_actions(const WorldState& state) {
  std::vector<Action> actions;
  const std::size_t n = state.n_nodes();
  for (std::size_t src = 0; src < n; ++src) {
    if (!state.owned[src]) continue;
    for (std::size_t dst = 0; dst < n; ++dst) {
      if (!state.owned[dst]) actions.push_back(Action::lateral_move(src, dst));
    }
  }
  for (std::size_t node = 0; node < n; ++node) {
    if (state.owned[node]) actions.push_back(Action::local_harvest(node));
  }
  actions.push_back(Action::access_goal());
  return actions;
}

/// Stochastic explorer standing in for a trained attacker.
///
/// With probability `epsilon` the action kind is drawn uniformly among the
/// kinds that currently have a valid instance (LateralMove needs an unowned
/// node; harvest and goal access are always available), then its arguments
/// uniformly. Otherwise the greedy order applies: harvest an unharvested
/// owned node, else move to an undiscovered node, else try the goal.
inline Action attacker_policy(const WorldState& state, Rng& rng, double epsilon) {
  const std::size_t n = state.n_nodes();
  std::vector<std::size_t> owned_nodes, unowned_nodes, unharvested, undiscovered;
  for (std::size_t i = 0; i < n; ++i) {
    if (state.owned[i]) {
      owned_nodes.push_back(i);
      if (!state.harvested[i]) unharvested.push_back(i);
    } else {
      unowned_nodes.push_back(i);
    }
    if (!state.discovered[i]) undiscovered.push_back(i);
  }
  auto pick = [&](const std::vector<std::size_t>& from) { return from[rng.below(from.size())]; };

  if (rng.bernoulli(epsilon)) {
    std::vector<ActionKind> kinds{ActionKind::LocalHarvest, ActionKind::AccessGoal};
    if (!unowned_nodes.empty()) kinds.push_back(ActionKind::LateralMove);
    switch (kinds[rng.below(kinds.size())]) {
      case ActionKind::LocalHarvest:
        return Action::local_harvest(pick(owned_nodes));
      case ActionKind::LateralMove: {
        const std::size_t src = pick(owned_nodes);
        return Action::lateral_move(src, pick(unowned_nodes));
      }
      case ActionKind::AccessGoal:
        return Action::access_goal();
    }
  }
  if (!unharvested.empty()) return Action::local_harvest(pick(unharvested));
  if (!undiscovered.empty()) {
    const std::size_t src = pick(owned_nodes);
    return Action::lateral_move(src, pick(undiscovered));
  }
  return Action::access_goal();
}

struct TraceStep {
  Action action;
  StepEvents events;
  WorldState state;  // after the action
  int stage = 0;     // simulator's own stage bookkeeping

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct Trace {
  SimConfig config;
  std::uint64_t seed = 0;
  WorldState initial;
  std::vector<TraceStep> steps;

  std::size_t size() const noexcept { return steps.size(); }
  int final_stage() const { return steps.empty() ? 0 : steps.back().stage; }

  friend bool operator==(const Trace&, const Trace&) = default;
};

// Stage read straight off the world state, independent of the reward machine.
inline int world_stage(const WorldState& state) {
  if (state.goal_reached) return 2;
  if (state.credential_held) return 1;
  return 0;
}

inline Trace run_episode(const SimConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Trace trace;
  trace.config = config;
  trace.seed = seed;
  trace.initial = new_episode(config, rng);
  WorldState state = trace.initial;
  while (!is_terminated(state) && state.step_count < config.max_steps) {
    const Action action = attacker_policy(state, rng, config.epsilon);
    const StepEvents events = apply_action(state, action, config.blocked_terminates);
    trace.steps.push_back({action, events, state, world_stage(state)});
  }
  return trace;
}

}  // namespace edlstage
