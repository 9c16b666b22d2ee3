#pragma once

#include <array>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xfer/rng.hpp"

namespace xfer::mdp {

/// Grid actions. The enumeration order is also the tie-break order of greedy policies.
enum class Action : int { north = 0, south = 1, east = 2, west = 3, stay = 4 };
inline constexpr std::size_t kGridActions = 5;

std::string to_string(Action a);

struct Outcome {
  std::size_t state;
  double prob;
};
using Distribution = std::vector<Outcome>;

/// Rectangular gridworld. State index = y * width + x, with y = 0 the top row
/// and north decreasing y.
struct GridWorld {
  std::size_t width = 0;
  std::size_t height = 0;
  std::set<std::size_t> obstacles;
  std::set<std::size_t> terminals;
  double p_slip = 0.0;
  /// Intended move executed for each commanded action.
  std::array<int, kGridActions> action_remap{0, 1, 2, 3, 4};
  std::size_t horizon = 0;
  double gamma = 1.0;
  std::vector<double> start_dist;

  std::size_t state_count() const { return width * height; }
  std::size_t index(std::size_t x, std::size_t y) const { return y * width + x; }
  std::size_t x_of(std::size_t s) const { return s % width; }
  std::size_t y_of(std::size_t s) const { return s / width; }
  bool is_obstacle(std::size_t s) const { return obstacles.contains(s); }
  bool is_terminal(std::size_t s) const { return terminals.contains(s); }

  /// Throws InvalidInput when any structural invariant fails.
  void validate() const;
};

/// Default horizon used when a config leaves it unset: 2 * (width + height).
std::size_t default_horizon(std::size_t width, std::size_t height);

/// Point-mass start distribution at `s` for a grid of `n` states.
std::vector<double> point_start(std::size_t n, std::size_t s);

/// Next-state distribution of a grid move, outcomes sorted by state index.
Distribution transition(const GridWorld& grid, std::size_t s, Action a);

/// Finite-horizon MDP in explicit tabular form; all solvers operate on this.
struct TabularMdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::size_t horizon = 0;
  double gamma = 1.0;
  std::vector<double> start_dist;
  /// Row (s * num_actions + a).
  std::vector<Distribution> transitions;
  /// Absorbing states are padded with `pad_action` by the trajectory sampler.
  std::vector<bool> absorbing;
  std::size_t pad_action = 0;

  const Distribution& next(std::size_t s, std::size_t a) const { return transitions[s * num_actions + a]; }
  void validate() const;
};

/// Obstacle cells become unreachable self-loops.
TabularMdp to_tabular(const GridWorld& grid);

/// Per-state reward r(s).
using RewardField = std::vector<double>;

/// Time-indexed stochastic policy; probability of a at (t, s) is
/// probs[(t * num_states + s) * num_actions + a].
struct TabularPolicy {
  std::size_t horizon = 0;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> probs;

  TabularPolicy() = default;
  TabularPolicy(std::size_t T, std::size_t S, std::size_t A)
      : horizon(T), num_states(S), num_actions(A), probs(T * S * A, 0.0) {}

  static TabularPolicy uniform(std::size_t T, std::size_t S, std::size_t A);

  double& at(std::size_t t, std::size_t s, std::size_t a) { return probs[(t * num_states + s) * num_actions + a]; }
  double at(std::size_t t, std::size_t s, std::size_t a) const {
    return probs[(t * num_states + s) * num_actions + a];
  }
  std::span<const double> row(std::size_t t, std::size_t s) const {
    return {probs.data() + (t * num_states + s) * num_actions, num_actions};
  }
  std::span<double> row(std::size_t t, std::size_t s) {
    return {probs.data() + (t * num_states + s) * num_actions, num_actions};
  }
};

/// V has (horizon + 1) x num_states entries, Q has horizon x num_states x num_actions.
struct SoftValues {
  std::size_t horizon = 0;
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> V;
  std::vector<double> Q;

  double v(std::size_t t, std::size_t s) const { return V[t * num_states + s]; }
  double q(std::size_t t, std::size_t s, std::size_t a) const {
    return Q[(t * num_states + s) * num_actions + a];
  }
};

struct SoftSolution {
  SoftValues values;
  TabularPolicy policy;
};

/// Soft (log-sum-exp) backward recursion; `stabilize` toggles max-subtraction.
SoftSolution soft_value_iteration(const TabularMdp& mdp, std::span<const double> reward, bool stabilize = true);
SoftSolution soft_value_iteration(const GridWorld& grid, std::span<const double> reward);

struct HardSolution {
  std::size_t num_states = 0;
  /// (horizon + 1) x num_states
  std::vector<double> V;
  /// horizon x num_states greedy action indices
  std::vector<std::size_t> greedy;

  double v(std::size_t t, std::size_t s) const { return V[t * num_states + s]; }
};

/// Max-recursion; ties are resolved towards the lowest action index.
HardSolution hard_value_iteration(const TabularMdp& mdp, std::span<const double> reward);
HardSolution hard_value_iteration(const GridWorld& grid, std::span<const double> reward);

/// Deterministic time-indexed policy as a TabularPolicy.
TabularPolicy greedy_policy(const HardSolution& solution, std::size_t horizon, std::size_t num_actions);

/// Finite-horizon value V_t(s) of an arbitrary policy: (horizon + 1) x num_states.
std::vector<double> evaluate_policy(const TabularMdp& mdp, std::span<const double> reward,
                                    const TabularPolicy& policy);

/// Expectation of V_0 under the start distribution.
double start_value(const TabularMdp& mdp, std::span<const double> v0);

struct Trajectory {
  /// horizon + 1 states
  std::vector<std::size_t> states;
  /// horizon actions
  std::vector<std::size_t> actions;

  bool operator==(const Trajectory&) const = default;
};

Trajectory sample_trajectory(const TabularMdp& mdp, const TabularPolicy& policy, Rng& rng);

/// Checks that each step of `traj` has positive probability under `mdp`.
bool is_feasible(const TabularMdp& mdp, const Trajectory& traj);

}  // namespace xfer::mdp
