#include "xfer/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "xfer/error.hpp"

namespace xfer::mdp {

std::string to_string(Action a) {
  switch (a) {
    case Action::north: return "N";
    case Action::south: return "S";
    case Action::east: return "E";
    case Action::west: return "W";
    case Action::stay: return "STAY";
  }
  return "?";
}

void GridWorld::validate() const {
  require(width > 0 && height > 0, "GridWorld: width and height must be positive");
  const std::size_t n = state_count();
  for (std::size_t s : obstacles) require(s < n, "GridWorld: obstacle out of bounds");
  for (std::size_t s : terminals) {
    require(s < n, "GridWorld: terminal out of bounds");
    require(!obstacles.contains(s), "GridWorld: a cell cannot be both obstacle and terminal");
  }
  require(p_slip >= 0.0 && p_slip < 1.0, "GridWorld: p_slip must lie in [0, 1)");
  require(gamma > 0.0 && gamma <= 1.0, "GridWorld: gamma must lie in (0, 1]");
  std::array<int, kGridActions> sorted = action_remap;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < kGridActions; ++i) {
    require(sorted[i] == static_cast<int>(i), "GridWorld: action_remap must be a permutation of the actions");
  }
  require(start_dist.size() == n, "GridWorld: start_dist length must equal the state count");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    require(start_dist[s] >= 0.0, "GridWorld: start_dist must be nonnegative");
    if (obstacles.contains(s)) require(start_dist[s] == 0.0, "GridWorld: start_dist puts mass on an obstacle");
    total += start_dist[s];
  }
  require(std::abs(total - 1.0) <= 1e-12, "GridWorld: start_dist must sum to 1");
}

std::size_t default_horizon(std::size_t width, std::size_t height) { return 2 * (width + height); }

std::vector<double> point_start(std::size_t n, std::size_t s) {
  require(s < n, "point_start: state out of range");
  std::vector<double> d(n, 0.0);
  d[s] = 1.0;
  return d;
}

namespace {

// Destination of a single intended move, with walls and obstacles resolving to s.
std::size_t move_target(const GridWorld& g, std::size_t s, int move) {
  const auto x = static_cast<long>(g.x_of(s));
  const auto y = static_cast<long>(g.y_of(s));
  long nx = x;
  long ny = y;
  switch (move) {
    case 0: ny = y - 1; break;
    case 1: ny = y + 1; break;
    case 2: nx = x + 1; break;
    case 3: nx = x - 1; break;
    default: return s;
  }
  if (nx < 0 || ny < 0 || nx >= static_cast<long>(g.width) || ny >= static_cast<long>(g.height)) return s;
  const std::size_t t = g.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny));
  return g.is_obstacle(t) ? s : t;
}

Distribution grid_row(const GridWorld& g, std::size_t s, std::size_t a) {
  if (g.is_terminal(s) || g.is_obstacle(s)) return {{s, 1.0}};
  const int move = g.action_remap[a];
  std::map<std::size_t, double> acc;
  if (move == static_cast<int>(Action::stay) || g.p_slip == 0.0) {
    acc[move_target(g, s, move)] += 1.0;
  } else {
    const bool vertical = move == 0 || move == 1;
    const int lateral_a = vertical ? 2 : 0;
    const int lateral_b = vertical ? 3 : 1;
    acc[move_target(g, s, move)] += 1.0 - g.p_slip;
    acc[move_target(g, s, lateral_a)] += g.p_slip / 2.0;
    acc[move_target(g, s, lateral_b)] += g.p_slip / 2.0;
  }
  Distribution d;
  for (const auto& [state, p] : acc) d.push_back({state, p});
  return d;
}

double log_sum_exp(std::span<const double> xs, bool stabilize) {
  if (!stabilize) {
    double s = 0.0;
    for (double x : xs) s += std::exp(x);
    return std::log(s);
  }
  const double m = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

void check_reward(const TabularMdp& mdp, std::span<const double> reward) {
  require(reward.size() == mdp.num_states, "reward length must equal the state count");
  for (double r : reward) require(std::isfinite(r), "reward must be finite");
}

double expected_next(const Distribution& d, const double* v) {
  double e = 0.0;
  for (const auto& o : d) e += o.prob * v[o.state];
  return e;
}

}  // namespace

Distribution transition(const GridWorld& grid, std::size_t s, Action a) {
  require(s < grid.state_count(), "transition: state out of bounds");
  require(!grid.is_obstacle(s), "transition: source state is an obstacle");
  return grid_row(grid, s, static_cast<std::size_t>(a));
}

void TabularMdp::validate() const {
  require(num_states > 0 && num_actions > 0, "TabularMdp: empty state or action set");
  require(transitions.size() == num_states * num_actions, "TabularMdp: transition table has wrong size");
  require(start_dist.size() == num_states, "TabularMdp: start_dist length mismatch");
  require(absorbing.size() == num_states, "TabularMdp: absorbing mask length mismatch");
  require(gamma > 0.0 && gamma <= 1.0, "TabularMdp: gamma must lie in (0, 1]");
  for (const auto& row : transitions) {
    double total = 0.0;
    for (const auto& o : row) {
      require(o.state < num_states && o.prob >= 0.0, "TabularMdp: invalid transition outcome");
      total += o.prob;
    }
    require(std::abs(total - 1.0) <= 1e-12, "TabularMdp: transition row does not sum to 1");
  }
}

TabularMdp to_tabular(const GridWorld& grid) {
  grid.validate();
  TabularMdp m;
  m.num_states = grid.state_count();
  m.num_actions = kGridActions;
  m.horizon = grid.horizon;
  m.gamma = grid.gamma;
  m.start_dist = grid.start_dist;
  m.pad_action = static_cast<std::size_t>(Action::stay);
  m.absorbing.assign(m.num_states, false);
  m.transitions.reserve(m.num_states * m.num_actions);
  for (std::size_t s = 0; s < m.num_states; ++s) {
    m.absorbing[s] = grid.is_terminal(s) || grid.is_obstacle(s);
    for (std::size_t a = 0; a < m.num_actions; ++a) m.transitions.push_back(grid_row(grid, s, a));
  }
  return m;
}

TabularPolicy TabularPolicy::uniform(std::size_t T, std::size_t S, std::size_t A) {
  TabularPolicy p(T, S, A);
  std::fill(p.probs.begin(), p.probs.end(), 1.0 / static_cast<double>(A));
  return p;
}

SoftSolution soft_value_iteration(const TabularMdp& mdp, std::span<const double> reward, bool stabilize) {
  check_reward(mdp, reward);
  const std::size_t S = mdp.num_states;
  const std::size_t A = mdp.num_actions;
  const std::size_t T = mdp.horizon;
  SoftSolution out;
  auto& sv = out.values;
  sv.horizon = T;
  sv.num_states = S;
  sv.num_actions = A;
  sv.V.assign((T + 1) * S, 0.0);
  sv.Q.assign(T * S * A, 0.0);
  out.policy = TabularPolicy(T, S, A);
  std::copy(reward.begin(), reward.end(), sv.V.begin() + static_cast<std::ptrdiff_t>(T * S));
  for (std::size_t t = T; t-- > 0;) {
    const double* v_next = sv.V.data() + (t + 1) * S;
    for (std::size_t s = 0; s < S; ++s) {
      double* q = sv.Q.data() + (t * S + s) * A;
      for (std::size_t a = 0; a < A; ++a) q[a] = reward[s] + mdp.gamma * expected_next(mdp.next(s, a), v_next);
      const double v = log_sum_exp({q, A}, stabilize);
      sv.V[t * S + s] = v;
      auto row = out.policy.row(t, s);
      for (std::size_t a = 0; a < A; ++a) row[a] = std::exp(q[a] - v);
    }
  }
  return out;
}

SoftSolution soft_value_iteration(const GridWorld& grid, std::span<const double> reward) {
  return soft_value_iteration(to_tabular(grid), reward);
}

HardSolution hard_value_iteration(const TabularMdp& mdp, std::span<const double> reward) {
  check_reward(mdp, reward);
  const std::size_t S = mdp.num_states;
  const std::size_t A = mdp.num_actions;
  const std::size_t T = mdp.horizon;
  HardSolution out;
  out.num_states = S;
  out.V.assign((T + 1) * S, 0.0);
  out.greedy.assign(T * S, 0);
  std::copy(reward.begin(), reward.end(), out.V.begin() + static_cast<std::ptrdiff_t>(T * S));
  std::vector<double> q(A);
  for (std::size_t t = T; t-- > 0;) {
    const double* v_next = out.V.data() + (t + 1) * S;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t a = 0; a < A; ++a) q[a] = reward[s] + mdp.gamma * expected_next(mdp.next(s, a), v_next);
      const double best = *std::max_element(q.begin(), q.end());
      // Near-equal values count as ties so that argmax survives reward rescaling.
      const double tol = 1e-10 * std::max(1.0, std::abs(best));
      std::size_t pick = 0;
      while (q[pick] < best - tol) ++pick;
      out.V[t * S + s] = best;
      out.greedy[t * S + s] = pick;
    }
  }
  return out;
}

HardSolution hard_value_iteration(const GridWorld& grid, std::span<const double> reward) {
  return hard_value_iteration(to_tabular(grid), reward);
}

TabularPolicy greedy_policy(const HardSolution& solution, std::size_t horizon, std::size_t num_actions) {
  TabularPolicy p(horizon, solution.num_states, num_actions);
  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t s = 0; s < solution.num_states; ++s) p.at(t, s, solution.greedy[t * solution.num_states + s]) = 1.0;
  }
  return p;
}

std::vector<double> evaluate_policy(const TabularMdp& mdp, std::span<const double> reward,
                                    const TabularPolicy& policy) {
  check_reward(mdp, reward);
  require(policy.horizon == mdp.horizon && policy.num_states == mdp.num_states &&
              policy.num_actions == mdp.num_actions,
          "evaluate_policy: policy shape does not match the MDP");
  const std::size_t S = mdp.num_states;
  const std::size_t T = mdp.horizon;
  std::vector<double> V((T + 1) * S, 0.0);
  std::copy(reward.begin(), reward.end(), V.begin() + static_cast<std::ptrdiff_t>(T * S));
  for (std::size_t t = T; t-- > 0;) {
    const double* v_next = V.data() + (t + 1) * S;
    for (std::size_t s = 0; s < S; ++s) {
      double cont = 0.0;
      const auto row = policy.row(t, s);
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        if (row[a] == 0.0) continue;
        cont += row[a] * expected_next(mdp.next(s, a), v_next);
      }
      V[t * S + s] = reward[s] + mdp.gamma * cont;
    }
  }
  return V;
}

double start_value(const TabularMdp& mdp, std::span<const double> v0) {
  double e = 0.0;
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    if (mdp.start_dist[s] != 0.0) e += mdp.start_dist[s] * v0[s];
  }
  return e;
}

Trajectory sample_trajectory(const TabularMdp& mdp, const TabularPolicy& policy, Rng& rng) {
  require(policy.horizon == mdp.horizon && policy.num_states == mdp.num_states &&
              policy.num_actions == mdp.num_actions,
          "sample_trajectory: policy horizon/shape does not match the MDP");
  Trajectory traj;
  traj.states.reserve(mdp.horizon + 1);
  traj.actions.reserve(mdp.horizon);
  std::size_t s = rng.categorical(mdp.start_dist);
  traj.states.push_back(s);
  std::vector<double> probs;
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    if (mdp.absorbing[s]) {
      traj.actions.push_back(mdp.pad_action);
      traj.states.push_back(s);
      continue;
    }
    const std::size_t a = rng.categorical(policy.row(t, s));
    const auto& row = mdp.next(s, a);
    probs.clear();
    for (const auto& o : row) probs.push_back(o.prob);
    s = row[rng.categorical(probs)].state;
    traj.actions.push_back(a);
    traj.states.push_back(s);
  }
  return traj;
}

bool is_feasible(const TabularMdp& mdp, const Trajectory& traj) {
  if (traj.states.size() != mdp.horizon + 1 || traj.actions.size() != mdp.horizon) return false;
  if (traj.states.front() >= mdp.num_states || mdp.start_dist[traj.states.front()] <= 0.0) return false;
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    const std::size_t s = traj.states[t];
    const std::size_t a = traj.actions[t];
    if (a >= mdp.num_actions) return false;
    bool found = false;
    for (const auto& o : mdp.next(s, a)) {
      if (o.state == traj.states[t + 1] && o.prob > 0.0) found = true;
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace xfer::mdp
