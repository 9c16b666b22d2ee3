#pragma once

// Shared test fixtures and brute-force oracles.

#include <cmath>
#include <functional>
#include <vector>

#include "xfer/mdp.hpp"
#include "xfer/planner.hpp"

namespace fixtures {

/// Two states {A, B}; action 0 stays, action 1 toggles.
inline xfer::mdp::TabularMdp toggle_mdp(std::size_t horizon, double gamma = 1.0) {
  xfer::mdp::TabularMdp m;
  m.num_states = 2;
  m.num_actions = 2;
  m.horizon = horizon;
  m.gamma = gamma;
  m.start_dist = {1.0, 0.0};
  m.absorbing = {false, false};
  m.pad_action = 0;
  m.transitions = {{{0, 1.0}}, {{1, 1.0}}, {{1, 1.0}}, {{0, 1.0}}};
  return m;
}

inline xfer::mdp::GridWorld open_grid(std::size_t w, std::size_t h, std::size_t horizon, std::size_t start = 0) {
  xfer::mdp::GridWorld g;
  g.width = w;
  g.height = h;
  g.horizon = horizon;
  g.start_dist = xfer::mdp::point_start(w * h, start);
  return g;
}

/// Calls visit(states, probability) for every action sequence of length T
/// from every start state, expanding stochastic outcomes. Actions at each step
/// are drawn with the probabilities of `policy`.
inline void enumerate_paths(const xfer::mdp::TabularMdp& m, const xfer::mdp::TabularPolicy& policy,
                            const std::function<void(const std::vector<std::size_t>&, double)>& visit) {
  std::vector<std::size_t> states;
  std::function<void(std::size_t, double)> rec = [&](std::size_t t, double p) {
    if (t == m.horizon) {
      visit(states, p);
      return;
    }
    const std::size_t s = states.back();
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      const double pa = policy.at(t, s, a);
      if (pa == 0.0) continue;
      for (const auto& o : m.next(s, a)) {
        states.push_back(o.state);
        rec(t + 1, p * pa * o.prob);
        states.pop_back();
      }
    }
  };
  for (std::size_t s0 = 0; s0 < m.num_states; ++s0) {
    if (m.start_dist[s0] == 0.0) continue;
    states.assign(1, s0);
    rec(0, m.start_dist[s0]);
  }
}

/// Best open-loop return over all action sequences from state s0 (deterministic MDPs).
inline double best_sequence_return(const xfer::mdp::TabularMdp& m, const std::vector<double>& r, std::size_t s0) {
  std::function<double(std::size_t, std::size_t)> rec = [&](std::size_t t, std::size_t s) {
    if (t == m.horizon) return r[s];
    double best = -INFINITY;
    for (std::size_t a = 0; a < m.num_actions; ++a) {
      const auto& row = m.next(s, a);
      best = std::max(best, r[s] + m.gamma * rec(t + 1, row.front().state));
    }
    return best;
  };
  return rec(0, s0);
}

// Minimum entered-cell cost from `start` to every cell over all simple paths.
inline std::vector<double> brute_force_costs(const xfer::planner::CostMap& map, std::size_t start) {
  const std::size_t n = map.costs.size();
  std::vector<double> best(n, xfer::planner::kBlocked);
  std::vector<bool> on_path(n, false);
  std::function<void(std::size_t, double)> dfs = [&](std::size_t s, double acc) {
    best[s] = std::min(best[s], acc);
    on_path[s] = true;
    const long r = static_cast<long>(s / map.width), c = static_cast<long>(s % map.width);
    const long nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c + 1}, {r, c - 1}};
    for (const auto& nb : nbrs) {
      if (nb[0] < 0 || nb[1] < 0 || nb[0] >= static_cast<long>(map.height) || nb[1] >= static_cast<long>(map.width)) continue;
      const std::size_t t = static_cast<std::size_t>(nb[0]) * map.width + static_cast<std::size_t>(nb[1]);
      if (on_path[t] || !std::isfinite(map.costs[t])) continue;
      dfs(t, acc + map.costs[t]);
    }
    on_path[s] = false;
  };
  dfs(start, 0.0);
  return best;
}

}  // namespace fixtures
