#include "xfer/planner.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>

#include "xfer/error.hpp"

namespace xfer::planner {

CostMap reward_to_costmap(std::span<const double> reward, std::size_t width, std::size_t height,
                          double cost_floor, const std::set<std::size_t>& obstacles, Provenance provenance) {
  require(reward.size() == width * height, "reward_to_costmap: reward length must equal width * height");
  require(cost_floor > 0.0 && std::isfinite(cost_floor), "reward_to_costmap: cost_floor must be positive");
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < reward.size(); ++s) {
    require(std::isfinite(reward[s]), "reward_to_costmap: reward must be finite");
    if (!obstacles.contains(s)) best = std::max(best, reward[s]);
  }
  CostMap map{width, height, std::vector<double>(reward.size(), kBlocked), provenance};
  for (std::size_t s = 0; s < reward.size(); ++s) {
    if (!obstacles.contains(s)) map.costs[s] = (best - reward[s]) + cost_floor;
  }
  return map;
}

PathResult plan_path(const CostMap& map, std::size_t start, std::size_t goal) {
  const std::size_t n = map.width * map.height;
  require(map.costs.size() == n, "plan_path: malformed cost map");
  require(start < n && goal < n, "plan_path: endpoint out of bounds");
  require(std::isfinite(map.costs[start]) && std::isfinite(map.costs[goal]), "plan_path: endpoint is blocked");

  using Entry = std::tuple<double, std::size_t, std::size_t>;  // cost, row, col
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> frontier;
  std::vector<double> dist(n, kBlocked);
  std::vector<std::size_t> parent(n, n);
  std::vector<bool> done(n, false);
  dist[start] = 0.0;
  frontier.emplace(0.0, start / map.width, start % map.width);
  while (!frontier.empty()) {
    const auto [d, row, col] = frontier.top();
    frontier.pop();
    const std::size_t s = row * map.width + col;
    if (done[s]) continue;
    done[s] = true;
    if (s == goal) break;
    const long r = static_cast<long>(row);
    const long c = static_cast<long>(col);
    const long nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c + 1}, {r, c - 1}};
    for (const auto& nb : nbrs) {
      if (nb[0] < 0 || nb[1] < 0 || nb[0] >= static_cast<long>(map.height) || nb[1] >= static_cast<long>(map.width)) {
        continue;
      }
      const std::size_t t = static_cast<std::size_t>(nb[0]) * map.width + static_cast<std::size_t>(nb[1]);
      if (done[t] || !std::isfinite(map.costs[t])) continue;
      const double nd = d + map.costs[t];
      if (nd < dist[t]) {
        dist[t] = nd;
        parent[t] = s;
        frontier.emplace(nd, static_cast<std::size_t>(nb[0]), static_cast<std::size_t>(nb[1]));
      }
    }
  }
  PathResult result;
  if (!done[goal]) return result;
  result.reachable = true;
  result.total_cost = dist[goal];
  for (std::size_t s = goal; s != n; s = parent[s]) result.cells.push_back(s);
  std::reverse(result.cells.begin(), result.cells.end());
  return result;
}

double evd(const mdp::GridWorld& grid, std::span<const double> r_true, std::span<const double> r_learned) {
  const auto m = mdp::to_tabular(grid);
  const auto optimal = mdp::hard_value_iteration(m, r_true);
  const auto learned = mdp::hard_value_iteration(m, r_learned);
  const auto v = mdp::evaluate_policy(m, r_true, mdp::greedy_policy(learned, m.horizon, m.num_actions));
  const double gap = mdp::start_value(m, std::span(optimal.V).first(m.num_states)) -
                     mdp::start_value(m, std::span(v).first(m.num_states));
  // The optimum dominates every policy; clip rounding noise.
  return std::max(gap, 0.0);
}

double value_range(const mdp::GridWorld& grid, std::span<const double> reward) {
  const auto m = mdp::to_tabular(grid);
  const auto best = mdp::hard_value_iteration(m, reward);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t s = 0; s < m.num_states; ++s) {
    if (grid.is_obstacle(s)) continue;
    lo = std::min(lo, best.V[s]);
    hi = std::max(hi, best.V[s]);
  }
  return hi - lo;
}

TraversabilityScores traversability_scores(const CostMap& map, std::span<const mdp::Trajectory> demos,
                                           double threshold_quantile) {
  require(threshold_quantile > 0.0 && threshold_quantile < 1.0,
          "traversability_scores: threshold_quantile must lie in (0, 1)");
  const std::size_t n = map.costs.size();
  std::vector<bool> visited(n, false);
  for (const auto& traj : demos) {
    for (std::size_t s : traj.states) {
      require(s < n, "traversability_scores: demo state out of bounds");
      visited[s] = true;
    }
  }
  std::vector<double> finite;
  for (double c : map.costs) {
    if (std::isfinite(c)) finite.push_back(c);
  }
  require(!finite.empty(), "traversability_scores: cost map has no free cells");
  std::sort(finite.begin(), finite.end());
  const auto k = std::min(finite.size() - 1,
                          static_cast<std::size_t>(std::floor(threshold_quantile * static_cast<double>(finite.size()))));
  const double threshold = finite[k];

  TraversabilityScores out;
  std::size_t true_pos = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (!std::isfinite(map.costs[s])) continue;
    const bool predicted = map.costs[s] < threshold;
    out.predicted += predicted ? 1 : 0;
    out.actual += visited[s] ? 1 : 0;
    true_pos += (predicted && visited[s]) ? 1 : 0;
  }
  out.degenerate = out.predicted == 0 || out.predicted == finite.size();
  out.precision = out.predicted ? static_cast<double>(true_pos) / static_cast<double>(out.predicted) : 0.0;
  out.recall = out.actual ? static_cast<double>(true_pos) / static_cast<double>(out.actual) : 0.0;
  const double denom = out.precision + out.recall;
  out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
  return out;
}

}  // namespace xfer::planner
