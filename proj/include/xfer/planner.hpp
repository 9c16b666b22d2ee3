#pragma once

#include <cstddef>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "xfer/mdp.hpp"

namespace xfer::planner {

inline constexpr double kBlocked = std::numeric_limits<double>::infinity();

enum class Provenance { learned, handcrafted };

/// Per-cell traversal cost; blocked cells carry kBlocked.
struct CostMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> costs;
  Provenance provenance = Provenance::learned;
};

/// cost(s) = (max r - r(s)) + cost_floor, with the maximum taken over free cells.
CostMap reward_to_costmap(std::span<const double> reward, std::size_t width, std::size_t height,
                          double cost_floor, const std::set<std::size_t>& obstacles = {},
                          Provenance provenance = Provenance::learned);

struct PathResult {
  std::vector<std::size_t> cells;
  double total_cost = 0.0;
  bool reachable = false;
};

/// Uniform-cost search on the 4-connected grid. The start cell is free; every
/// entered cell adds its cost. Frontier ties pop in (row, col) order.
PathResult plan_path(const CostMap& costmap, std::size_t start, std::size_t goal);

/// Expected value difference under r_true between the optimal policy and the
/// greedy policy of r_learned, both from the start distribution.
double evd(const mdp::GridWorld& grid, std::span<const double> r_true, std::span<const double> r_learned);

/// max_s V*_0(s) - min_s V*_0(s) over free cells; the scale against which EVD
/// is reported as a fraction.
double value_range(const mdp::GridWorld& grid, std::span<const double> reward);

struct TraversabilityScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t predicted = 0;
  std::size_t actual = 0;
  /// Set when no cell or every cell is predicted traversable.
  bool degenerate = false;
};

/// Cells with cost strictly below the threshold are predicted traversable. The
/// threshold is the (floor(q * n) + 1)-th smallest finite cost; demo-visited
/// cells are the ground truth. Blocked cells are excluded from both sets.
TraversabilityScores traversability_scores(const CostMap& costmap, std::span<const mdp::Trajectory> demos,
                                           double threshold_quantile);

}  // namespace xfer::planner
