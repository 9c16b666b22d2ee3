#include "xfer/medirl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "xfer/error.hpp"
#include "xfer/io.hpp"
#include "xfer/planner.hpp"

namespace xfer::medirl {

void FeatureGrid::validate() const {
  require(width > 0 && height > 0, "FeatureGrid: empty grid");
  require(values.rows == state_count(), "FeatureGrid: one feature row per state required");
  require(values.cols >= 1, "FeatureGrid: at least one channel required");
  require(channels.empty() || channels.size() == values.cols, "FeatureGrid: channel names do not match width");
  for (double v : values.data) require(std::isfinite(v), "FeatureGrid: features must be finite");
}

void normalize_channels(FeatureGrid& features) {
  for (std::size_t c = 0; c < features.dim(); ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < features.values.rows; ++s) {
      lo = std::min(lo, features.values(s, c));
      hi = std::max(hi, features.values(s, c));
    }
    for (std::size_t s = 0; s < features.values.rows; ++s) {
      double& v = features.values(s, c);
      v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }
  }
}

RewardModel RewardModel::linear(std::size_t dim) { return linear(std::vector<double>(dim, 0.0)); }

RewardModel RewardModel::linear(std::vector<double> weights) {
  require(!weights.empty(), "RewardModel: dimension must be positive");
  RewardModel m;
  m.kind_ = Kind::linear;
  m.weights_ = std::move(weights);
  return m;
}

RewardModel RewardModel::deep(std::size_t dim, std::span<const std::size_t> hidden, Rng& rng) {
  std::vector<std::size_t> dims{dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return deep(nnet::DenseNet::glorot(dims, nnet::Activation::tanh, nnet::Activation::identity, rng));
}

RewardModel RewardModel::deep(nnet::DenseNet net) {
  require(net.output_dim() == 1, "RewardModel: deep reward network must have one output");
  RewardModel m;
  m.kind_ = Kind::deep;
  m.net_ = std::move(net);
  return m;
}

std::size_t RewardModel::dim() const { return kind_ == Kind::linear ? weights_.size() : net_.input_dim(); }

std::size_t RewardModel::parameter_count() const {
  return kind_ == Kind::linear ? weights_.size() : net_.parameter_count();
}

std::vector<double> RewardModel::parameters() const { return kind_ == Kind::linear ? weights_ : net_.flatten(); }

void RewardModel::assign(std::span<const double> params) {
  if (kind_ == Kind::linear) {
    require(params.size() == weights_.size(), "RewardModel::assign: parameter count mismatch");
    std::copy(params.begin(), params.end(), weights_.begin());
  } else {
    net_.assign(params);
  }
}

std::vector<double> RewardModel::rewards(const FeatureGrid& features) const {
  require(features.dim() == dim(), "RewardModel: feature dimension does not match the model");
  if (kind_ == Kind::deep) return nnet::predict(net_, features.values).data;
  std::vector<double> r(features.values.rows, 0.0);
  for (std::size_t s = 0; s < r.size(); ++s) {
    const auto row = features.values.row(s);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += weights_[c] * row[c];
    r[s] = acc;
  }
  return r;
}

std::vector<double> RewardModel::parameter_gradient(const FeatureGrid& features,
                                                    std::span<const double> d_reward) const {
  require(d_reward.size() == features.values.rows, "RewardModel: one reward gradient per state required");
  if (kind_ == Kind::deep) {
    const auto trace = nnet::forward(net_, features.values);
    return nnet::backward(net_, trace, nnet::Matrix::column(d_reward)).grads.flatten();
  }
  std::vector<double> g(weights_.size(), 0.0);
  for (std::size_t s = 0; s < d_reward.size(); ++s) {
    if (d_reward[s] == 0.0) continue;
    const auto row = features.values.row(s);
    for (std::size_t c = 0; c < row.size(); ++c) g[c] += d_reward[s] * row[c];
  }
  return g;
}

nlohmann::json RewardModel::to_json() const {
  if (kind_ == Kind::linear) return {{"kind", "linear"}, {"weights", weights_}};
  return {{"kind", "deep"}, {"net", nnet::to_json(net_)}};
}

std::vector<double> empirical_svf(const DemoSet& demos, std::size_t state_count) {
  require(!demos.trajectories.empty(), "empirical_svf: demo set is empty");
  std::vector<double> counts(state_count, 0.0);
  for (const auto& traj : demos.trajectories) {
    for (std::size_t s : traj.states) {
      require(s < state_count, "empirical_svf: demo state out of range");
      counts[s] += 1.0;
    }
  }
  const double n = static_cast<double>(demos.trajectories.size());
  for (double& c : counts) c /= n;
  return counts;
}

std::vector<double> expected_svf(const mdp::TabularMdp& mdp, const mdp::TabularPolicy& policy) {
  require(policy.horizon == mdp.horizon && policy.num_states == mdp.num_states &&
              policy.num_actions == mdp.num_actions,
          "expected_svf: policy does not cover the MDP horizon");
  const std::size_t S = mdp.num_states;
  std::vector<double> d = mdp.start_dist;
  std::vector<double> mu = d;
  std::vector<double> next(S);
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      if (d[s] == 0.0) continue;
      const auto row = policy.row(t, s);
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        const double w = d[s] * row[a];
        if (w == 0.0) continue;
        for (const auto& o : mdp.next(s, a)) next[o.state] += w * o.prob;
      }
    }
    d.swap(next);
    for (std::size_t s = 0; s < S; ++s) mu[s] += d[s];
  }
  return mu;
}

NllResult demo_nll(const mdp::TabularPolicy& policy, const DemoSet& demos) {
  require(!demos.trajectories.empty(), "demo_nll: demo set is empty");
  const double log_floor = std::log(1e-12);
  NllResult out;
  double total = 0.0;
  for (const auto& traj : demos.trajectories) {
    require(traj.actions.size() <= policy.horizon, "demo_nll: policy does not cover the demo horizon");
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      const double p = policy.at(t, traj.states[t], traj.actions[t]);
      double lp = log_floor;
      if (p > 1e-12) {
        lp = std::log(p);
      } else {
        out.floored = true;
      }
      total -= lp;
    }
  }
  out.value = total / static_cast<double>(demos.trajectories.size());
  return out;
}

double maxent_objective(const mdp::TabularMdp& mdp, std::span<const double> reward, std::span<const double> mu_demo) {
  const auto sol = mdp::soft_value_iteration(mdp, reward);
  double value = mdp::start_value(mdp, std::span(sol.values.V).first(mdp.num_states));
  for (std::size_t s = 0; s < reward.size(); ++s) value -= mu_demo[s] * reward[s];
  return value;
}

StepMetrics evaluate_model(const RewardModel& model, const FeatureGrid& features, const mdp::TabularMdp& mdp,
                           std::span<const double> mu_demo, const DemoSet& demos) {
  require(features.state_count() == mdp.num_states, "medirl: feature grid does not match the MDP");
  require(mu_demo.size() == mdp.num_states, "medirl: demo visitation length does not match the MDP");
  const auto r = model.rewards(features);
  for (double v : r) {
    if (!std::isfinite(v)) throw TrainingDiverged("medirl: reward model produced a non-finite reward");
  }
  const auto sol = mdp::soft_value_iteration(mdp, r);
  const auto mu = expected_svf(mdp, sol.policy);

  StepMetrics m;
  m.reward_grad.resize(mu.size());
  for (std::size_t s = 0; s < mu.size(); ++s) m.reward_grad[s] = mu[s] - mu_demo[s];
  m.param_grad = model.parameter_gradient(features, m.reward_grad);
  double sq = 0.0;
  for (double g : m.param_grad) sq += g * g;
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.grad_norm)) throw TrainingDiverged("medirl: non-finite gradient");

  const auto nll = demo_nll(sol.policy, demos);
  m.demo_nll = nll.value;
  m.nll_floored = nll.floored;
  m.objective = mdp::start_value(mdp, std::span(sol.values.V).first(mdp.num_states));
  for (std::size_t s = 0; s < r.size(); ++s) m.objective -= mu_demo[s] * r[s];
  return m;
}

StepMetrics medirl_step(RewardModel& model, nnet::OptimState& optim, const FeatureGrid& features,
                        const mdp::TabularMdp& mdp, std::span<const double> mu_demo, const DemoSet& demos) {
  StepMetrics m = evaluate_model(model, features, mdp, mu_demo, demos);
  auto params = model.parameters();
  optim.apply(params, m.param_grad);
  model.assign(params);
  return m;
}

std::string TrainHistory::to_csv() const {
  std::string out = "iteration,demo_nll,objective,grad_norm,evd,evd_fraction\n";
  for (const auto& r : records) {
    out += std::to_string(r.iteration) + ',' + io::format_double(r.demo_nll) + ',' + io::format_double(r.objective) +
           ',' + io::format_double(r.grad_norm) + ',' + (r.evd ? io::format_double(*r.evd) : "") + ',' +
           (r.evd_fraction ? io::format_double(*r.evd_fraction) : "") + '\n';
  }
  return out;
}

std::optional<std::size_t> TrainHistory::first_iteration_below(double threshold) const {
  for (const auto& r : records) {
    if (r.evd_fraction && *r.evd_fraction <= threshold) return r.iteration;
  }
  return std::nullopt;
}

TrainResult train_medirl(RewardModel model, const FeatureGrid& features, const mdp::GridWorld& grid,
                         const DemoSet& demos, const TrainConfig& config,
                         const std::optional<std::vector<double>>& true_reward) {
  features.validate();
  const auto mdp = mdp::to_tabular(grid);
  const auto mu_demo = empirical_svf(demos, mdp.num_states);
  std::optional<double> range;
  if (true_reward) {
    require(true_reward->size() == mdp.num_states, "train_medirl: true reward length mismatch");
    range = planner::value_range(grid, *true_reward);
  }

  nnet::OptimState optim(config.method, config.learning_rate, model.parameter_count());
  TrainResult result{model, {}, 0};
  double best_nll = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t it = 0;; ++it) {
    const StepMetrics m = evaluate_model(model, features, mdp, mu_demo, demos);
    HistoryRecord rec;
    rec.iteration = it;
    rec.demo_nll = m.demo_nll;
    rec.objective = m.objective;
    rec.grad_norm = m.grad_norm;
    if (true_reward) {
      rec.evd = planner::evd(grid, *true_reward, model.rewards(features));
      rec.evd_fraction = *range > 0.0 ? *rec.evd / *range : 0.0;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.records.push_back(rec);
    if (m.demo_nll < best_nll) {
      best_nll = m.demo_nll;
      result.model = model;
      result.best_iteration = it;
    }
    if (it >= config.iterations || m.grad_norm < config.grad_tolerance) break;
    auto params = model.parameters();
    optim.apply(params, m.param_grad);
    model.assign(params);
  }
  return result;
}

double reward_mse(const RewardModel& model, const FeatureGrid& features, std::span<const double> target) {
  const auto r = model.rewards(features);
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += (r[i] - target[i]) * (r[i] - target[i]);
  return s / static_cast<double>(r.size());
}

RewardModel pretrain_from_handcrafted(RewardModel model, const FeatureGrid& features,
                                      std::span<const double> handcrafted_cost, const PretrainConfig& config) {
  require(handcrafted_cost.size() == features.state_count(), "pretrain: cost length must equal the state count");
  std::vector<double> target(handcrafted_cost.size());
  for (std::size_t s = 0; s < target.size(); ++s) {
    require(std::isfinite(handcrafted_cost[s]), "pretrain: handcrafted cost must be finite");
    target[s] = -handcrafted_cost[s];
  }
  if (config.epochs == 0) return model;
  nnet::OptimState optim(config.method, config.learning_rate, model.parameter_count());
  const double n = static_cast<double>(target.size());
  std::vector<double> d_reward(target.size());
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto r = model.rewards(features);
    for (std::size_t s = 0; s < r.size(); ++s) d_reward[s] = 2.0 * (r[s] - target[s]) / n;
    auto params = model.parameters();
    optim.apply(params, model.parameter_gradient(features, d_reward));
    model.assign(params);
  }
  return model;
}

FeatureGrid apply_miscalibration(const FeatureGrid& features, int dx, int dy) {
  const auto w = static_cast<long>(features.width);
  const auto h = static_cast<long>(features.height);
  if (std::abs(static_cast<long>(dx)) >= w || std::abs(static_cast<long>(dy)) >= h) {
    throw InvalidInput("apply_miscalibration: shift (" + std::to_string(dx) + ", " + std::to_string(dy) +
                       ") exceeds the grid size");
  }
  FeatureGrid out = features;
  for (std::size_t c = 0; c < features.dim(); ++c) {
    double mean = 0.0;
    for (std::size_t s = 0; s < features.state_count(); ++s) mean += features.values(s, c);
    mean /= static_cast<double>(features.state_count());
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const long sx = x - dx;
        const long sy = y - dy;
        const auto dst = static_cast<std::size_t>(y * w + x);
        if (sx < 0 || sy < 0 || sx >= w || sy >= h) {
          out.values(dst, c) = mean;
        } else {
          out.values(dst, c) = features.values(static_cast<std::size_t>(sy * w + sx), c);
        }
      }
    }
  }
  return out;
}

namespace {

// Breadth-first step distances from `goal` through free cells; unreachable = max size_t.
std::vector<std::size_t> bfs_distances(const mdp::GridWorld& g, std::size_t goal) {
  const std::size_t unreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.state_count(), unreached);
  std::deque<std::size_t> queue{goal};
  dist[goal] = 0;
  while (!queue.empty()) {
    const std::size_t s = queue.front();
    queue.pop_front();
    const long x = static_cast<long>(g.x_of(s)), y = static_cast<long>(g.y_of(s));
    const long nbrs[4][2] = {{x, y - 1}, {x, y + 1}, {x + 1, y}, {x - 1, y}};
    for (const auto& nb : nbrs) {
      if (nb[0] < 0 || nb[1] < 0 || nb[0] >= static_cast<long>(g.width) || nb[1] >= static_cast<long>(g.height)) continue;
      const std::size_t t = g.index(static_cast<std::size_t>(nb[0]), static_cast<std::size_t>(nb[1]));
      if (g.is_obstacle(t) || dist[t] != unreached) continue;
      dist[t] = dist[s] + 1;
      queue.push_back(t);
    }
  }
  return dist;
}

}  // namespace

TerrainWorld make_terrain_world(const TerrainSpec& spec, Rng& rng) {
  require(spec.width >= 2 && spec.height >= 2, "make_terrain_world: grid must be at least 2x2");
  require(spec.obstacle_density >= 0.0 && spec.obstacle_density < 0.5, "make_terrain_world: obstacle density must lie in [0, 0.5)");
  require(spec.patches >= 1, "make_terrain_world: need at least one terrain patch");
  TerrainWorld w;
  auto& g = w.grid;
  g.width = spec.width;
  g.height = spec.height;
  g.p_slip = spec.p_slip;
  g.horizon = spec.horizon ? spec.horizon : mdp::default_horizon(spec.width, spec.height);
  const std::size_t n = g.state_count();

  // Terrain classes from a Voronoi partition of random patch centres.
  std::vector<std::pair<std::size_t, Terrain>> centres;
  for (std::size_t i = 0; i < spec.patches; ++i) {
    centres.emplace_back(rng.uniform_int(n), static_cast<Terrain>(rng.uniform_int(3)));
  }
  w.terrain.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [c, cls] : centres) {
      const double dx = static_cast<double>(g.x_of(s)) - static_cast<double>(g.x_of(c));
      const double dy = static_cast<double>(g.y_of(s)) - static_cast<double>(g.y_of(c));
      const double d = dx * dx + dy * dy;
      if (d < best) {
        best = d;
        w.terrain[s] = cls;
      }
    }
  }

  w.goal = rng.uniform_int(n);
  w.terrain[w.goal] = Terrain::road;
  g.terminals = {w.goal};

  // Obstacles are kept only while every free cell stays connected to the goal.
  const auto target = static_cast<std::size_t>(spec.obstacle_density * static_cast<double>(n));
  for (std::size_t attempt = 0; attempt < 4 * n && g.obstacles.size() < target; ++attempt) {
    const std::size_t s = rng.uniform_int(n);
    if (s == w.goal || g.obstacles.contains(s)) continue;
    g.obstacles.insert(s);
    const auto dist = bfs_distances(g, w.goal);
    bool connected = true;
    for (std::size_t t = 0; t < n; ++t) {
      if (!g.is_obstacle(t) && dist[t] == std::numeric_limits<std::size_t>::max()) connected = false;
    }
    if (!connected) g.obstacles.erase(s);
  }

  g.start_dist.assign(n, 0.0);
  const double free_cells = static_cast<double>(n - g.obstacles.size() - 1);
  for (std::size_t s = 0; s < n; ++s) {
    if (!g.is_obstacle(s) && s != w.goal) g.start_dist[s] = 1.0 / free_cells;
  }
  // Renormalise so the sum is 1 to the last bit.
  double total = 0.0;
  for (double p : g.start_dist) total += p;
  for (double& p : g.start_dist) p /= total;
  g.validate();

  const auto dist = bfs_distances(g, w.goal);
  std::size_t max_dist = 1;
  for (std::size_t s = 0; s < n; ++s) {
    if (!g.is_obstacle(s)) max_dist = std::max(max_dist, dist[s]);
  }
  constexpr double app_a[] = {0.2, 0.5, 0.8};
  constexpr double app_b[] = {0.7, 0.2, 0.5};
  auto& f = w.features;
  f.width = g.width;
  f.height = g.height;
  f.channels = kChannelNames;
  f.values = nnet::Matrix(n, kChannelNames.size());
  for (std::size_t s = 0; s < n; ++s) {
    const bool blocked = g.is_obstacle(s);
    const auto cls = static_cast<std::size_t>(w.terrain[s]);
    f.values(s, 0) = blocked ? 1.0 : 0.0;
    f.values(s, 1) = blocked ? 1.0 : static_cast<double>(dist[s]) / static_cast<double>(max_dist);
    f.values(s, 2) = app_a[cls] + rng.normal(0.0, spec.appearance_noise);
    f.values(s, 3) = app_b[cls] + rng.normal(0.0, spec.appearance_noise);
  }
  normalize_channels(f);

  constexpr double terrain_reward[] = {0.0, -1.0, -3.0};
  constexpr double terrain_cost[] = {1.0, 2.0, 3.0};
  w.true_reward.resize(n);
  w.handcrafted_cost.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto cls = static_cast<std::size_t>(w.terrain[s]);
    const double d = f.values(s, 1);
    if (spec.ground_truth == GroundTruth::linear) {
      double r = 0.0;
      for (std::size_t c = 0; c < kLinearTruthWeights.size(); ++c) r += kLinearTruthWeights[c] * f.values(s, c);
      w.true_reward[s] = r;
    } else {
      w.true_reward[s] = terrain_reward[cls] - 3.0 * d;
    }
    w.handcrafted_cost[s] = g.is_obstacle(s) ? 10.0 : terrain_cost[cls] + 2.0 * d;
  }
  return w;
}

DemoSet synthesize_demos(const mdp::GridWorld& grid, std::span<const double> reward, std::size_t count, Rng& rng) {
  const auto m = mdp::to_tabular(grid);
  const auto sol = mdp::soft_value_iteration(m, reward);
  DemoSet demos;
  demos.provenance = "soft-optimal expert on hidden reward";
  demos.trajectories.reserve(count);
  for (std::size_t i = 0; i < count; ++i) demos.trajectories.push_back(mdp::sample_trajectory(m, sol.policy, rng));
  return demos;
}

}  // namespace xfer::medirl
