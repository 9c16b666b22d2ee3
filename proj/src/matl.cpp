#include "xfer/matl.hpp"

#include <algorithm>
#include <cmath>

#include "xfer/error.hpp"
#include "xfer/io.hpp"

namespace xfer::matl {

using mdp::GridWorld;
using mdp::Trajectory;

void EnvPair::validate() const {
  sim.validate();
  real.validate();
  require(sim.width == real.width && sim.height == real.height, "EnvPair: sim and real grids differ in size");
  require(sim.obstacles == real.obstacles && sim.terminals == real.terminals,
          "EnvPair: sim and real grids differ in geometry");
  require(sim.horizon == real.horizon, "EnvPair: sim and real horizons differ");
  require(sim.start_dist == real.start_dist, "EnvPair: sim and real start distributions differ");
  require(reward.size() == sim.state_count(), "EnvPair: reward size does not match the grid");
}

EnvPair make_env_pair(const PairSpec& spec) {
  require(spec.width > 0 && spec.height > 0, "make_env_pair: empty grid");
  require(spec.start_x < spec.width && spec.goal_x < spec.width && spec.start_y < spec.height &&
              spec.goal_y < spec.height,
          "make_env_pair: start or goal outside the grid");
  GridWorld g;
  g.width = spec.width;
  g.height = spec.height;
  const std::size_t start = g.index(spec.start_x, spec.start_y);
  const std::size_t goal = g.index(spec.goal_x, spec.goal_y);
  require(start != goal, "make_env_pair: start and goal coincide");
  g.terminals = {goal};
  g.horizon = spec.horizon == 0 ? mdp::default_horizon(spec.width, spec.height) : spec.horizon;
  g.start_dist = mdp::point_start(g.state_count(), start);
  EnvPair pair{g, g, mdp::RewardField(g.state_count(), 0.0)};
  pair.sim.p_slip = spec.sim_p_slip;
  pair.sim.action_remap = spec.sim_remap;
  pair.real.p_slip = spec.real_p_slip;
  pair.real.action_remap = spec.real_remap;
  pair.reward[goal] = 1.0;
  pair.validate();
  return pair;
}

std::array<int, mdp::kGridActions> flipped_remap() { return {1, 0, 3, 2, 4}; }
std::array<int, mdp::kGridActions> rotated_remap() { return {2, 3, 1, 0, 4}; }

StationaryPolicy StationaryPolicy::uniform(std::size_t states, std::size_t actions) {
  return {states, actions, std::vector<double>(states * actions, 0.0)};
}

std::vector<double> StationaryPolicy::probs(std::size_t s) const {
  const auto* row = logits.data() + s * num_actions;
  const double m = *std::max_element(row, row + num_actions);
  std::vector<double> p(num_actions);
  double z = 0.0;
  for (std::size_t a = 0; a < num_actions; ++a) z += p[a] = std::exp(row[a] - m);
  for (double& v : p) v /= z;
  return p;
}

mdp::TabularPolicy StationaryPolicy::to_tabular(std::size_t horizon) const {
  mdp::TabularPolicy out(horizon, num_states, num_actions);
  for (std::size_t s = 0; s < num_states; ++s) {
    const auto p = probs(s);
    for (std::size_t t = 0; t < horizon; ++t) std::copy(p.begin(), p.end(), out.row(t, s).begin());
  }
  return out;
}

void AuxConfig::validate() const {
  require(lambda >= 0.0 && std::isfinite(lambda), "AuxConfig: lambda must be finite and nonnegative");
  require(epsilon > 0.0 && epsilon < 0.5, "AuxConfig: epsilon must lie in (0, 0.5)");
}

nnet::Matrix encode_states(const GridWorld& grid, std::span<const std::size_t> states) {
  nnet::Matrix out(states.size(), 2);
  const double sx = grid.width > 1 ? static_cast<double>(grid.width - 1) : 1.0;
  const double sy = grid.height > 1 ? static_cast<double>(grid.height - 1) : 1.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    out(i, 0) = static_cast<double>(grid.x_of(states[i])) / sx;
    out(i, 1) = static_cast<double>(grid.y_of(states[i])) / sy;
  }
  return out;
}

Rollouts collect_rollouts(const GridWorld& env, const StationaryPolicy& policy, std::size_t n, Rng& rng) {
  require(n >= 1, "collect_rollouts: n must be at least 1");
  require(policy.num_states == env.state_count() && policy.num_actions == mdp::kGridActions,
          "collect_rollouts: policy does not match the environment");
  const auto mdp = mdp::to_tabular(env);
  const auto tab = policy.to_tabular(env.horizon);
  Rollouts out;
  std::vector<std::size_t> visited;
  visited.reserve(n * env.horizon);
  for (std::size_t i = 0; i < n; ++i) {
    out.trajectories.push_back(mdp::sample_trajectory(mdp, tab, rng));
    const auto& st = out.trajectories.back().states;
    visited.insert(visited.end(), st.begin() + 1, st.end());
  }
  out.visited = encode_states(env, visited);
  return out;
}

nnet::DenseNet make_discriminator(std::span<const std::size_t> hidden, Rng& rng) {
  std::vector<std::size_t> dims{2};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  return nnet::DenseNet::glorot(dims, nnet::Activation::tanh, nnet::Activation::sigmoid, rng);
}

double update_discriminator(nnet::DenseNet& disc, const nnet::Matrix& sim_states, const nnet::Matrix& real_states,
                            nnet::OptimState& optim) {
  require(sim_states.rows > 0 && real_states.rows > 0, "update_discriminator: empty batch");
  require(sim_states.cols == real_states.cols, "update_discriminator: encoding mismatch");
  nnet::Matrix x(sim_states.rows + real_states.rows, sim_states.cols);
  std::copy(sim_states.data.begin(), sim_states.data.end(), x.data.begin());
  std::copy(real_states.data.begin(), real_states.data.end(),
            x.data.begin() + static_cast<std::ptrdiff_t>(sim_states.data.size()));
  const auto trace = nnet::forward(disc, x);
  const auto n = static_cast<double>(x.rows);
  nnet::Matrix d_out(x.rows, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double p = nnet::clamp_probability(trace.output(i, 0));
    const double y = i < sim_states.rows ? 0.0 : 1.0;
    loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    d_out(i, 0) = (-y / p + (1.0 - y) / (1.0 - p)) / n;
  }
  loss /= n;
  if (!std::isfinite(loss)) throw TrainingDiverged("update_discriminator: non-finite loss");
  nnet::optimizer_step(disc, nnet::backward(disc, trace, d_out).grads, optim);
  return loss;
}

double discriminator_accuracy(const nnet::DenseNet& disc, const nnet::Matrix& sim_states,
                              const nnet::Matrix& real_states) {
  std::size_t hits = 0;
  for (double p : nnet::predict(disc, sim_states).data) hits += p < 0.5 ? 1 : 0;
  for (double p : nnet::predict(disc, real_states).data) hits += p >= 0.5 ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(sim_states.rows + real_states.rows);
}

double aux_reward(double d, Domain domain, const AuxConfig& cfg) {
  if (cfg.mode == AuxMode::none) return 0.0;
  if (domain == Domain::sim) {
    if (cfg.mode == AuxMode::unilateral) return 0.0;
    return cfg.lambda * std::log(std::max(d, cfg.epsilon)) + 0.0;  // + 0.0 turns -0 into 0
  }
  return cfg.lambda * std::log(std::max(1.0 - d, cfg.epsilon)) + 0.0;
}

std::vector<double> aux_rewards(const nnet::DenseNet& disc, const nnet::Matrix& states, Domain domain,
                                const AuxConfig& cfg) {
  std::vector<double> out(states.rows, 0.0);
  if (cfg.mode == AuxMode::none || (cfg.mode == AuxMode::unilateral && domain == Domain::sim)) return out;
  const auto p = nnet::predict(disc, states);
  for (std::size_t i = 0; i < states.rows; ++i) out[i] = aux_reward(p(i, 0), domain, cfg);
  return out;
}

std::vector<double> env_rewards(std::span<const Trajectory> trajectories, std::span<const double> reward) {
  std::vector<double> out;
  for (const auto& tr : trajectories) {
    for (std::size_t t = 1; t < tr.states.size(); ++t) out.push_back(reward[tr.states[t]]);
  }
  return out;
}

namespace {

std::size_t horizon_of(std::span<const Trajectory> trajectories) {
  require(!trajectories.empty(), "reinforce: no rollouts");
  const std::size_t T = trajectories.front().actions.size();
  for (const auto& tr : trajectories) {
    require(tr.actions.size() == T && tr.states.size() == T + 1, "reinforce: ragged rollouts");
  }
  return T;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) h -= v > 0.0 ? v * std::log(v) : 0.0;
  return h;
}

}  // namespace

Surrogate make_surrogate(const GridWorld& env, std::span<const Trajectory> trajectories,
                         std::span<const double> rewards, double entropy_coef) {
  const std::size_t T = horizon_of(trajectories);
  const std::size_t n = trajectories.size();
  require(rewards.size() == n * T, "reinforce: reward count must be n * T");
  std::vector<double> go(n * T, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      acc += rewards[i * T + t];
      go[i * T + t] = acc;
    }
  }
  Surrogate s;
  s.entropy_coef = entropy_coef;
  s.advantages.assign(n * T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0;
    std::size_t active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (env.is_terminal(trajectories[i].states[t])) continue;
      sum += go[i * T + t];
      ++active;
    }
    if (active == 0) continue;
    const double baseline = sum / static_cast<double>(active);
    for (std::size_t i = 0; i < n; ++i) {
      if (!env.is_terminal(trajectories[i].states[t])) s.advantages[i * T + t] = go[i * T + t] - baseline;
    }
  }
  return s;
}

double surrogate_value(const StationaryPolicy& policy, const GridWorld& env, std::span<const Trajectory> trajectories,
                       const Surrogate& s) {
  const std::size_t T = horizon_of(trajectories);
  double total = 0.0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t st = trajectories[i].states[t];
      if (env.is_terminal(st)) continue;
      const auto p = policy.probs(st);
      total += std::log(p[trajectories[i].actions[t]]) * s.advantages[i * T + t] + s.entropy_coef * entropy(p);
    }
  }
  return total / static_cast<double>(trajectories.size());
}

std::vector<double> surrogate_gradient(const StationaryPolicy& policy, const GridWorld& env,
                                       std::span<const Trajectory> trajectories, const Surrogate& s) {
  const std::size_t T = horizon_of(trajectories);
  const std::size_t A = policy.num_actions;
  const double inv_n = 1.0 / static_cast<double>(trajectories.size());
  std::vector<double> g(policy.logits.size(), 0.0);
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t st = trajectories[i].states[t];
      if (env.is_terminal(st)) continue;
      const auto p = policy.probs(st);
      const double adv = s.advantages[i * T + t];
      std::vector<double> logp(A);
      for (std::size_t a = 0; a < A; ++a) logp[a] = std::log(p[a]);
      const std::size_t taken = trajectories[i].actions[t];
      for (std::size_t a = 0; a < A; ++a) {
        const double score = ((a == taken ? 1.0 : 0.0) - p[a]) * adv;
        // dH/dz_a = -p_a * sum_b p_b (log p_a - log p_b), exactly zero at uniform.
        double spread = 0.0;
        for (std::size_t b = 0; b < A; ++b) spread += p[b] * (logp[a] - logp[b]);
        const double d_entropy = -p[a] * spread;
        g[st * A + a] += (score + s.entropy_coef * d_entropy) * inv_n;
      }
    }
  }
  return g;
}

void reinforce_update(StationaryPolicy& policy, const GridWorld& env, std::span<const Trajectory> trajectories,
                      std::span<const double> rewards, nnet::OptimState& optim, double entropy_coef) {
  const auto s = make_surrogate(env, trajectories, rewards, entropy_coef);
  auto g = surrogate_gradient(policy, env, trajectories, s);
  for (double& v : g) v = -v;  // the optimizer descends
  optim.apply(policy.logits, g);
  for (double v : policy.logits) {
    if (!std::isfinite(v)) throw TrainingDiverged("reinforce_update: non-finite logits");
  }
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::mutual: return "mutual";
    case TrainMode::unilateral: return "unilateral";
    case TrainMode::none: return "none";
    case TrainMode::finetune: return "finetune";
    case TrainMode::mutual_finetune: return "mutual+finetune";
  }
  return "none";
}

TrainMode train_mode_from_string(const std::string& name) {
  for (auto m : {TrainMode::mutual, TrainMode::unilateral, TrainMode::none, TrainMode::finetune,
                 TrainMode::mutual_finetune}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidInput("unknown matl mode '" + name + "'");
}

std::string MatlHistory::to_csv() const {
  std::string out = "iter,mode,sim_return,real_return,success_rate,disc_acc,aux_mean_sim,aux_mean_real,seed\n";
  const std::string m = to_string(mode);
  for (const auto& r : records) {
    out += std::to_string(r.iter) + ',' + m + ',' + io::format_double(r.sim_return) + ',' +
           io::format_double(r.real_return) + ',' + io::format_double(r.success_rate) + ',' +
           io::format_double(r.disc_acc) + ',' + io::format_double(r.aux_mean_sim) + ',' +
           io::format_double(r.aux_mean_real) + ',' + std::to_string(seed) + '\n';
  }
  return out;
}

double MatlHistory::final_success(std::size_t window) const {
  require(!records.empty(), "final_success: empty history");
  const std::size_t w = std::clamp<std::size_t>(window, 1, records.size());
  double sum = 0.0;
  for (std::size_t i = records.size() - w; i < records.size(); ++i) sum += records[i].success_rate;
  return sum / static_cast<double>(w);
}

namespace {

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double mean_return(std::span<const double> rewards, std::size_t n) {
  double s = 0.0;
  for (double x : rewards) s += x;
  return s / static_cast<double>(n);
}

double success_rate(const GridWorld& env, std::span<const Trajectory> trajectories) {
  std::size_t hits = 0;
  for (const auto& tr : trajectories) hits += env.is_terminal(tr.states.back()) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(trajectories.size());
}

AuxMode aux_mode(TrainMode m) {
  switch (m) {
    case TrainMode::mutual:
    case TrainMode::mutual_finetune: return AuxMode::mutual;
    case TrainMode::unilateral: return AuxMode::unilateral;
    default: return AuxMode::none;
  }
}

StationaryPolicy pretrain_sim(const EnvPair& pair, const MatlConfig& config, Rng& rng) {
  auto policy = StationaryPolicy::uniform(pair.sim.state_count(), mdp::kGridActions);
  nnet::OptimState optim(nnet::Method::adam, config.policy_lr, policy.logits.size());
  std::size_t streak = 0;
  for (std::size_t it = 0; it < config.pretrain_iterations && streak < config.success_window; ++it) {
    const auto ro = collect_rollouts(pair.sim, policy, config.rollouts, rng);
    streak = success_rate(pair.sim, ro.trajectories) == 1.0 ? streak + 1 : 0;
    const auto r = env_rewards(ro.trajectories, pair.reward);
    reinforce_update(policy, pair.sim, ro.trajectories, r, optim, config.entropy_coef);
  }
  return policy;
}

}  // namespace

MatlHistory train_matl(const EnvPair& pair, TrainMode mode, const MatlConfig& config) {
  pair.validate();
  require(config.rollouts >= 1, "train_matl: rollouts must be at least 1");
  const AuxConfig aux{config.lambda, config.epsilon, aux_mode(mode)};
  aux.validate();

  Rng root(config.seed);
  Rng sim_rng = root.split();
  Rng real_rng = root.split();
  Rng disc_rng = root.split();
  Rng pre_rng = root.split();

  MatlHistory h;
  h.mode = mode;
  h.seed = config.seed;
  const std::size_t S = pair.sim.state_count();
  h.policies.sim = StationaryPolicy::uniform(S, mdp::kGridActions);
  h.policies.real = h.policies.sim;
  if (mode == TrainMode::finetune || mode == TrainMode::mutual_finetune) {
    h.policies.sim = pretrain_sim(pair, config, pre_rng);
    h.policies.real = h.policies.sim;
  }

  auto disc = make_discriminator(config.disc_hidden, disc_rng);
  nnet::OptimState disc_opt(nnet::Method::adam, config.disc_lr, disc.parameter_count());
  nnet::OptimState sim_opt(nnet::Method::adam, config.policy_lr, h.policies.sim.logits.size());
  nnet::OptimState real_opt(nnet::Method::adam, config.policy_lr, h.policies.real.logits.size());

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto rs = collect_rollouts(pair.sim, h.policies.sim, config.rollouts, sim_rng);
    const auto rr = collect_rollouts(pair.real, h.policies.real, config.rollouts, real_rng);
    for (std::size_t k = 0; k < config.disc_steps; ++k) update_discriminator(disc, rs.visited, rr.visited, disc_opt);

    auto env_s = env_rewards(rs.trajectories, pair.reward);
    auto env_r = env_rewards(rr.trajectories, pair.reward);
    const auto aux_s = aux_rewards(disc, rs.visited, Domain::sim, aux);
    const auto aux_r = aux_rewards(disc, rr.visited, Domain::real, aux);

    MatlRecord rec;
    rec.iter = it;
    rec.sim_return = mean_return(env_s, config.rollouts);
    rec.real_return = mean_return(env_r, config.rollouts);
    rec.success_rate = success_rate(pair.real, rr.trajectories);
    rec.disc_acc = discriminator_accuracy(disc, rs.visited, rr.visited);
    rec.aux_mean_sim = mean(aux_s);
    rec.aux_mean_real = mean(aux_r);
    h.records.push_back(rec);

    for (std::size_t i = 0; i < env_s.size(); ++i) env_s[i] += aux_s[i];
    for (std::size_t i = 0; i < env_r.size(); ++i) env_r[i] += aux_r[i];
    reinforce_update(h.policies.sim, pair.sim, rs.trajectories, env_s, sim_opt, config.entropy_coef);
    reinforce_update(h.policies.real, pair.real, rr.trajectories, env_r, real_opt, config.entropy_coef);
  }
  return h;
}

}  // namespace xfer::matl
