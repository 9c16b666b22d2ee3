#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xfer/mdp.hpp"
#include "xfer/nnet.hpp"
#include "xfer/rng.hpp"

// Mutual alignment transfer: policies trained side by side in a "sim" and a
// "real" gridworld, coupled through a state discriminator.
namespace xfer::matl {

/// Two gridworlds over the same cells with a shared sparse goal reward.
struct EnvPair {
  mdp::GridWorld sim;
  mdp::GridWorld real;
  mdp::RewardField reward;

  void validate() const;
};

struct PairSpec {
  std::size_t width = 10;
  std::size_t height = 10;
  std::size_t start_x = 0;
  std::size_t start_y = 9;
  std::size_t goal_x = 9;
  std::size_t goal_y = 0;
  std::size_t horizon = 0;  // 0 = default_horizon
  double sim_p_slip = 0.0;
  double real_p_slip = 0.3;
  std::array<int, mdp::kGridActions> sim_remap{0, 1, 2, 3, 4};
  std::array<int, mdp::kGridActions> real_remap{0, 1, 2, 3, 4};
};

/// Open grid, point start, terminal goal paying 1 per step spent in it.
EnvPair make_env_pair(const PairSpec& spec);

/// Remap that exchanges north/south and east/west.
std::array<int, mdp::kGridActions> flipped_remap();
/// Remap that rotates the four moves by a quarter turn.
std::array<int, mdp::kGridActions> rotated_remap();

/// Softmax policy over a stationary logit table.
struct StationaryPolicy {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> logits;

  static StationaryPolicy uniform(std::size_t states, std::size_t actions);
  std::vector<double> probs(std::size_t s) const;
  /// The same distribution repeated at every timestep.
  mdp::TabularPolicy to_tabular(std::size_t horizon) const;
  bool operator==(const StationaryPolicy&) const = default;
};

struct PolicyPair {
  StationaryPolicy sim;
  StationaryPolicy real;
};

enum class AuxMode { mutual, unilateral, none };
enum class Domain { sim, real };

struct AuxConfig {
  double lambda = 0.05;
  double epsilon = 1e-6;
  AuxMode mode = AuxMode::mutual;

  void validate() const;
};

struct Rollouts {
  std::vector<mdp::Trajectory> trajectories;
  /// Every state at t >= 1 in trajectory order, as normalized (x, y); n * T rows.
  nnet::Matrix visited;
};

/// (x, y) scaled to [0, 1] by the grid extent.
nnet::Matrix encode_states(const mdp::GridWorld& grid, std::span<const std::size_t> states);

Rollouts collect_rollouts(const mdp::GridWorld& env, const StationaryPolicy& policy, std::size_t n, Rng& rng);

/// Sigmoid-output discriminator on encoded states.
nnet::DenseNet make_discriminator(std::span<const std::size_t> hidden, Rng& rng);

/// One cross-entropy step with real = 1 and sim = 0; returns the loss before the step.
double update_discriminator(nnet::DenseNet& disc, const nnet::Matrix& sim_states, const nnet::Matrix& real_states,
                            nnet::OptimState& optim);

/// Fraction of states classified on the correct side of 0.5.
double discriminator_accuracy(const nnet::DenseNet& disc, const nnet::Matrix& sim_states,
                              const nnet::Matrix& real_states);

/// Alignment reward for one discriminator output.
double aux_reward(double d, Domain domain, const AuxConfig& cfg);
std::vector<double> aux_rewards(const nnet::DenseNet& disc, const nnet::Matrix& states, Domain domain,
                                const AuxConfig& cfg);

/// Per-step rewards r(s_{t+1}) for each trajectory, flattened n * T.
std::vector<double> env_rewards(std::span<const mdp::Trajectory> trajectories, std::span<const double> reward);

/// Score-function surrogate with per-timestep mean-return baseline and an
/// entropy bonus. Steps taken from absorbing states carry no gradient.
struct Surrogate {
  std::vector<double> advantages;  // n * T, zero on absorbing steps
  double entropy_coef = 0.01;
};

Surrogate make_surrogate(const mdp::GridWorld& env, std::span<const mdp::Trajectory> trajectories,
                         std::span<const double> rewards, double entropy_coef);
double surrogate_value(const StationaryPolicy& policy, const mdp::GridWorld& env,
                       std::span<const mdp::Trajectory> trajectories, const Surrogate& s);
std::vector<double> surrogate_gradient(const StationaryPolicy& policy, const mdp::GridWorld& env,
                                       std::span<const mdp::Trajectory> trajectories, const Surrogate& s);

/// Ascends the surrogate by one optimizer step.
void reinforce_update(StationaryPolicy& policy, const mdp::GridWorld& env,
                      std::span<const mdp::Trajectory> trajectories, std::span<const double> rewards,
                      nnet::OptimState& optim, double entropy_coef = 0.01);

enum class TrainMode { mutual, unilateral, none, finetune, mutual_finetune };
std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& name);

struct MatlConfig {
  std::uint64_t seed = 0;
  std::size_t iterations = 150;
  std::size_t rollouts = 16;
  double policy_lr = 0.1;
  double disc_lr = 0.01;
  std::size_t disc_steps = 1;
  std::vector<std::size_t> disc_hidden{16};
  double lambda = 0.05;
  double epsilon = 1e-6;
  double entropy_coef = 0.01;
  std::size_t pretrain_iterations = 150;
  std::size_t success_window = 10;
};

struct MatlRecord {
  std::size_t iter = 0;
  double sim_return = 0.0;
  double real_return = 0.0;
  double success_rate = 0.0;
  double disc_acc = 0.0;
  double aux_mean_sim = 0.0;
  double aux_mean_real = 0.0;
  bool operator==(const MatlRecord&) const = default;
};

struct MatlHistory {
  TrainMode mode = TrainMode::none;
  std::uint64_t seed = 0;
  std::vector<MatlRecord> records;
  PolicyPair policies;

  /// Columns: iter,mode,sim_return,real_return,success_rate,disc_acc,aux_mean_sim,aux_mean_real,seed.
  std::string to_csv() const;
  /// Mean real success over the last `window` iterations.
  double final_success(std::size_t window) const;
};

/// Finetune modes first train the sim policy alone (until it succeeds on every
/// rollout for success_window iterations, or pretrain_iterations pass) and
/// copy it into the real policy before the main loop.
MatlHistory train_matl(const EnvPair& pair, TrainMode mode, const MatlConfig& config);

}  // namespace xfer::matl
