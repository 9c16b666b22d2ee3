#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xfer/mdp.hpp"
#include "xfer/nnet.hpp"
#include "xfer/rng.hpp"

// Maximum-entropy IRL with linear or deep reward models over per-cell features.
namespace xfer::medirl {

/// Per-state feature vectors; `values` is state_count x dim, each channel in [0, 1].
struct FeatureGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::string> channels;
  nnet::Matrix values;

  std::size_t state_count() const { return width * height; }
  std::size_t dim() const { return values.cols; }
  void validate() const;
};

/// Rescales every channel to [0, 1]; constant channels become 0.
void normalize_channels(FeatureGrid& features);

class RewardModel {
 public:
  enum class Kind { linear, deep };

  static RewardModel linear(std::size_t dim);
  static RewardModel linear(std::vector<double> weights);
  /// Deep model dim -> hidden... -> 1 with tanh hidden units.
  static RewardModel deep(std::size_t dim, std::span<const std::size_t> hidden, Rng& rng);
  static RewardModel deep(nnet::DenseNet net);

  Kind kind() const { return kind_; }
  std::size_t dim() const;
  std::size_t parameter_count() const;
  const std::vector<double>& weights() const { return weights_; }
  const nnet::DenseNet& net() const { return net_; }

  std::vector<double> parameters() const;
  void assign(std::span<const double> params);

  /// Reward for every state.
  std::vector<double> rewards(const FeatureGrid& features) const;
  /// Gradient of sum_s d_reward[s] * reward(s) with respect to the parameters.
  std::vector<double> parameter_gradient(const FeatureGrid& features, std::span<const double> d_reward) const;

  nlohmann::json to_json() const;

  bool operator==(const RewardModel&) const = default;

 private:
  Kind kind_ = Kind::linear;
  std::vector<double> weights_;
  nnet::DenseNet net_;
};

struct DemoSet {
  std::vector<mdp::Trajectory> trajectories;
  std::string provenance;
};

/// mu_D(s): mean count of timesteps t in [0, T] spent in s.
std::vector<double> empirical_svf(const DemoSet& demos, std::size_t state_count);

/// mu = sum_t d_t with d_0 = start_dist propagated forward under `policy`.
std::vector<double> expected_svf(const mdp::TabularMdp& mdp, const mdp::TabularPolicy& policy);

struct NllResult {
  double value = 0.0;
  /// Set when a demo action had zero probability and the log floor was used.
  bool floored = false;
};

/// Mean over demos of -sum_t log pi_t(a_t | s_t), with log clamped at log(1e-12).
NllResult demo_nll(const mdp::TabularPolicy& policy, const DemoSet& demos);

/// Maximum-entropy objective E_start[V_0] - mu_D . r. Its reward gradient is
/// exactly mu - mu_D when gamma = 1; with deterministic dynamics and a single
/// start state it equals the demonstration NLL.
double maxent_objective(const mdp::TabularMdp& mdp, std::span<const double> reward, std::span<const double> mu_demo);

struct StepMetrics {
  double demo_nll = 0.0;
  bool nll_floored = false;
  double objective = 0.0;
  double grad_norm = 0.0;
  /// Reward-space gradient mu - mu_D.
  std::vector<double> reward_grad;
  std::vector<double> param_grad;
};

/// Metrics and gradients of the current model without updating it.
StepMetrics evaluate_model(const RewardModel& model, const FeatureGrid& features, const mdp::TabularMdp& mdp,
                           std::span<const double> mu_demo, const DemoSet& demos);

/// One optimisation step; returns the metrics of the model before the update.
StepMetrics medirl_step(RewardModel& model, nnet::OptimState& optim, const FeatureGrid& features,
                        const mdp::TabularMdp& mdp, std::span<const double> mu_demo, const DemoSet& demos);

struct TrainConfig {
  std::size_t iterations = 200;
  nnet::Method method = nnet::Method::adam;
  double learning_rate = 0.01;
  double grad_tolerance = 1e-4;
};

struct HistoryRecord {
  std::size_t iteration = 0;
  double demo_nll = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::optional<double> evd;
  std::optional<double> evd_fraction;
  /// Not serialised, so that histories stay byte-reproducible.
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;

  /// Columns: iteration,demo_nll,objective,grad_norm,evd,evd_fraction.
  std::string to_csv() const;
  /// First iteration whose EVD fraction is at or below `threshold`.
  std::optional<std::size_t> first_iteration_below(double threshold) const;
};

struct TrainResult {
  RewardModel model;
  TrainHistory history;
  std::size_t best_iteration = 0;
};

/// Runs medirl_step until the iteration budget is spent or the gradient norm
/// falls below tolerance; returns the model with the lowest demo NLL. When
/// `true_reward` is given, each record carries the EVD of the current model.
TrainResult train_medirl(RewardModel model, const FeatureGrid& features, const mdp::GridWorld& grid,
                         const DemoSet& demos, const TrainConfig& config,
                         const std::optional<std::vector<double>>& true_reward = std::nullopt);

struct PretrainConfig {
  std::size_t epochs = 500;
  nnet::Method method = nnet::Method::adam;
  double learning_rate = 0.01;
};

/// Least-squares fit of the model output to -handcrafted_cost.
RewardModel pretrain_from_handcrafted(RewardModel model, const FeatureGrid& features,
                                      std::span<const double> handcrafted_cost, const PretrainConfig& config);

double reward_mse(const RewardModel& model, const FeatureGrid& features, std::span<const double> target);

/// Shifts every channel by (dx, dy) cells; vacated cells take the channel mean.
FeatureGrid apply_miscalibration(const FeatureGrid& features, int dx, int dy);

// Synthetic terrain worlds with hidden ground-truth rewards.

enum class Terrain : int { road = 0, grass = 1, rough = 2 };

enum class GroundTruth { linear, terrain };

struct TerrainSpec {
  std::size_t width = 8;
  std::size_t height = 8;
  double obstacle_density = 0.1;
  std::size_t patches = 6;
  double appearance_noise = 0.05;
  double p_slip = 0.0;
  std::size_t horizon = 0;  // 0 selects 2 * (width + height)
  GroundTruth ground_truth = GroundTruth::terrain;
};

inline const std::vector<std::string> kChannelNames{"obstacle", "goal_distance", "appearance_a", "appearance_b"};

struct TerrainWorld {
  mdp::GridWorld grid;
  FeatureGrid features;
  std::vector<Terrain> terrain;
  std::size_t goal = 0;
  std::vector<double> true_reward;
  /// A plausible manually designed cost: ordered like the truth, weighted differently.
  std::vector<double> handcrafted_cost;
};

/// Weights of the linear ground truth over kChannelNames.
inline const std::vector<double> kLinearTruthWeights{0.0, -3.0, -2.0, 1.0};

TerrainWorld make_terrain_world(const TerrainSpec& spec, Rng& rng);

/// Trajectories sampled from the soft-optimal policy of `reward`.
DemoSet synthesize_demos(const mdp::GridWorld& grid, std::span<const double> reward, std::size_t count, Rng& rng);

}  // namespace xfer::medirl
