#include <doctest.h>

#include <cmath>

#include "xfer/error.hpp"
#include "xfer/matl.hpp"
#include "xfer/medirl.hpp"

using namespace xfer;
using namespace xfer::matl;

namespace {

PairSpec small_spec() {
  PairSpec p;
  p.width = 4;
  p.height = 4;
  p.start_x = 0;
  p.start_y = 3;
  p.goal_x = 3;
  p.goal_y = 0;
  return p;
}

// Two cells in a row; the agent starts on the left and the right cell is the goal.
mdp::GridWorld corridor(std::size_t horizon, double p_slip) {
  mdp::GridWorld g;
  g.width = 2;
  g.height = 1;
  g.terminals = {1};
  g.horizon = horizon;
  g.p_slip = p_slip;
  g.start_dist = mdp::point_start(2, 0);
  return g;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

StationaryPolicy random_policy(std::size_t states, Rng& rng) {
  auto p = StationaryPolicy::uniform(states, mdp::kGridActions);
  for (double& v : p.logits) v = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("aux reward follows the clamped log form") {
  AuxConfig cfg{1.0, 1e-6, AuxMode::mutual};
  CHECK(aux_reward(0.5, Domain::sim, cfg) == doctest::Approx(-0.6931471805599453).epsilon(1e-15));
  CHECK(aux_reward(0.5, Domain::real, cfg) == aux_reward(0.5, Domain::sim, cfg));
  cfg.lambda = 0.5;
  CHECK(aux_reward(0.9, Domain::sim, cfg) == doctest::Approx(-0.05268025782891316).epsilon(1e-12));
  CHECK(aux_reward(0.9, Domain::real, cfg) == doctest::Approx(-1.151292546497023).epsilon(1e-12));
  cfg.lambda = 2.0;
  CHECK(aux_reward(1.0, Domain::real, cfg) == doctest::Approx(2.0 * -13.815510557964274).epsilon(1e-14));
  CHECK(aux_reward(0.0, Domain::sim, cfg) == doctest::Approx(2.0 * -13.815510557964274).epsilon(1e-14));

  cfg.mode = AuxMode::unilateral;
  CHECK(aux_reward(0.3, Domain::sim, cfg) == 0.0);
  CHECK(aux_reward(0.3, Domain::real, cfg) < 0.0);
  cfg.mode = AuxMode::none;
  CHECK(aux_reward(0.3, Domain::sim, cfg) == 0.0);
  CHECK(aux_reward(0.3, Domain::real, cfg) == 0.0);

  const AuxConfig zero{0.0, 1e-6, AuxMode::mutual};
  CHECK_FALSE(std::signbit(aux_reward(0.3, Domain::sim, zero)));
  CHECK_FALSE(std::signbit(aux_reward(0.3, Domain::real, zero)));

  CHECK_THROWS_AS((AuxConfig{1.0, 0.5, AuxMode::mutual}.validate()), InvalidInput);
  CHECK_THROWS_AS((AuxConfig{1.0, 0.0, AuxMode::mutual}.validate()), InvalidInput);
  CHECK_THROWS_AS((AuxConfig{-1.0, 1e-3, AuxMode::mutual}.validate()), InvalidInput);
}

TEST_CASE("env pairs share geometry") {
  auto pair = make_env_pair(small_spec());
  CHECK(pair.reward[pair.sim.index(3, 0)] == 1.0);
  CHECK(pair.sim.horizon == mdp::default_horizon(4, 4));
  pair.real.terminals = {0};
  CHECK_THROWS_AS(pair.validate(), InvalidInput);
  PairSpec bad = small_spec();
  bad.goal_x = 0;
  bad.goal_y = 3;
  CHECK_THROWS_AS(make_env_pair(bad), InvalidInput);
}

TEST_CASE("deterministic environment and policy give identical rollouts") {
  auto pair = make_env_pair(small_spec());
  auto policy = StationaryPolicy::uniform(pair.sim.state_count(), mdp::kGridActions);
  for (std::size_t s = 0; s < policy.num_states; ++s) policy.logits[s * mdp::kGridActions + 2] = 100.0;
  Rng rng(1);
  const auto ro = collect_rollouts(pair.sim, policy, 5, rng);
  REQUIRE(ro.trajectories.size() == 5);
  for (const auto& tr : ro.trajectories) CHECK(tr == ro.trajectories.front());
  CHECK(ro.visited.rows == 5 * pair.sim.horizon);
  CHECK(ro.visited.cols == 2);
  CHECK_THROWS_AS(collect_rollouts(pair.sim, policy, 0, rng), InvalidInput);
}

TEST_CASE("visited batch encodes states after the first step") {
  auto pair = make_env_pair(small_spec());
  Rng rng(2);
  const auto ro = collect_rollouts(pair.real, random_policy(16, rng), 3, rng);
  const std::size_t T = pair.real.horizon;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 1; t <= T; ++t) {
      const std::size_t s = ro.trajectories[i].states[t];
      CHECK(ro.visited(i * T + t - 1, 0) == static_cast<double>(s % 4) / 3.0);
      CHECK(ro.visited(i * T + t - 1, 1) == static_cast<double>(s / 4) / 3.0);
    }
  }
}

TEST_CASE("rollout visitation matches the expected state visitation") {
  PairSpec spec = small_spec();
  spec.real_p_slip = 0.2;
  spec.horizon = 6;
  const auto pair = make_env_pair(spec);
  Rng rng(3);
  const auto policy = random_policy(16, rng);
  const std::size_t n = 10000;
  const auto ro = collect_rollouts(pair.real, policy, n, rng);
  const auto mu = medirl::expected_svf(mdp::to_tabular(pair.real), policy.to_tabular(pair.real.horizon));
  for (std::size_t s = 0; s < 16; ++s) {
    double sum = 0.0, sq = 0.0;
    for (const auto& tr : ro.trajectories) {
      double c = 0.0;
      for (std::size_t st : tr.states) c += st == s ? 1.0 : 0.0;
      sum += c;
      sq += c * c;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    CHECK(std::abs(mean - mu[s]) <= 3.0 * sd / std::sqrt(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("discriminator converges to one half on identical batches") {
  Rng rng(4);
  const std::size_t hidden[] = {16};
  auto d = make_discriminator(hidden, rng);
  nnet::OptimState opt(nnet::Method::adam, 0.01, d.parameter_count());
  const auto pair = make_env_pair(small_spec());
  const auto ro = collect_rollouts(pair.real, random_policy(16, rng), 8, rng);
  for (int i = 0; i < 500; ++i) update_discriminator(d, ro.visited, ro.visited, opt);
  const auto p = nnet::predict(d, ro.visited);
  double mean = 0.0;
  for (double v : p.data) mean += v;
  CHECK(std::abs(mean / static_cast<double>(p.rows) - 0.5) < 0.05);
}

TEST_CASE("discriminator separates disjoint points") {
  Rng rng(5);
  const std::size_t hidden[] = {16};
  auto d = make_discriminator(hidden, rng);
  nnet::OptimState opt(nnet::Method::adam, 0.01, d.parameter_count());
  const auto sim = nnet::Matrix::from_rows({{0.0, 0.0}});
  const auto real = nnet::Matrix::from_rows({{1.0, 1.0}});
  for (int i = 0; i < 500; ++i) update_discriminator(d, sim, real, opt);
  CHECK(nnet::predict(d, real)(0, 0) > 0.9);
  CHECK(nnet::predict(d, sim)(0, 0) < 0.1);
  CHECK(discriminator_accuracy(d, sim, real) == 1.0);
  CHECK_THROWS_AS(update_discriminator(d, nnet::Matrix(0, 2), real, opt), InvalidInput);
}

TEST_CASE("equal returns leave a uniform policy unchanged") {
  const auto g = corridor(3, 0.3);
  Rng rng(6);
  auto policy = StationaryPolicy::uniform(2, mdp::kGridActions);
  const auto ro = collect_rollouts(g, policy, 6, rng);
  const std::vector<double> rewards(6 * 3, 0.25);
  const auto before = policy;
  nnet::OptimState opt(nnet::Method::adam, 0.1, policy.logits.size());
  reinforce_update(policy, g, ro.trajectories, rewards, opt);
  CHECK(policy == before);
}

TEST_CASE("a single rewarded decision gains probability monotonically") {
  const auto g = corridor(1, 0.0);
  std::vector<double> reward{0.0, 1.0};
  Rng rng(7);
  auto policy = StationaryPolicy::uniform(2, mdp::kGridActions);
  nnet::OptimState opt(nnet::Method::sgd, 0.5, policy.logits.size());
  double last = policy.probs(0)[2];
  for (int it = 0; it < 30; ++it) {
    const auto ro = collect_rollouts(g, policy, 8, rng);
    reinforce_update(policy, g, ro.trajectories, env_rewards(ro.trajectories, reward), opt, 0.0);
    const double now = policy.probs(0)[2];
    CHECK(now >= last);
    last = now;
  }
  CHECK(last > 0.8);
}

TEST_CASE("surrogate gradient matches finite differences") {
  const auto g = corridor(4, 0.3);
  Rng rng(8);
  auto policy = random_policy(2, rng);
  const auto ro = collect_rollouts(g, policy, 6, rng);
  std::vector<double> rewards(6 * 4);
  for (double& r : rewards) r = rng.normal();
  const auto s = make_surrogate(g, ro.trajectories, rewards, 0.01);
  const auto analytic = surrogate_gradient(policy, g, ro.trajectories, s);
  std::vector<double> fd(analytic.size());
  const double eps = 1e-6;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    auto up = policy, down = policy;
    up.logits[i] += eps;
    down.logits[i] -= eps;
    fd[i] = (surrogate_value(up, g, ro.trajectories, s) - surrogate_value(down, g, ro.trajectories, s)) / (2 * eps);
  }
  CHECK(max_relative_error(analytic, fd) < 1e-4);
  // The terminal state never acts, so its logits get no gradient.
  for (std::size_t a = 0; a < mdp::kGridActions; ++a) CHECK(analytic[mdp::kGridActions + a] == 0.0);
}

TEST_CASE("updates keep every policy row a distribution") {
  const auto pair = make_env_pair(small_spec());
  MatlConfig cfg;
  cfg.iterations = 20;
  const auto h = train_matl(pair, TrainMode::mutual, cfg);
  for (const auto* p : {&h.policies.sim, &h.policies.real}) {
    for (std::size_t s = 0; s < p->num_states; ++s) {
      double sum = 0.0;
      for (double v : p->probs(s)) {
        CHECK(std::isfinite(v));
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("mutual with zero lambda reproduces no transfer bit for bit") {
  PairSpec spec = small_spec();
  spec.real_p_slip = 0.3;
  spec.real_remap = rotated_remap();
  const auto pair = make_env_pair(spec);
  MatlConfig cfg;
  cfg.seed = 11;
  cfg.iterations = 40;
  cfg.lambda = 0.0;
  const auto a = train_matl(pair, TrainMode::mutual, cfg);
  const auto b = train_matl(pair, TrainMode::none, cfg);
  CHECK(a.records == b.records);
  CHECK(a.policies.sim == b.policies.sim);
  CHECK(a.policies.real == b.policies.real);
  for (const auto& r : a.records) {
    CHECK_FALSE(std::signbit(r.aux_mean_sim));
    CHECK_FALSE(std::signbit(r.aux_mean_real));
  }
}

TEST_CASE("runs are reproducible per seed") {
  const auto pair = make_env_pair(small_spec());
  MatlConfig cfg;
  cfg.seed = 3;
  cfg.iterations = 25;
  for (auto mode : {TrainMode::mutual, TrainMode::unilateral, TrainMode::mutual_finetune}) {
    CHECK(train_matl(pair, mode, cfg).to_csv() == train_matl(pair, mode, cfg).to_csv());
  }
}

TEST_CASE("identical dynamics give matching learning curves without transfer") {
  PairSpec spec = small_spec();
  spec.real_p_slip = 0.0;
  const auto pair = make_env_pair(spec);
  double sim = 0.0, real = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    MatlConfig cfg;
    cfg.seed = seed;
    cfg.iterations = 60;
    const auto h = train_matl(pair, TrainMode::none, cfg);
    for (const auto& r : h.records) {
      sim += r.sim_return;
      real += r.real_return;
    }
  }
  CHECK(std::abs(sim - real) / std::max(sim, real) < 0.1);
}

TEST_CASE("finetune copies the pretrained sim policy into the real policy") {
  const auto pair = make_env_pair(small_spec());
  MatlConfig cfg;
  cfg.iterations = 0;
  const auto h = train_matl(pair, TrainMode::finetune, cfg);
  CHECK(h.records.empty());
  CHECK(h.policies.real == h.policies.sim);
  CHECK_FALSE(h.policies.sim == StationaryPolicy::uniform(16, mdp::kGridActions));
  const auto start = pair.sim.index(0, 3);
  CHECK(h.policies.sim.probs(start)[0] + h.policies.sim.probs(start)[2] > 0.8);
}

TEST_CASE("history csv columns and mode names") {
  const auto pair = make_env_pair(small_spec());
  MatlConfig cfg;
  cfg.iterations = 2;
  cfg.seed = 9;
  const auto csv = train_matl(pair, TrainMode::mutual_finetune, cfg).to_csv();
  CHECK(csv.rfind("iter,mode,sim_return,real_return,success_rate,disc_acc,aux_mean_sim,aux_mean_real,seed\n"
                  "0,mutual+finetune,",
                  0) == 0);
  CHECK(csv.ends_with(",9\n"));
  for (auto m : {TrainMode::mutual, TrainMode::unilateral, TrainMode::none, TrainMode::finetune,
                 TrainMode::mutual_finetune}) {
    CHECK(train_mode_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(train_mode_from_string("bilateral"), InvalidInput);
}
