#include "xfer/run.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "xfer/ada.hpp"
#include "xfer/error.hpp"
#include "xfer/io.hpp"
#include "xfer/matl.hpp"

namespace xfer::run {

namespace fs = std::filesystem;
using nlohmann::json;

MedirlOutcome run_medirl(const config::MedirlBlock& block, std::uint64_t seed) {
  Rng root(seed);
  Rng world_rng = root.split();
  Rng demo_rng = root.split();
  Rng init_rng = root.split();

  MedirlOutcome out;
  out.world = medirl::make_terrain_world(block.grid, world_rng);
  out.demos = medirl::synthesize_demos(out.world.grid, out.world.true_reward, block.demos, demo_rng);
  out.features = (block.shift_x != 0 || block.shift_y != 0)
                     ? medirl::apply_miscalibration(out.world.features, block.shift_x, block.shift_y)
                     : out.world.features;
  auto model = block.model == medirl::RewardModel::Kind::linear
                   ? medirl::RewardModel::linear(out.features.channels.size())
                   : medirl::RewardModel::deep(out.features.channels.size(), block.hidden, init_rng);
  if (block.pretrain) {
    model = medirl::pretrain_from_handcrafted(std::move(model), out.features, out.world.handcrafted_cost,
                                              block.pretrain_config);
  }
  out.result = medirl::train_medirl(std::move(model), out.features, out.world.grid, out.demos, block.train,
                                    out.world.true_reward);
  out.learned_reward = out.result.model.rewards(out.features);
  out.evd = planner::evd(out.world.grid, out.world.true_reward, out.learned_reward);
  out.value_range = planner::value_range(out.world.grid, out.world.true_reward);
  out.evd_fraction = out.value_range > 0.0 ? out.evd / out.value_range : 0.0;
  const auto& g = out.world.grid;
  out.costmap = planner::reward_to_costmap(out.learned_reward, g.width, g.height, block.cost_floor, g.obstacles);
  out.traversability =
      planner::traversability_scores(out.costmap, out.demos.trajectories, block.traversable_quantile);
  return out;
}

namespace {

// Collects artifacts in memory and writes them plus the manifest at the end.
class ArtifactSet {
 public:
  void add(const std::string& name, std::string content) { files_[name] = std::move(content); }

  RunArtifacts write(const fs::path& dir, const json& effective_config) const {
    RunArtifacts out;
    out.out_dir = dir;
    json listing = json::array();
    for (const auto& [name, content] : files_) {
      io::write_text(dir / name, content);
      ManifestEntry e{name, io::sha256_hex(content), content.size()};
      listing.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
      out.files.push_back(std::move(e));
    }
    const json manifest{{"config", effective_config}, {"files", listing}};
    out.manifest = dir / "manifest.json";
    io::write_text(out.manifest, manifest.dump(2) + "\n");
    return out;
  }

 private:
  std::map<std::string, std::string> files_;
};

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

void emit_medirl(const config::MedirlBlock& block, std::uint64_t seed, ArtifactSet& art) {
  const auto o = run_medirl(block, seed);
  const auto& g = o.world.grid;
  art.add("metrics.csv", o.result.history.to_csv());
  art.add("reward.pgm", io::pgm_string(o.learned_reward, g.width, g.height));
  art.add("true_reward.pgm", io::pgm_string(o.world.true_reward, g.width, g.height));

  // Blocked cells are drawn at the highest finite cost.
  std::vector<double> costs = o.costmap.costs;
  double top = 0.0;
  for (double c : costs) {
    if (c != planner::kBlocked) top = std::max(top, c);
  }
  for (double& c : costs) {
    if (c == planner::kBlocked) c = top;
  }
  art.add("costmap.pgm", io::pgm_string(costs, g.width, g.height));
  art.add("demos.jsonl", io::trajectories_jsonl(o.demos.trajectories));

  std::vector<std::size_t> starts;
  for (const auto& tr : o.demos.trajectories) starts.push_back(tr.states.front());
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  std::vector<json> paths;
  for (std::size_t s : starts) {
    const auto p = planner::plan_path(o.costmap, s, o.world.goal);
    paths.push_back({{"start", s},
                     {"goal", o.world.goal},
                     {"reachable", p.reachable},
                     {"cost", p.reachable ? json(p.total_cost) : json(nullptr)},
                     {"cells", p.cells}});
  }
  art.add("paths.jsonl", jsonl(paths));
  art.add("model.json", o.result.model.to_json().dump() + "\n");

  const auto& t = o.traversability;
  const json summary{{"evd", o.evd},
                     {"value_range", o.value_range},
                     {"evd_fraction", o.evd_fraction},
                     {"best_iteration", o.result.best_iteration},
                     {"iterations_run", o.result.history.records.empty() ? 0 : o.result.history.records.size() - 1},
                     {"traversability",
                      {{"precision", t.precision},
                       {"recall", t.recall},
                       {"f1", t.f1},
                       {"predicted", t.predicted},
                       {"actual", t.actual},
                       {"degenerate", t.degenerate}}}};
  art.add("summary.json", summary.dump(2) + "\n");
}

void emit_ada(const config::AdaBlock& block, std::uint64_t seed, ArtifactSet& art) {
  ada::AdaConfig cfg = block.train;
  cfg.seed = seed;
  require(!block.targets.empty(), "no target domain");
  const auto r = ada::train_iada(block.source, block.targets, cfg);
  art.add("metrics.csv", r.to_csv());
  if (block.raster > 0) {
    const double e = block.raster_extent;
    art.add("decision.pgm", io::pgm_string(ada::decision_raster(r.model, block.raster, -e, e), block.raster,
                                           block.raster));
    art.add("baseline_decision.pgm", io::pgm_string(ada::decision_raster(r.baseline, block.raster, -e, e),
                                                    block.raster, block.raster));
  }
  const auto& last = r.stages.back();
  const json summary{{"final_tgt_acc", last.tgt_acc},
                     {"final_src_acc", last.src_acc},
                     {"baseline_tgt_acc", last.baseline_tgt_acc},
                     {"stages", r.stages.size()}};
  art.add("summary.json", summary.dump(2) + "\n");
}

std::string mode_file_name(matl::TrainMode m) {
  std::string s = matl::to_string(m);
  std::replace(s.begin(), s.end(), '+', '_');
  return "history_" + s + ".csv";
}

void emit_matl(const config::MatlBlock& block, std::uint64_t seed, ArtifactSet& art) {
  const auto pair = matl::make_env_pair(block.env);
  matl::MatlConfig cfg = block.train;
  cfg.seed = seed;
  json summary = json::object();
  for (auto mode : block.modes) {
    const auto h = matl::train_matl(pair, mode, cfg);
    art.add(mode_file_name(mode), h.to_csv());
    summary[matl::to_string(mode)] = {
        {"final_success", h.records.empty() ? 0.0 : h.final_success(cfg.success_window)}};
  }
  art.add("summary.json", summary.dump(2) + "\n");
}

}  // namespace

RunArtifacts run_experiment(const config::ExperimentConfig& cfg, const fs::path& out_dir) {
  const std::string kind = config::to_string(cfg.kind);
  ArtifactSet art;
  try {
    switch (cfg.kind) {
      case config::Kind::medirl: emit_medirl(cfg.medirl, cfg.seed, art); break;
      case config::Kind::ada:
      case config::Kind::iada: emit_ada(cfg.ada, cfg.seed, art); break;
      case config::Kind::matl: emit_matl(cfg.matl, cfg.seed, art); break;
    }
  } catch (const TrainingDiverged& e) {
    throw TrainingDiverged(kind + ": " + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(kind + ": " + e.what());
  }
  config::ExperimentConfig effective = cfg;
  effective.seeds.clear();
  return art.write(out_dir, config::to_json(effective));
}

fs::path seed_dir(const fs::path& out_dir, std::uint64_t seed) { return out_dir / ("seed_" + std::to_string(seed)); }

std::vector<RunArtifacts> run_all(const config::ExperimentConfig& cfg, const fs::path& out_dir) {
  if (cfg.seeds.empty()) return {run_experiment(cfg, out_dir)};
  std::vector<RunArtifacts> out;
  for (auto seed : cfg.seeds) {
    config::ExperimentConfig one = cfg;
    one.seed = seed;
    one.seeds.clear();
    out.push_back(run_experiment(one, seed_dir(out_dir, seed)));
  }
  return out;
}

VerifyReport verify_manifest(const fs::path& manifest) {
  json m;
  try {
    m = json::parse(io::read_text(manifest));
  } catch (const json::exception& e) {
    throw InvalidInput("verify: " + manifest.string() + " is not a manifest: " + e.what());
  }
  if (!m.is_object() || !m.contains("files") || !m["files"].is_array()) {
    throw InvalidInput("verify: " + manifest.string() + " has no file listing");
  }
  VerifyReport report;
  const fs::path dir = manifest.parent_path();
  for (const auto& e : m["files"]) {
    const std::string path = e.at("path").get<std::string>();
    const std::string want = e.at("sha256").get<std::string>();
    ++report.checked;
    std::string content;
    try {
      content = io::read_text(dir / path);
    } catch (const IoError&) {
      report.problems.push_back(path + ": missing");
      continue;
    }
    if (io::sha256_hex(content) != want) report.problems.push_back(path + ": hash mismatch");
  }
  return report;
}

}  // namespace xfer::run
