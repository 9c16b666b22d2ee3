#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xfer/config.hpp"
#include "xfer/medirl.hpp"
#include "xfer/planner.hpp"

// Experiment dispatch and artifact emission.
namespace xfer::run {

struct ManifestEntry {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::size_t bytes = 0;
};

struct RunArtifacts {
  std::filesystem::path out_dir;
  std::filesystem::path manifest;
  std::vector<ManifestEntry> files;
};

/// Everything a MEDIRL run produces before it is written out.
struct MedirlOutcome {
  medirl::TerrainWorld world;
  medirl::DemoSet demos;
  medirl::FeatureGrid features;  // as seen by the learner
  medirl::TrainResult result;
  std::vector<double> learned_reward;
  double evd = 0.0;
  double value_range = 0.0;
  double evd_fraction = 0.0;
  planner::CostMap costmap;
  planner::TraversabilityScores traversability;
};

/// World, demos and initial weights come from independent streams of `seed`,
/// so pretraining and miscalibration switches leave them unchanged.
MedirlOutcome run_medirl(const config::MedirlBlock& block, std::uint64_t seed);

/// Runs `cfg` once with cfg.seed and writes its artifacts plus manifest.json
/// into `out_dir`. Module errors are rethrown with the experiment kind prefixed.
RunArtifacts run_experiment(const config::ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Sweep layout: one run per entry of cfg.seeds in out_dir/seed_<n>; a single
/// run in out_dir when the list is empty.
std::vector<RunArtifacts> run_all(const config::ExperimentConfig& cfg, const std::filesystem::path& out_dir);

std::filesystem::path seed_dir(const std::filesystem::path& out_dir, std::uint64_t seed);

struct VerifyReport {
  std::size_t checked = 0;
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Re-hashes every file listed in a manifest.
VerifyReport verify_manifest(const std::filesystem::path& manifest);

}  // namespace xfer::run
