#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "xfer/ada.hpp"
#include "xfer/matl.hpp"
#include "xfer/medirl.hpp"

// Experiment configuration: strict JSON in, fully resolved JSON out.
namespace xfer::config {

enum class Kind { medirl, ada, iada, matl };
std::string to_string(Kind k);

struct MedirlBlock {
  medirl::TerrainSpec grid;
  std::size_t demos = 200;
  medirl::RewardModel::Kind model = medirl::RewardModel::Kind::deep;
  std::vector<std::size_t> hidden{32, 32};
  medirl::TrainConfig train;
  bool pretrain = false;
  medirl::PretrainConfig pretrain_config;
  int shift_x = 0;
  int shift_y = 0;
  double cost_floor = 0.1;
  double traversable_quantile = 0.5;
};

struct AdaBlock {
  ada::DomainSpec source;
  /// One entry for kind ada, the ordered stream for kind iada.
  std::vector<ada::DomainSpec> targets{ada::DomainSpec{ada::Shape::two_moons, 60.0}};
  ada::AdaConfig train;
  /// Side of the decision-boundary raster; 0 disables it.
  std::size_t raster = 32;
  double raster_extent = 2.0;
};

struct MatlBlock {
  /// Defaults to the slip plus quarter-turn remap pair.
  matl::PairSpec env = [] {
    matl::PairSpec p;
    p.real_remap = matl::rotated_remap();
    return p;
  }();
  matl::MatlConfig train;
  std::vector<matl::TrainMode> modes{matl::TrainMode::mutual};
};

struct ExperimentConfig {
  Kind kind = Kind::medirl;
  std::uint64_t seed = 0;
  /// Optional sweep; each entry replaces `seed` in one run.
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir = "out";
  MedirlBlock medirl;
  AdaBlock ada;
  MatlBlock matl;
};

/// Throws InvalidInput naming the offending key on unknown keys, missing
/// seed, type mismatches or out-of-range values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig from_json(const nlohmann::json& j);

/// The effective config with every default spelled out. `out_dir` is left
/// out unless requested, so that manifests do not depend on where a run lands.
nlohmann::json to_json(const ExperimentConfig& cfg, bool include_out_dir = false);

}  // namespace xfer::config
