#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "unravel/evaluate.hpp"
#include "unravel/evolution.hpp"
#include "unravel/hierarchical.hpp"
#include "unravel/soft_perm.hpp"
#include "unravel/sparsity.hpp"

namespace unravel::cli {

struct DataSizes {
  std::size_t train = 5000;
  std::size_t validation = 1000;
  std::size_t eval = 1000;
};

// Every typed config a subcommand can consume. Values come from the
// defaults, then the --config file, then explicit flags.
struct Settings {
  std::uint64_t seed = 42;
  std::filesystem::path out_dir = "out";
  TaskSpec task = TaskSpec::relu(10);
  DataSizes data;
  std::string scale = "desk";
  ModelConfig model;
  TrainConfig train;
  ProfileConfig profile;
  GlobalSearchConfig global;
  LocalSearchConfig local;
  EsConfig es;
  SoftPermConfig soft;
  EvalOptions eval;
  SparsityOptions sparsity;

  Settings();
  // Switches model and training defaults between desk and full scale.
  void apply_scale(const std::string& name);
};

// Overlays the fields present in `j` (sections task, data, scale, model,
// train, profile, global, local, es, soft, eval, sparsity).
void apply_json(Settings& s, const nlohmann::json& j);
nlohmann::json to_json(const Settings& s);

nlohmann::json train_config_json(const TrainConfig& c);

// Readers for the JSON artifacts the subcommands write.
Permutation perm_from_json(const nlohmann::json& j);
LossProfile profile_from_json(const nlohmann::json& j);
SearchTrace trace_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RankPoint& p);
RankPoint rank_point_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DigitGrid& g);
DigitGrid digit_grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttentionStats& s);
AttentionStats attention_stats_from_json(const nlohmann::json& j);

}  // namespace unravel::cli
