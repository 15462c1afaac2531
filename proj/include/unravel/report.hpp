#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unravel/csv.hpp"
#include "unravel/evaluate.hpp"
#include "unravel/hierarchical.hpp"
#include "unravel/profile.hpp"
#include "unravel/sparsity.hpp"

namespace unravel {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string tool_version = kToolVersion;
  nlohmann::json configs = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::uint64_t> dataset_hashes;
  std::vector<std::string> artifacts;  // paths relative to the output directory

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct LengthCurve {
  std::string name;  // e.g. "forward"
  std::vector<double> lengths;
  std::vector<double> success;
};

struct NamedSuccess {
  std::string name;
  double success = 0.0;
  std::size_t passes = 0;
  std::size_t total = 0;
};

struct ReportInputs {
  std::optional<LossProfile> profile;
  std::optional<Permutation> highlight;  // marked in the profile scatter
  std::vector<RankPoint> rank_curve;
  std::vector<LengthCurve> length_curves;
  std::optional<DigitGrid> digit_grid;
  std::vector<std::pair<std::string, AttentionStats>> sparsity;
  std::vector<NamedSuccess> success;
  std::optional<SearchTrace> trace;
  RunManifest manifest;
};

// Writes CSV tables and SVG plots for every present input, then
// manifest.json listing them. Returns the manifest as written.
RunManifest emit_report(const std::filesystem::path& out_dir, const ReportInputs& inputs);

CsvTable profile_table(const LossProfile& profile);

}  // namespace unravel
