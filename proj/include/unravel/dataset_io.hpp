#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "unravel/permutation.hpp"
#include "unravel/taskgen.hpp"

namespace unravel {

void to_json(nlohmann::json& j, const TaskSpec& spec);
void from_json(const nlohmann::json& j, TaskSpec& spec);

// One JSON object per line: {"x": [...], "y": [...]}.
std::string to_jsonl(const Dataset& ds);

// FNV-1a over the JSON-lines rendering; stable across platforms.
std::uint64_t dataset_hash(const Dataset& ds);

struct DatasetFile {
  Dataset dataset;
  Vocabulary vocab;
};

// Writes `path` (JSON lines) and `path` + ".meta.json" (task, seed, size,
// split, vocabulary).
void write_dataset(const std::filesystem::path& path, const Dataset& ds, const Vocabulary& vocab);

// Reads a dataset and its sidecar. Every example is re-checked against the
// task oracle.
DatasetFile read_dataset(const std::filesystem::path& path);

std::filesystem::path meta_path(const std::filesystem::path& path);

// Permutation file: JSON array of arrays, plus a sidecar recording kind,
// seed, b and T. A file without a sidecar loads as an explicit set.
void write_perm_set(const std::filesystem::path& path, const PermutationSet& set);
PermutationSet read_perm_set(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace unravel
