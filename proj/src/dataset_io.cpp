#include "unravel/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "unravel/error.hpp"

namespace unravel {

using nlohmann::json;

void to_json(json& j, const TaskSpec& spec) {
  j = json{{"kind", std::string(to_string(spec.kind))},
           {"target_len", spec.target_len},
           {"window", spec.window},
           {"operand_digits", spec.operand_digits},
           {"input_low", spec.input_low},
           {"input_high", spec.input_high}};
}

void from_json(const json& j, TaskSpec& spec) {
  spec.kind = parse_task_kind(j.at("kind").get<std::string>());
  spec.target_len = j.at("target_len").get<int>();
  spec.window = j.value("window", 1);
  spec.operand_digits = j.value("operand_digits", 0);
  spec.input_low = j.value("input_low", -9);
  spec.input_high = j.value("input_high", 9);
  spec.validate();
}

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (const auto& ex : ds.examples) {
    out += json{{"x", ex.x}, {"y", ex.y}}.dump();
    out += '\n';
  }
  return out;
}

std::uint64_t dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_jsonl(ds)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path meta_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds, const Vocabulary& vocab) {
  write_text_file(path, to_jsonl(ds));
  json meta{{"task", ds.task},
            {"seed", ds.seed},
            {"size", ds.size()},
            {"split", std::string(to_string(ds.split))},
            {"vocabulary", vocab.values()},
            {"hash", dataset_hash(ds)}};
  write_text_file(meta_path(path), meta.dump(2) + "\n");
}

DatasetFile read_dataset(const std::filesystem::path& path) {
  const json meta = json::parse(read_text_file(meta_path(path)));
  DatasetFile file;
  file.dataset.task = meta.at("task").get<TaskSpec>();
  file.dataset.seed = meta.at("seed").get<std::uint64_t>();
  file.dataset.split = parse_split(meta.value("split", std::string("train")));
  file.vocab = Vocabulary(meta.at("vocabulary").get<std::vector<int>>());

  std::istringstream lines(read_text_file(path));
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const json row = json::parse(line);
    Example ex{row.at("x").get<std::vector<int>>(), row.at("y").get<std::vector<int>>()};
    if (ex.y != task_target(file.dataset.task, ex.x)) {
      fail(ErrorCode::invalid_argument, "dataset row does not match its task oracle");
    }
    file.dataset.examples.push_back(std::move(ex));
  }
  const auto expected = meta.at("size").get<std::size_t>();
  if (file.dataset.size() != expected) {
    fail(ErrorCode::invalid_argument, "dataset size does not match its metadata");
  }
  return file;
}

}  // namespace unravel

namespace unravel {

void write_perm_set(const std::filesystem::path& path, const PermutationSet& set) {
  json rows = json::array();
  for (const auto& p : set.perms) rows.push_back(p.map());
  write_text_file(path, rows.dump() + "\n");
  json meta{{"kind", std::string(to_string(set.kind))},
            {"length", set.length},
            {"seed", set.seed},
            {"b", set.block_len},
            {"T", set.size()}};
  write_text_file(meta_path(path), meta.dump(2) + "\n");
}

PermutationSet read_perm_set(const std::filesystem::path& path) {
  const json rows = json::parse(read_text_file(path));
  require(rows.is_array() && !rows.empty(), "permutation file must be a non-empty array of arrays");
  std::vector<Permutation> perms;
  for (const auto& row : rows) perms.emplace_back(row.get<std::vector<int>>());
  PermutationSet set = explicit_set(std::move(perms));
  if (std::filesystem::exists(meta_path(path))) {
    const json meta = json::parse(read_text_file(meta_path(path)));
    set.kind = parse_set_kind(meta.value("kind", std::string("explicit")));
    set.seed = meta.value("seed", std::uint64_t{0});
    set.block_len = meta.value("b", 0);
    require(meta.value("T", set.size()) == set.size(), "permutation file size does not match its metadata");
  }
  return set;
}

}  // namespace unravel
