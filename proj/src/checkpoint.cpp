#include "unravel/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "unravel/error.hpp"

namespace unravel {

namespace {
constexpr char kMagic[4] = {'U', 'C', 'O', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

nlohmann::json to_json(const ModelConfig& config) {
  return {{"n_layers", config.n_layers},       {"n_heads", config.n_heads},
          {"d_emb", config.d_emb},             {"d_ffn", config.d_ffn},
          {"dropout", config.dropout},         {"max_seq_len", config.max_seq_len},
          {"vocab_size", config.vocab_size}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_emb = j.value("d_emb", c.d_emb);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.dropout = j.value("dropout", c.dropout);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint: " + path.string());
  nlohmann::json header = {{"config", to_json(model.config())},
                           {"num_params", model.num_params()},
                           {"metadata", metadata}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.params();
  out.write(reinterpret_cast<const char*>(params.data()), static_cast<std::streamsize>(params.size_bytes()));
  if (!out) fail(ErrorCode::io, "cannot write checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot read checkpoint: " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) fail(ErrorCode::io, "not a checkpoint file: " + path.string());
  if (version != kVersion) fail(ErrorCode::io, "unsupported checkpoint version " + std::to_string(version));
  if (len > (1u << 24)) fail(ErrorCode::io, "corrupt checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  LoadedCheckpoint ck{Model(model_config_from_json(header.at("config")), 0), header.value("metadata", nlohmann::json::object())};
  auto params = ck.model.params();
  if (header.at("num_params").get<std::size_t>() != params.size()) fail(ErrorCode::io, "checkpoint parameter count mismatch");
  in.read(reinterpret_cast<char*>(params.data()), static_cast<std::streamsize>(params.size_bytes()));
  if (!in) fail(ErrorCode::io, "truncated checkpoint: " + path.string());
  return ck;
}

}  // namespace unravel
