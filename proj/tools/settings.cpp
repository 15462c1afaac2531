#include "settings.hpp"

#include <algorithm>

#include "unravel/checkpoint.hpp"
#include "unravel/dataset_io.hpp"
#include "unravel/error.hpp"

namespace unravel::cli {

using nlohmann::json;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void require_object(const json& j, const std::string& what) {
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "config section " + what + " must be an object");
}

}  // namespace

Settings::Settings() { apply_scale("desk"); }

void Settings::apply_scale(const std::string& name) {
  const int vocab = model.vocab_size;
  const int seq = model.max_seq_len;
  if (name == "desk") {
    model = ModelConfig::desk(vocab, seq);
    train = TrainConfig{};
  } else if (name == "full") {
    model = ModelConfig::full(vocab, seq);
    train = TrainConfig::full();
  } else {
    fail(ErrorCode::invalid_argument, "unknown scale: " + name);
  }
  scale = name;
  profile.model = model;
  profile.train = train;
}

void apply_json(Settings& s, const json& j) {
  require_object(j, "root");
  if (j.contains("scale")) s.apply_scale(j.at("scale").get<std::string>());
  read(j, "seed", s.seed);
  if (j.contains("task")) {
    const auto& t = j.at("task");
    require_object(t, "task");
    TaskSpec spec = s.task;
    if (t.contains("kind")) spec.kind = parse_task_kind(t.at("kind").get<std::string>());
    // Short keys for hand-written configs, long keys as written by to_json.
    read(t, "len", spec.target_len);
    read(t, "target_len", spec.target_len);
    read(t, "window", spec.window);
    read(t, "digits", spec.operand_digits);
    read(t, "operand_digits", spec.operand_digits);
    read(t, "input_low", spec.input_low);
    read(t, "input_high", spec.input_high);
    if (spec.kind == TaskKind::prod) {
      if (spec.operand_digits == 0) spec.operand_digits = spec.target_len / 2;
      spec = TaskSpec::prod(spec.operand_digits);
    }
    spec.validate();
    s.task = spec;
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    require_object(d, "data");
    read(d, "train_size", s.data.train);
    read(d, "val_size", s.data.validation);
    read(d, "eval_size", s.data.eval);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_object(m, "model");
    read(m, "n_layers", s.model.n_layers);
    read(m, "n_heads", s.model.n_heads);
    read(m, "d_emb", s.model.d_emb);
    read(m, "d_ffn", s.model.d_ffn);
    read(m, "dropout", s.model.dropout);
    read(m, "max_seq_len", s.model.max_seq_len);
    s.profile.model = s.model;
  }
  auto read_train = [](const json& t, TrainConfig& c) {
    read(t, "epochs", c.epochs);
    read(t, "batch_size", c.batch_size);
    read(t, "lr_init", c.lr_init);
    read(t, "beta1", c.beta1);
    read(t, "beta2", c.beta2);
    read(t, "weight_decay", c.weight_decay);
    read(t, "seed", c.seed);
    read(t, "validation_rows", c.validation_rows);
    if (t.contains("subsample_per_perm") && !t.at("subsample_per_perm").is_null()) {
      c.subsample_per_perm = t.at("subsample_per_perm").get<std::size_t>();
    }
  };
  if (j.contains("train")) {
    require_object(j.at("train"), "train");
    read_train(j.at("train"), s.train);
    s.profile.train = s.train;
  }
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    require_object(p, "profile");
    read(p, "model_seed", s.profile.model_seed);
    read(p, "subsample", s.profile.subsample);
    read(p, "validation_rows", s.profile.validation_rows);
    read(p, "eval_batch", s.profile.eval_batch);
    if (p.contains("train")) read_train(p.at("train"), s.profile.train);
  }
  if (j.contains("global")) {
    const auto& g = j.at("global");
    require_object(g, "global");
    read(g, "depth", s.global.depth);
    read(g, "skip_singleton_profile", s.global.skip_singleton_profile);
  }
  if (j.contains("local")) {
    const auto& l = j.at("local");
    require_object(l, "local");
    read(l, "min_block", s.local.min_block);
    read(l, "max_block", s.local.max_block);
    read(l, "factorial_cap", s.local.factorial_cap);
  }
  if (j.contains("es")) {
    const auto& e = j.at("es");
    require_object(e, "es");
    read(e, "population", s.es.population);
    read(e, "crossover", s.es.crossover);
    read(e, "mutation", s.es.mutation);
    read(e, "generations", s.es.generations);
    read(e, "tournament", s.es.tournament);
    read(e, "elitism", s.es.elitism);
    read(e, "seed", s.es.seed);
  }
  if (j.contains("soft")) {
    const auto& f = j.at("soft");
    require_object(f, "soft");
    if (f.contains("mode")) s.soft.mode = parse_soft_mode(f.at("mode").get<std::string>());
    if (f.contains("norm")) s.soft.norm = parse_soft_norm(f.at("norm").get<std::string>());
    read(f, "sinkhorn_iters", s.soft.sinkhorn_iters);
    read(f, "sinkhorn_tolerance", s.soft.sinkhorn_tolerance);
    read(f, "init_diagonal", s.soft.init_diagonal);
    read(f, "logits_lr", s.soft.logits_lr);
    read(f, "entropy_penalty", s.soft.entropy_penalty);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    require_object(e, "eval");
    read(e, "max_rows", s.eval.max_rows);
    read(e, "batch_size", s.eval.batch_size);
  }
  if (j.contains("sparsity")) {
    const auto& e = j.at("sparsity");
    require_object(e, "sparsity");
    read(e, "rows", s.sparsity.rows);
    if (e.contains("layer")) s.sparsity.layer = e.at("layer").get<int>();
    if (e.contains("head")) s.sparsity.head = e.at("head").get<int>();
  }
}

json train_config_json(const TrainConfig& c) {
  json j = {{"epochs", c.epochs},         {"batch_size", c.batch_size},     {"lr_init", c.lr_init},
            {"beta1", c.beta1},           {"beta2", c.beta2},               {"weight_decay", c.weight_decay},
            {"seed", c.seed},             {"validation_rows", c.validation_rows}};
  j["subsample_per_perm"] = c.subsample_per_perm ? json(*c.subsample_per_perm) : json(nullptr);
  return j;
}

json to_json(const Settings& s) {
  json task;
  unravel::to_json(task, s.task);
  return {
      {"seed", s.seed},
      {"scale", s.scale},
      {"task", task},
      {"data", {{"train_size", s.data.train}, {"val_size", s.data.validation}, {"eval_size", s.data.eval}}},
      {"model", unravel::to_json(s.model)},
      {"train", train_config_json(s.train)},
      {"profile",
       {{"model_seed", s.profile.model_seed},
        {"subsample", s.profile.subsample},
        {"validation_rows", s.profile.validation_rows},
        {"eval_batch", s.profile.eval_batch},
        {"train", train_config_json(s.profile.train)}}},
      {"global", {{"depth", s.global.depth}, {"skip_singleton_profile", s.global.skip_singleton_profile}}},
      {"local",
       {{"min_block", s.local.min_block}, {"max_block", s.local.max_block}, {"factorial_cap", s.local.factorial_cap}}},
      {"es",
       {{"population", s.es.population},
        {"crossover", s.es.crossover},
        {"mutation", s.es.mutation},
        {"generations", s.es.generations},
        {"tournament", s.es.tournament},
        {"elitism", s.es.elitism},
        {"seed", s.es.seed}}},
      {"soft",
       {{"mode", to_string(s.soft.mode)},
        {"norm", to_string(s.soft.norm)},
        {"sinkhorn_iters", s.soft.sinkhorn_iters},
        {"sinkhorn_tolerance", s.soft.sinkhorn_tolerance},
        {"init_diagonal", s.soft.init_diagonal},
        {"logits_lr", s.soft.logits_lr},
        {"entropy_penalty", s.soft.entropy_penalty}}},
      {"eval", {{"max_rows", s.eval.max_rows}, {"batch_size", s.eval.batch_size}}},
      {"sparsity", {{"rows", s.sparsity.rows}}},
  };
}

Permutation perm_from_json(const json& j) { return Permutation(j.get<std::vector<int>>()); }

LossProfile profile_from_json(const json& j) {
  std::vector<Permutation> perms;
  std::vector<double> losses;
  std::vector<std::pair<int, std::size_t>> ids;
  for (const auto& e : j.at("entries")) {
    ids.emplace_back(e.at("id").get<int>(), perms.size());
    perms.push_back(perm_from_json(e.at("perm")));
    losses.push_back(e.at("loss").get<double>());
  }
  // Rebuild in id order so ids survive the round trip.
  std::sort(ids.begin(), ids.end());
  std::vector<Permutation> by_id;
  std::vector<double> loss_by_id;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i].first == static_cast<int>(i), "profile ids must be 0..T-1");
    by_id.push_back(perms[ids[i].second]);
    loss_by_id.push_back(losses[ids[i].second]);
  }
  LossProfile p = make_profile(by_id, loss_by_id, j.value("epochs", 0));
  p.snapshot = j.value("snapshot", std::string());
  return p;
}

SearchTrace trace_from_json(const json& j) {
  SearchTrace t;
  for (const auto& e : j.at("entries")) {
    TraceEntry row{e.at("stage").get<std::string>(),
                   e.at("round").get<int>(),
                   e.at("candidates").get<std::size_t>(),
                   e.at("survivors").get<std::size_t>(),
                   perm_from_json(e.at("winner")),
                   e.at("loss").get<double>(),
                   {}};
    if (e.contains("delta")) row.delta = perm_from_json(e.at("delta"));
    t.entries.push_back(std::move(row));
  }
  t.warnings = j.value("warnings", std::vector<std::string>{});
  t.final_perm = perm_from_json(j.at("final"));
  t.final_loss = j.at("final_loss").get<double>();
  return t;
}

json to_json(const RankPoint& p) {
  return {{"rank", p.rank}, {"id", p.id}, {"perm", p.perm.map()}, {"loss", p.loss}, {"success", p.success}};
}

RankPoint rank_point_from_json(const json& j) {
  return {j.at("rank").get<std::size_t>(), j.at("id").get<int>(), perm_from_json(j.at("perm")),
          j.at("loss").get<double>(), j.at("success").get<double>()};
}

json to_json(const DigitGrid& g) {
  return {{"max_digits", g.max_digits}, {"samples", g.samples}, {"success", g.success}};
}

DigitGrid digit_grid_from_json(const json& j) {
  DigitGrid g{j.at("max_digits").get<int>(), j.at("samples").get<std::size_t>(),
              j.at("success").get<std::vector<double>>()};
  require(g.success.size() == static_cast<std::size_t>(g.max_digits * g.max_digits), "digit grid size mismatch");
  return g;
}

json to_json(const AttentionStats& s) {
  return {{"layers", s.layers},         {"heads", s.heads},         {"rows", s.rows},
          {"per_head", s.per_head},     {"aggregate", s.aggregate}, {"source", s.source}};
}

AttentionStats attention_stats_from_json(const json& j) {
  return {j.at("layers").get<int>(),        j.at("heads").get<int>(),        j.at("rows").get<std::size_t>(),
          j.at("per_head").get<std::vector<double>>(), j.at("aggregate").get<double>(),
          j.value("source", std::string())};
}

}  // namespace unravel::cli
