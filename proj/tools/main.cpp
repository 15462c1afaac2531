// unravel: command-line driver for data generation, training, loss
// profiling, order search and evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "settings.hpp"
#include "unravel/checkpoint.hpp"
#include "unravel/csv.hpp"
#include "unravel/dataset_io.hpp"
#include "unravel/error.hpp"
#include "unravel/report.hpp"
#include "unravel/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unravel;
using namespace unravel::cli;

namespace {

// Flags shared by the subcommands; unset values leave the settings alone.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> scale;
  std::optional<std::string> task;
  std::optional<int> len;
  std::optional<int> window;
  std::optional<int> digits;
  std::optional<std::size_t> train_size, val_size, eval_size;
  std::string train_data, val_data, eval_data;
  std::optional<int> epochs, batch, layers, heads, d_emb, d_ffn;
  std::optional<double> lr, dropout;
  std::optional<std::uint64_t> model_seed;
  std::optional<std::size_t> val_rows;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Master seed");
  app->add_option("--out-dir", f.out_dir, "Output directory");
}

void add_task(CLI::App* app, Flags& f) {
  app->add_option("--task", f.task, "relu | square19 | index | prod");
  app->add_option("--len", f.len, "Target length L");
  app->add_option("--window", f.window, "Index task window d");
  app->add_option("--digits", f.digits, "Prod operand digits");
}

void add_data(CLI::App* app, Flags& f) {
  add_task(app, f);
  app->add_option("--train-size", f.train_size, "Generated training examples");
  app->add_option("--val-size", f.val_size, "Generated validation examples");
  app->add_option("--eval-size", f.eval_size, "Generated evaluation examples");
  app->add_option("--train-data", f.train_data, "Training dataset file")->check(CLI::ExistingFile);
  app->add_option("--val-data", f.val_data, "Validation dataset file")->check(CLI::ExistingFile);
  app->add_option("--eval-data", f.eval_data, "Evaluation dataset file")->check(CLI::ExistingFile);
}

void add_training(CLI::App* app, Flags& f) {
  app->add_option("--scale", f.scale, "desk | full");
  app->add_option("--epochs", f.epochs, "Training epochs");
  app->add_option("--batch", f.batch, "Batch size");
  app->add_option("--lr", f.lr, "Initial learning rate");
  app->add_option("--layers", f.layers, "Decoder layers");
  app->add_option("--heads", f.heads, "Attention heads");
  app->add_option("--d-emb", f.d_emb, "Embedding width");
  app->add_option("--d-ffn", f.d_ffn, "MLP width");
  app->add_option("--dropout", f.dropout, "Dropout rate");
  app->add_option("--model-seed", f.model_seed, "Model initialization seed");
  app->add_option("--val-rows", f.val_rows, "Validation rows scored per candidate (0: all)");
}

Settings resolve(const Flags& f) {
  Settings s;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::invalid_argument, "cannot parse config " + f.config + ": " + e.what());
    }
    apply_json(s, j);
  }
  if (f.scale) s.apply_scale(*f.scale);
  if (f.seed) s.seed = *f.seed;
  if (f.out_dir) s.out_dir = *f.out_dir;
  if (f.task || f.len || f.window || f.digits) {
    json t = json::object();
    if (f.task) t["kind"] = *f.task;
    if (f.len) t["len"] = *f.len;
    if (f.window) t["window"] = *f.window;
    if (f.digits) t["digits"] = *f.digits;
    apply_json(s, json{{"task", t}});
  }
  if (f.train_size) s.data.train = *f.train_size;
  if (f.val_size) s.data.validation = *f.val_size;
  if (f.eval_size) s.data.eval = *f.eval_size;
  auto both = [&](auto member, auto value) {
    s.train.*member = value;
    s.profile.train.*member = value;
  };
  if (f.epochs) both(&TrainConfig::epochs, *f.epochs);
  if (f.batch) both(&TrainConfig::batch_size, *f.batch);
  if (f.lr) both(&TrainConfig::lr_init, *f.lr);
  if (f.layers) s.model.n_layers = *f.layers;
  if (f.heads) s.model.n_heads = *f.heads;
  if (f.d_emb) s.model.d_emb = *f.d_emb;
  if (f.d_ffn) s.model.d_ffn = *f.d_ffn;
  if (f.dropout) s.model.dropout = *f.dropout;
  s.profile.model = s.model;
  if (f.model_seed) s.profile.model_seed = *f.model_seed;
  if (f.val_rows) s.profile.validation_rows = *f.val_rows;
  s.train.seed = s.seed;
  s.profile.train.seed = s.seed;
  return s;
}

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return splitmix64(seed + static_cast<std::uint64_t>(split) * 0x9E3779B97F4A7C15ULL);
}

std::size_t split_size(const Settings& s, Split split) {
  switch (split) {
    case Split::train: return s.data.train;
    case Split::validation: return s.data.validation;
    case Split::eval: return s.data.eval;
  }
  return 0;
}

struct Data {
  TaskSpec task;
  Vocabulary vocab;
  Dataset train, validation, eval;
  std::map<std::string, std::uint64_t> hashes;
};

Dataset obtain(const Settings& s, const std::string& file, Split split, std::map<std::string, std::uint64_t>& hashes) {
  Dataset ds = file.empty() ? gen_dataset(s.task, split_size(s, split), split_seed(s.seed, split), split)
                            : read_dataset(file).dataset;
  require(ds.task == s.task || !file.empty(), "dataset task mismatch");
  hashes[std::string(to_string(split))] = dataset_hash(ds);
  return ds;
}

Data load_data(Settings& s, const Flags& f, bool train, bool validation, bool eval) {
  Data d;
  if (!f.train_data.empty()) s.task = read_dataset(f.train_data).dataset.task;
  d.task = s.task;
  d.vocab = task_vocab(s.task);
  if (train) d.train = obtain(s, f.train_data, Split::train, d.hashes);
  if (validation) d.validation = obtain(s, f.val_data, Split::validation, d.hashes);
  if (eval) d.eval = obtain(s, f.eval_data, Split::eval, d.hashes);
  for (const Dataset* ds : {&d.train, &d.validation, &d.eval}) {
    if (ds->size() > 0) require(ds->task == d.task, "dataset files disagree on the task");
  }
  return d;
}

// identity | forward | reverse | "[2, 0, 1]" | permutation file (first member)
Permutation resolve_perm(const std::string& spec, int length) {
  if (spec == "identity" || spec == "forward") return Permutation::identity(length);
  if (spec == "reverse") return Permutation::reverse(length);
  if (!spec.empty() && spec.front() == '[') return parse_permutation(spec);
  const PermutationSet set = read_perm_set(spec);
  require(!set.perms.empty(), "permutation file is empty: " + spec);
  return set.perms.front();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::io, "cannot parse " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

// Merges this run into out-dir/manifest.json.
void record(const Settings& s, const std::string& command, const std::vector<std::string>& artifacts,
            const std::map<std::string, std::uint64_t>& hashes = {}) {
  const fs::path path = s.out_dir / "manifest.json";
  RunManifest m = fs::exists(path) ? RunManifest::from_json(read_json(path)) : RunManifest{};
  m.tool_version = kToolVersion;
  m.configs[command] = to_json(s);
  m.seeds[command] = s.seed;
  for (const auto& [k, v] : hashes) m.dataset_hashes[k] = v;
  for (const auto& a : artifacts) {
    if (std::find(m.artifacts.begin(), m.artifacts.end(), a) == m.artifacts.end()) m.artifacts.push_back(a);
  }
  write_json(path, m.to_json());
}

// Artifacts under out-dir are listed by relative name.
std::string artifact_name(const Settings& s, const fs::path& path) {
  const fs::path rel = path.lexically_normal().lexically_relative(s.out_dir.lexically_normal());
  if (rel.empty() || *rel.begin() == "..") return path.string();
  return rel.string();
}

void prepare_out(const Settings& s) {
  std::error_code ec;
  fs::create_directories(s.out_dir, ec);
  if (ec || !fs::is_directory(s.out_dir)) fail(ErrorCode::io, "cannot create " + s.out_dir.string());
}

// Name-keyed success records shared by eval, search and es.
void store_success(const Settings& s, const NamedSuccess& r) {
  const fs::path path = s.out_dir / "success.json";
  json all = fs::exists(path) ? read_json(path) : json::object();
  all[r.name] = {{"success", r.success}, {"passes", r.passes}, {"total", r.total}};
  write_json(path, all);
}

RetrainSetup retrain_setup(const Settings& s, const Data& d) {
  RetrainSetup r;
  r.train = &d.train;
  r.eval = &d.eval;
  r.vocab = &d.vocab;
  r.model = s.model;
  r.train_config = s.train;
  r.model_seed = s.profile.model_seed;
  r.eval_options = s.eval;
  return r;
}

NamedSuccess retrain_and_eval(const std::string& name, const Permutation& perm, const Settings& s, const Data& d) {
  Model model(fit_model_config(s.model, d.task, d.vocab), s.profile.model_seed);
  const TrainReport rep = train(model, d.train, d.vocab, perm, s.train);
  if (rep.aborted) return {name, 0.0, 0, d.eval.size()};
  const EvalReport ev = eval_success(model, d.eval, d.vocab, perm, s.eval);
  return {name, ev.success, ev.passes, ev.total};
}

void print(const json& j) { std::cout << j.dump() << "\n"; }

json checkpoint_meta(const Data& d, const Permutation& perm) {
  json task;
  to_json(task, d.task);
  return {{"task", task}, {"perm", perm.map()}, {"vocab", d.vocab.values()}};
}

struct Loaded {
  Model model;
  TaskSpec task;
  Vocabulary vocab;
  Permutation perm;
};

Loaded load_model(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  const json& meta = ck.metadata;
  require(meta.contains("task") && meta.contains("vocab"), "checkpoint lacks task metadata");
  TaskSpec task;
  from_json(meta.at("task"), task);
  Vocabulary vocab(meta.at("vocab").get<std::vector<int>>());
  Permutation perm =
      meta.contains("perm") ? perm_from_json(meta.at("perm")) : Permutation::identity(task.target_len);
  return {std::move(ck.model), task, std::move(vocab), std::move(perm)};
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

// ---------------------------------------------------------------- commands

struct GenDataArgs {
  std::string split = "train";
  std::optional<std::size_t> size;
  std::string out;
};

void cmd_gen_data(const Flags& f, const GenDataArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  const Split split = parse_split(a.split);
  const std::size_t n = a.size ? *a.size : split_size(s, split);
  const Dataset ds = gen_dataset(s.task, n, split_seed(s.seed, split), split);
  const fs::path out = a.out.empty() ? s.out_dir / (a.split + ".jsonl") : fs::path(a.out);
  write_dataset(out, ds, task_vocab(s.task));
  record(s, "gen-data", {artifact_name(s, out), artifact_name(s, meta_path(out))}, {{a.split, dataset_hash(ds)}});
  print({{"dataset", out.string()}, {"size", ds.size()}, {"hash", dataset_hash(ds)}});
}

struct MakePermsArgs {
  std::string kind = "g";
  int count = 32;
  int block = 5;
  std::string out;
};

void cmd_make_perms(const Flags& f, const MakePermsArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  const PermutationSet set = make_set(parse_set_kind(a.kind), s.task.target_len, a.count, s.seed, a.block);
  const fs::path out = a.out.empty() ? s.out_dir / "perms.json" : fs::path(a.out);
  write_perm_set(out, set);
  record(s, "make-perms", {artifact_name(s, out), artifact_name(s, meta_path(out))});
  print({{"perms", out.string()}, {"count", set.size()}});
}

struct TrainArgs {
  std::string perm = "identity";
  bool soft = false;
  std::string soft_mode = "joint";
  std::string soft_norm = "row_softmax";
};

void cmd_train(const Flags& f, const TrainArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  Data d = load_data(s, f, true, true, false);
  const Permutation perm = resolve_perm(a.perm, d.task.target_len);
  Model model(fit_model_config(s.model, d.task, d.vocab), s.profile.model_seed);
  std::vector<std::string> artifacts;
  TrainReport rep;
  if (a.soft) {
    SoftPermConfig soft = s.soft;
    soft.mode = parse_soft_mode(a.soft_mode);
    soft.norm = parse_soft_norm(a.soft_norm);
    SoftTrainResult res = train_soft_perm(model, d.train, d.vocab, s.train, soft);
    rep = res.report;
    json soft_json = {{"matrix", res.matrix}, {"row_entropy", res.state.row_entropies()}, {"warnings", res.warnings}};
    write_json(s.out_dir / "soft_matrix.json", soft_json);
    artifacts.push_back("soft_matrix.json");
  } else {
    rep = train(model, d.train, d.vocab, perm, s.train, &d.validation);
  }
  CsvTable log;
  log.header = {"step", "lr", "loss"};
  for (std::size_t i = 0; i < rep.step_loss.size(); ++i) {
    log.add_row({std::to_string(i), format_number(rep.step_lr[i]), format_number(rep.step_loss[i])});
  }
  log.write(s.out_dir / "train_log.csv");
  const fs::path ckpt = s.out_dir / "model.ucot";
  save_checkpoint(ckpt, model, checkpoint_meta(d, perm));
  const json summary = {{"steps", rep.steps},
                        {"planned_steps", rep.planned_steps},
                        {"epoch_train_loss", rep.epoch_train_loss},
                        {"epoch_val_loss", rep.epoch_val_loss},
                        {"wall_seconds", rep.wall_seconds},
                        {"aborted", rep.aborted},
                        {"abort_reason", rep.abort_reason},
                        {"checkpoint", ckpt.string()},
                        {"perm", perm.map()}};
  write_json(s.out_dir / "train_summary.json", summary);
  artifacts.insert(artifacts.end(), {"train_log.csv", "train_summary.json", "model.ucot"});
  record(s, "train", artifacts, d.hashes);
  print(summary);
}

struct ProfileArgs {
  std::string perms;
  std::string retrain_ranks;
};

void cmd_profile(const Flags& f, const ProfileArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  const PermutationSet set = read_perm_set(a.perms);
  require(!set.perms.empty(), "permutation file is empty");
  if (!f.task && !f.len && f.config.empty() && f.train_data.empty()) s.task.target_len = set.length;
  const bool sweep = !a.retrain_ranks.empty();
  Data d = load_data(s, f, true, true, sweep);
  const ProfileData pd{&d.train, &d.validation, &d.vocab};
  const LossProfile prof = profile(set.perms, pd, s.profile);
  write_json(s.out_dir / "profile.json", to_json(prof));
  profile_table(prof).write(s.out_dir / "loss_profile.csv");
  std::vector<std::string> artifacts{"profile.json", "loss_profile.csv"};
  json out = {{"winner", prof.winner().perm.map()}, {"winner_loss", prof.winner().loss},
              {"identity_rank", prof.rank_of(Permutation::identity(set.length))}};
  if (sweep) {
    std::vector<std::size_t> ranks;
    if (a.retrain_ranks != "all") ranks = parse_list(a.retrain_ranks);
    const RetrainSetup setup = retrain_setup(s, d);
    const auto curve = rank_retrain_sweep(prof, [&](const Permutation& p) { return retrain_success(p, setup); }, ranks);
    json points = json::array();
    for (const auto& p : curve) points.push_back(to_json(p));
    write_json(s.out_dir / "rank_curve.json", points);
    artifacts.push_back("rank_curve.json");
    out["rank_curve"] = points;
  }
  record(s, "profile", artifacts, d.hashes);
  print(out);
}

struct SearchArgs {
  std::string init = "r";
  std::optional<int> count;
  int block = 5;
  bool no_local = false;
  bool retrain = false;
};

void cmd_search(const Flags& f, const SearchArgs& a, std::optional<int> depth) {
  Settings s = resolve(f);
  prepare_out(s);
  if (depth) s.global.depth = *depth;
  Data d = load_data(s, f, true, true, a.retrain);
  const int L = d.task.target_len;
  std::vector<Permutation> initial;
  if (a.init == "r" || a.init == "g" || a.init == "b" || a.init == "f") {
    const int T = a.count ? *a.count : static_cast<int>(s.global.budget());
    initial = make_set(parse_set_kind(a.init), L, T, s.seed, a.block).perms;
  } else {
    initial = read_perm_set(a.init).perms;
  }
  const ProfileData pd{&d.train, &d.validation, &d.vocab};
  const SearchResult res = hierarchical_search(initial, s.global, s.local, make_profiler(pd, s.profile), !a.no_local);
  write_json(s.out_dir / "search_trace.json", res.trace.to_json());
  write_perm_set(s.out_dir / "winner.json", explicit_set({res.best}));
  std::vector<std::string> artifacts{"search_trace.json", "winner.json", "winner.json.meta.json"};
  json out = {{"best", res.best.map()}, {"global_best", res.global_best.map()}, {"loss", res.loss},
              {"warnings", res.trace.warnings}};
  if (a.retrain) {
    for (const auto& [name, perm] : {std::pair{std::string("discovered"), res.best},
                                     std::pair{std::string("reverse"), Permutation::reverse(L)}}) {
      const NamedSuccess r = retrain_and_eval(name, perm, s, d);
      store_success(s, r);
      out["success_" + name] = r.success;
    }
    artifacts.push_back("success.json");
  }
  record(s, "search", artifacts, d.hashes);
  print(out);
}

struct EsArgs {
  std::optional<int> pop, gens, tournament;
  std::optional<double> crossover, mutation, elitism;
  bool retrain = false;
};

void cmd_es(const Flags& f, const EsArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  if (a.pop) s.es.population = *a.pop;
  if (a.gens) s.es.generations = *a.gens;
  if (a.tournament) s.es.tournament = *a.tournament;
  if (a.crossover) s.es.crossover = *a.crossover;
  if (a.mutation) s.es.mutation = *a.mutation;
  if (a.elitism) s.es.elitism = *a.elitism;
  s.es.seed = s.seed;
  Data d = load_data(s, f, true, true, a.retrain);
  const ProfileData pd{&d.train, &d.validation, &d.vocab};
  const EsResult res = es_search(d.task.target_len, s.es, make_training_fitness(pd, s.profile));
  json out = {{"best", res.best.map()},
              {"best_fitness", res.best_fitness},
              {"best_history", res.best_history},
              {"mean_history", res.mean_history},
              {"evaluations", res.evaluations}};
  write_json(s.out_dir / "es.json", out);
  write_perm_set(s.out_dir / "winner.json", explicit_set({res.best}));
  std::vector<std::string> artifacts{"es.json", "winner.json", "winner.json.meta.json"};
  if (a.retrain) {
    const NamedSuccess r = retrain_and_eval("es", res.best, s, d);
    store_success(s, r);
    out["success"] = r.success;
    artifacts.push_back("success.json");
  }
  record(s, "es", artifacts, d.hashes);
  print(out);
}

struct EvalArgs {
  std::string checkpoint;
  std::string perm;
  std::string name;
  std::string sweep_lengths;
  std::string orders = "forward,reverse";
};

void cmd_eval(const Flags& f, const EvalArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  if (!a.sweep_lengths.empty()) {
    // Success against target length: one fresh model per (order, length).
    json curves = json::array();
    std::stringstream orders(a.orders);
    std::string order;
    while (std::getline(orders, order, ',')) {
      json curve = {{"name", order}, {"lengths", json::array()}, {"success", json::array()}};
      for (std::size_t len : parse_list(a.sweep_lengths)) {
        Settings at = s;
        at.task.target_len = static_cast<int>(len);
        Data d = load_data(at, Flags{}, true, false, true);
        const NamedSuccess r = retrain_and_eval(order, resolve_perm(order, static_cast<int>(len)), at, d);
        curve["lengths"].push_back(len);
        curve["success"].push_back(r.success);
      }
      curves.push_back(curve);
    }
    write_json(s.out_dir / "length_curve.json", curves);
    record(s, "eval", {"length_curve.json"});
    print(curves);
    return;
  }
  Loaded m = load_model(a.checkpoint.empty() ? (s.out_dir / "model.ucot").string() : a.checkpoint);
  s.task = m.task;
  Data d;
  d.task = m.task;
  d.vocab = m.vocab;
  d.eval = obtain(s, f.eval_data, Split::eval, d.hashes);
  const Permutation perm = a.perm.empty() ? m.perm : resolve_perm(a.perm, m.task.target_len);
  EvalOptions opt = s.eval;
  opt.keep_transcripts = true;
  const EvalReport rep = eval_success(m.model, d.eval, d.vocab, perm, opt);
  const std::string name = a.name.empty() ? perm.to_string() : a.name;
  store_success(s, {name, rep.success, rep.passes, rep.total});
  json out = {{"name", name}, {"success", rep.success}, {"passes", rep.passes}, {"total", rep.total},
              {"perm", perm.map()}};
  json transcripts = out;
  transcripts["passed"] = rep.passed;
  transcripts["transcripts"] = rep.transcripts;
  write_json(s.out_dir / "eval.json", transcripts);
  record(s, "eval", {"eval.json", "success.json"}, d.hashes);
  print(out);
}

struct SparsityArgs {
  std::string checkpoint;
  std::string perm;
  std::string name;
  std::optional<std::size_t> rows;
  std::optional<int> layer, head;
};

void cmd_sparsity(const Flags& f, const SparsityArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  Loaded m = load_model(a.checkpoint.empty() ? (s.out_dir / "model.ucot").string() : a.checkpoint);
  s.task = m.task;
  std::map<std::string, std::uint64_t> hashes;
  const Dataset ds = obtain(s, f.eval_data, Split::eval, hashes);
  const Permutation perm = a.perm.empty() ? m.perm : resolve_perm(a.perm, m.task.target_len);
  SparsityOptions opt = s.sparsity;
  if (a.rows) opt.rows = *a.rows;
  if (a.layer) opt.layer = *a.layer;
  if (a.head) opt.head = *a.head;
  const std::string name = a.name.empty() ? perm.to_string() : a.name;
  opt.source = name;
  const AttentionStats st = attention_stats(m.model, ds, m.vocab, perm, opt);
  const fs::path path = s.out_dir / "sparsity.json";
  json all = fs::exists(path) ? read_json(path) : json::object();
  all[name] = to_json(st);
  write_json(path, all);
  record(s, "sparsity", {"sparsity.json"}, hashes);
  print({{"name", name}, {"aggregate", st.aggregate}, {"per_head", st.per_head}});
}

struct GridArgs {
  std::string checkpoint;
  std::string perm;
  std::size_t samples = 100;
  int max_digits = 0;
  bool force_zero = false;
};

void cmd_grid(const Flags& f, const GridArgs& a) {
  Settings s = resolve(f);
  prepare_out(s);
  Loaded m = load_model(a.checkpoint.empty() ? (s.out_dir / "model.ucot").string() : a.checkpoint);
  const Permutation perm = a.perm.empty() ? m.perm : resolve_perm(a.perm, m.task.target_len);
  DigitGridOptions opt;
  opt.samples = a.samples;
  opt.max_digits = a.max_digits;
  opt.seed = s.seed;
  opt.force_zero = a.force_zero;
  const DigitGrid g = prod_digit_grid(m.model, m.task, m.vocab, perm, opt);
  write_json(s.out_dir / "digit_grid.json", to_json(g));
  record(s, "grid", {"digit_grid.json"});
  print(to_json(g));
}

void cmd_report(const Flags& f, const std::string& report_dir) {
  Settings s = resolve(f);
  prepare_out(s);
  const fs::path dir = report_dir.empty() ? s.out_dir : fs::path(report_dir);
  ReportInputs in;
  const fs::path src = s.out_dir;
  if (fs::exists(src / "manifest.json")) in.manifest = RunManifest::from_json(read_json(src / "manifest.json"));
  if (fs::exists(src / "profile.json")) in.profile = profile_from_json(read_json(src / "profile.json"));
  if (fs::exists(src / "winner.json")) in.highlight = read_perm_set(src / "winner.json").perms.front();
  if (fs::exists(src / "rank_curve.json")) {
    for (const auto& p : read_json(src / "rank_curve.json")) in.rank_curve.push_back(rank_point_from_json(p));
  }
  if (fs::exists(src / "length_curve.json")) {
    for (const auto& c : read_json(src / "length_curve.json")) {
      in.length_curves.push_back({c.at("name").get<std::string>(), c.at("lengths").get<std::vector<double>>(),
                                  c.at("success").get<std::vector<double>>()});
    }
  }
  if (fs::exists(src / "digit_grid.json")) in.digit_grid = digit_grid_from_json(read_json(src / "digit_grid.json"));
  if (fs::exists(src / "sparsity.json")) {
    const json all = read_json(src / "sparsity.json");
    for (const auto& [name, st] : all.items()) {
      in.sparsity.emplace_back(name, attention_stats_from_json(st));
    }
  }
  if (fs::exists(src / "success.json")) {
    const json all = read_json(src / "success.json");
    for (const auto& [name, r] : all.items()) {
      in.success.push_back({name, r.at("success").get<double>(), r.at("passes").get<std::size_t>(),
                            r.at("total").get<std::size_t>()});
    }
  }
  if (fs::exists(src / "search_trace.json")) in.trace = trace_from_json(read_json(src / "search_trace.json"));
  in.manifest.configs["report"] = to_json(s);
  RunManifest m = emit_report(dir, in);
  std::vector<std::string> unique;
  for (const auto& a : m.artifacts) {
    if (std::find(unique.begin(), unique.end(), a) == unique.end()) unique.push_back(a);
  }
  m.artifacts = unique;
  write_json(dir / "manifest.json", m.to_json());
  print({{"report", dir.string()}, {"artifacts", m.artifacts}});
}

int emit_error(const std::string& code, const std::string& message, int status) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << "\n";
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-token order search for arithmetic sequence tasks"};
  app.require_subcommand(1);
  Flags flags;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a seeded dataset file");
  add_common(gen_cmd, flags);
  add_task(gen_cmd, flags);
  gen_cmd->add_option("--split", gen.split, "train | validation | eval");
  gen_cmd->add_option("--size", gen.size, "Number of examples");
  gen_cmd->add_option("--out", gen.out, "Output path");

  MakePermsArgs mk;
  auto* mk_cmd = app.add_subcommand("make-perms", "Build a permutation set file");
  add_common(mk_cmd, flags);
  add_task(mk_cmd, flags);
  mk_cmd->add_option("--kind", mk.kind, "f | r | g | b");
  mk_cmd->add_option("--count", mk.count, "Set size T");
  mk_cmd->add_option("--block", mk.block, "Block length b for kind b");
  mk_cmd->add_option("--out", mk.out, "Output path");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train one model on a target order");
  add_common(tr_cmd, flags);
  add_data(tr_cmd, flags);
  add_training(tr_cmd, flags);
  tr_cmd->add_option("--perm", tr.perm, "identity | reverse | [..] | permutation file");
  tr_cmd->add_flag("--soft", tr.soft, "Learn a soft permutation jointly");
  tr_cmd->add_option("--soft-mode", tr.soft_mode, "joint | alternating");
  tr_cmd->add_option("--soft-norm", tr.soft_norm, "row_softmax | sinkhorn");

  ProfileArgs pr;
  auto* pr_cmd = app.add_subcommand("profile", "Loss-profile a permutation set");
  add_common(pr_cmd, flags);
  add_data(pr_cmd, flags);
  add_training(pr_cmd, flags);
  pr_cmd->add_option("--perms", pr.perms, "Permutation file")->required()->check(CLI::ExistingFile);
  pr_cmd->add_option("--retrain-ranks", pr.retrain_ranks, "Comma list of ranks to retrain, or all");

  SearchArgs se;
  std::optional<int> depth;
  auto* se_cmd = app.add_subcommand("search", "Hierarchical order search");
  add_common(se_cmd, flags);
  add_data(se_cmd, flags);
  add_training(se_cmd, flags);
  se_cmd->add_option("--depth", depth, "Global depth K");
  se_cmd->add_option("--init", se.init, "r | g | b | f | permutation file");
  se_cmd->add_option("--count", se.count, "Initial set size T (default (K+1)!)");
  se_cmd->add_option("--block", se.block, "Block length for --init b");
  se_cmd->add_flag("--no-local", se.no_local, "Stop after the global stage");
  se_cmd->add_flag("--retrain", se.retrain, "Retrain and evaluate the winner and reverse");

  EsArgs es;
  auto* es_cmd = app.add_subcommand("es", "Evolutionary order search");
  add_common(es_cmd, flags);
  add_data(es_cmd, flags);
  add_training(es_cmd, flags);
  es_cmd->add_option("--pop", es.pop, "Population size");
  es_cmd->add_option("--gens", es.gens, "Generations");
  es_cmd->add_option("--tournament", es.tournament, "Tournament size");
  es_cmd->add_option("--crossover", es.crossover, "Crossover probability");
  es_cmd->add_option("--mutation", es.mutation, "Mutation probability");
  es_cmd->add_option("--elitism", es.elitism, "Elite fraction");
  es_cmd->add_flag("--retrain", es.retrain, "Retrain and evaluate the winner");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Exact-match success of a checkpoint");
  add_common(ev_cmd, flags);
  add_data(ev_cmd, flags);
  add_training(ev_cmd, flags);
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint (default out-dir/model.ucot)");
  ev_cmd->add_option("--perm", ev.perm, "Order to evaluate (default: the trained one)");
  ev_cmd->add_option("--name", ev.name, "Record name");
  ev_cmd->add_option("--sweep-lengths", ev.sweep_lengths, "Comma list of L: train and evaluate per length");
  ev_cmd->add_option("--orders", ev.orders, "Orders for --sweep-lengths");

  SparsityArgs sp;
  auto* sp_cmd = app.add_subcommand("sparsity", "Attention entropy of a checkpoint");
  add_common(sp_cmd, flags);
  add_data(sp_cmd, flags);
  sp_cmd->add_option("--checkpoint", sp.checkpoint, "Checkpoint (default out-dir/model.ucot)");
  sp_cmd->add_option("--perm", sp.perm, "Order (default: the trained one)");
  sp_cmd->add_option("--name", sp.name, "Record name");
  sp_cmd->add_option("--rows", sp.rows, "Evaluation rows");
  sp_cmd->add_option("--layer", sp.layer, "Restrict the aggregate to one layer");
  sp_cmd->add_option("--head", sp.head, "Restrict the aggregate to one head");

  GridArgs gr;
  auto* gr_cmd = app.add_subcommand("grid", "Prod success per operand-digit pair");
  add_common(gr_cmd, flags);
  gr_cmd->add_option("--checkpoint", gr.checkpoint, "Checkpoint (default out-dir/model.ucot)");
  gr_cmd->add_option("--perm", gr.perm, "Order (default: the trained one)");
  gr_cmd->add_option("--samples", gr.samples, "Samples per cell");
  gr_cmd->add_option("--max-digits", gr.max_digits, "Largest digit count (default: trained width)");
  gr_cmd->add_flag("--force-zero", gr.force_zero, "Fix operands to zero");

  std::string report_dir;
  auto* rp_cmd = app.add_subcommand("report", "CSV tables, SVG plots and manifest from out-dir");
  add_common(rp_cmd, flags);
  rp_cmd->add_option("--report-dir", report_dir, "Destination (default out-dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what(), 2);
  }

  try {
    if (*gen_cmd) cmd_gen_data(flags, gen);
    if (*mk_cmd) cmd_make_perms(flags, mk);
    if (*tr_cmd) cmd_train(flags, tr);
    if (*pr_cmd) cmd_profile(flags, pr);
    if (*se_cmd) cmd_search(flags, se, depth);
    if (*es_cmd) cmd_es(flags, es);
    if (*ev_cmd) cmd_eval(flags, ev);
    if (*sp_cmd) cmd_sparsity(flags, sp);
    if (*gr_cmd) cmd_grid(flags, gr);
    if (*rp_cmd) cmd_report(flags, report_dir);
  } catch (const Error& e) {
    return emit_error(std::string(to_string(e.code())), e.what(), 1);
  } catch (const std::exception& e) {
    return emit_error("internal", e.what(), 1);
  }
  return 0;
}
