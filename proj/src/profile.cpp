#include "unravel/profile.hpp"

#include <algorithm>
#include <map>

#include "unravel/error.hpp"

namespace unravel {

const ProfileEntry& LossProfile::winner() const {
  require(!entries.empty(), "empty loss profile");
  return entries.front();
}

std::size_t LossProfile::rank_of(const Permutation& perm) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].perm == perm) return i + 1;
  }
  return 0;
}

std::vector<double> LossProfile::losses_by_id() const {
  std::vector<double> out(entries.size(), 0.0);
  for (const auto& e : entries) out[static_cast<std::size_t>(e.id)] = e.loss;
  return out;
}

LossProfile make_profile(std::span<const Permutation> candidates, std::span<const double> losses, int epochs) {
  require(candidates.size() == losses.size(), "one loss per candidate required");
  LossProfile out;
  out.epochs = epochs;
  out.entries.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!std::isfinite(losses[i])) fail(ErrorCode::numeric_overflow, "numeric overflow");
    out.entries.push_back({static_cast<int>(i), candidates[i], losses[i]});
  }
  std::sort(out.entries.begin(), out.entries.end(), [](const ProfileEntry& a, const ProfileEntry& b) {
    return a.loss != b.loss ? a.loss < b.loss : a.id < b.id;
  });
  return out;
}

ModelConfig fit_model_config(ModelConfig base, const TaskSpec& task, const Vocabulary& vocab) {
  if (base.vocab_size == 0) base.vocab_size = vocab.size();
  if (base.max_seq_len < model_seq_len(task)) base.max_seq_len = model_seq_len(task);
  return base;
}

LossProfile profile(std::span<const Permutation> candidates, const ProfileData& data, const ProfileConfig& config) {
  require(data.train != nullptr && data.validation != nullptr && data.vocab != nullptr, "profile data incomplete");
  require(!candidates.empty(), "empty permutation set");
  const int L = data.train->task.target_len;
  for (const auto& p : candidates) require(p.size() == L, "permutation length mismatch");

  Model model(fit_model_config(config.model, data.train->task, *data.vocab), config.model_seed);
  TrainConfig tc = config.train;
  tc.subsample_per_perm.reset();
  if (config.subsample) tc.subsample_per_perm = subsample_count(data.train->size(), candidates.size());
  const TrainReport report = train_mixed(model, *data.train, *data.vocab, candidates, tc);
  if (report.aborted) fail(ErrorCode::numeric_overflow, "profiling run aborted: " + report.abort_reason);

  std::map<Permutation, double> scored;
  std::vector<double> losses;
  losses.reserve(candidates.size());
  for (const auto& p : candidates) {
    auto it = scored.find(p);
    if (it == scored.end()) {
      const double loss = eval_loss(model, *data.validation, *data.vocab, p, config.validation_rows, config.eval_batch);
      it = scored.emplace(p, loss).first;
    }
    losses.push_back(it->second);
  }
  return make_profile(candidates, losses, tc.epochs);
}

ProfileFn make_profiler(const ProfileData& data, const ProfileConfig& config) {
  return [data, config](std::span<const Permutation> candidates) { return profile(candidates, data, config); };
}

nlohmann::json to_json(const LossProfile& profile) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : profile.entries) {
    entries.push_back({{"id", e.id}, {"perm", e.perm.map()}, {"loss", e.loss}});
  }
  return {{"epochs", profile.epochs}, {"snapshot", profile.snapshot}, {"entries", entries}};
}

}  // namespace unravel
