#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unravel/model.hpp"
#include "unravel/trainer.hpp"

namespace unravel {

struct ProfileEntry {
  int id = 0;  // index in the candidate list
  Permutation perm;
  double loss = 0.0;
};

struct LossProfile {
  std::vector<ProfileEntry> entries;  // ascending by (loss, id)
  int epochs = 0;
  std::string snapshot;  // checkpoint path when the snapshot was saved

  const ProfileEntry& winner() const;
  std::size_t size() const { return entries.size(); }
  // 1-based rank of the first entry equal to `perm`, 0 when absent.
  std::size_t rank_of(const Permutation& perm) const;
  // Loss by candidate id.
  std::vector<double> losses_by_id() const;
};

// Sorts by (loss, id).
LossProfile make_profile(std::span<const Permutation> candidates, std::span<const double> losses, int epochs);

struct ProfileData {
  const Dataset* train = nullptr;
  const Dataset* validation = nullptr;
  const Vocabulary* vocab = nullptr;
};

struct ProfileConfig {
  ModelConfig model;  // vocab_size and max_seq_len are filled from the data when 0
  TrainConfig train;
  std::uint64_t model_seed = 42;
  // Mixed training draws ceil(m / T) examples per permutation when set,
  // otherwise the full union.
  bool subsample = true;
  // Validation rows scored per candidate, 0 for all.
  std::size_t validation_rows = 1000;
  int eval_batch = 256;
};

ModelConfig fit_model_config(ModelConfig base, const TaskSpec& task, const Vocabulary& vocab);

// Trains one fresh model on the union of the candidates' permuted datasets,
// then scores every candidate on the frozen snapshot. Duplicate candidates
// share one score.
LossProfile profile(std::span<const Permutation> candidates, const ProfileData& data, const ProfileConfig& config);

// Scoring function used by the search drivers; tests substitute synthetic
// landscapes.
using ProfileFn = std::function<LossProfile(std::span<const Permutation>)>;

ProfileFn make_profiler(const ProfileData& data, const ProfileConfig& config);

nlohmann::json to_json(const LossProfile& profile);

}  // namespace unravel
