#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "unravel/profile.hpp"

namespace unravel {

struct GlobalSearchConfig {
  int depth = 4;  // K; the default budget is T = (K+1)!
  // The last round keeps one survivor; re-profiling a single candidate is
  // skipped and its round-K loss is carried forward.
  bool skip_singleton_profile = true;

  // (K+1)!
  std::uint64_t budget() const;
  void validate() const;
};

struct LocalSearchConfig {
  int min_block = 2;
  int max_block = 0;  // 0: floor(L / 2)
  std::uint64_t factorial_cap = 720;  // block lengths with l! above this are skipped

  void validate() const;
};

struct TraceEntry {
  std::string stage;  // "global", "global-final", "local-intra", "local-reorder"
  int round = 0;      // k for the global stage, l for the local stage
  std::size_t candidates = 0;
  std::size_t survivors = 0;
  Permutation winner;
  double loss = 0.0;
  std::optional<Permutation> delta;  // compose(inverse(previous), winner) in the local stage
};

struct SearchTrace {
  std::vector<TraceEntry> entries;
  std::vector<std::string> warnings;
  Permutation final_perm;
  double final_loss = 0.0;

  nlohmann::json to_json() const;
};

struct GlobalResult {
  Permutation best;
  double loss = 0.0;
  std::vector<Permutation> survivors;  // final candidate set
  SearchTrace trace;
};

struct LocalResult {
  Permutation best;
  double loss = 0.0;
  SearchTrace trace;
};

struct SearchResult {
  Permutation global_best;
  Permutation best;
  double loss = 0.0;
  SearchTrace trace;
};

// Block-level rounds k = 1..K with T = |initial|: every survivor P is
// extended by all k! block rearrangements Q of split_blocks(L, k) (candidates
// compose(P, Q)), and the best floor(T / (k+1)!) distinct candidates survive.
GlobalResult global_stage(const std::vector<Permutation>& initial, const GlobalSearchConfig& config,
                          const ProfileFn& profile_fn);

// For each block length l: intra-block refinement over every block of
// split_fixed(L, l), then the floor(L / l) cyclic rotations of the full blocks.
LocalResult local_stage(const Permutation& start, const LocalSearchConfig& config, const ProfileFn& profile_fn,
                        double start_loss = 0.0);

// Global stage, then local stage unless `run_local` is off.
SearchResult hierarchical_search(const std::vector<Permutation>& initial, const GlobalSearchConfig& global,
                                 const LocalSearchConfig& local, const ProfileFn& profile_fn, bool run_local = true);

struct RoundCount {
  std::string stage;
  int round = 0;
  std::uint64_t candidates = 0;
  std::uint64_t survivors = 0;
  bool skipped = false;
};

struct BudgetSummary {
  std::uint64_t budget = 0;  // T
  std::vector<RoundCount> rounds;
  std::uint64_t global_total = 0;
  std::uint64_t local_total = 0;
  std::uint64_t total = 0;
};

// Exact per-round counts; `budget` 0 means (K+1)!.
BudgetSummary count_candidates(int length, int depth, const LocalSearchConfig& local, std::uint64_t budget = 0);

}  // namespace unravel
