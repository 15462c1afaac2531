#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "unravel/permutation.hpp"
#include "unravel/profile.hpp"
#include "unravel/rng.hpp"

namespace unravel {

struct EsConfig {
  int population = 32;     // N_p
  double crossover = 0.9;  // N_c
  double mutation = 0.2;   // N_m
  int generations = 20;    // N_g
  int tournament = 3;      // N_t
  double elitism = 0.1;    // N_r
  std::uint64_t seed = 42;

  void validate() const;
  int elite_count() const;
};

// Higher is better.
using FitnessFn = std::function<double(const Permutation&)>;

struct EsResult {
  Permutation best;
  double best_fitness = 0.0;
  std::vector<double> best_history;  // best-so-far after initialization and each generation
  std::vector<double> mean_history;  // population mean fitness, same indexing
  std::size_t evaluations = 0;       // distinct permutations scored
};

// Partially mapped crossover: the child copies a[lo, hi) and fills the rest
// from b, following the a<->b mapping out of the copied segment.
Permutation pmx(const Permutation& a, const Permutation& b, int lo, int hi);
Permutation pmx(const Permutation& a, const Permutation& b, Rng& rng);
Permutation swap_mutation(const Permutation& p, Rng& rng);

EsResult es_search(int length, const EsConfig& config, const FitnessFn& fitness);

// Negative validation loss of a fresh model trained on the candidate order
// with the profiling setup (single-permutation training).
FitnessFn make_training_fitness(const ProfileData& data, const ProfileConfig& config);

}  // namespace unravel
