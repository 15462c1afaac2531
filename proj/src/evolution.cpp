#include "unravel/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "unravel/error.hpp"

namespace unravel {

void EsConfig::validate() const {
  require(population >= 2, "population must be at least 2");
  require(crossover >= 0.0 && crossover <= 1.0, "crossover probability must lie in [0, 1]");
  require(mutation >= 0.0 && mutation <= 1.0, "mutation probability must lie in [0, 1]");
  require(generations >= 0, "generations must be non-negative");
  require(tournament >= 1 && tournament <= population, "tournament size must lie in [1, population]");
  require(elitism >= 0.0 && elitism <= 1.0, "elitism ratio must lie in [0, 1]");
}

int EsConfig::elite_count() const {
  return std::min(population, static_cast<int>(std::floor(elitism * population)));
}

Permutation pmx(const Permutation& a, const Permutation& b, int lo, int hi) {
  const int n = a.size();
  require(b.size() == n, "permutation length mismatch");
  require(lo >= 0 && lo <= hi && hi <= n, "crossover segment out of range");
  std::vector<int> child(static_cast<std::size_t>(n), -1);
  std::vector<int> pos_in_b(static_cast<std::size_t>(n));
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) pos_in_b[static_cast<std::size_t>(b[i])] = i;
  for (int i = lo; i < hi; ++i) {
    child[static_cast<std::size_t>(i)] = a[i];
    taken[static_cast<std::size_t>(a[i])] = 1;
  }
  for (int i = lo; i < hi; ++i) {
    const int v = b[i];
    if (taken[static_cast<std::size_t>(v)]) continue;
    int j = i;
    while (j >= lo && j < hi) j = pos_in_b[static_cast<std::size_t>(a[j])];
    child[static_cast<std::size_t>(j)] = v;
    taken[static_cast<std::size_t>(v)] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (child[static_cast<std::size_t>(i)] < 0) child[static_cast<std::size_t>(i)] = b[i];
  }
  return Permutation(std::move(child));
}

Permutation pmx(const Permutation& a, const Permutation& b, Rng& rng) {
  const int n = a.size();
  auto lo = static_cast<int>(rng.uniform_int(0, n));
  auto hi = static_cast<int>(rng.uniform_int(0, n));
  if (lo > hi) std::swap(lo, hi);
  return pmx(a, b, lo, hi);
}

Permutation swap_mutation(const Permutation& p, Rng& rng) {
  const int n = p.size();
  if (n < 2) return p;
  std::vector<int> map = p.map();
  const auto i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
  auto j = static_cast<std::size_t>(rng.uniform_int(0, n - 2));
  if (j >= i) ++j;
  std::swap(map[i], map[j]);
  return Permutation(std::move(map));
}

EsResult es_search(int length, const EsConfig& config, const FitnessFn& fitness) {
  config.validate();
  require(length >= 1, "permutation length must be positive");
  Rng rng(config.seed);
  EsResult result;
  std::map<Permutation, double> memo;
  auto score = [&](const Permutation& p) {
    auto it = memo.find(p);
    if (it == memo.end()) {
      const double f = fitness(p);
      if (!std::isfinite(f)) fail(ErrorCode::numeric_overflow, "numeric overflow");
      it = memo.emplace(p, f).first;
    }
    return it->second;
  };

  struct Individual {
    Permutation perm;
    double fitness;
  };
  std::vector<Individual> pop;
  for (int i = 0; i < config.population; ++i) {
    std::vector<int> map(static_cast<std::size_t>(length));
    for (int k = 0; k < length; ++k) map[static_cast<std::size_t>(k)] = k;
    rng.shuffle(std::span<int>(map));
    Permutation p(std::move(map));
    const double f = score(p);
    pop.push_back({std::move(p), f});
  }
  auto by_fitness = [](const Individual& a, const Individual& b) {
    return a.fitness != b.fitness ? a.fitness > b.fitness : a.perm < b.perm;
  };
  auto record = [&]() {
    const auto best = std::min_element(pop.begin(), pop.end(), by_fitness);
    if (result.best_history.empty() || best->fitness > result.best_fitness) {
      result.best = best->perm;
      result.best_fitness = best->fitness;
    }
    double mean = 0.0;
    for (const auto& ind : pop) mean += ind.fitness;
    result.best_history.push_back(result.best_fitness);
    result.mean_history.push_back(mean / static_cast<double>(pop.size()));
  };
  record();

  auto tournament = [&]() -> const Individual& {
    const Individual* winner = nullptr;
    for (int t = 0; t < config.tournament; ++t) {
      const auto& cand = pop[static_cast<std::size_t>(rng.uniform_int(0, config.population - 1))];
      if (winner == nullptr || by_fitness(cand, *winner)) winner = &cand;
    }
    return *winner;
  };

  const int elites = config.elite_count();
  for (int gen = 0; gen < config.generations; ++gen) {
    std::sort(pop.begin(), pop.end(), by_fitness);
    std::vector<Individual> next(pop.begin(), pop.begin() + elites);
    while (static_cast<int>(next.size()) < config.population) {
      const Individual& a = tournament();
      const Individual& b = tournament();
      Permutation child = rng.bernoulli(config.crossover) ? pmx(a.perm, b.perm, rng) : a.perm;
      if (rng.bernoulli(config.mutation)) child = swap_mutation(child, rng);
      const double f = score(child);
      next.push_back({std::move(child), f});
    }
    pop = std::move(next);
    record();
  }
  result.evaluations = memo.size();
  return result;
}

FitnessFn make_training_fitness(const ProfileData& data, const ProfileConfig& config) {
  return [data, config](const Permutation& p) {
    const Permutation one[] = {p};
    ProfileConfig single = config;
    single.subsample = false;
    return -profile(one, data, single).winner().loss;
  };
}

}  // namespace unravel
