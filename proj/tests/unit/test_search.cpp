#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "support/generators.hpp"
#include "unravel/error.hpp"
#include "unravel/evolution.hpp"
#include "unravel/hierarchical.hpp"
#include "unravel/profile.hpp"

using namespace unravel;

namespace {

// Sum of |p[k] - target[k]|: zero only at the target.
double displacement(const Permutation& p, const Permutation& target) {
  double d = 0.0;
  for (int k = 0; k < p.size(); ++k) d += std::abs(p[k] - target[k]);
  return d;
}

struct Landscape {
  Permutation target;
  std::vector<std::size_t> calls;  // candidate count of every profile call
  std::size_t scored = 0;

  ProfileFn fn() {
    return [this](std::span<const Permutation> cands) {
      calls.push_back(cands.size());
      scored += cands.size();
      std::vector<double> losses;
      for (const auto& p : cands) losses.push_back(displacement(p, target));
      return make_profile(cands, losses, 0);
    };
  }
};

// Textbook PMX: copy a's segment, then place b's value at each outside slot,
// following value -> b[position of value in a] while the value is taken.
Permutation pmx_oracle(const Permutation& a, const Permutation& b, int lo, int hi) {
  const int n = a.size();
  std::vector<int> child(n, -1);
  std::map<int, int> pos_in_a;
  for (int i = 0; i < n; ++i) pos_in_a[a[i]] = i;
  std::set<int> seg;
  for (int i = lo; i < hi; ++i) {
    child[i] = a[i];
    seg.insert(a[i]);
  }
  for (int i = 0; i < n; ++i) {
    if (i >= lo && i < hi) continue;
    int v = b[i];
    while (seg.count(v)) v = b[pos_in_a[v]];
    child[i] = v;
  }
  return Permutation(child);
}

}  // namespace

TEST_CASE("make_profile sorts by loss then id") {
  const std::vector<Permutation> c{Permutation::identity(3), Permutation::reverse(3),
                                   Permutation(std::vector<int>{1, 0, 2})};
  const std::vector<double> l{2.0, 1.0, 1.0};
  const auto prof = make_profile(c, l, 3);
  CHECK(prof.entries[0].id == 1);
  CHECK(prof.entries[1].id == 2);
  CHECK(prof.entries[2].id == 0);
  CHECK(prof.winner().perm == Permutation::reverse(3));
  CHECK(prof.rank_of(Permutation::identity(3)) == 3);
  CHECK(prof.rank_of(Permutation(std::vector<int>{0, 2, 1})) == 0);
  CHECK(prof.losses_by_id() == l);
  CHECK(to_json(prof)["entries"].size() == 3);
}

TEST_CASE("global stage round counts with the default budget") {
  Landscape land{Permutation::identity(8), {}, 0};
  const auto initial = make_set(SetKind::g, 8, 120, 5).perms;
  GlobalSearchConfig cfg;
  cfg.depth = 4;
  const auto res = global_stage(initial, cfg, land.fn());
  CHECK(land.calls == std::vector<std::size_t>{120, 120, 120, 120});
  REQUIRE(res.trace.entries.size() == 4);
  const std::vector<std::size_t> survivors{60, 20, 5, 1};
  for (int k = 0; k < 4; ++k) {
    CHECK(res.trace.entries[k].candidates == 120);
    CHECK(res.trace.entries[k].survivors == survivors[k]);
    CHECK(res.trace.entries[k].round == k + 1);
  }
  CHECK(res.survivors.size() == 1);
  CHECK(res.best == res.survivors.front());

  cfg.skip_singleton_profile = false;
  Landscape again{Permutation::identity(8), {}, 0};
  const auto full = global_stage(initial, cfg, again.fn());
  CHECK(again.calls.back() == 1);
  CHECK(full.trace.entries.back().stage == "global-final");
  CHECK(full.best == res.best);
}

TEST_CASE("global stage with depth one profiles the initial set once") {
  Landscape land{Permutation::reverse(5), {}, 0};
  std::vector<Permutation> initial{Permutation::identity(5), Permutation::reverse(5)};
  GlobalSearchConfig cfg;
  cfg.depth = 1;
  const auto res = global_stage(initial, cfg, land.fn());
  CHECK(land.calls == std::vector<std::size_t>{2});
  CHECK(res.best == Permutation::reverse(5));
  CHECK(res.loss == 0.0);
}

TEST_CASE("global stage survivors are the best distinct candidates") {
  test::Gen g(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int L = g.range(4, 10);
    const auto target = test::random_perm(g, L);
    std::vector<Permutation> initial = make_set(SetKind::r, L, 24, static_cast<std::uint64_t>(trial)).perms;
    Landscape land{target, {}, 0};
    GlobalSearchConfig cfg;
    cfg.depth = 3;
    const auto res = global_stage(initial, cfg, land.fn());
    // The winner's loss never exceeds the best of the initial set.
    double initial_best = 1e300;
    for (const auto& p : initial) initial_best = std::min(initial_best, displacement(p, target));
    CHECK(res.loss <= initial_best);
    CHECK(res.loss == displacement(res.best, target));
  }
}

TEST_CASE("depth beyond the budget is rejected") {
  Landscape land{Permutation::identity(6), {}, 0};
  const auto initial = make_set(SetKind::g, 6, 10, 1).perms;
  GlobalSearchConfig cfg;
  cfg.depth = 3;  // 10 / 4! = 0
  CHECK_THROWS_WITH(global_stage(initial, cfg, land.fn()), "depth too large for budget");
  CHECK_THROWS_AS(global_stage({}, cfg, land.fn()), Error);
}

TEST_CASE("count_candidates") {
  LocalSearchConfig local;
  const auto s = count_candidates(13, 6, local);
  CHECK(s.budget == 5040);
  for (int k = 0; k < 6; ++k) {
    CHECK(s.rounds[k].candidates == 5040);
  }
  CHECK(s.rounds[5].survivors == 1);
  CHECK(s.rounds[6].skipped);
  CHECK(s.global_total == 6 * 5040);
  // l = 6: blocks 6, 6, 1 plus two full-block rotations.
  const auto intra6 = std::find_if(s.rounds.begin(), s.rounds.end(),
                                   [](const RoundCount& r) { return r.stage == "local-intra" && r.round == 6; });
  REQUIRE(intra6 != s.rounds.end());
  CHECK(intra6->candidates == 2 * 720 + 1);
  CHECK((intra6 + 1)->candidates == 2);
  CHECK(s.total == s.global_total + s.local_total);
  CHECK_THROWS_AS(count_candidates(13, 4, local, 100), Error);
}

TEST_CASE("count_candidates agrees with the candidates a search profiles") {
  for (int L : {6, 7, 9}) {
    for (int K = 1; K <= 3; ++K) {
      LocalSearchConfig local;
      local.factorial_cap = 120;
      const auto s = count_candidates(L, K, local);
      Landscape land{Permutation::reverse(L), {}, 0};
      const auto initial = make_set(SetKind::g, L, static_cast<int>(s.budget), 2).perms;
      GlobalSearchConfig g;
      g.depth = K;
      hierarchical_search(initial, g, local, land.fn());
      CHECK(land.scored == s.total);
      std::vector<std::size_t> expected;
      for (const auto& r : s.rounds) {
        if (!r.skipped) expected.push_back(r.candidates);
      }
      CHECK(land.calls == expected);
    }
  }
}

TEST_CASE("local stage keeps an optimum and repairs nearby orders") {
  const int L = 8;
  const auto id = Permutation::identity(L);
  SUBCASE("fixed point") {
    Landscape land{id, {}, 0};
    const auto res = local_stage(id, {}, land.fn(), 0.0);
    CHECK(res.best == id);
    CHECK(res.loss == 0.0);
  }
  SUBCASE("a swap inside a block of two") {
    Landscape land{id, {}, 0};
    const auto res = local_stage(Permutation(std::vector<int>{0, 1, 3, 2, 4, 5, 6, 7}), {}, land.fn());
    CHECK(res.best == id);
  }
  SUBCASE("rotated blocks") {
    Landscape land{id, {}, 0};
    const auto res = local_stage(Permutation(std::vector<int>{4, 5, 6, 7, 0, 1, 2, 3}), {}, land.fn());
    CHECK(res.best == id);
  }
  SUBCASE("large blocks are skipped with a warning") {
    Landscape land{id, {}, 0};
    LocalSearchConfig cfg;
    cfg.factorial_cap = 6;
    const auto res = local_stage(id, cfg, land.fn());
    CHECK(res.trace.warnings.size() == 1);  // l = 4
  }
}

TEST_CASE("the trace reconstructs the final order from the deltas") {
  test::Gen g(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int L = g.range(6, 10);
    Landscape land{test::random_perm(g, L), {}, 0};
    const auto initial = make_set(SetKind::g, L, 24, static_cast<std::uint64_t>(trial)).perms;
    GlobalSearchConfig cfg;
    cfg.depth = 3;
    const auto res = hierarchical_search(initial, cfg, {}, land.fn());
    Permutation cur = res.global_best;
    for (const auto& e : res.trace.entries) {
      if (!e.delta) continue;
      cur = compose(cur, *e.delta);
      CHECK(cur == e.winner);
    }
    CHECK(cur == res.best);
    CHECK(res.trace.final_perm == res.best);
    CHECK(res.loss == displacement(res.best, land.target));
    const auto j = res.trace.to_json();
    CHECK(j["entries"].size() == res.trace.entries.size());
  }
}

TEST_CASE("PMX matches the textbook construction") {
  test::Gen g(12);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = g.range(1, 12);
    const auto a = test::random_perm(g, n);
    const auto b = test::random_perm(g, n);
    int lo = g.range(0, n), hi = g.range(0, n);
    if (lo > hi) std::swap(lo, hi);
    const auto child = pmx(a, b, lo, hi);
    CHECK(child == pmx_oracle(a, b, lo, hi));
    for (int i = lo; i < hi; ++i) CHECK(child[i] == a[i]);
    CHECK(pmx(a, a, lo, hi) == a);
  }
  CHECK(pmx(Permutation::identity(4), Permutation::reverse(4), 0, 4) == Permutation::identity(4));
  CHECK(pmx(Permutation::identity(4), Permutation::reverse(4), 0, 0) == Permutation::reverse(4));
  CHECK_THROWS_AS(pmx(Permutation::identity(4), Permutation::reverse(4), 3, 5), Error);
}

TEST_CASE("swap mutation changes exactly two positions") {
  test::Gen g(13);
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = test::random_perm(g, g.range(2, 15));
    const auto q = swap_mutation(p, rng);
    int diff = 0;
    for (int k = 0; k < p.size(); ++k) diff += p[k] != q[k];
    CHECK(diff == 2);
  }
}

TEST_CASE("ES on a synthetic landscape") {
  const auto target = Permutation(std::vector<int>{3, 1, 4, 0, 5, 2, 7, 6});
  const FitnessFn fit = [&](const Permutation& p) { return -displacement(p, target); };
  EsConfig cfg;
  cfg.generations = 30;
  const auto res = es_search(8, cfg, fit);
  CHECK(res.best_history.size() == 31);
  CHECK(res.mean_history.size() == 31);
  for (std::size_t i = 1; i < res.best_history.size(); ++i) CHECK(res.best_history[i] >= res.best_history[i - 1]);
  CHECK(res.best_fitness == fit(res.best));
  CHECK(res.best_history.back() > res.best_history.front());
  CHECK(res.evaluations <= static_cast<std::size_t>(32 + 30 * 32));
  const auto again = es_search(8, cfg, fit);
  CHECK(again.best == res.best);
  CHECK(again.best_history == res.best_history);

  cfg.generations = 0;
  const auto init = es_search(8, cfg, fit);
  CHECK(init.best_history.size() == 1);
  CHECK(init.evaluations <= 32);
  CHECK(cfg.elite_count() == 3);

  cfg.tournament = 40;
  CHECK_THROWS_AS(es_search(8, cfg, fit), Error);
}

TEST_CASE("profiling a small real task") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto train_set = gen_dataset(task, 96, 1);
  const auto val = gen_dataset(task, 48, 2, Split::validation);
  ProfileConfig cfg;
  cfg.model.n_layers = 1;
  cfg.model.d_emb = 16;
  cfg.model.d_ffn = 32;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 32;
  cfg.train.validation_rows = 0;
  cfg.validation_rows = 0;
  const ProfileData data{&train_set, &val, &vocab};
  const std::vector<Permutation> cands{Permutation::identity(4), Permutation::reverse(4),
                                       Permutation::identity(4)};
  const auto a = profile(cands, data, cfg);
  const auto b = profile(cands, data, cfg);
  REQUIRE(a.size() == 3);
  CHECK(a.epochs == 2);
  const auto la = a.losses_by_id();
  CHECK(la == b.losses_by_id());
  CHECK(std::abs(la[0] - la[2]) <= 1e-9);
  for (double l : la) CHECK(std::isfinite(l));

  const auto fit = make_training_fitness(data, cfg);
  CHECK(fit(Permutation::reverse(4)) == fit(Permutation::reverse(4)));
  const auto fitted = fit_model_config(cfg.model, task, vocab);
  CHECK(fitted.vocab_size == vocab.size());
  CHECK(fitted.max_seq_len >= model_seq_len(task));
}
