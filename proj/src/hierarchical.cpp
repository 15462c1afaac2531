#include "unravel/hierarchical.hpp"

#include <algorithm>
#include <set>

#include "unravel/error.hpp"

namespace unravel {

std::uint64_t GlobalSearchConfig::budget() const {
  const std::uint64_t t = factorial_capped(depth + 1, kDefaultFactorialCap * 9);
  if (t > kDefaultFactorialCap * 9) fail(ErrorCode::budget_exceeded, "search depth over budget");
  return t;
}

void GlobalSearchConfig::validate() const { require(depth >= 1, "search depth must be at least 1"); }

void LocalSearchConfig::validate() const {
  require(min_block >= 2, "min_block must be at least 2");
  require(max_block == 0 || max_block >= min_block, "max_block below min_block");
  require(factorial_cap >= 2, "factorial_cap must be at least 2");
}

namespace {

nlohmann::json perm_json(const Permutation& p) { return p.map(); }

// Best `keep` distinct permutations of a profile, in rank order.
std::vector<Permutation> best_distinct(const LossProfile& prof, std::size_t keep) {
  std::vector<Permutation> out;
  std::set<Permutation> seen;
  for (const auto& e : prof.entries) {
    if (out.size() >= keep) break;
    if (seen.insert(e.perm).second) out.push_back(e.perm);
  }
  return out;
}

void check_uniform_length(const std::vector<Permutation>& perms) {
  require(!perms.empty(), "empty permutation set");
  for (const auto& p : perms) require(p.size() == perms.front().size(), "permutation length mismatch");
}

}  // namespace

nlohmann::json SearchTrace::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json row = {{"stage", e.stage},       {"round", e.round},
                          {"candidates", e.candidates}, {"survivors", e.survivors},
                          {"winner", perm_json(e.winner)}, {"loss", e.loss}};
    if (e.delta) row["delta"] = perm_json(*e.delta);
    rows.push_back(row);
  }
  return {{"entries", rows},
          {"warnings", warnings},
          {"final", perm_json(final_perm)},
          {"final_loss", final_loss}};
}

GlobalResult global_stage(const std::vector<Permutation>& initial, const GlobalSearchConfig& config,
                          const ProfileFn& profile_fn) {
  config.validate();
  check_uniform_length(initial);
  const std::uint64_t T = initial.size();
  const int L = initial.front().size();

  GlobalResult result;
  std::vector<Permutation> current = initial;
  double best_loss = 0.0;
  for (int k = 1; k <= config.depth; ++k) {
    const std::uint64_t keep = T / factorial_capped(k + 1, T + 1);
    if (keep == 0) fail(ErrorCode::budget_exceeded, "depth too large for budget");
    const auto qs = block_perms(split_blocks(L, k));
    std::vector<Permutation> candidates;
    candidates.reserve(current.size() * qs.size());
    for (const auto& p : current) {
      for (const auto& q : qs) candidates.push_back(compose(p, q));
    }
    const LossProfile prof = profile_fn(candidates);
    current = best_distinct(prof, static_cast<std::size_t>(keep));
    best_loss = prof.winner().loss;
    result.trace.entries.push_back({"global", k, candidates.size(), current.size(), prof.winner().perm, best_loss, {}});
  }
  if (current.size() > 1 || !config.skip_singleton_profile) {
    const LossProfile prof = profile_fn(current);
    best_loss = prof.winner().loss;
    result.trace.entries.push_back(
        {"global-final", config.depth + 1, current.size(), 1, prof.winner().perm, best_loss, {}});
    result.best = prof.winner().perm;
  } else {
    result.best = current.front();
  }
  result.loss = best_loss;
  result.survivors = current;
  result.trace.final_perm = result.best;
  result.trace.final_loss = best_loss;
  return result;
}

LocalResult local_stage(const Permutation& start, const LocalSearchConfig& config, const ProfileFn& profile_fn,
                        double start_loss) {
  config.validate();
  const int L = start.size();
  require(L >= 1, "empty permutation");
  const int max_block = config.max_block == 0 ? L / 2 : std::min(config.max_block, L / 2);
  LocalResult result;
  Permutation current = start;
  double loss = start_loss;
  for (int l = config.min_block; l <= max_block; ++l) {
    if (factorial_capped(l, config.factorial_cap) > config.factorial_cap) {
      result.trace.warnings.push_back("block length " + std::to_string(l) + " skipped: " + std::to_string(l) +
                                      "! exceeds the factorial cap");
      continue;
    }
    const BlockPartition part = split_fixed(L, l);
    std::vector<Permutation> intra;
    for (int i = 0; i < part.count(); ++i) {
      for (const auto& r : intra_block_perms(part, i, config.factorial_cap)) intra.push_back(compose(current, r));
    }
    const LossProfile intra_prof = profile_fn(intra);
    Permutation winner = intra_prof.winner().perm;
    loss = intra_prof.winner().loss;
    result.trace.entries.push_back(
        {"local-intra", l, intra.size(), 1, winner, loss, compose(current.inverse(), winner)});
    current = winner;

    const int full_blocks = L / l;
    if (full_blocks >= 2) {
      std::vector<Permutation> reorder;
      for (const auto& q : block_rotations(part, full_blocks)) reorder.push_back(compose(current, q));
      const LossProfile reorder_prof = profile_fn(reorder);
      winner = reorder_prof.winner().perm;
      loss = reorder_prof.winner().loss;
      result.trace.entries.push_back(
          {"local-reorder", l, reorder.size(), 1, winner, loss, compose(current.inverse(), winner)});
      current = winner;
    }
  }
  result.best = current;
  result.loss = loss;
  result.trace.final_perm = current;
  result.trace.final_loss = loss;
  return result;
}

SearchResult hierarchical_search(const std::vector<Permutation>& initial, const GlobalSearchConfig& global,
                                 const LocalSearchConfig& local, const ProfileFn& profile_fn, bool run_local) {
  SearchResult result;
  const GlobalResult g = global_stage(initial, global, profile_fn);
  result.trace.entries.insert(result.trace.entries.end(), g.trace.entries.begin(), g.trace.entries.end());
  result.global_best = g.best;
  result.best = g.best;
  result.loss = g.loss;
  if (run_local) {
    const LocalResult l = local_stage(g.best, local, profile_fn, g.loss);
    result.trace.entries.insert(result.trace.entries.end(), l.trace.entries.begin(), l.trace.entries.end());
    result.trace.warnings.insert(result.trace.warnings.end(), l.trace.warnings.begin(), l.trace.warnings.end());
    result.best = l.best;
    result.loss = l.loss;
  }
  result.trace.final_perm = result.best;
  result.trace.final_loss = result.loss;
  return result;
}

BudgetSummary count_candidates(int length, int depth, const LocalSearchConfig& local, std::uint64_t budget) {
  GlobalSearchConfig g;
  g.depth = depth;
  g.validate();
  local.validate();
  require(length >= depth, "depth exceeds the sequence length");
  BudgetSummary out;
  out.budget = budget == 0 ? g.budget() : budget;
  std::uint64_t current = out.budget;
  for (int k = 1; k <= depth; ++k) {
    const std::uint64_t cands = current * factorial_capped(k, out.budget + 1);
    const std::uint64_t keep = out.budget / factorial_capped(k + 1, out.budget + 1);
    if (keep == 0) fail(ErrorCode::budget_exceeded, "depth too large for budget");
    out.rounds.push_back({"global", k, cands, keep, false});
    out.global_total += cands;
    current = keep;
  }
  const bool final_round = current > 1 || !g.skip_singleton_profile;
  out.rounds.push_back({"global-final", depth + 1, final_round ? current : 0, 1, !final_round});
  if (final_round) out.global_total += current;

  const int max_block = local.max_block == 0 ? length / 2 : std::min(local.max_block, length / 2);
  for (int l = local.min_block; l <= max_block; ++l) {
    if (factorial_capped(l, local.factorial_cap) > local.factorial_cap) {
      out.rounds.push_back({"local-intra", l, 0, 0, true});
      continue;
    }
    const BlockPartition part = split_fixed(length, l);
    std::uint64_t intra = 0;
    for (int i = 0; i < part.count(); ++i) intra += factorial_capped(part.block_size(i), local.factorial_cap);
    out.rounds.push_back({"local-intra", l, intra, 1, false});
    out.local_total += intra;
    const int full_blocks = length / l;
    out.rounds.push_back({"local-reorder", l, full_blocks >= 2 ? static_cast<std::uint64_t>(full_blocks) : 0, 1,
                          full_blocks < 2});
    if (full_blocks >= 2) out.local_total += static_cast<std::uint64_t>(full_blocks);
  }
  out.total = out.global_total + out.local_total;
  return out;
}

}  // namespace unravel
