#include "unravel/permutation.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "unravel/rng.hpp"

namespace unravel {

Permutation::Permutation(std::vector<int> map) : map_(std::move(map)) {
  std::vector<char> seen(map_.size(), 0);
  for (int v : map_) {
    if (v < 0 || v >= static_cast<int>(map_.size()) || seen[static_cast<std::size_t>(v)]) {
      fail(ErrorCode::invalid_argument, "permutation is not a bijection");
    }
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

Permutation Permutation::identity(int length) {
  std::vector<int> m(static_cast<std::size_t>(length));
  std::iota(m.begin(), m.end(), 0);
  return Permutation(std::move(m));
}

Permutation Permutation::reverse(int length) {
  std::vector<int> m(static_cast<std::size_t>(length));
  for (int k = 0; k < length; ++k) m[static_cast<std::size_t>(k)] = length - 1 - k;
  return Permutation(std::move(m));
}

bool Permutation::is_identity() const {
  for (std::size_t k = 0; k < map_.size(); ++k) {
    if (map_[k] != static_cast<int>(k)) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  std::vector<int> inv(map_.size());
  for (std::size_t k = 0; k < map_.size(); ++k) inv[static_cast<std::size_t>(map_[k])] = static_cast<int>(k);
  return Permutation(std::move(inv));
}

std::string Permutation::to_string() const {
  std::string out = "[";
  for (std::size_t k = 0; k < map_.size(); ++k) {
    if (k) out += ", ";
    out += std::to_string(map_[k]);
  }
  return out + "]";
}

Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) fail(ErrorCode::invalid_argument, "permutation length mismatch");
  std::vector<int> m(static_cast<std::size_t>(p.size()));
  for (int k = 0; k < p.size(); ++k) m[static_cast<std::size_t>(k)] = p[q[k]];
  return Permutation(std::move(m));
}

Permutation parse_permutation(std::string_view text) {
  std::string cleaned(text);
  for (char& c : cleaned) {
    if (c == '[' || c == ']' || c == ',') c = ' ';
  }
  std::istringstream in(cleaned);
  std::vector<int> m;
  int v;
  while (in >> v) m.push_back(v);
  if (!in.eof()) fail(ErrorCode::invalid_argument, "cannot parse permutation: " + std::string(text));
  return Permutation(std::move(m));
}

void BlockPartition::validate() const {
  require(!blocks.empty(), "partition has no blocks");
  int expected = 0;
  for (const auto& [start, end] : blocks) {
    require(start == expected && end > start, "partition blocks must be contiguous and non-empty");
    expected = end;
  }
}

std::uint64_t factorial_capped(int n, std::uint64_t cap) {
  std::uint64_t f = 1;
  for (int i = 2; i <= n; ++i) {
    f *= static_cast<std::uint64_t>(i);
    if (f > cap) return cap + 1;
  }
  return f;
}

BlockPartition split_blocks(int length, int count) {
  require(length >= 1, "partition length must be positive");
  if (count < 1 || count > length) {
    fail(ErrorCode::invalid_argument, "block count must lie in [1, L]");
  }
  BlockPartition part;
  const int base = length / count;
  const int extra = length % count;
  int start = 0;
  for (int i = 0; i < count; ++i) {
    const int size = base + (i < extra ? 1 : 0);
    part.blocks.emplace_back(start, start + size);
    start += size;
  }
  return part;
}

BlockPartition split_fixed(int length, int block_len) {
  require(block_len >= 1 && block_len <= length, "block length must lie in [1, L]");
  BlockPartition part;
  for (int start = 0; start < length; start += block_len) {
    part.blocks.emplace_back(start, std::min(start + block_len, length));
  }
  return part;
}

namespace {

std::vector<int> arrangement_map(const BlockPartition& partition, const std::vector<int>& order) {
  std::vector<int> m;
  m.reserve(static_cast<std::size_t>(partition.length()));
  for (int b : order) {
    const auto [start, end] = partition.blocks[static_cast<std::size_t>(b)];
    for (int pos = start; pos < end; ++pos) m.push_back(pos);
  }
  return m;
}

void check_budget(int n, std::uint64_t cap) {
  if (factorial_capped(n, cap) > cap) {
    fail(ErrorCode::budget_exceeded, "block factorial over budget");
  }
}

}  // namespace

std::vector<Permutation> block_perms(const BlockPartition& partition, std::uint64_t cap) {
  partition.validate();
  check_budget(partition.count(), cap);
  std::vector<int> order(static_cast<std::size_t>(partition.count()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<Permutation> out;
  do {
    out.emplace_back(arrangement_map(partition, order));
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

std::vector<Permutation> intra_block_perms(const BlockPartition& partition, int block_index,
                                           std::uint64_t cap) {
  partition.validate();
  require(block_index >= 0 && block_index < partition.count(), "block index out of range");
  const auto [start, end] = partition.blocks[static_cast<std::size_t>(block_index)];
  check_budget(end - start, cap);
  std::vector<int> base(static_cast<std::size_t>(partition.length()));
  std::iota(base.begin(), base.end(), 0);
  std::vector<int> inner(base.begin() + start, base.begin() + end);
  std::vector<Permutation> out;
  do {
    std::vector<int> m = base;
    std::copy(inner.begin(), inner.end(), m.begin() + start);
    out.emplace_back(std::move(m));
  } while (std::next_permutation(inner.begin(), inner.end()));
  return out;
}

std::vector<Permutation> block_rotations(const BlockPartition& partition, int rotated) {
  partition.validate();
  require(rotated >= 1 && rotated <= partition.count(), "rotation block count out of range");
  std::vector<Permutation> out;
  for (int r = 0; r < rotated; ++r) {
    std::vector<int> order;
    for (int i = 0; i < rotated; ++i) order.push_back((i + r) % rotated);
    for (int i = rotated; i < partition.count(); ++i) order.push_back(i);
    out.emplace_back(arrangement_map(partition, order));
  }
  return out;
}

std::string_view to_string(SetKind kind) noexcept {
  switch (kind) {
    case SetKind::f: return "f";
    case SetKind::r: return "r";
    case SetKind::g: return "g";
    case SetKind::b: return "b";
    case SetKind::explicit_list: return "explicit";
  }
  return "unknown";
}

SetKind parse_set_kind(std::string_view name) {
  if (name == "f") return SetKind::f;
  if (name == "r") return SetKind::r;
  if (name == "g") return SetKind::g;
  if (name == "b") return SetKind::b;
  if (name == "explicit") return SetKind::explicit_list;
  fail(ErrorCode::invalid_argument, "unknown permutation set kind: " + std::string(name));
}

void PermutationSet::validate() const {
  std::set<Permutation> seen;
  for (const auto& p : perms) {
    require(p.size() == length, "permutation set members must share one length");
    require(seen.insert(p).second, "permutation set contains a duplicate: " + p.to_string());
  }
}

namespace {

Permutation random_permutation(int length, Rng& rng) {
  std::vector<int> m(static_cast<std::size_t>(length));
  std::iota(m.begin(), m.end(), 0);
  rng.shuffle(std::span<int>(m));
  return Permutation(std::move(m));
}

void require_available(std::uint64_t available, int count) {
  if (static_cast<std::uint64_t>(count) > available) {
    fail(ErrorCode::budget_exceeded,
         "requested " + std::to_string(count) + " permutations but only " +
             std::to_string(available) + " distinct ones exist");
  }
}

// Forward or reverse base cut into length-b blocks, blocks rearranged.
Permutation block_restricted(const std::vector<int>& base, int block_len, const std::vector<int>& order) {
  std::vector<int> m;
  for (int b : order) {
    const auto start = static_cast<std::size_t>(b * block_len);
    const auto end = std::min(start + static_cast<std::size_t>(block_len), base.size());
    m.insert(m.end(), base.begin() + static_cast<std::ptrdiff_t>(start),
             base.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return Permutation(std::move(m));
}

}  // namespace

PermutationSet make_set(SetKind kind, int length, int count, std::uint64_t seed, int block_len) {
  require(length >= 1, "permutation length must be positive");
  require(count >= 1, "permutation set size must be at least 1");
  PermutationSet set{kind, length, seed, kind == SetKind::b ? block_len : 0, {}};
  Rng rng(seed);
  std::set<Permutation> seen;
  auto push_unique = [&](Permutation p) {
    if (seen.insert(p).second) set.perms.push_back(std::move(p));
  };
  const std::uint64_t all = factorial_capped(length, 1ULL << 62);

  switch (kind) {
    case SetKind::r: {
      require_available(all, count);
      while (set.size() < count) push_unique(random_permutation(length, rng));
      break;
    }
    case SetKind::g: {
      require_available(all, count);
      push_unique(Permutation::identity(length));
      while (set.size() < count) push_unique(random_permutation(length, rng));
      break;
    }
    case SetKind::f: {
      const Permutation fwd = Permutation::identity(length);
      const Permutation rev = Permutation::reverse(length);
      std::vector<Permutation> pool{fwd, rev};
      for (int cut = 1; cut < length; ++cut) {
        for (const auto* base : {&fwd, &rev}) {
          std::vector<int> m(base->map().begin() + cut, base->map().end());
          m.insert(m.end(), base->map().begin(), base->map().begin() + cut);
          pool.emplace_back(std::move(m));
        }
      }
      std::set<Permutation> distinct(pool.begin(), pool.end());
      require_available(distinct.size(), count);
      for (auto& p : pool) {
        if (set.size() == count) break;
        push_unique(std::move(p));
      }
      break;
    }
    case SetKind::b: {
      require(block_len >= 1, "block length must be positive");
      const int blocks = (length + block_len - 1) / block_len;
      const std::vector<int> fwd = Permutation::identity(length).map();
      const std::vector<int> rev = Permutation::reverse(length).map();
      const std::uint64_t arrangements = factorial_capped(blocks, 1ULL << 40);
      constexpr std::uint64_t kEnumerateLimit = 1 << 20;
      if (2 * arrangements <= kEnumerateLimit) {
        std::vector<Permutation> pool;
        for (const auto* base : {&fwd, &rev}) {
          std::vector<int> order(static_cast<std::size_t>(blocks));
          std::iota(order.begin(), order.end(), 0);
          do {
            pool.push_back(block_restricted(*base, block_len, order));
          } while (std::next_permutation(order.begin(), order.end()));
        }
        std::set<Permutation> distinct(pool.begin(), pool.end());
        pool.assign(distinct.begin(), distinct.end());
        require_available(pool.size(), count);
        rng.shuffle(std::span<Permutation>(pool));
        pool.resize(static_cast<std::size_t>(count));
        for (auto& p : pool) push_unique(std::move(p));
      } else {
        while (set.size() < count) {
          std::vector<int> order(static_cast<std::size_t>(blocks));
          std::iota(order.begin(), order.end(), 0);
          rng.shuffle(std::span<int>(order));
          push_unique(block_restricted(rng.bernoulli(0.5) ? rev : fwd, block_len, order));
        }
      }
      break;
    }
    case SetKind::explicit_list:
      fail(ErrorCode::invalid_argument, "explicit permutation sets are built with explicit_set");
  }
  return set;
}

PermutationSet explicit_set(std::vector<Permutation> perms) {
  require(!perms.empty(), "permutation set is empty");
  PermutationSet set{SetKind::explicit_list, perms.front().size(), 0, 0, std::move(perms)};
  set.validate();
  return set;
}

}  // namespace unravel
