#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unravel/error.hpp"

namespace unravel {

// A reordering of target positions. map()[k] is the forward-order position
// whose token is emitted at output slot k, so the identity prints as
// [0, 1, ..., L-1] and the reverse order as [L-1, ..., 0].
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> map);

  static Permutation identity(int length);
  static Permutation reverse(int length);

  int size() const { return static_cast<int>(map_.size()); }
  int operator[](int slot) const { return map_[static_cast<std::size_t>(slot)]; }
  const std::vector<int>& map() const { return map_; }

  bool is_identity() const;
  Permutation inverse() const;

  // output[k] = y[map[k]]
  template <typename T>
  std::vector<T> apply(std::span<const T> y) const {
    if (y.size() != map_.size()) fail(ErrorCode::invalid_argument, "permutation length mismatch");
    std::vector<T> out(y.size());
    for (std::size_t k = 0; k < map_.size(); ++k) out[k] = y[static_cast<std::size_t>(map_[k])];
    return out;
  }
  template <typename T>
  std::vector<T> apply(const std::vector<T>& y) const {
    return apply(std::span<const T>(y));
  }

  std::string to_string() const;

  friend auto operator<=>(const Permutation&, const Permutation&) = default;
  friend bool operator==(const Permutation&, const Permutation&) = default;

 private:
  std::vector<int> map_;
};

// apply(compose(p, q), y) == apply(q, apply(p, y)): q reorders the output
// slots of p (right multiplication PQ of permutation matrices).
Permutation compose(const Permutation& p, const Permutation& q);

Permutation parse_permutation(std::string_view text);

struct BlockPartition {
  std::vector<std::pair<int, int>> blocks;  // half-open [start, end), in order

  int length() const { return blocks.empty() ? 0 : blocks.back().second; }
  int count() const { return static_cast<int>(blocks.size()); }
  int block_size(int i) const {
    return blocks[static_cast<std::size_t>(i)].second - blocks[static_cast<std::size_t>(i)].first;
  }
  void validate() const;
};

inline constexpr std::uint64_t kDefaultFactorialCap = 40320;  // 8!

// n! if it does not exceed `cap`, otherwise cap + 1.
std::uint64_t factorial_capped(int n, std::uint64_t cap);

// k near-equal blocks; the first L mod k blocks are one longer.
BlockPartition split_blocks(int length, int count);

// Blocks of exactly `block_len` tokens; the L mod block_len leftover tokens
// form one extra trailing block.
BlockPartition split_fixed(int length, int block_len);

// All k! whole-block rearrangements, lexicographic in the block order.
std::vector<Permutation> block_perms(const BlockPartition& partition,
                                     std::uint64_t cap = kDefaultFactorialCap);

// All l! reorderings inside block i, fixing every position outside it.
// Lexicographic, so the identity comes first.
std::vector<Permutation> intra_block_perms(const BlockPartition& partition, int block_index,
                                           std::uint64_t cap = kDefaultFactorialCap);

// Cyclic rotations of the first `rotated` blocks by r = 0..rotated-1 steps;
// later blocks stay in place.
std::vector<Permutation> block_rotations(const BlockPartition& partition, int rotated);

enum class SetKind { f, r, g, b, explicit_list };

std::string_view to_string(SetKind kind) noexcept;
SetKind parse_set_kind(std::string_view name);

struct PermutationSet {
  SetKind kind = SetKind::explicit_list;
  int length = 0;
  std::uint64_t seed = 0;
  int block_len = 0;
  std::vector<Permutation> perms;  // id = index

  int size() const { return static_cast<int>(perms.size()); }
  // All members are bijections of equal length with no duplicates.
  void validate() const;
};

PermutationSet make_set(SetKind kind, int length, int count, std::uint64_t seed, int block_len = 5);

PermutationSet explicit_set(std::vector<Permutation> perms);

}  // namespace unravel
