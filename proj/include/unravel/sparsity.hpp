#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unravel/model.hpp"

namespace unravel {

struct AttentionStats {
  int layers = 0;
  int heads = 0;
  std::size_t rows = 0;
  std::vector<double> per_head;  // [layer * heads + head], mean over rows
  double aggregate = 0.0;        // mean over rows, layers and heads
  std::string source;
};

// -(1/L') * sum_ij a_ij ln a_ij of one attention map.
double map_sparsity(std::span<const double> map, int seq_len);

// Sparsity of every (layer, head) map of one capture. Rows must be normalized
// within 1e-4.
AttentionStats attention_sparsity(const AttentionCapture& capture);

struct SparsityOptions {
  std::size_t rows = 64;
  std::optional<int> layer;  // restrict the aggregate to one layer
  std::optional<int> head;   // and/or one head
  std::string source;
};

// Mean sparsity over the first `rows` rows of a dataset encoded under `perm`.
AttentionStats attention_stats(Model& model, const Dataset& ds, const Vocabulary& vocab, const Permutation& perm,
                               const SparsityOptions& options = {});

}  // namespace unravel
