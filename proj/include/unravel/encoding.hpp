#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unravel/permutation.hpp"
#include "unravel/taskgen.hpp"

namespace unravel {

// One decoder stream per row: BOS, input tokens, SEP, permuted targets, EOS.
// Prod inputs are written as a-digits SEP b-digits. The model consumes every
// token but the final EOS; position t is trained to predict token t+1.
struct EncodedBatch {
  int rows = 0;
  int seq_len = 0;       // model input length L'
  int target_start = 0;  // input position of the first target token
  int target_len = 0;    // L
  std::vector<int> tokens;              // [rows * seq_len]
  std::vector<int> targets;             // [rows * seq_len], -1 when unsupervised
  std::vector<std::uint8_t> loss_mask;  // [rows * seq_len]
  std::vector<int> perm_ids;            // [rows]
  std::vector<int> source_targets;      // [rows * L], forward-order target ids

  int token(int row, int pos) const { return tokens[static_cast<std::size_t>(row * seq_len + pos)]; }
  std::size_t mask_count() const;
};

// BOS, x (with a SEP between Prod operands), SEP.
std::vector<int> encode_prefix(const TaskSpec& task, std::span<const int> x, const Vocabulary& vocab);
int prefix_len(const TaskSpec& task);
int model_seq_len(const TaskSpec& task);  // prefix + L

struct RowRef {
  std::size_t example = 0;
  int perm = 0;  // index into the permutation list
};

EncodedBatch encode_rows(const Dataset& ds, std::span<const RowRef> rows,
                         std::span<const Permutation> perms, const Vocabulary& vocab);

EncodedBatch encode_batch(std::span<const Example> examples, const TaskSpec& task,
                          const Permutation& perm, const Vocabulary& vocab);

// The (permuted) target values carried by a row.
std::vector<int> decode_targets(const EncodedBatch& batch, int row, const Vocabulary& vocab);

}  // namespace unravel
