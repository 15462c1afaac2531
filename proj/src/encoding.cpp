#include "unravel/encoding.hpp"

#include <algorithm>

#include "unravel/error.hpp"

namespace unravel {

std::size_t EncodedBatch::mask_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

int prefix_len(const TaskSpec& task) {
  return task.input_len() + (task.kind == TaskKind::prod ? 3 : 2);
}

int model_seq_len(const TaskSpec& task) { return prefix_len(task) + task.target_len; }

std::vector<int> encode_prefix(const TaskSpec& task, std::span<const int> x, const Vocabulary& vocab) {
  require(static_cast<int>(x.size()) == task.input_len(), "input has the wrong length for its task");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(prefix_len(task)));
  out.push_back(Vocabulary::bos);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (task.kind == TaskKind::prod && static_cast<int>(i) == task.operand_digits) {
      out.push_back(Vocabulary::sep);
    }
    out.push_back(vocab.id_of(x[i]));
  }
  out.push_back(Vocabulary::sep);
  return out;
}

namespace {

EncodedBatch make_empty(const TaskSpec& task, int rows) {
  EncodedBatch b;
  b.rows = rows;
  b.seq_len = model_seq_len(task);
  b.target_start = prefix_len(task);
  b.target_len = task.target_len;
  const auto n = static_cast<std::size_t>(rows * b.seq_len);
  b.tokens.assign(n, Vocabulary::pad);
  b.targets.assign(n, -1);
  b.loss_mask.assign(n, 0);
  b.perm_ids.assign(static_cast<std::size_t>(rows), 0);
  b.source_targets.assign(static_cast<std::size_t>(rows * task.target_len), 0);
  return b;
}

void fill_row(EncodedBatch& b, int row, const TaskSpec& task, const Example& ex,
              const Permutation& perm, int perm_id, const Vocabulary& vocab) {
  require(static_cast<int>(ex.y.size()) == task.target_len && perm.size() == task.target_len,
          "example and permutation must have the task's target length");
  const std::vector<int> prefix = encode_prefix(task, ex.x, vocab);
  const std::vector<int> permuted = perm.apply(ex.y);
  std::vector<int> stream = prefix;
  for (int v : permuted) stream.push_back(vocab.id_of(v));
  stream.push_back(Vocabulary::eos);

  const auto base = static_cast<std::size_t>(row * b.seq_len);
  for (int t = 0; t < b.seq_len; ++t) {
    b.tokens[base + static_cast<std::size_t>(t)] = stream[static_cast<std::size_t>(t)];
  }
  for (int t = b.target_start - 1; t < b.seq_len; ++t) {
    b.targets[base + static_cast<std::size_t>(t)] = stream[static_cast<std::size_t>(t + 1)];
    b.loss_mask[base + static_cast<std::size_t>(t)] = 1;
  }
  b.perm_ids[static_cast<std::size_t>(row)] = perm_id;
  for (int k = 0; k < task.target_len; ++k) {
    b.source_targets[static_cast<std::size_t>(row * task.target_len + k)] =
        vocab.id_of(ex.y[static_cast<std::size_t>(k)]);
  }
}

}  // namespace

EncodedBatch encode_rows(const Dataset& ds, std::span<const RowRef> rows,
                         std::span<const Permutation> perms, const Vocabulary& vocab) {
  EncodedBatch b = make_empty(ds.task, static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].example < ds.size(), "row refers to a missing example");
    require(rows[r].perm >= 0 && rows[r].perm < static_cast<int>(perms.size()),
            "row refers to a missing permutation");
    fill_row(b, static_cast<int>(r), ds.task, ds.examples[rows[r].example],
             perms[static_cast<std::size_t>(rows[r].perm)], rows[r].perm, vocab);
  }
  return b;
}

EncodedBatch encode_batch(std::span<const Example> examples, const TaskSpec& task,
                          const Permutation& perm, const Vocabulary& vocab) {
  EncodedBatch b = make_empty(task, static_cast<int>(examples.size()));
  for (std::size_t r = 0; r < examples.size(); ++r) {
    fill_row(b, static_cast<int>(r), task, examples[r], perm, 0, vocab);
  }
  return b;
}

std::vector<int> decode_targets(const EncodedBatch& batch, int row, const Vocabulary& vocab) {
  std::vector<int> out;
  for (int k = 0; k < batch.target_len; ++k) {
    const auto v = vocab.value_of(batch.token(row, batch.target_start + k));
    require(v.has_value(), "target segment holds a special token");
    out.push_back(*v);
  }
  return out;
}

}  // namespace unravel
