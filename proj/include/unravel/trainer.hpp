#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unravel/encoding.hpp"
#include "unravel/model.hpp"
#include "unravel/optimizer.hpp"

namespace unravel {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  double lr_init = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::uint64_t seed = 42;
  // Mixed training: examples drawn per permutation. Unset means the full
  // union (every example under every permutation).
  std::optional<std::size_t> subsample_per_perm;
  // Rows used for the per-epoch validation loss, 0 for all.
  std::size_t validation_rows = 512;

  // Batch 128, lr 5e-5, betas (0.9, 0.999).
  static TrainConfig full();
  AdamWConfig adamw() const;
  void validate() const;
};

struct TrainReport {
  std::vector<double> step_loss;
  std::vector<double> step_lr;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_loss;
  // Mean training loss per permutation id over the last epoch (mixed runs).
  std::vector<double> perm_loss;
  std::int64_t planned_steps = 0;
  std::int64_t steps = 0;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  std::string checkpoint;
};

// ceil(m / T)
std::size_t subsample_count(std::size_t examples, std::size_t perms);

// Rows of the mixed dataset: chunk t of a seeded shuffle under permutation t
// when subsampling, otherwise every (example, permutation) pair.
std::vector<RowRef> mixed_rows(std::size_t examples, std::size_t perms, std::optional<std::size_t> per_perm,
                               std::uint64_t seed);

// E epochs of shuffled minibatch AdamW on targets reordered by `perm`.
TrainReport train(Model& model, const Dataset& train_set, const Vocabulary& vocab, const Permutation& perm,
                  const TrainConfig& config, const Dataset* validation = nullptr);

// Training on the union of permuted-target datasets.
TrainReport train_mixed(Model& model, const Dataset& train_set, const Vocabulary& vocab,
                        std::span<const Permutation> perms, const TrainConfig& config,
                        const Dataset* validation = nullptr);

// Eval-mode mean masked loss of `perm` on the first `max_rows` rows (0: all).
double eval_loss(Model& model, const Dataset& ds, const Vocabulary& vocab, const Permutation& perm,
                 std::size_t max_rows = 0, int batch_size = 256);

// Eval-mode per-row losses on the first `max_rows` rows (0: all).
std::vector<double> eval_row_losses(Model& model, const Dataset& ds, const Vocabulary& vocab,
                                    const Permutation& perm, std::size_t max_rows = 0, int batch_size = 256);

}  // namespace unravel
