#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "unravel/model.hpp"
#include "unravel/profile.hpp"

namespace unravel {

// Greedy decoding of up to L target values after the prefix of each input.
// A row stops early on EOS; any other special token also ends the row and is
// reported as a failure through `valid`.
struct Decoded {
  std::vector<std::vector<int>> values;
  std::vector<std::uint8_t> valid;  // 0 when a non-value token was emitted
};

Decoded generate_batch(Model& model, const TaskSpec& task, std::span<const std::vector<int>> inputs,
                       const Vocabulary& vocab);
std::vector<int> generate(Model& model, const TaskSpec& task, std::span<const int> x, const Vocabulary& vocab);

struct EvalReport {
  double success = 0.0;
  std::size_t passes = 0;
  std::size_t total = 0;
  std::vector<std::uint8_t> passed;
  std::vector<std::vector<int>> transcripts;  // decoded values, when requested
};

struct EvalOptions {
  std::size_t max_rows = 0;  // 0: all
  int batch_size = 256;
  bool keep_transcripts = false;
};

// Exact-match rate of greedy decodes against apply(perm, y).
EvalReport eval_success(Model& model, const Dataset& eval_set, const Vocabulary& vocab, const Permutation& perm,
                        const EvalOptions& options = {});

// Trains a fresh model on one order and reports its success rate.
struct RetrainSetup {
  const Dataset* train = nullptr;
  const Dataset* eval = nullptr;
  const Vocabulary* vocab = nullptr;
  ModelConfig model;  // vocab_size and max_seq_len are filled from the data when 0
  TrainConfig train_config;
  std::uint64_t model_seed = 42;
  EvalOptions eval_options;
};

double retrain_success(const Permutation& perm, const RetrainSetup& setup);

using RetrainFn = std::function<double(const Permutation&)>;

struct RankPoint {
  std::size_t rank = 0;  // 1-based
  int id = 0;
  Permutation perm;
  double loss = 0.0;
  double success = 0.0;
};

// Retrains on the permutations at `ranks` (1-based; empty means all) of a
// profile and records their success.
std::vector<RankPoint> rank_retrain_sweep(const LossProfile& profile, const RetrainFn& retrain,
                                          std::span<const std::size_t> ranks = {});

struct DigitGrid {
  int max_digits = 0;
  std::size_t samples = 0;
  std::vector<double> success;  // [i - 1][j - 1] for i-digit times j-digit operands

  double at(int i, int j) const {
    return success[static_cast<std::size_t>((i - 1) * max_digits + (j - 1))];
  }
};

struct DigitGridOptions {
  int max_digits = 0;  // 0: the trained operand width
  std::size_t samples = 100;
  std::uint64_t seed = 123;
  bool force_zero = false;  // operands fixed to zero
};

// Success per operand-digit pair on a Prod-trained model. Operands with fewer
// digits than the trained width are zero-padded on the left.
DigitGrid prod_digit_grid(Model& model, const TaskSpec& task, const Vocabulary& vocab, const Permutation& perm,
                          const DigitGridOptions& options);

}  // namespace unravel
