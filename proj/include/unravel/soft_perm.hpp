#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unravel/trainer.hpp"

namespace unravel {

enum class SoftNorm { row_softmax, sinkhorn };
enum class SoftMode { joint, alternating };

std::string_view to_string(SoftNorm norm) noexcept;
std::string_view to_string(SoftMode mode) noexcept;
SoftMode parse_soft_mode(std::string_view name);
SoftNorm parse_soft_norm(std::string_view name);

// Learnable relaxation of an L x L permutation matrix. Row k of the realized
// matrix is the mixture over forward positions feeding output slot k.
class SoftPermState {
 public:
  SoftPermState(int length, SoftNorm norm, int sinkhorn_iters = 20);

  int length() const { return length_; }
  SoftNorm norm() const { return norm_; }
  int sinkhorn_iters() const { return iters_; }
  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }

  // logits = scale * I
  void init_diagonal(double scale);

  // Realized matrix [L * L], row-major.
  std::vector<double> realize() const;
  // Gradient of a scalar objective w.r.t. the logits given its gradient
  // w.r.t. the realized matrix.
  std::vector<double> backward(const std::vector<double>& d_matrix) const;

  // Largest |row sum - 1| and |column sum - 1| of the realized matrix.
  double row_error() const;
  double column_error() const;
  // Shannon entropy (nats) of each row of the realized matrix.
  std::vector<double> row_entropies() const;

 private:
  int length_;
  SoftNorm norm_;
  int iters_;
  std::vector<double> logits_;
};

struct SoftPermConfig {
  SoftMode mode = SoftMode::joint;
  SoftNorm norm = SoftNorm::row_softmax;
  int sinkhorn_iters = 20;
  double sinkhorn_tolerance = 1e-3;
  double init_diagonal = 4.0;
  double logits_lr = 0.05;
  // Adds weight * mean row entropy of the realized matrix to the objective
  // of the logits.
  double entropy_penalty = 0.0;
  // When set, the realized matrix is fixed to this [L * L] matrix.
  std::optional<std::vector<double>> fixed_matrix;

  void validate() const;
};

struct SoftTrainResult {
  TrainReport report;
  SoftPermState state;
  std::vector<double> matrix;  // final realized matrix
  std::vector<std::string> warnings;
};

// Joint mode: every step updates the model and the logits on the mixed-target
// loss. Alternating mode: every step updates the model on the loss, then the
// logits on the mean attention entropy.
SoftTrainResult train_soft_perm(Model& model, const Dataset& train_set, const Vocabulary& vocab,
                                const TrainConfig& config, const SoftPermConfig& soft);

}  // namespace unravel
