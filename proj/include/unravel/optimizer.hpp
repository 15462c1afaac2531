#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "unravel/model.hpp"

namespace unravel {

// lr_init * (1 - step / total_steps)
double lr_at(std::int64_t step, std::int64_t total_steps, double lr_init);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// Decoupled weight decay; moments are kept in double.
class AdamW {
 public:
  // Decay applies to every parameter.
  AdamW(const AdamWConfig& config, std::size_t num_params);
  // Decay applies only to tensors flagged `decay`.
  AdamW(const AdamWConfig& config, const std::vector<TensorInfo>& tensors, std::size_t num_params);

  template <typename S>
  void step(std::span<S> params, std::span<const S> grads, double lr);

  std::int64_t steps() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<double> m_, v_;
  std::vector<std::uint8_t> decay_;
  std::int64_t t_ = 0;
};

}  // namespace unravel
