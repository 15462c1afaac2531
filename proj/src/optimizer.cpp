#include "unravel/optimizer.hpp"

#include <cmath>

#include "unravel/error.hpp"

namespace unravel {

double lr_at(std::int64_t step, std::int64_t total_steps, double lr_init) {
  require(total_steps > 0, "total_steps must be positive");
  require(step >= 0 && step <= total_steps, "step outside [0, total_steps]");
  return lr_init * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

void AdamWConfig::validate() const {
  require(beta1 > 0.0 && beta1 < 1.0, "beta1 must lie in (0, 1)");
  require(beta2 > 0.0 && beta2 < 1.0, "beta2 must lie in (0, 1)");
  require(eps > 0.0, "eps must be positive");
  require(weight_decay >= 0.0, "weight decay must be non-negative");
}

AdamW::AdamW(const AdamWConfig& config, std::size_t num_params)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0), decay_(num_params, 1) {
  config_.validate();
}

AdamW::AdamW(const AdamWConfig& config, const std::vector<TensorInfo>& tensors, std::size_t num_params)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0), decay_(num_params, 0) {
  config_.validate();
  for (const auto& t : tensors) {
    require(t.offset + t.size <= num_params, "tensor outside the parameter buffer");
    for (std::size_t i = 0; i < t.size; ++i) decay_[t.offset + i] = t.decay ? 1 : 0;
  }
}

template <typename S>
void AdamW::step(std::span<S> params, std::span<const S> grads, double lr) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "optimizer size mismatch");
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double wd = lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double p = params[i];
    if (decay_[i]) p -= wd * p;
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    p -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    params[i] = static_cast<S>(p);
  }
}

template void AdamW::step<float>(std::span<float>, std::span<const float>, double);
template void AdamW::step<double>(std::span<double>, std::span<const double>, double);

}  // namespace unravel
