#include "unravel/soft_perm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "unravel/error.hpp"
#include "unravel/rng.hpp"

namespace unravel {

std::string_view to_string(SoftNorm norm) noexcept {
  return norm == SoftNorm::row_softmax ? "row_softmax" : "sinkhorn";
}

std::string_view to_string(SoftMode mode) noexcept {
  return mode == SoftMode::joint ? "joint" : "alternating";
}

SoftMode parse_soft_mode(std::string_view name) {
  if (name == "joint") return SoftMode::joint;
  if (name == "alternating") return SoftMode::alternating;
  fail(ErrorCode::invalid_argument, "unknown soft-permutation mode: " + std::string(name));
}

SoftNorm parse_soft_norm(std::string_view name) {
  if (name == "row_softmax" || name == "softmax") return SoftNorm::row_softmax;
  if (name == "sinkhorn") return SoftNorm::sinkhorn;
  fail(ErrorCode::invalid_argument, "unknown soft-permutation normalization: " + std::string(name));
}

SoftPermState::SoftPermState(int length, SoftNorm norm, int sinkhorn_iters)
    : length_(length), norm_(norm), iters_(sinkhorn_iters),
      logits_(static_cast<std::size_t>(length) * static_cast<std::size_t>(length), 0.0) {
  require(length >= 1, "soft permutation length must be positive");
  require(sinkhorn_iters >= 1, "sinkhorn_iters must be positive");
}

void SoftPermState::init_diagonal(double scale) {
  std::fill(logits_.begin(), logits_.end(), 0.0);
  for (int k = 0; k < length_; ++k) logits_[static_cast<std::size_t>(k * length_ + k)] = scale;
}

namespace {

void normalize_rows(std::vector<double>& m, int n) {
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += m[static_cast<std::size_t>(i * n + j)];
    for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i * n + j)] /= sum;
  }
}

void normalize_cols(std::vector<double>& m, int n) {
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += m[static_cast<std::size_t>(i * n + j)];
    for (int i = 0; i < n; ++i) m[static_cast<std::size_t>(i * n + j)] /= sum;
  }
}

// out = m / rowsum(m); returns d m given d out.
std::vector<double> rows_backward(const std::vector<double>& out, const std::vector<double>& in,
                                  const std::vector<double>& dout, int n) {
  std::vector<double> din(dout.size());
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    double dot = 0.0;
    for (int j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      sum += in[idx];
      dot += dout[idx] * out[idx];
    }
    for (int j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      din[idx] = (dout[idx] - dot) / sum;
    }
  }
  return din;
}

std::vector<double> cols_backward(const std::vector<double>& out, const std::vector<double>& in,
                                  const std::vector<double>& dout, int n) {
  std::vector<double> din(dout.size());
  for (int j = 0; j < n; ++j) {
    double sum = 0.0;
    double dot = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      sum += in[idx];
      dot += dout[idx] * out[idx];
    }
    for (int i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      din[idx] = (dout[idx] - dot) / sum;
    }
  }
  return din;
}

std::vector<double> exp_rows_shifted(const std::vector<double>& logits, int n) {
  std::vector<double> m(logits.size());
  for (int i = 0; i < n; ++i) {
    double mx = logits[static_cast<std::size_t>(i * n)];
    for (int j = 1; j < n; ++j) mx = std::max(mx, logits[static_cast<std::size_t>(i * n + j)]);
    for (int j = 0; j < n; ++j) {
      const auto idx = static_cast<std::size_t>(i * n + j);
      m[idx] = std::exp(logits[idx] - mx);
    }
  }
  return m;
}

}  // namespace

// Row softmax, then for Sinkhorn `iters` rounds of column and row
// normalization (the final matrix is exactly row-stochastic).
std::vector<double> SoftPermState::realize() const {
  const int n = length_;
  std::vector<double> m = exp_rows_shifted(logits_, n);
  normalize_rows(m, n);
  if (norm_ == SoftNorm::sinkhorn) {
    for (int it = 0; it < iters_; ++it) {
      normalize_cols(m, n);
      normalize_rows(m, n);
    }
  }
  return m;
}

std::vector<double> SoftPermState::backward(const std::vector<double>& d_matrix) const {
  const int n = length_;
  require(d_matrix.size() == logits_.size(), "soft gradient shape mismatch");
  // Replay the forward pass keeping every intermediate.
  std::vector<std::vector<double>> stages;
  stages.push_back(exp_rows_shifted(logits_, n));
  std::vector<double> m = stages.back();
  normalize_rows(m, n);
  stages.push_back(m);
  if (norm_ == SoftNorm::sinkhorn) {
    for (int it = 0; it < iters_; ++it) {
      normalize_cols(m, n);
      stages.push_back(m);
      normalize_rows(m, n);
      stages.push_back(m);
    }
  }
  std::vector<double> d = d_matrix;
  for (std::size_t s = stages.size() - 1; s >= 1; --s) {
    // Odd stages are row normalizations, even ones column normalizations.
    const bool row_stage = s == 1 || s % 2 == 1;
    d = row_stage ? rows_backward(stages[s], stages[s - 1], d, n) : cols_backward(stages[s], stages[s - 1], d, n);
  }
  // d exp(z) / dz = exp(z); the per-row shift does not change the gradient.
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= stages[0][i];
  return d;
}

double SoftPermState::row_error() const {
  const auto m = realize();
  double worst = 0.0;
  for (int i = 0; i < length_; ++i) {
    double sum = 0.0;
    for (int j = 0; j < length_; ++j) sum += m[static_cast<std::size_t>(i * length_ + j)];
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

double SoftPermState::column_error() const {
  const auto m = realize();
  double worst = 0.0;
  for (int j = 0; j < length_; ++j) {
    double sum = 0.0;
    for (int i = 0; i < length_; ++i) sum += m[static_cast<std::size_t>(i * length_ + j)];
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

std::vector<double> SoftPermState::row_entropies() const {
  const auto m = realize();
  std::vector<double> out(static_cast<std::size_t>(length_), 0.0);
  for (int i = 0; i < length_; ++i) {
    for (int j = 0; j < length_; ++j) {
      const double a = m[static_cast<std::size_t>(i * length_ + j)];
      if (a > 0.0) out[static_cast<std::size_t>(i)] -= a * std::log(a);
    }
  }
  return out;
}

void SoftPermConfig::validate() const {
  require(sinkhorn_iters >= 1, "sinkhorn_iters must be positive");
  require(sinkhorn_tolerance > 0.0, "sinkhorn_tolerance must be positive");
  require(logits_lr > 0.0, "logits_lr must be positive");
  require(entropy_penalty >= 0.0, "entropy_penalty must be non-negative");
}

SoftTrainResult train_soft_perm(Model& model, const Dataset& train_set, const Vocabulary& vocab,
                                const TrainConfig& config, const SoftPermConfig& soft) {
  config.validate();
  soft.validate();
  require(train_set.size() >= 1, "empty dataset");
  const int L = train_set.task.target_len;
  const auto LL = static_cast<std::size_t>(L) * static_cast<std::size_t>(L);
  if (soft.fixed_matrix) require(soft.fixed_matrix->size() == LL, "fixed soft matrix must be L x L");

  SoftTrainResult result{TrainReport{}, SoftPermState(L, soft.norm, soft.sinkhorn_iters), {}, {}};
  result.state.init_diagonal(soft.init_diagonal);
  const auto start = std::chrono::steady_clock::now();

  std::vector<RowRef> rows(train_set.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {i, 0};
  const Permutation perms[] = {Permutation::identity(L)};

  TrainReport& report = result.report;
  const auto batches_per_epoch = static_cast<std::int64_t>(
      (rows.size() + static_cast<std::size_t>(config.batch_size) - 1) / static_cast<std::size_t>(config.batch_size));
  report.planned_steps = batches_per_epoch * config.epochs;
  AdamW opt(config.adamw(), model.tensors(), model.num_params());
  AdamWConfig logit_cfg = config.adamw();
  logit_cfg.weight_decay = 0.0;
  AdamW logit_opt(logit_cfg, LL);
  bool warned = false;
  std::int64_t step = 0;
  std::vector<float> weights(LL);

  auto realize = [&]() {
    const std::vector<double> m = soft.fixed_matrix ? *soft.fixed_matrix : result.state.realize();
    for (std::size_t i = 0; i < LL; ++i) weights[i] = static_cast<float>(m[i]);
    if (!soft.fixed_matrix && soft.norm == SoftNorm::sinkhorn && !warned &&
        result.state.column_error() > soft.sinkhorn_tolerance) {
      warned = true;
      result.warnings.push_back("sinkhorn did not reach tolerance within " + std::to_string(soft.sinkhorn_iters) +
                                " iterations at step " + std::to_string(step));
    }
    return m;
  };

  // Gradient of weight * mean row entropy of the realized matrix.
  auto entropy_grad = [&](const std::vector<double>& m, std::vector<double>& d) {
    if (soft.entropy_penalty == 0.0) return;
    const double w = soft.entropy_penalty / L;
    for (std::size_t i = 0; i < LL; ++i) {
      if (m[i] > 0.0) d[i] += -w * (std::log(m[i]) + 1.0);
    }
  };

  auto logits_step = [&](const std::vector<double>& m, const std::vector<double>& d_weights, double lr_scale) {
    if (soft.fixed_matrix) return;
    std::vector<double> d = d_weights;
    entropy_grad(m, d);
    const std::vector<double> dl = result.state.backward(d);
    logit_opt.step<double>(std::span<double>(result.state.logits()), std::span<const double>(dl),
                           soft.logits_lr * lr_scale);
  };

  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(epoch) + 1);
      rng.shuffle(std::span<RowRef>(rows));
      double epoch_sum = 0.0;
      for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
        const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(config.batch_size);
        const std::size_t hi = std::min(rows.size(), lo + static_cast<std::size_t>(config.batch_size));
        const EncodedBatch batch =
            encode_rows(train_set, std::span<const RowRef>(rows.data() + lo, hi - lo), perms, vocab);
        ForwardOptions opts;
        opts.dropout_seed = splitmix64(config.seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(step + 1)));
        const double lr = lr_at(step, report.planned_steps, config.lr_init);
        const double lr_scale = lr / config.lr_init;

        std::vector<double> m = realize();
        const ForwardResult fr = model.forward(batch, Mode::train, opts, std::span<const float>(weights));
        model.backward();
        std::vector<double> d_weights(model.soft_grad().begin(), model.soft_grad().end());
        opt.step<float>(model.params(), model.grads(), lr);
        if (soft.mode == SoftMode::joint) {
          logits_step(m, d_weights, lr_scale);
        } else {
          // Stage 2: logits only, on the attention entropy.
          m = realize();
          ForwardOptions entropy_opts = opts;
          entropy_opts.ce_weight = 0.0;
          entropy_opts.entropy_weight = 1.0;
          model.forward(batch, Mode::train, entropy_opts, std::span<const float>(weights));
          model.backward();
          d_weights.assign(model.soft_grad().begin(), model.soft_grad().end());
          logits_step(m, d_weights, lr_scale);
        }
        report.step_loss.push_back(fr.loss);
        report.step_lr.push_back(lr);
        epoch_sum += fr.loss;
        ++step;
        report.steps = step;
      }
      report.epoch_train_loss.push_back(epoch_sum / static_cast<double>(batches_per_epoch));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::numeric_overflow) throw;
    report.aborted = true;
    report.abort_reason = e.what();
  }
  result.matrix = soft.fixed_matrix ? *soft.fixed_matrix : result.state.realize();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace unravel
