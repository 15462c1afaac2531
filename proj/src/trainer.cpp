#include "unravel/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "unravel/error.hpp"
#include "unravel/rng.hpp"

namespace unravel {

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.lr_init = 5e-5;
  c.batch_size = 128;
  return c;
}

AdamWConfig TrainConfig::adamw() const {
  AdamWConfig a;
  a.beta1 = beta1;
  a.beta2 = beta2;
  a.weight_decay = weight_decay;
  return a;
}

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(lr_init > 0.0, "lr_init must be positive");
  adamw().validate();
  require(!subsample_per_perm || *subsample_per_perm >= 1, "subsample_per_perm must be at least 1");
}

std::size_t subsample_count(std::size_t examples, std::size_t perms) {
  require(perms >= 1, "empty permutation set");
  return (examples + perms - 1) / perms;
}

std::vector<RowRef> mixed_rows(std::size_t examples, std::size_t perms, std::optional<std::size_t> per_perm,
                               std::uint64_t seed) {
  require(perms >= 1, "empty permutation set");
  require(examples >= 1, "empty dataset");
  std::vector<RowRef> rows;
  if (!per_perm) {
    rows.reserve(examples * perms);
    for (std::size_t p = 0; p < perms; ++p) {
      for (std::size_t e = 0; e < examples; ++e) rows.push_back({e, static_cast<int>(p)});
    }
    return rows;
  }
  std::vector<std::size_t> order(examples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, 0x5eb5a3b1eULL);
  rng.shuffle(std::span<std::size_t>(order));
  rows.reserve(*per_perm * perms);
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < perms; ++p) {
    for (std::size_t i = 0; i < *per_perm; ++i) {
      rows.push_back({order[cursor % examples], static_cast<int>(p)});
      ++cursor;
    }
  }
  return rows;
}

namespace {

TrainReport train_rows(Model& model, const Dataset& ds, const Vocabulary& vocab, std::span<const Permutation> perms,
                       std::vector<RowRef> rows, const TrainConfig& config, const Dataset* validation) {
  config.validate();
  require(!perms.empty(), "empty permutation set");
  for (const auto& p : perms) require(p.size() == ds.task.target_len, "permutation length mismatch");
  require(!rows.empty(), "empty dataset");
  require(model_seq_len(ds.task) <= model.config().max_seq_len, "examples longer than max_seq_len");
  require(vocab.size() <= model.config().vocab_size, "vocabulary larger than the model vocabulary");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  const auto batches_per_epoch =
      static_cast<std::int64_t>((rows.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                                static_cast<std::size_t>(config.batch_size));
  report.planned_steps = batches_per_epoch * config.epochs;
  AdamW opt(config.adamw(), model.tensors(), model.num_params());
  std::vector<double> perm_sum(perms.size(), 0.0);
  std::vector<std::size_t> perm_n(perms.size(), 0);
  std::int64_t step = 0;
  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(epoch) + 1);
      rng.shuffle(std::span<RowRef>(rows));
      std::fill(perm_sum.begin(), perm_sum.end(), 0.0);
      std::fill(perm_n.begin(), perm_n.end(), 0);
      double epoch_sum = 0.0;
      for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
        const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(config.batch_size);
        const std::size_t hi = std::min(rows.size(), lo + static_cast<std::size_t>(config.batch_size));
        const EncodedBatch batch =
            encode_rows(ds, std::span<const RowRef>(rows.data() + lo, hi - lo), perms, vocab);
        ForwardOptions opts;
        opts.dropout_seed = splitmix64(config.seed ^ (0xD1B54A32D192ED03ULL * static_cast<std::uint64_t>(step + 1)));
        const ForwardResult fr = model.forward(batch, Mode::train, opts);
        model.backward();
        const double lr = lr_at(step, report.planned_steps, config.lr_init);
        opt.step<float>(model.params(), model.grads(), lr);
        report.step_loss.push_back(fr.loss);
        report.step_lr.push_back(lr);
        epoch_sum += fr.loss;
        for (int r = 0; r < batch.rows; ++r) {
          const auto p = static_cast<std::size_t>(batch.perm_ids[static_cast<std::size_t>(r)]);
          perm_sum[p] += fr.per_row_loss[static_cast<std::size_t>(r)];
          perm_n[p] += 1;
        }
        ++step;
        report.steps = step;
      }
      report.epoch_train_loss.push_back(epoch_sum / static_cast<double>(batches_per_epoch));
      if (validation != nullptr) {
        report.epoch_val_loss.push_back(eval_loss(model, *validation, vocab, perms[0], config.validation_rows));
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::numeric_overflow) throw;
    report.aborted = true;
    report.abort_reason = e.what();
  }
  report.perm_loss.resize(perms.size(), 0.0);
  for (std::size_t p = 0; p < perms.size(); ++p) {
    report.perm_loss[p] = perm_n[p] > 0 ? perm_sum[p] / static_cast<double>(perm_n[p]) : 0.0;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace

TrainReport train(Model& model, const Dataset& train_set, const Vocabulary& vocab, const Permutation& perm,
                  const TrainConfig& config, const Dataset* validation) {
  std::vector<RowRef> rows(train_set.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = {i, 0};
  const Permutation perms[] = {perm};
  return train_rows(model, train_set, vocab, perms, std::move(rows), config, validation);
}

TrainReport train_mixed(Model& model, const Dataset& train_set, const Vocabulary& vocab,
                        std::span<const Permutation> perms, const TrainConfig& config, const Dataset* validation) {
  require(!perms.empty(), "empty permutation set");
  require(train_set.size() >= 1, "empty dataset");
  auto rows = mixed_rows(train_set.size(), perms.size(), config.subsample_per_perm, config.seed);
  return train_rows(model, train_set, vocab, perms, std::move(rows), config, validation);
}

std::vector<double> eval_row_losses(Model& model, const Dataset& ds, const Vocabulary& vocab, const Permutation& perm,
                                    std::size_t max_rows, int batch_size) {
  require(batch_size >= 1, "batch_size must be at least 1");
  const std::size_t n = max_rows == 0 ? ds.size() : std::min(max_rows, ds.size());
  require(n >= 1, "empty dataset");
  std::vector<double> out;
  out.reserve(n);
  const Permutation perms[] = {perm};
  std::vector<RowRef> rows;
  for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch_size));
    rows.clear();
    for (std::size_t i = lo; i < hi; ++i) rows.push_back({i, 0});
    const EncodedBatch batch = encode_rows(ds, rows, perms, vocab);
    const ForwardResult fr = model.forward(batch, Mode::eval);
    out.insert(out.end(), fr.per_row_loss.begin(), fr.per_row_loss.end());
  }
  return out;
}

double eval_loss(Model& model, const Dataset& ds, const Vocabulary& vocab, const Permutation& perm,
                 std::size_t max_rows, int batch_size) {
  const auto losses = eval_row_losses(model, ds, vocab, perm, max_rows, batch_size);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

}  // namespace unravel
