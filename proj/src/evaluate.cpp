#include "unravel/evaluate.hpp"

#include <algorithm>

#include "unravel/error.hpp"
#include "unravel/rng.hpp"

namespace unravel {

Decoded generate_batch(Model& model, const TaskSpec& task, std::span<const std::vector<int>> inputs,
                       const Vocabulary& vocab) {
  const int L = task.target_len;
  const int P = prefix_len(task);
  require(P + L <= model.config().max_seq_len, "decode length exceeds max_seq_len");
  const int rows = static_cast<int>(inputs.size());
  Decoded out;
  out.values.assign(inputs.size(), {});
  out.valid.assign(inputs.size(), 1);
  if (rows == 0) return out;

  // Every row shares the prefix length, so the batch advances in lockstep;
  // rows that already stopped keep decoding but their output is ignored.
  std::vector<int> tokens;
  tokens.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(P + L));
  for (const auto& x : inputs) {
    const auto prefix = encode_prefix(task, x, vocab);
    require(static_cast<int>(prefix.size()) == P, "input length mismatch");
    tokens.insert(tokens.end(), prefix.begin(), prefix.end());
  }
  std::vector<std::uint8_t> done(inputs.size(), 0);
  for (int step = 0; step < L; ++step) {
    const int T = P + step;
    const std::vector<int> next = model.next_tokens(tokens, rows, T);
    std::vector<int> grown;
    grown.reserve(static_cast<std::size_t>(rows) * static_cast<std::size_t>(T + 1));
    for (int r = 0; r < rows; ++r) {
      const auto base = tokens.begin() + static_cast<std::ptrdiff_t>(r) * T;
      grown.insert(grown.end(), base, base + T);
      const int tok = next[static_cast<std::size_t>(r)];
      grown.push_back(tok);
      const auto ri = static_cast<std::size_t>(r);
      if (done[ri]) continue;
      if (tok == Vocabulary::eos) {
        done[ri] = 1;
      } else if (const auto v = vocab.value_of(tok); v.has_value()) {
        out.values[ri].push_back(*v);
      } else {
        done[ri] = 1;
        out.valid[ri] = 0;
      }
    }
    tokens = std::move(grown);
  }
  return out;
}

std::vector<int> generate(Model& model, const TaskSpec& task, std::span<const int> x, const Vocabulary& vocab) {
  const std::vector<int> one[] = {std::vector<int>(x.begin(), x.end())};
  return generate_batch(model, task, one, vocab).values.front();
}

EvalReport eval_success(Model& model, const Dataset& eval_set, const Vocabulary& vocab, const Permutation& perm,
                        const EvalOptions& options) {
  require(options.batch_size >= 1, "batch_size must be at least 1");
  require(perm.size() == eval_set.task.target_len, "permutation length mismatch");
  const std::size_t n = options.max_rows == 0 ? eval_set.size() : std::min(options.max_rows, eval_set.size());
  EvalReport report;
  report.total = n;
  report.passed.assign(n, 0);
  std::vector<std::vector<int>> inputs;
  for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(options.batch_size)) {
    const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(options.batch_size));
    inputs.clear();
    for (std::size_t i = lo; i < hi; ++i) inputs.push_back(eval_set.examples[i].x);
    const Decoded dec = generate_batch(model, eval_set.task, inputs, vocab);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto target = perm.apply(eval_set.examples[i].y);
      const bool ok = dec.valid[i - lo] && dec.values[i - lo] == target;
      report.passed[i] = ok ? 1 : 0;
      report.passes += ok ? 1 : 0;
      if (options.keep_transcripts) report.transcripts.push_back(dec.values[i - lo]);
    }
  }
  report.success = n == 0 ? 0.0 : static_cast<double>(report.passes) / static_cast<double>(n);
  return report;
}

double retrain_success(const Permutation& perm, const RetrainSetup& setup) {
  require(setup.train != nullptr && setup.eval != nullptr && setup.vocab != nullptr, "retrain setup incomplete");
  Model model(fit_model_config(setup.model, setup.train->task, *setup.vocab), setup.model_seed);
  const TrainReport report = train(model, *setup.train, *setup.vocab, perm, setup.train_config);
  if (report.aborted) return 0.0;
  return eval_success(model, *setup.eval, *setup.vocab, perm, setup.eval_options).success;
}

std::vector<RankPoint> rank_retrain_sweep(const LossProfile& profile, const RetrainFn& retrain,
                                          std::span<const std::size_t> ranks) {
  std::vector<std::size_t> wanted(ranks.begin(), ranks.end());
  if (wanted.empty()) {
    for (std::size_t r = 1; r <= profile.size(); ++r) wanted.push_back(r);
  }
  std::vector<RankPoint> out;
  for (std::size_t r : wanted) {
    require(r >= 1 && r <= profile.size(), "rank outside the profile");
    const ProfileEntry& e = profile.entries[r - 1];
    out.push_back({r, e.id, e.perm, e.loss, retrain(e.perm)});
  }
  return out;
}

DigitGrid prod_digit_grid(Model& model, const TaskSpec& task, const Vocabulary& vocab, const Permutation& perm,
                          const DigitGridOptions& options) {
  require(task.kind == TaskKind::prod, "digit grid needs a Prod task");
  require(options.samples >= 1, "samples per cell must be positive");
  const int n = task.operand_digits;
  const int max_digits = options.max_digits == 0 ? n : options.max_digits;
  require(max_digits >= 1, "max_digits must be positive");
  if (max_digits > n) fail(ErrorCode::out_of_range, "digit count exceeds the trained operand width");

  DigitGrid grid;
  grid.max_digits = max_digits;
  grid.samples = options.samples;
  grid.success.assign(static_cast<std::size_t>(max_digits) * static_cast<std::size_t>(max_digits), 0.0);
  auto draw = [&](Rng& rng, int digits) {
    std::vector<int> a(static_cast<std::size_t>(n), 0);
    if (options.force_zero) return a;
    for (int d = 0; d < digits; ++d) {
      const int lo = (d == 0 && digits > 1) ? 1 : 0;
      a[static_cast<std::size_t>(n - digits + d)] = static_cast<int>(rng.uniform_int(lo, 9));
    }
    return a;
  };
  for (int i = 1; i <= max_digits; ++i) {
    for (int j = 1; j <= max_digits; ++j) {
      Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(i * 64 + j));
      Dataset cell;
      cell.task = task;
      cell.split = Split::eval;
      cell.seed = options.seed;
      for (std::size_t s = 0; s < options.samples; ++s) {
        const auto a = draw(rng, i);
        const auto b = draw(rng, j);
        Example ex;
        ex.x = a;
        ex.x.insert(ex.x.end(), b.begin(), b.end());
        ex.y = gen_prod(a, b);
        cell.examples.push_back(std::move(ex));
      }
      grid.success[static_cast<std::size_t>((i - 1) * max_digits + (j - 1))] =
          eval_success(model, cell, vocab, perm).success;
    }
  }
  return grid;
}

}  // namespace unravel
