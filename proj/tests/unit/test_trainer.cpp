#include <cmath>
#include <set>

#include "doctest.h"
#include "support/generators.hpp"
#include "unravel/error.hpp"
#include "unravel/optimizer.hpp"
#include "unravel/soft_perm.hpp"
#include "unravel/trainer.hpp"

using namespace unravel;

namespace {

ModelConfig small_model(int vocab) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_emb = 16;
  c.d_ffn = 32;
  c.max_seq_len = 16;
  c.vocab_size = vocab;
  return c;
}

TrainConfig quick(int epochs, int batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.lr_init = 3e-3;
  t.validation_rows = 0;
  return t;
}

}  // namespace

TEST_CASE("linear decay schedule") {
  CHECK(lr_at(0, 10, 1e-3) == doctest::Approx(1e-3));
  CHECK(lr_at(5, 10, 1e-3) == doctest::Approx(5e-4));
  CHECK(lr_at(10, 10, 1e-3) == 0.0);
  CHECK_THROWS_AS(lr_at(11, 10, 1e-3), Error);
  CHECK_THROWS_AS(lr_at(-1, 10, 1e-3), Error);
  CHECK_THROWS_AS(lr_at(0, 0, 1e-3), Error);
}

TEST_CASE("AdamW matches a hand rollout on a scalar quadratic") {
  // f(w) = 0.5 * a * (w - c)^2
  const double a = 3.0, c = 1.5;
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(cfg, 1);
  double w = -2.0;
  double ref = -2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double lr = lr_at(t - 1, 100, 0.05);
    const double g = a * (w - c);
    opt.step<double>(std::span<double>(&w, 1), std::span<const double>(&g, 1), lr);

    const double gr = a * (ref - c);
    ref -= lr * cfg.weight_decay * ref;
    m = cfg.beta1 * m + (1 - cfg.beta1) * gr;
    v = cfg.beta2 * v + (1 - cfg.beta2) * gr * gr;
    const double mh = m / (1 - std::pow(cfg.beta1, t));
    const double vh = v / (1 - std::pow(cfg.beta2, t));
    ref -= lr * mh / (std::sqrt(vh) + cfg.eps);
    CHECK(std::abs(w - ref) <= 1e-10);
  }
  CHECK(opt.steps() == 100);
}

TEST_CASE("AdamW skips decay on tensors not flagged for it") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  std::vector<TensorInfo> tensors{{"w", 0, 1, true}, {"b", 1, 1, false}};
  AdamW opt(cfg, tensors, 2);
  std::vector<double> p{1.0, 1.0};
  const std::vector<double> g{0.0, 0.0};
  opt.step<double>(p, g, 0.1);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == 1.0);
}

TEST_CASE("subsample arithmetic and mixed rows") {
  CHECK(subsample_count(100, 3) == 34);
  CHECK(subsample_count(96, 32) == 3);
  CHECK(subsample_count(1, 5) == 1);
  CHECK_THROWS_AS(subsample_count(5, 0), Error);

  const auto full = mixed_rows(10, 3, std::nullopt, 1);
  CHECK(full.size() == 30);
  std::set<std::pair<std::size_t, int>> pairs;
  for (const auto& r : full) pairs.insert({r.example, r.perm});
  CHECK(pairs.size() == 30);

  test::Gen g(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = static_cast<std::size_t>(g.range(1, 200));
    const auto T = static_cast<std::size_t>(g.range(1, 40));
    const auto per = subsample_count(m, T);
    const auto rows = mixed_rows(m, T, per, static_cast<std::uint64_t>(trial));
    REQUIRE(rows.size() == per * T);
    // Consecutive chunks walk one shuffle, so every example is used and no
    // example repeats before all have been drawn.
    std::set<std::size_t> used;
    for (std::size_t i = 0; i < std::min(m, rows.size()); ++i) used.insert(rows[i].example);
    CHECK(used.size() == std::min(m, rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].perm == static_cast<int>(i / per));
  }
  CHECK(mixed_rows(50, 4, 13, 9).front().example == mixed_rows(50, 4, 13, 9).front().example);
}

TEST_CASE("training runs ceil(m / batch) steps per epoch and lowers the loss") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 100, 1);
  const auto val = gen_dataset(task, 40, 2, Split::validation);
  Model model(small_model(vocab.size()), 3);
  const auto cfg = quick(3, 32);
  const auto report = train(model, ds, vocab, Permutation::identity(4), cfg, &val);
  CHECK(report.planned_steps == 12);
  CHECK(report.steps == 12);
  CHECK(report.step_loss.size() == 12);
  CHECK(report.epoch_train_loss.size() == 3);
  CHECK(report.epoch_val_loss.size() == 3);
  CHECK(report.step_lr.front() == doctest::Approx(cfg.lr_init));
  CHECK(report.step_lr.back() == doctest::Approx(cfg.lr_init / 12));
  CHECK(report.epoch_train_loss.back() < report.epoch_train_loss.front());
  CHECK_FALSE(report.aborted);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto task = TaskSpec::square19(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 64, 5);
  Model a(small_model(vocab.size()), 3), b(small_model(vocab.size()), 3);
  const auto ra = train(a, ds, vocab, Permutation::reverse(4), quick(2, 16));
  const auto rb = train(b, ds, vocab, Permutation::reverse(4), quick(2, 16));
  CHECK(ra.step_loss == rb.step_loss);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  auto other = quick(2, 16);
  other.seed = 43;
  Model c(small_model(vocab.size()), 3);
  CHECK(train(c, ds, vocab, Permutation::reverse(4), other).step_loss != ra.step_loss);
}

TEST_CASE("mixed training with one permutation equals plain training") {
  const auto task = TaskSpec::relu(5);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 50, 7);
  const Permutation perm(std::vector<int>{4, 2, 0, 1, 3});
  Model a(small_model(vocab.size()), 3), b(small_model(vocab.size()), 3);
  const auto ra = train(a, ds, vocab, perm, quick(2, 16));
  const Permutation one[] = {perm};
  const auto rb = train_mixed(b, ds, vocab, one, quick(2, 16));
  CHECK(ra.step_loss == rb.step_loss);
  REQUIRE(rb.perm_loss.size() == 1);
}

TEST_CASE("mixed training reports a loss per permutation") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 60, 8);
  const auto set = make_set(SetKind::r, 4, 6, 1);
  auto cfg = quick(1, 16);
  cfg.subsample_per_perm = subsample_count(ds.size(), 6);
  Model m(small_model(vocab.size()), 3);
  const auto report = train_mixed(m, ds, vocab, set.perms, cfg);
  CHECK(report.planned_steps == 4);
  REQUIRE(report.perm_loss.size() == 6);
  for (double l : report.perm_loss) CHECK(l > 0.0);
}

TEST_CASE("training rejects bad inputs") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 10, 1);
  Model m(small_model(vocab.size()), 3);
  CHECK_THROWS_AS(train(m, ds, vocab, Permutation::identity(5), quick(1, 4)), Error);
  auto bad = quick(1, 4);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(m, ds, vocab, Permutation::identity(4), bad), Error);
  Model tiny(small_model(5), 3);
  CHECK_THROWS_AS(train(tiny, ds, vocab, Permutation::identity(4), quick(1, 4)), Error);
}

TEST_CASE("eval_loss averages per-row losses") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 37, 1);
  Model m(small_model(vocab.size()), 3);
  const auto rows = eval_row_losses(m, ds, vocab, Permutation::identity(4), 0, 8);
  REQUIRE(rows.size() == 37);
  double mean = 0.0;
  for (double r : rows) mean += r / 37.0;
  CHECK(eval_loss(m, ds, vocab, Permutation::identity(4), 0, 8) == doctest::Approx(mean).epsilon(1e-6));
  CHECK(eval_row_losses(m, ds, vocab, Permutation::identity(4), 10).size() == 10);
}

TEST_CASE("row softmax and Sinkhorn normalization") {
  test::Gen g(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int L = g.range(2, 8);
    SoftPermState rs(L, SoftNorm::row_softmax);
    SoftPermState sk(L, SoftNorm::sinkhorn, 50);
    for (auto& z : rs.logits()) z = g.real(-2.0, 2.0);
    sk.logits() = rs.logits();
    CHECK(rs.row_error() <= 1e-12);
    CHECK(sk.row_error() <= 1e-12);
    CHECK(sk.column_error() <= 1e-3);
    for (double h : rs.row_entropies()) {
      CHECK(h >= 0.0);
      CHECK(h <= std::log(L) + 1e-12);
    }
  }
  SoftPermState d(4, SoftNorm::row_softmax);
  d.init_diagonal(50.0);
  const auto m = d.realize();
  for (int k = 0; k < 4; ++k) CHECK(m[k * 4 + k] == doctest::Approx(1.0));
}

TEST_CASE("soft normalization backward matches finite differences") {
  for (auto norm : {SoftNorm::row_softmax, SoftNorm::sinkhorn}) {
    test::Gen g(norm == SoftNorm::sinkhorn ? 41 : 42);
    const int L = 5;
    SoftPermState s(L, norm, 7);
    for (auto& z : s.logits()) z = g.real(-1.0, 1.0);
    std::vector<double> upstream(L * L);
    for (auto& u : upstream) u = g.real(-1.0, 1.0);
    auto objective = [&]() {
      const auto m = s.realize();
      double f = 0.0;
      for (int i = 0; i < L * L; ++i) f += upstream[i] * m[i];
      return f;
    };
    const auto analytic = s.backward(upstream);
    for (int i = 0; i < L * L; ++i) {
      const double saved = s.logits()[i];
      s.logits()[i] = saved + 1e-6;
      const double up = objective();
      s.logits()[i] = saved - 1e-6;
      const double down = objective();
      s.logits()[i] = saved;
      CHECK(analytic[i] == doctest::Approx((up - down) / 2e-6).epsilon(1e-6).scale(1.0));
    }
  }
}

TEST_CASE("a frozen identity soft matrix reproduces hard training") {
  const auto task = TaskSpec::square19(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 48, 4);
  Model a(small_model(vocab.size()), 3), b(small_model(vocab.size()), 3);
  const auto cfg = quick(2, 16);
  const auto hard = train(a, ds, vocab, Permutation::identity(4), cfg);
  SoftPermConfig soft;
  std::vector<double> eye(16, 0.0);
  for (int k = 0; k < 4; ++k) eye[k * 4 + k] = 1.0;
  soft.fixed_matrix = eye;
  const auto res = train_soft_perm(b, ds, vocab, cfg, soft);
  REQUIRE(res.report.step_loss.size() == hard.step_loss.size());
  for (std::size_t i = 0; i < hard.step_loss.size(); ++i) {
    CHECK(res.report.step_loss[i] == doctest::Approx(hard.step_loss[i]).epsilon(1e-6));
  }
  CHECK(res.matrix == eye);
}

TEST_CASE("soft training updates the logits and stays normalized") {
  const auto task = TaskSpec::relu(4);
  const auto vocab = task_vocab(task);
  const auto ds = gen_dataset(task, 48, 4);
  for (auto mode : {SoftMode::joint, SoftMode::alternating}) {
    Model m(small_model(vocab.size()), 3);
    SoftPermConfig soft;
    soft.mode = mode;
    soft.norm = SoftNorm::sinkhorn;
    const auto res = train_soft_perm(m, ds, vocab, quick(1, 16), soft);
    CHECK(res.report.steps == 3);
    SoftPermState init(4, SoftNorm::sinkhorn);
    init.init_diagonal(soft.init_diagonal);
    CHECK(res.matrix != init.realize());
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) sum += res.matrix[i * 4 + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(parse_soft_mode("alternating") == SoftMode::alternating);
  CHECK(parse_soft_norm("sinkhorn") == SoftNorm::sinkhorn);
  CHECK_THROWS_AS(parse_soft_mode("other"), Error);
}
