#include "unravel/sparsity.hpp"

#include <algorithm>
#include <cmath>

#include "unravel/error.hpp"

namespace unravel {

double map_sparsity(std::span<const double> map, int seq_len) {
  require(seq_len >= 1 && map.size() == static_cast<std::size_t>(seq_len) * static_cast<std::size_t>(seq_len),
          "attention map shape mismatch");
  double s = 0.0;
  for (int i = 0; i < seq_len; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < seq_len; ++j) {
      const double a = map[static_cast<std::size_t>(i * seq_len + j)];
      if (a < -1e-12 || a > 1.0 + 1e-9 || !std::isfinite(a)) fail(ErrorCode::invalid_argument, "invalid attention capture");
      row_sum += a;
      if (a > 0.0) s -= a * std::log(a);
    }
    if (std::abs(row_sum - 1.0) > 1e-4) fail(ErrorCode::invalid_argument, "invalid attention capture");
  }
  return s / seq_len;
}

AttentionStats attention_sparsity(const AttentionCapture& capture) {
  require(capture.layers >= 1 && capture.heads >= 1, "invalid attention capture");
  AttentionStats stats;
  stats.layers = capture.layers;
  stats.heads = capture.heads;
  stats.rows = 1;
  for (int l = 0; l < capture.layers; ++l) {
    for (int h = 0; h < capture.heads; ++h) stats.per_head.push_back(map_sparsity(capture.map(l, h), capture.seq_len));
  }
  double sum = 0.0;
  for (double v : stats.per_head) sum += v;
  stats.aggregate = sum / static_cast<double>(stats.per_head.size());
  return stats;
}

AttentionStats attention_stats(Model& model, const Dataset& ds, const Vocabulary& vocab, const Permutation& perm,
                               const SparsityOptions& options) {
  require(options.rows >= 1, "sparsity needs at least one row");
  const std::size_t n = std::min(options.rows, ds.size());
  require(n >= 1, "empty dataset");
  const int layers = model.config().n_layers;
  const int heads = model.config().n_heads;
  if (options.layer) require(*options.layer >= 0 && *options.layer < layers, "layer filter out of range");
  if (options.head) require(*options.head >= 0 && *options.head < heads, "head filter out of range");

  const EncodedBatch batch =
      encode_batch(std::span<const Example>(ds.examples.data(), n), ds.task, perm, vocab);
  ForwardOptions fo;
  fo.capture_attention = true;
  const ForwardResult fr = model.forward(batch, Mode::eval, fo);

  AttentionStats stats;
  stats.layers = layers;
  stats.heads = heads;
  stats.rows = n;
  stats.source = options.source;
  stats.per_head.assign(static_cast<std::size_t>(layers * heads), 0.0);
  for (const auto& cap : fr.attention) {
    const AttentionStats one = attention_sparsity(cap);
    for (std::size_t i = 0; i < one.per_head.size(); ++i) stats.per_head[i] += one.per_head[i];
  }
  for (double& v : stats.per_head) v /= static_cast<double>(n);
  double sum = 0.0;
  int count = 0;
  for (int l = 0; l < layers; ++l) {
    if (options.layer && *options.layer != l) continue;
    for (int h = 0; h < heads; ++h) {
      if (options.head && *options.head != h) continue;
      sum += stats.per_head[static_cast<std::size_t>(l * heads + h)];
      ++count;
    }
  }
  stats.aggregate = sum / count;
  return stats;
}

}  // namespace unravel
