#include "unravel/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "unravel/error.hpp"
#include "unravel/rng.hpp"

namespace unravel {

ModelConfig ModelConfig::desk(int vocab_size, int max_seq_len) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  return c;
}

ModelConfig ModelConfig::full(int vocab_size, int max_seq_len) {
  ModelConfig c;
  c.n_layers = 6;
  c.n_heads = 1;
  c.d_emb = 512;
  c.d_ffn = 2048;
  c.dropout = 0.1;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  return c;
}

void ModelConfig::validate() const {
  require(n_layers >= 1 && n_heads >= 1 && d_emb >= 1 && d_ffn >= 1, "model dimensions must be positive");
  require(d_emb % n_heads == 0, "d_emb must be divisible by n_heads");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(max_seq_len >= 2, "max_seq_len must be at least 2");
  require(vocab_size >= Vocabulary::num_special + 1, "vocabulary is too small");
}

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<Mat<S>>;
template <typename S>
using CMapM = Eigen::Map<const Mat<S>>;
template <typename S>
using StridedMap = Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using CStridedMap = Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>>;
template <typename S>
using RowVecMap = Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>;
template <typename S>
using CRowVecMap = Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>;

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

template <typename S>
void layer_norm(const S* x, const S* gain, const S* bias, S* out, S* xhat, S* rstd, int n, int c) {
  CMapM<S> X(x, n, c);
  MapM<S> Xh(xhat, n, c);
  MapM<S> O(out, n, c);
  const auto g = CRowVecMap<S>(gain, c).array();
  const auto b = CRowVecMap<S>(bias, c).array();
  for (int i = 0; i < n; ++i) {
    const S mean = X.row(i).mean();
    Xh.row(i).array() = X.row(i).array() - mean;
    const S var = Xh.row(i).squaredNorm() / static_cast<S>(c);
    const S r = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    rstd[i] = r;
    Xh.row(i) *= r;
    O.row(i).array() = Xh.row(i).array() * g + b;
  }
}

// Accumulates into dx, dgain and dbias.
template <typename S>
void layer_norm_backward(const S* dout, const S* xhat, const S* rstd, const S* gain, S* dx, S* dgain,
                         S* dbias, int n, int c) {
  CMapM<S> Dy(dout, n, c);
  CMapM<S> Xh(xhat, n, c);
  MapM<S> Dx(dx, n, c);
  const auto g = CRowVecMap<S>(gain, c).array();
  RowVecMap<S>(dgain, c) += (Dy.array() * Xh.array()).colwise().sum().matrix();
  RowVecMap<S>(dbias, c) += Dy.colwise().sum();
  Eigen::Array<S, 1, Eigen::Dynamic> dxh(c);
  for (int i = 0; i < n; ++i) {
    dxh = Dy.row(i).array() * g;
    const S mean_d = dxh.mean();
    const S mean_dx = (dxh * Xh.row(i).array()).mean();
    Dx.row(i).array() += rstd[i] * (dxh - mean_d - Xh.row(i).array() * mean_dx);
  }
}

// h -> (gelu(h), tanh term); the tanh term is reused by the backward pass.
template <typename S>
void gelu_forward(const S* h, S* g, S* t, std::size_t n) {
  using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> H(h, static_cast<Eigen::Index>(n));
  Eigen::Map<Arr> G(g, static_cast<Eigen::Index>(n));
  Eigen::Map<Arr> Tt(t, static_cast<Eigen::Index>(n));
  Tt = (static_cast<S>(kGeluK) * (H + static_cast<S>(kGeluC) * H.cube())).tanh();
  G = S(0.5) * H * (S(1) + Tt);
}

// d *= gelu'(h)
template <typename S>
void gelu_backward(const S* h, const S* t, S* d, std::size_t n) {
  using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> H(h, static_cast<Eigen::Index>(n));
  Eigen::Map<const Arr> Tt(t, static_cast<Eigen::Index>(n));
  Eigen::Map<Arr> D(d, static_cast<Eigen::Index>(n));
  D *= S(0.5) * (S(1) + Tt) + S(0.5) * H * (S(1) - Tt.square()) * static_cast<S>(kGeluK) *
                                  (S(1) + static_cast<S>(3.0 * kGeluC) * H.square());
}

template <typename S>
void add_bias_rows(S* data, const S* bias, int n, int c) {
  MapM<S> m(data, n, c);
  m.rowwise() += CRowVecMap<S>(bias, c);
}

template <typename S>
void accumulate_colsum(const S* data, S* out, int n, int c) {
  RowVecMap<S>(out, c) += CMapM<S>(data, n, c).colwise().sum();
}

}  // namespace

template <typename S>
std::size_t Transformer<S>::add_tensor(const std::string& name, std::size_t size, bool decay) {
  const std::size_t offset = params_.size();
  tensors_.push_back(TensorInfo{name, offset, size, decay});
  params_.resize(offset + size, S(0));
  return offset;
}

template <typename S>
Transformer<S>::Transformer(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  const auto C = static_cast<std::size_t>(config_.d_emb);
  const auto F = static_cast<std::size_t>(config_.d_ffn);
  const auto V = static_cast<std::size_t>(config_.vocab_size);
  const auto T = static_cast<std::size_t>(config_.max_seq_len);

  wte_ = add_tensor("wte", V * C, true);
  wpe_ = add_tensor("wpe", T * C, true);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "h" + std::to_string(l) + ".";
    LayerParams lp{};
    lp.ln1_g = add_tensor(p + "ln1.g", C, false);
    lp.ln1_b = add_tensor(p + "ln1.b", C, false);
    lp.w_qkv = add_tensor(p + "attn.w_qkv", C * 3 * C, true);
    lp.b_qkv = add_tensor(p + "attn.b_qkv", 3 * C, false);
    lp.w_ao = add_tensor(p + "attn.w_proj", C * C, true);
    lp.b_ao = add_tensor(p + "attn.b_proj", C, false);
    lp.ln2_g = add_tensor(p + "ln2.g", C, false);
    lp.ln2_b = add_tensor(p + "ln2.b", C, false);
    lp.w_fc = add_tensor(p + "mlp.w_fc", C * F, true);
    lp.b_fc = add_tensor(p + "mlp.b_fc", F, false);
    lp.w_fp = add_tensor(p + "mlp.w_proj", F * C, true);
    lp.b_fp = add_tensor(p + "mlp.b_proj", C, false);
    layer_params_.push_back(lp);
  }
  lnf_g_ = add_tensor("lnf.g", C, false);
  lnf_b_ = add_tensor("lnf.b", C, false);
  w_head_ = add_tensor("head.w", C * V, true);

  // normal(0, 0.02) weights, zero biases, unit layer-norm gains
  Rng rng(init_seed);
  for (const auto& t : tensors_) {
    const bool is_gain = t.name.ends_with(".g");
    for (std::size_t i = 0; i < t.size; ++i) {
      S& v = params_[t.offset + i];
      if (t.decay) {
        v = static_cast<S>(rng.normal(0.0, 0.02));
      } else {
        v = is_gain ? S(1) : S(0);
      }
    }
  }
  grads_.assign(params_.size(), S(0));
}

namespace {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

// Element `index` of tensor `tensor_id` is kept iff hash(seed, id, index) >= p.
template <typename S>
void Transformer<S>::dropout_mask(int tensor_id, std::size_t n, AlignedVec<S>& mask) const {
  const auto threshold = static_cast<std::uint64_t>(config_.dropout * 0x1.0p53);
  const S keep = static_cast<S>(1.0 / (1.0 - config_.dropout));
  const std::uint64_t base = mix64(dropout_seed_ + static_cast<std::uint64_t>(tensor_id) * 0xD6E8FEB86659FD93ULL);
  mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = (mix64(base ^ i) >> 11) < threshold ? S(0) : keep;
}

template <typename S>
void Transformer<S>::run(std::span<const int> tokens, int rows, int seq_len, Mode mode,
                         std::uint64_t dropout_seed, const EncodedBatch* batch,
                         std::span<const S> soft_weights) {
  const int C = config_.d_emb;
  const int F = config_.d_ffn;
  const int H = config_.n_heads;
  const int hd = config_.head_dim();
  const int V = config_.vocab_size;
  const int T = seq_len;
  const int N = rows * T;
  require(rows >= 1 && T >= 1, "empty batch");
  require(T <= config_.max_seq_len, "sequence longer than max_seq_len");
  require(static_cast<int>(tokens.size()) == N, "token buffer does not match batch shape");
  for (int tok : tokens) require(tok >= 0 && tok < V, "token id outside the model vocabulary");

  has_forward_ = false;
  rows_ = rows;
  seq_len_ = T;
  train_ = mode == Mode::train && config_.dropout > 0.0;
  dropout_seed_ = dropout_seed;
  tokens_.assign(tokens.begin(), tokens.end());

  soft_weights_.clear();
  soft_sources_.clear();
  soft_len_ = 0;
  if (!soft_weights.empty()) {
    require(batch != nullptr, "soft mixing needs an encoded batch");
    soft_len_ = batch->target_len;
    soft_start_ = batch->target_start;
    require(static_cast<int>(soft_weights.size()) == soft_len_ * soft_len_,
            "soft permutation must be L x L");
    soft_weights_.assign(soft_weights.begin(), soft_weights.end());
    soft_sources_ = batch->source_targets;
  }

  const S* P = params_.data();
  cache_.resize(static_cast<std::size_t>(config_.n_layers));
  const auto NC = static_cast<std::size_t>(N) * C;

  // Embeddings.
  auto& x0 = cache_[0].x_in;
  x0.assign(NC, S(0));
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < T; ++t) {
      const std::size_t n = static_cast<std::size_t>(r) * T + t;
      S* out = x0.data() + n * C;
      const S* pos = P + wpe_ + static_cast<std::size_t>(t) * C;
      const int slot = t - soft_start_;
      if (soft_len_ > 0 && slot >= 0 && slot < soft_len_) {
        for (int j = 0; j < soft_len_; ++j) {
          const S w = soft_weights_[static_cast<std::size_t>(slot * soft_len_ + j)];
          const int src = soft_sources_[static_cast<std::size_t>(r * soft_len_ + j)];
          const S* e = P + wte_ + static_cast<std::size_t>(src) * C;
          for (int c = 0; c < C; ++c) out[c] += w * e[c];
        }
      } else {
        const S* e = P + wte_ + static_cast<std::size_t>(tokens_[n]) * C;
        for (int c = 0; c < C; ++c) out[c] = e[c];
      }
      for (int c = 0; c < C; ++c) out[c] += pos[c];
    }
  }
  if (train_) {
    dropout_mask(0, NC, emb_mask_);
    for (std::size_t i = 0; i < NC; ++i) x0[i] *= emb_mask_[i];
  }

  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  for (int l = 0; l < config_.n_layers; ++l) {
    const LayerParams& lp = layer_params_[static_cast<std::size_t>(l)];
    LayerCache& lc = cache_[static_cast<std::size_t>(l)];
    AlignedVec<S>& x_next = (l + 1 < config_.n_layers) ? cache_[static_cast<std::size_t>(l + 1)].x_in : x_final_;

    lc.ln1_out.resize(NC);
    lc.ln1_xhat.resize(NC);
    lc.ln1_rstd.resize(static_cast<std::size_t>(N));
    layer_norm(lc.x_in.data(), P + lp.ln1_g, P + lp.ln1_b, lc.ln1_out.data(), lc.ln1_xhat.data(),
               lc.ln1_rstd.data(), N, C);

    lc.qkv.resize(NC * 3);
    MapM<S>(lc.qkv.data(), N, 3 * C).noalias() =
        CMapM<S>(lc.ln1_out.data(), N, C) * CMapM<S>(P + lp.w_qkv, C, 3 * C);
    add_bias_rows(lc.qkv.data(), P + lp.b_qkv, N, 3 * C);

    lc.att.assign(static_cast<std::size_t>(rows) * H * T * T, S(0));
    lc.att_y.resize(NC);
    Mat<S> scores(T, T);
    for (int r = 0; r < rows; ++r) {
      const S* base = lc.qkv.data() + static_cast<std::size_t>(r) * T * 3 * C;
      for (int h = 0; h < H; ++h) {
        CStridedMap<S> q(base + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        CStridedMap<S> k(base + C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        CStridedMap<S> v(base + 2 * C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        scores.noalias() = q * k.transpose();
        S* a = lc.att.data() + (static_cast<std::size_t>(r) * H + h) * T * T;
        for (int i = 0; i < T; ++i) {
          S mx = -std::numeric_limits<S>::infinity();
          for (int j = 0; j <= i; ++j) mx = std::max(mx, scores(i, j) * scale);
          double sum = 0.0;
          for (int j = 0; j <= i; ++j) {
            const S e = std::exp(scores(i, j) * scale - mx);
            a[i * T + j] = e;
            sum += e;
          }
          const S inv = static_cast<S>(1.0 / sum);
          for (int j = 0; j <= i; ++j) a[i * T + j] *= inv;
        }
        StridedMap<S> y(lc.att_y.data() + static_cast<std::size_t>(r) * T * C + h * hd, T, hd,
                        Eigen::OuterStride<>(C));
        y.noalias() = CMapM<S>(a, T, T) * v;
      }
    }

    // x_mid = x_in + dropout(att_y W_ao + b_ao), stored in x_next for now.
    x_next.resize(NC);
    MapM<S>(x_next.data(), N, C).noalias() =
        CMapM<S>(lc.att_y.data(), N, C) * CMapM<S>(P + lp.w_ao, C, C);
    add_bias_rows(x_next.data(), P + lp.b_ao, N, C);
    if (train_) {
      dropout_mask(1 + 2 * l, NC, lc.attn_mask);
      for (std::size_t i = 0; i < NC; ++i) x_next[i] *= lc.attn_mask[i];
    }
    for (std::size_t i = 0; i < NC; ++i) x_next[i] += lc.x_in[i];

    lc.ln2_out.resize(NC);
    lc.ln2_xhat.resize(NC);
    lc.ln2_rstd.resize(static_cast<std::size_t>(N));
    layer_norm(x_next.data(), P + lp.ln2_g, P + lp.ln2_b, lc.ln2_out.data(), lc.ln2_xhat.data(),
               lc.ln2_rstd.data(), N, C);

    const auto NF = static_cast<std::size_t>(N) * F;
    lc.fc_h.resize(NF);
    lc.fc_g.resize(NF);
    MapM<S>(lc.fc_h.data(), N, F).noalias() =
        CMapM<S>(lc.ln2_out.data(), N, C) * CMapM<S>(P + lp.w_fc, C, F);
    add_bias_rows(lc.fc_h.data(), P + lp.b_fc, N, F);
    lc.fc_t.resize(NF);
    gelu_forward(lc.fc_h.data(), lc.fc_g.data(), lc.fc_t.data(), NF);

    Mat<S> mlp = CMapM<S>(lc.fc_g.data(), N, F) * CMapM<S>(P + lp.w_fp, F, C);
    mlp.rowwise() += CRowVecMap<S>(P + lp.b_fp, C);
    S* m = mlp.data();
    if (train_) {
      dropout_mask(2 + 2 * l, NC, lc.mlp_mask);
      for (std::size_t i = 0; i < NC; ++i) m[i] *= lc.mlp_mask[i];
    }
    for (std::size_t i = 0; i < NC; ++i) x_next[i] += m[i];
  }

  lnf_out_.resize(NC);
  lnf_xhat_.resize(NC);
  lnf_rstd_.resize(static_cast<std::size_t>(N));
  layer_norm(x_final_.data(), P + lnf_g_, P + lnf_b_, lnf_out_.data(), lnf_xhat_.data(), lnf_rstd_.data(),
             N, C);

  // Logits only where they are consumed.
  const int n_sel = static_cast<int>(selected_.size());
  Mat<S> sel(n_sel, C);
  for (int s = 0; s < n_sel; ++s) {
    sel.row(s) = CRowVecMap<S>(lnf_out_.data() + static_cast<std::size_t>(selected_[static_cast<std::size_t>(s)]) * C, C);
  }
  probs_.resize(static_cast<std::size_t>(n_sel) * V);
  log_probs_.resize(static_cast<std::size_t>(n_sel) * V);
  MapM<S> logits(probs_.data(), n_sel, V);
  logits.noalias() = sel * CMapM<S>(P + w_head_, C, V);
  MapM<S> lprobs(log_probs_.data(), n_sel, V);
  for (int s = 0; s < n_sel; ++s) {
    const S mx = logits.row(s).maxCoeff();
    if (!std::isfinite(static_cast<double>(mx))) fail(ErrorCode::numeric_overflow, "numeric overflow");
    lprobs.row(s).array() = logits.row(s).array() - mx;
    const S log_sum = std::log(lprobs.row(s).array().exp().sum());
    lprobs.row(s).array() -= log_sum;
    logits.row(s).array() = lprobs.row(s).array().exp();
  }
}

template <typename S>
ForwardResult Transformer<S>::forward(const EncodedBatch& batch, Mode mode, const ForwardOptions& options,
                                      std::span<const S> soft_weights) {
  const int T = batch.seq_len;
  const int rows = batch.rows;
  selected_.clear();
  for (int n = 0; n < rows * T; ++n) {
    if (batch.loss_mask[static_cast<std::size_t>(n)]) selected_.push_back(n);
  }
  run(batch.tokens, rows, T, mode, options.dropout_seed, &batch, soft_weights);

  const int V = config_.vocab_size;
  const int n_sel = static_cast<int>(selected_.size());
  hard_target_.assign(static_cast<std::size_t>(n_sel), -1);
  soft_slot_.assign(static_cast<std::size_t>(n_sel), -1);
  ForwardResult result;
  result.per_row_loss.assign(static_cast<std::size_t>(rows), 0.0);
  std::vector<int> row_count(static_cast<std::size_t>(rows), 0);
  double total = 0.0;
  for (int s = 0; s < n_sel; ++s) {
    const int n = selected_[static_cast<std::size_t>(s)];
    const int r = n / T;
    const int t = n % T;
    const S* lp = log_probs_.data() + static_cast<std::size_t>(s) * V;
    double ce = 0.0;
    const int slot = t + 1 - soft_start_;
    if (soft_len_ > 0 && slot >= 0 && slot < soft_len_) {
      soft_slot_[static_cast<std::size_t>(s)] = slot;
      for (int j = 0; j < soft_len_; ++j) {
        const S w = soft_weights_[static_cast<std::size_t>(slot * soft_len_ + j)];
        if (w != S(0)) ce -= static_cast<double>(w) * lp[soft_sources_[static_cast<std::size_t>(r * soft_len_ + j)]];
      }
    } else {
      const int target = batch.targets[static_cast<std::size_t>(n)];
      require(target >= 0 && target < V, "masked position has no valid target");
      hard_target_[static_cast<std::size_t>(s)] = target;
      ce = -static_cast<double>(lp[target]);
    }
    total += ce;
    result.per_row_loss[static_cast<std::size_t>(r)] += ce;
    row_count[static_cast<std::size_t>(r)] += 1;
  }
  for (int r = 0; r < rows; ++r) {
    if (row_count[static_cast<std::size_t>(r)] > 0) {
      result.per_row_loss[static_cast<std::size_t>(r)] /= row_count[static_cast<std::size_t>(r)];
    }
  }
  supervised_count_ = static_cast<std::size_t>(n_sel);
  result.loss = n_sel > 0 ? total / n_sel : 0.0;
  if (!std::isfinite(result.loss)) fail(ErrorCode::numeric_overflow, "numeric overflow");

  const int H = config_.n_heads;
  if (options.capture_attention || options.entropy_weight != 0.0) {
    double entropy = 0.0;
    for (int l = 0; l < config_.n_layers; ++l) {
      const auto& att = cache_[static_cast<std::size_t>(l)].att;
      for (std::size_t i = 0; i < att.size(); ++i) {
        const double a = att[i];
        if (a > 0.0) entropy -= a * std::log(a);
      }
    }
    result.attention_entropy = entropy / (static_cast<double>(T) * rows * H * config_.n_layers);
  }
  if (options.capture_attention) {
    result.attention.resize(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      AttentionCapture& cap = result.attention[static_cast<std::size_t>(r)];
      cap.layers = config_.n_layers;
      cap.heads = H;
      cap.seq_len = T;
      cap.weights.resize(static_cast<std::size_t>(config_.n_layers) * H * T * T);
      for (int l = 0; l < config_.n_layers; ++l) {
        const auto& att = cache_[static_cast<std::size_t>(l)].att;
        for (int h = 0; h < H; ++h) {
          const S* src = att.data() + (static_cast<std::size_t>(r) * H + h) * T * T;
          double* dst = cap.weights.data() + (static_cast<std::size_t>(l) * H + h) * T * T;
          std::copy(src, src + static_cast<std::size_t>(T) * T, dst);
        }
      }
    }
  }
  ce_weight_ = options.ce_weight;
  entropy_weight_ = options.entropy_weight;
  result.objective = ce_weight_ * result.loss + entropy_weight_ * result.attention_entropy;
  has_forward_ = true;
  return result;
}

template <typename S>
void Transformer<S>::backward() {
  if (!has_forward_) fail(ErrorCode::bad_state, "backward called before forward");
  const int C = config_.d_emb;
  const int F = config_.d_ffn;
  const int H = config_.n_heads;
  const int hd = config_.head_dim();
  const int V = config_.vocab_size;
  const int T = seq_len_;
  const int rows = rows_;
  const int N = rows * T;
  const auto NC = static_cast<std::size_t>(N) * C;
  const S* P = params_.data();
  S* G = grads_.data();
  std::fill(grads_.begin(), grads_.end(), S(0));
  soft_grad_.assign(soft_weights_.size(), S(0));

  // Head and soft-target terms.
  const int n_sel = static_cast<int>(selected_.size());
  const double ce_scale = n_sel > 0 ? ce_weight_ / static_cast<double>(supervised_count_) : 0.0;
  Mat<S> dlogits(n_sel, V);
  for (int s = 0; s < n_sel; ++s) {
    const S* p = probs_.data() + static_cast<std::size_t>(s) * V;
    for (int v = 0; v < V; ++v) dlogits(s, v) = p[v];
    const int slot = soft_slot_[static_cast<std::size_t>(s)];
    if (slot >= 0) {
      const int r = selected_[static_cast<std::size_t>(s)] / T;
      const S* lp = log_probs_.data() + static_cast<std::size_t>(s) * V;
      // Rows of a realized matrix sum to one, but the loss is defined for any weights.
      S mass = 0;
      for (int j = 0; j < soft_len_; ++j) mass += soft_weights_[static_cast<std::size_t>(slot * soft_len_ + j)];
      dlogits.row(s) *= mass;
      for (int j = 0; j < soft_len_; ++j) {
        const auto w_index = static_cast<std::size_t>(slot * soft_len_ + j);
        const int src = soft_sources_[static_cast<std::size_t>(r * soft_len_ + j)];
        dlogits(s, src) -= soft_weights_[w_index];
        soft_grad_[w_index] -= static_cast<S>(ce_scale * lp[src]);
      }
    } else {
      dlogits(s, hard_target_[static_cast<std::size_t>(s)]) -= S(1);
    }
  }
  dlogits *= static_cast<S>(ce_scale);

  Mat<S> sel(n_sel, C);
  for (int s = 0; s < n_sel; ++s) {
    sel.row(s) = CRowVecMap<S>(lnf_out_.data() + static_cast<std::size_t>(selected_[static_cast<std::size_t>(s)]) * C, C);
  }
  MapM<S>(G + w_head_, C, V).noalias() += sel.transpose() * dlogits;
  const Mat<S> dsel = dlogits * CMapM<S>(P + w_head_, C, V).transpose();
  AlignedVec<S> dlnf(NC, S(0));
  for (int s = 0; s < n_sel; ++s) {
    RowVecMap<S>(dlnf.data() + static_cast<std::size_t>(selected_[static_cast<std::size_t>(s)]) * C, C) += dsel.row(s);
  }

  AlignedVec<S> dx(NC, S(0));
  layer_norm_backward(dlnf.data(), lnf_xhat_.data(), lnf_rstd_.data(), P + lnf_g_, dx.data(), G + lnf_g_,
                      G + lnf_b_, N, C);

  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  const double entropy_count = static_cast<double>(T) * rows * H * config_.n_layers;
  AlignedVec<S> dmid(NC);
  AlignedVec<S> dbuf(NC);
  AlignedVec<S> dff;
  AlignedVec<S> dqkv;
  Mat<S> dA(T, T);
  Mat<S> dScores(T, T);
  for (int l = config_.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = layer_params_[static_cast<std::size_t>(l)];
    const LayerCache& lc = cache_[static_cast<std::size_t>(l)];

    // x_next = x_mid + dropout(mlp)
    for (std::size_t i = 0; i < NC; ++i) dbuf[i] = train_ ? dx[i] * lc.mlp_mask[i] : dx[i];
    MapM<S>(G + lp.w_fp, F, C).noalias() += CMapM<S>(lc.fc_g.data(), N, F).transpose() * CMapM<S>(dbuf.data(), N, C);
    accumulate_colsum(dbuf.data(), G + lp.b_fp, N, C);
    const auto NF = static_cast<std::size_t>(N) * F;
    dff.resize(NF);
    MapM<S>(dff.data(), N, F).noalias() = CMapM<S>(dbuf.data(), N, C) * CMapM<S>(P + lp.w_fp, F, C).transpose();
    gelu_backward(lc.fc_h.data(), lc.fc_t.data(), dff.data(), NF);
    MapM<S>(G + lp.w_fc, C, F).noalias() += CMapM<S>(lc.ln2_out.data(), N, C).transpose() * CMapM<S>(dff.data(), N, F);
    accumulate_colsum(dff.data(), G + lp.b_fc, N, F);
    MapM<S>(dbuf.data(), N, C).noalias() = CMapM<S>(dff.data(), N, F) * CMapM<S>(P + lp.w_fc, C, F).transpose();
    std::copy(dx.begin(), dx.end(), dmid.begin());
    layer_norm_backward(dbuf.data(), lc.ln2_xhat.data(), lc.ln2_rstd.data(), P + lp.ln2_g, dmid.data(),
                        G + lp.ln2_g, G + lp.ln2_b, N, C);

    // x_mid = x_in + dropout(att_y W_ao + b_ao)
    for (std::size_t i = 0; i < NC; ++i) dbuf[i] = train_ ? dmid[i] * lc.attn_mask[i] : dmid[i];
    MapM<S>(G + lp.w_ao, C, C).noalias() += CMapM<S>(lc.att_y.data(), N, C).transpose() * CMapM<S>(dbuf.data(), N, C);
    accumulate_colsum(dbuf.data(), G + lp.b_ao, N, C);
    AlignedVec<S> datt_y(NC);
    MapM<S>(datt_y.data(), N, C).noalias() = CMapM<S>(dbuf.data(), N, C) * CMapM<S>(P + lp.w_ao, C, C).transpose();

    dqkv.assign(NC * 3, S(0));
    for (int r = 0; r < rows; ++r) {
      const S* base = lc.qkv.data() + static_cast<std::size_t>(r) * T * 3 * C;
      S* dbase = dqkv.data() + static_cast<std::size_t>(r) * T * 3 * C;
      for (int h = 0; h < H; ++h) {
        CStridedMap<S> q(base + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        CStridedMap<S> k(base + C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        CStridedMap<S> v(base + 2 * C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        StridedMap<S> dq(dbase + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        StridedMap<S> dk(dbase + C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        StridedMap<S> dv(dbase + 2 * C + h * hd, T, hd, Eigen::OuterStride<>(3 * C));
        CStridedMap<S> dy(datt_y.data() + static_cast<std::size_t>(r) * T * C + h * hd, T, hd,
                          Eigen::OuterStride<>(C));
        const S* a = lc.att.data() + (static_cast<std::size_t>(r) * H + h) * T * T;
        CMapM<S> A(a, T, T);

        dA.noalias() = dy * v.transpose();
        if (entropy_weight_ != 0.0) {
          const double coef = -entropy_weight_ / entropy_count;
          for (int i = 0; i < T; ++i) {
            for (int j = 0; j <= i; ++j) {
              const double aij = a[i * T + j];
              if (aij > 0.0) dA(i, j) += static_cast<S>(coef * (std::log(aij) + 1.0));
            }
          }
        }
        dv.noalias() = A.transpose() * dy;
        for (int i = 0; i < T; ++i) {
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += static_cast<double>(a[i * T + j]) * dA(i, j);
          for (int j = 0; j < T; ++j) {
            dScores(i, j) = j <= i ? static_cast<S>(a[i * T + j] * (dA(i, j) - dot)) * scale : S(0);
          }
        }
        dq.noalias() = dScores * k;
        dk.noalias() = dScores.transpose() * q;
      }
    }
    MapM<S>(G + lp.w_qkv, C, 3 * C).noalias() +=
        CMapM<S>(lc.ln1_out.data(), N, C).transpose() * CMapM<S>(dqkv.data(), N, 3 * C);
    accumulate_colsum(dqkv.data(), G + lp.b_qkv, N, 3 * C);
    MapM<S>(dbuf.data(), N, C).noalias() =
        CMapM<S>(dqkv.data(), N, 3 * C) * CMapM<S>(P + lp.w_qkv, C, 3 * C).transpose();
    std::copy(dmid.begin(), dmid.end(), dx.begin());
    layer_norm_backward(dbuf.data(), lc.ln1_xhat.data(), lc.ln1_rstd.data(), P + lp.ln1_g, dx.data(),
                        G + lp.ln1_g, G + lp.ln1_b, N, C);
  }

  // Embeddings.
  if (train_) {
    for (std::size_t i = 0; i < NC; ++i) dx[i] *= emb_mask_[i];
  }
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < T; ++t) {
      const std::size_t n = static_cast<std::size_t>(r) * T + t;
      const S* d = dx.data() + n * C;
      S* gpos = G + wpe_ + static_cast<std::size_t>(t) * C;
      for (int c = 0; c < C; ++c) gpos[c] += d[c];
      const int slot = t - soft_start_;
      if (soft_len_ > 0 && slot >= 0 && slot < soft_len_) {
        for (int j = 0; j < soft_len_; ++j) {
          const auto w_index = static_cast<std::size_t>(slot * soft_len_ + j);
          const int src = soft_sources_[static_cast<std::size_t>(r * soft_len_ + j)];
          const S w = soft_weights_[w_index];
          const S* e = P + wte_ + static_cast<std::size_t>(src) * C;
          S* ge = G + wte_ + static_cast<std::size_t>(src) * C;
          double dot = 0.0;
          for (int c = 0; c < C; ++c) {
            dot += static_cast<double>(d[c]) * e[c];
            ge[c] += w * d[c];
          }
          soft_grad_[w_index] += static_cast<S>(dot);
        }
      } else {
        S* ge = G + wte_ + static_cast<std::size_t>(tokens_[n]) * C;
        for (int c = 0; c < C; ++c) ge[c] += d[c];
      }
    }
  }
}

template <typename S>
std::vector<S> Transformer<S>::last_logits(std::span<const int> tokens, int rows, int seq_len) {
  selected_.clear();
  for (int r = 0; r < rows; ++r) selected_.push_back(r * seq_len + seq_len - 1);
  run(tokens, rows, seq_len, Mode::eval, 0, nullptr, {});
  const int V = config_.vocab_size;
  std::vector<S> out(static_cast<std::size_t>(rows) * V);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_probs_[i];
  return out;
}

template <typename S>
std::vector<int> Transformer<S>::next_tokens(std::span<const int> tokens, int rows, int seq_len) {
  const std::vector<S> logits = last_logits(tokens, rows, seq_len);
  const int V = config_.vocab_size;
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const S* row = logits.data() + static_cast<std::size_t>(r) * V;
    out[static_cast<std::size_t>(r)] = static_cast<int>(std::max_element(row, row + V) - row);
  }
  return out;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace unravel
