#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "unravel/encoding.hpp"

namespace unravel {

// 64-byte aligned storage, so vectorized kernels see the same alignment (and
// therefore the same summation order) on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename S>
using AlignedVec = std::vector<S, AlignedAllocator<S>>;

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 1;
  int d_emb = 128;
  int d_ffn = 512;
  double dropout = 0.1;
  int max_seq_len = 64;
  int vocab_size = 0;

  // 2 layers, 1 head, 128/512.
  static ModelConfig desk(int vocab_size, int max_seq_len);
  // 6 layers, 1 head, 512/2048, dropout 0.1.
  static ModelConfig full(int vocab_size, int max_seq_len);

  int head_dim() const { return d_emb / n_heads; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { train, eval };

// Row-stochastic, causally masked attention maps of one decoder stream.
struct AttentionCapture {
  int layers = 0;
  int heads = 0;
  int seq_len = 0;
  std::vector<double> weights;  // [layer][head][i][j]

  double at(int layer, int head, int i, int j) const {
    return weights[((static_cast<std::size_t>(layer) * heads + head) * seq_len + i) * seq_len + j];
  }
  std::span<const double> map(int layer, int head) const {
    const auto n = static_cast<std::size_t>(seq_len) * seq_len;
    return {weights.data() + (static_cast<std::size_t>(layer) * heads + head) * n, n};
  }
};

struct ForwardOptions {
  bool capture_attention = false;
  // objective = ce_weight * loss + entropy_weight * attention_entropy
  double ce_weight = 1.0;
  double entropy_weight = 0.0;
  std::uint64_t dropout_seed = 0;
};

struct ForwardResult {
  double loss = 0.0;               // mean next-token CE over masked positions
  double attention_entropy = 0.0;  // mean sparsity S over rows, layers and heads
  double objective = 0.0;
  std::vector<double> per_row_loss;
  std::vector<AttentionCapture> attention;  // one per row when captured
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // weight decay applies (matrices and embeddings)
};

// GPT-2 style pre-norm decoder with learned positional embeddings, GELU MLP
// and an untied output head. All parameters live in one flat buffer; the
// gradient buffer mirrors its layout.
template <typename S>
class Transformer {
 public:
  Transformer(const ModelConfig& config, std::uint64_t init_seed);

  template <typename U>
  explicit Transformer(const Transformer<U>& other);

  const ModelConfig& config() const { return config_; }
  std::span<S> params() { return params_; }
  std::span<const S> params() const { return params_; }
  std::span<S> grads() { return grads_; }
  std::span<const S> grads() const { return grads_; }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  // Soft-permutation mixing: when `soft_weights` ([L * L], slot-major, row k
  // is the mixture over forward positions for output slot k) is given, every
  // target-slot input embedding and every target-slot supervision becomes the
  // weighted mixture over the row's forward-order targets.
  ForwardResult forward(const EncodedBatch& batch, Mode mode, const ForwardOptions& options = {},
                        std::span<const S> soft_weights = {});

  // Gradient of the last forward's objective. Overwrites grads().
  void backward();

  // d objective / d soft_weights after backward() on a soft forward.
  std::span<const S> soft_grad() const { return soft_grad_; }

  // Greedy next token at the last position of each row (eval mode).
  std::vector<int> next_tokens(std::span<const int> tokens, int rows, int seq_len);

  // Full logits at the last position of each row (eval mode), [rows * V].
  std::vector<S> last_logits(std::span<const int> tokens, int rows, int seq_len);

 private:
  struct LayerParams {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_ao, b_ao, ln2_g, ln2_b, w_fc, b_fc, w_fp, b_fp;
  };
  struct LayerCache {
    AlignedVec<S> x_in, ln1_out, ln1_xhat, ln1_rstd, qkv, att, att_y;
    AlignedVec<S> ln2_out, ln2_xhat, ln2_rstd, fc_h, fc_g, fc_t;
    AlignedVec<S> attn_mask, mlp_mask;  // dropout scales, train mode only
  };

  std::size_t add_tensor(const std::string& name, std::size_t size, bool decay);
  void run(std::span<const int> tokens, int rows, int seq_len, Mode mode, std::uint64_t dropout_seed,
           const EncodedBatch* batch, std::span<const S> soft_weights);
  void dropout_mask(int tensor_id, std::size_t n, AlignedVec<S>& mask) const;

  ModelConfig config_;
  AlignedVec<S> params_;
  AlignedVec<S> grads_;
  std::vector<TensorInfo> tensors_;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_head_ = 0;
  std::vector<LayerParams> layer_params_;

  // Forward state kept for backward().
  bool has_forward_ = false;
  int rows_ = 0;
  int seq_len_ = 0;
  bool train_ = false;
  std::uint64_t dropout_seed_ = 0;
  std::vector<int> tokens_;
  std::vector<LayerCache> cache_;
  AlignedVec<S> x_final_, lnf_out_, lnf_xhat_, lnf_rstd_, emb_mask_;
  std::vector<int> selected_;      // flat positions whose logits are computed
  AlignedVec<S> probs_;           // [selected * V]
  AlignedVec<S> log_probs_;       // [selected * V]
  std::vector<int> hard_target_;   // per selected position, -1 when soft
  std::vector<int> soft_slot_;     // per selected position, slot k when soft, else -1
  double ce_weight_ = 1.0;
  double entropy_weight_ = 0.0;
  std::size_t supervised_count_ = 0;
  AlignedVec<S> soft_weights_;
  std::vector<int> soft_sources_;  // [rows * L]
  int soft_start_ = 0;
  int soft_len_ = 0;
  AlignedVec<S> soft_grad_;
};

template <typename S>
template <typename U>
Transformer<S>::Transformer(const Transformer<U>& other) : Transformer(other.config(), 0) {
  const auto src = other.params();
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = static_cast<S>(src[i]);
}

using Model = Transformer<float>;

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace unravel
