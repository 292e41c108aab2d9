#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/linalg.hpp"

namespace covobf {

using TokenSequence = std::vector<int32_t>;

struct ModelConfig {
  int n_vocab = 0;
  int hidden = 0;        // residual-stream width
  int n_layers = 0;
  int n_heads = 0;
  int n_kv_heads = 0;
  int head_dim = 0;      // even (RoPE rotates 2-entry blocks)
  int ffn_dim = 0;
  int n_experts = 0;     // 0 = dense FFN
  int top_k_experts = 0;
  double rope_base = 1e4;
  double eps_norm = 1e-6;
  int max_seq = 0;
  bool obfuscated = false;

  int group_size() const { return n_heads / n_kv_heads; }
  // Throws DataError on an inconsistent configuration.
  void validate() const;
};

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecT = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
struct FfnWeightsT {
  MatT<S> gate;  // d x ffn_dim
  MatT<S> up;    // d x ffn_dim
  MatT<S> down;  // ffn_dim x d
};

template <typename S>
struct AttentionWeightsT {
  MatT<S> wq;  // d x (n_heads * head_dim)
  MatT<S> wk;  // d x (n_kv_heads * head_dim)
  MatT<S> wv;  // d x (n_kv_heads * head_dim)
  MatT<S> wo;  // (n_heads * head_dim) x d
};

template <typename S>
struct LayerWeightsT {
  VecT<S> input_norm;
  VecT<S> post_attn_norm;
  AttentionWeightsT<S> attn;
  // Dense layers use ffn; MoE layers use router + experts.
  FfnWeightsT<S> ffn;
  MatT<S> router;  // d x n_experts
  std::vector<FfnWeightsT<S>> experts;
};

template <typename S>
struct ModelWeightsT {
  ModelConfig config;
  MatT<S> embed;  // n x d
  std::vector<LayerWeightsT<S>> layers;
  VecT<S> final_norm;
  MatT<S> head;  // d x n
};

using FfnWeights = FfnWeightsT<double>;
using AttentionWeights = AttentionWeightsT<double>;
using LayerWeights = LayerWeightsT<double>;
using ModelWeights = ModelWeightsT<double>;
using ModelWeightsF32 = ModelWeightsT<float>;

// Test-only RMSNorm oracle for obfuscated models: the divisor is computed
// from the de-obfuscated state (x * q_inv) over the plaintext width, which
// isolates the kappa approximation from everything that is exact.
struct NormOracle {
  Matrix q_inv;       // d' x d
  int plain_dim = 0;  // d
};

// Optional per-layer capture of the residual stream, for lockstep
// verification of plaintext vs obfuscated pipelines.
struct ForwardTrace {
  Matrix embedded;                 // seq x d
  std::vector<Matrix> after_attn;  // per layer, seq x d
  std::vector<Matrix> after_ffn;   // per layer, seq x d
  Vector final_hidden;             // last position, post final norm
};

Vector rmsnorm(const Vector& x, const Vector& w, double eps);

// Rotates each consecutive 2-entry block j (1-indexed) of v by
// position * base^(-2(j-1)/len(v)).
Vector rope_apply(const Vector& v, int position, double base);

Vector ffn_forward(const Vector& x, const FfnWeights& w);

Vector moe_forward(const Vector& x, const LayerWeights& layer, const ModelConfig& cfg);

// Top-k expert selection on router logits; ties resolve to the lower index.
std::vector<int> select_experts(const Vector& router_logits, int top_k);

// Causal GQA attention over the whole sequence (positions 0..len-1).
Matrix attention_forward(const Matrix& xs, const AttentionWeights& attn,
                         const ModelConfig& cfg);

// Last-position logits. oracle, trace may be null.
Vector model_forward(const TokenSequence& tokens, const ModelWeights& w,
                     const NormOracle* oracle = nullptr,
                     ForwardTrace* trace = nullptr);

// Greedy decoding, exactly max_new appended tokens, ties to the lowest id.
TokenSequence generate(const TokenSequence& prompt, const ModelWeights& w,
                       int max_new, const NormOracle* oracle = nullptr);

// Seeded temperature sampler for demos; not used by any verification path.
TokenSequence generate_sampled(const TokenSequence& prompt, const ModelWeights& w,
                               int max_new, double temperature, uint64_t seed);

// 32-bit compute path: weights cast once, activations in f32 throughout.
ModelWeightsF32 to_f32(const ModelWeights& w);
VecT<float> model_forward_f32(const TokenSequence& tokens, const ModelWeightsF32& w);
TokenSequence generate_f32(const TokenSequence& prompt, const ModelWeightsF32& w,
                           int max_new);

// Entries ~ N(0, 1/fan_in) quantized to f32 granularity so that the on-disk
// format round-trips bit-exactly; norm vectors are all-ones.
ModelWeights random_model(const ModelConfig& cfg, uint64_t seed);

// Shape consistency of every tensor against the config.
void validate_weights(const ModelWeights& w);

}  // namespace covobf
