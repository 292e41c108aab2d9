#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/keymat.hpp"
#include "core/model.hpp"

namespace covobf {

struct ObfuscationParams {
  double lambda = 0.3;       // key-matrix coefficient
  int expand = 16;           // h, even; obfuscated stream width is d + 2h
  double alpha_embed = 1.0;  // embedding noise coefficient
  double alpha_head = 0.2;   // head noise coefficient
  int beta = 8;              // max RoPE block-permutation window
  double gamma = 1e3;        // window sampling temperature
  uint64_t seed = 0;
  int kappa_samples = 65536;

  // Test-only switches. identity_base fixes B = Z = I with h = 0;
  // identity_perms pins tau, head and FFN/router permutations to identity;
  // identity_head_perms pins only tau_kv/tau_group (tau stays random);
  // identity_intra pins the rotation/scaling/value-mixing transforms.
  bool identity_base = false;
  bool identity_perms = false;
  bool identity_head_perms = false;
  bool identity_intra = false;

  void validate() const;
};

struct ClientSecret {
  std::vector<int32_t> tau;  // tau[r]: plaintext id embedded at obfuscated row r
  uint64_t seed = 0;
  ObfuscationParams params;
};

// Per KV-head group transforms sampled by the intra-head obfuscation.
struct GroupKeys {
  Matrix rot;                   // head_dim x head_dim, 2x2 block rotations
  Vector scale;                 // per-block scalars, length head_dim/2
  std::vector<int> block_perm;  // block at position j came from block_perm[j]
  Matrix u_vo;                  // head_dim x head_dim value/output mixer
  KeyMatrix p_out;
  InvKeyMatrix q_query, q_key, q_value;
};

struct FfnKeys {
  std::vector<int> perm;  // hidden channel at position j came from perm[j]
  Vector scale;           // per-channel up-path scaling, length ffn_dim
  KeyMatrix p_down;
  InvKeyMatrix q_gate, q_up;
};

struct LayerKeys {
  std::vector<int> tau_kv;
  std::vector<int> tau_group;
  std::vector<GroupKeys> groups;  // one per KV head
  std::vector<FfnKeys> ffns;      // one for dense, one per expert for MoE
  std::vector<int> router_perm;   // MoE only
  InvKeyMatrix q_router;          // MoE only
};

// Everything verification needs to replay the pipeline. Produced only behind
// a test flag; never part of the deployable server directory.
struct DebugKeys {
  KeyBase base;
  KeyMatrix embed_p;
  InvKeyMatrix head_q;
  InvKeyMatrix q_verify;  // canonical inverse for de-obfuscating hidden states
  double kappa = 1.0;
  double kappa_stderr = 0.0;
  int plain_hidden = 0;
  std::vector<LayerKeys> layers;
};

struct ObfuscationResult {
  ModelWeights model;  // runs through the unmodified forward path at d'
  ClientSecret secret;
  std::optional<DebugKeys> debug;
};

std::vector<int32_t> sample_vocab_permutation(int n, uint64_t seed);

// Row r of the result is row tau[r] of (we + noise), right-multiplied by p.
// Noise is N(0, (alpha*sigma)^2) per entry.
Matrix obfuscate_embedding(const Matrix& we, const std::vector<int32_t>& tau,
                           double alpha, double sigma, const KeyMatrix& p,
                           uint64_t seed);

// q * (wh + noise) * Pi^T: obfuscated logit j equals noisy plaintext logit tau[j].
Matrix obfuscate_head(const Matrix& wh, const std::vector<int32_t>& tau,
                      double alpha, double sigma, const InvKeyMatrix& q,
                      uint64_t seed);

// RoPE block permutation within dynamic windows. Walks the block list; window
// sizes are sampled with probabilities softmax(gamma * (zeta_{t+i} - zeta_t)),
// zeta_i = base^(-2(i-1)/n_blocks), so low-index (high-frequency) blocks stay
// put. Result: position j holds original block perm[j].
std::vector<int> block_perm(int beta, double gamma, double rope_base, int n_blocks,
                            Rng& rng);

// Expands a block permutation to the induced head_dim x head_dim matrix Z
// with (M * Z) block-column j = M block-column perm[j].
Matrix block_perm_matrix(const std::vector<int>& perm);

// One KV head with its grouped query/output heads.
struct AttentionGroup {
  std::vector<Matrix> wq;  // d x head_dim per grouped head
  Matrix wk, wv;           // d x head_dim
  std::vector<Matrix> wo;  // head_dim x d per grouped head
};

AttentionGroup obfuscate_attention_group(const AttentionGroup& group,
                                         const KeyBase& base,
                                         const ObfuscationParams& params,
                                         double rope_base, Rng& rng,
                                         GroupKeys* keys_out);

// KV-head blocks reordered by tau_kv, grouped query/output heads moved with
// their KV head and reordered within each group by tau_group. The attention
// output is unchanged (head summation is permutation-invariant).
void permute_heads(AttentionWeights& attn, const std::vector<int>& tau_kv,
                   const std::vector<int>& tau_group, const ModelConfig& cfg);

FfnWeights obfuscate_ffn(const FfnWeights& f, const KeyBase& base,
                         const ObfuscationParams& params, Rng& rng,
                         FfnKeys* keys_out);

// Unit-L2 expert columns. Throws on a zero-norm column.
Matrix normalize_router(const Matrix& router);

Matrix obfuscate_router(const Matrix& router, const KeyBase& base,
                        const ObfuscationParams& params, Rng& rng,
                        std::vector<int>* perm_out, InvKeyMatrix* q_out);

// Folds Diag(w_norm) of every RMSNorm into the adjacent linear layer and sets
// the norm vectors to all-ones. Forward outputs are unchanged.
ModelWeights fuse_rmsnorm(const ModelWeights& w);

struct KappaEstimate {
  double mean = 1.0;
  double stderr_ = 0.0;
};

// Monte-Carlo E[ |x P| / |x| ] over x ~ N(0, I_d) with a fresh key matrix
// per sample.
KappaEstimate estimate_kappa(const KeyBase& base, int n_samples, uint64_t seed);

ObfuscationResult obfuscate_model(const ModelWeights& w,
                                  const ObfuscationParams& params,
                                  bool with_debug_keys);

void save_secret(const ClientSecret& secret, const std::string& path);
ClientSecret load_secret(const std::string& path);

void save_debug_keys(const DebugKeys& keys, const std::string& dir);
DebugKeys load_debug_keys(const std::string& dir);

}  // namespace covobf
