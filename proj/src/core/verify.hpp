#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/obfuscate.hpp"

namespace covobf {

struct CommutationStats {
  double mean = 0.0;
  double max = 0.0;
};

struct LipschitzEstimate {
  double raw = 0.0;   // best sampled/refined ratio (empirical lower bound)
  double safe = 0.0;  // raw * 1.5, used in bound evaluation
};

struct ErrorReport {
  double e_embed = 0.0;
  double e_head = 0.0;
  std::vector<double> e_norm;  // per layer, input norm
  std::vector<double> e_attn;  // per layer
  std::vector<double> e_ffn;   // per layer
  std::vector<double> m_norm;
  std::vector<double> m_attn;
  std::vector<double> m_ffn;
  std::vector<double> m_decoder;
  double m_head = 0.0;
  std::vector<double> bound_decoder;  // per layer
  double bound_total = 0.0;
  double measured_final = 0.0;               // mean end-to-end logit error
  std::vector<double> trace_errors;          // per layer, relative L2
  double token_agreement = -1.0;             // -1 when not measured
  double kappa = 1.0;
  double kappa_stderr = 0.0;
};

Vector deobfuscate_hidden(const Vector& x, const InvKeyMatrix& q);

NormOracle make_norm_oracle(const DebugKeys& keys);

// Commutation error of one component measured in plaintext coordinates:
// || psi(f~(phi_X(x))) - f(x) || over sampled inputs. Components: "embed",
// "head", "norm", "attn", "ffn", "value_output". "embed" needs the secret
// (tau fixes which obfuscated row corresponds to a plaintext token).
CommutationStats check_component_commutation(
    const std::string& component, int layer, int n_samples, uint64_t seed,
    const ModelWeights& plain_fused, const ModelWeights& obf,
    const DebugKeys& keys, const ClientSecret* secret = nullptr,
    bool oracle_norm = false);

// Empirical Lipschitz constant of fn over pairs drawn by sampler, with a
// stochastic hill-climb refinement of the best direction.
LipschitzEstimate estimate_lipschitz(
    const std::function<Vector(const Vector&)>& fn,
    const std::function<Vector(Rng&)>& sampler, int n_samples, uint64_t seed);

struct BoundInputs {
  double e_embed = 0.0;
  double e_head = 0.0;
  std::vector<double> e_norm;
  std::vector<double> e_attn;
  std::vector<double> m_norm;
  std::vector<double> m_attn;
  std::vector<double> m_ffn;
  std::vector<double> m_decoder;
  double m_head = 1.0;
};

// Per-decoder-layer bound:
//   (M_norm (M_attn e_norm + e_attn) + e_norm) M_norm M_FFN
double decoder_error_bound(double m_norm, double m_attn, double m_ffn,
                           double e_norm, double e_attn);

// Whole-pipeline bound M_0 e_embed + sum_i M_i e_decoder_i + e_head with
// M_i = M_head * prod_{j>i} M_decoder_j.
double error_bound(const BoundInputs& in, std::vector<double>* decoder_bounds = nullptr);

// Lockstep run of both pipelines, de-obfuscating after each residual add.
// Returns per-layer relative L2 errors (max over prompts/positions/checkpoints)
// and, via out-params, the mean/max end-to-end logit error.
std::vector<double> layerwise_error_trace(const ModelWeights& plain_fused,
                                          const ModelWeights& obf,
                                          const DebugKeys& keys,
                                          const ClientSecret& secret,
                                          const std::vector<TokenSequence>& prompts,
                                          bool oracle_norm,
                                          double* final_mean = nullptr,
                                          double* final_max = nullptr);

// Fraction of greedy steps where the decoded obfuscated token equals the
// plaintext greedy token; both pipelines run autoregressively on their own
// outputs.
double token_agreement(const ModelWeights& plain, const ModelWeights& obf,
                       const ClientSecret& secret,
                       const std::vector<TokenSequence>& prompts, int max_new,
                       const NormOracle* oracle = nullptr);

struct CompositionCheck {
  int trials = 0;
  double worst_sequential = 0.0;  // max(measured - bound); <= 0 when passing
  double worst_parallel = 0.0;
  double worst_summation = 0.0;
};

// Synthetic covariant obfuscations (orthogonally conjugated linear maps with
// injected bounded offsets) composed sequentially / in parallel / by
// summation; returns worst bound violations over the trials.
CompositionCheck check_composition_theorems(uint64_t seed, int trials = 100);

// Full report for the CLI: component errors measured on states harvested
// from real prompt runs, Lipschitz estimates, bound, trace and agreement.
ErrorReport verify_report(const ModelWeights& plain, const ModelWeights& obf,
                          const DebugKeys& keys, const ClientSecret& secret,
                          uint64_t seed, bool oracle_norm = false,
                          int lipschitz_samples = 200);

}  // namespace covobf
