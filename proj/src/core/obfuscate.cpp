#include "core/obfuscate.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/errors.hpp"
#include "core/tensor_io.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace covobf {

namespace {

constexpr double kPairTol = 1e-8;

// Fixed fork streams so per-layer work could run in parallel without
// changing any sampled value.
enum Stream : uint64_t {
  kBase = 1,
  kKappa = 2,
  kTau = 3,
  kEmbedKey = 4,
  kHeadKey = 5,
  kEmbedNoise = 6,
  kHeadNoise = 7,
  kVerifyKey = 8,
  kLayer0 = 1000,
};

std::vector<int> identity_perm(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  return p;
}

std::vector<int> uniform_perm(int n, Rng& rng) {
  std::vector<int> p = identity_perm(n);
  rng.shuffle(p);
  return p;
}

double log_uniform_half_two(Rng& rng) {
  // log-uniform on [1/2, 2]
  return std::exp((2.0 * rng.uniform() - 1.0) * std::log(2.0));
}

Matrix add_noise(const Matrix& w, double alpha, double sigma, uint64_t seed) {
  if (alpha == 0.0) return w;
  Rng rng(seed);
  Matrix out = w;
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) out(r, c) += alpha * sigma * rng.normal();
  return out;
}

// Columns of 2-entry blocks: result block j = input block perm[j].
Matrix apply_block_perm_cols(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (size_t j = 0; j < perm.size(); ++j)
    out.middleCols(2 * static_cast<int>(j), 2) = m.middleCols(2 * perm[j], 2);
  return out;
}

Matrix apply_rot_scale(const Matrix& m, const Matrix& rot, const Vector& scale,
                       bool invert_scale) {
  Matrix out = m * rot;
  for (int j = 0; j < scale.size(); ++j) {
    double s = invert_scale ? 1.0 / scale(j) : scale(j);
    out.middleCols(2 * j, 2) *= s;
  }
  return out;
}

}  // namespace

void ObfuscationParams::validate() const {
  if (lambda < 0.0) throw DataError("params: lambda must be >= 0");
  if (expand < 0 || expand % 2 != 0) throw DataError("params: expand must be even >= 0");
  if (alpha_embed < 0.0 || alpha_head < 0.0)
    throw DataError("params: noise coefficients must be >= 0");
  if (beta < 1) throw DataError("params: beta must be >= 1");
  if (gamma <= 0.0) throw DataError("params: gamma must be > 0");
  if (kappa_samples < 1) throw DataError("params: kappa_samples must be >= 1");
}

std::vector<int32_t> sample_vocab_permutation(int n, uint64_t seed) {
  if (n < 1) throw DataError("sample_vocab_permutation: n must be >= 1");
  std::vector<int32_t> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed);
  rng.shuffle(p);
  return p;
}

Matrix obfuscate_embedding(const Matrix& we, const std::vector<int32_t>& tau,
                           double alpha, double sigma, const KeyMatrix& p,
                           uint64_t seed) {
  if (static_cast<int>(tau.size()) != we.rows())
    throw DataError("obfuscate_embedding: tau size does not match vocab");
  if (p.mat.rows() != we.cols()) throw DataError("obfuscate_embedding: key shape");
  Matrix noisy = add_noise(we, alpha, sigma, seed);
  Matrix permuted(we.rows(), we.cols());
  for (int r = 0; r < we.rows(); ++r) permuted.row(r) = noisy.row(tau[r]);
  return permuted * p.mat;
}

Matrix obfuscate_head(const Matrix& wh, const std::vector<int32_t>& tau,
                      double alpha, double sigma, const InvKeyMatrix& q,
                      uint64_t seed) {
  if (static_cast<int>(tau.size()) != wh.cols())
    throw DataError("obfuscate_head: tau size does not match vocab");
  if (q.mat.cols() != wh.rows()) throw DataError("obfuscate_head: key shape");
  Matrix noisy = q.mat * add_noise(wh, alpha, sigma, seed);
  Matrix out(noisy.rows(), noisy.cols());
  for (int j = 0; j < out.cols(); ++j) out.col(j) = noisy.col(tau[j]);
  return out;
}

std::vector<int> block_perm(int beta, double gamma, double rope_base, int n_blocks,
                            Rng& rng) {
  if (beta < 1) throw DataError("block_perm: beta must be >= 1");
  auto zeta = [&](int i) {  // 1-indexed
    return std::pow(rope_base, -2.0 * (i - 1) / static_cast<double>(n_blocks));
  };
  std::vector<int> perm = identity_perm(n_blocks);
  int t = 1;
  while (t <= n_blocks) {
    int c = std::min(beta, n_blocks - t + 1);
    int w = 1;
    if (c > 1) {
      std::vector<double> logits(c);
      for (int i = 1; i <= c; ++i) logits[i - 1] = gamma * (zeta(t + i) - zeta(t));
      double mx = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (double& v : logits) {
        v = std::exp(v - mx);
        sum += v;
      }
      double u = rng.uniform() * sum, acc = 0.0;
      w = c;
      for (int i = 0; i < c; ++i) {
        acc += logits[i];
        if (u < acc) {
          w = i + 1;
          break;
        }
      }
    }
    if (w > 1) {
      // uniform shuffle of the window [t-1, t+w-2]
      for (int i = w; i > 1; --i) {
        int j = static_cast<int>(rng.uniform_int(0, i - 1));
        std::swap(perm[t - 1 + i - 1], perm[t - 1 + j]);
      }
    }
    t += w;
  }
  return perm;
}

Matrix block_perm_matrix(const std::vector<int>& perm) {
  const int dh = 2 * static_cast<int>(perm.size());
  Matrix z = Matrix::Zero(dh, dh);
  for (size_t j = 0; j < perm.size(); ++j)
    z.block(2 * perm[j], 2 * static_cast<int>(j), 2, 2) = Matrix::Identity(2, 2);
  return z;
}

AttentionGroup obfuscate_attention_group(const AttentionGroup& group,
                                         const KeyBase& base,
                                         const ObfuscationParams& params,
                                         double rope_base, Rng& rng,
                                         GroupKeys* keys_out) {
  const int dh = static_cast<int>(group.wk.cols());
  const int n_blocks = dh / 2;
  GroupKeys keys;

  if (params.identity_intra) {
    keys.rot = Matrix::Identity(dh, dh);
    keys.scale = Vector::Ones(n_blocks);
    keys.u_vo = Matrix::Identity(dh, dh);
  } else {
    keys.rot = Matrix::Zero(dh, dh);
    keys.scale = Vector(n_blocks);
    for (int j = 0; j < n_blocks; ++j) {
      double angle = 2.0 * M_PI * (1.0 - rng.uniform());  // (0, 2*pi]
      keys.rot(2 * j, 2 * j) = std::cos(angle);
      keys.rot(2 * j, 2 * j + 1) = std::sin(angle);
      keys.rot(2 * j + 1, 2 * j) = -std::sin(angle);
      keys.rot(2 * j + 1, 2 * j + 1) = std::cos(angle);
      keys.scale(j) = log_uniform_half_two(rng);
    }
  }

  keys.block_perm = block_perm(params.beta, params.gamma, rope_base, n_blocks, rng);

  if (!params.identity_intra) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(dh));
    int tries = 0;
    for (;;) {
      keys.u_vo = gaussian_matrix(dh, dh, sd, rng);
      if (cond_2(keys.u_vo) <= 1e6) break;
      if (++tries >= 8)
        throw InvariantError("obfuscate_attention_group: u_vo resample budget exhausted");
    }
  }

  keys.q_query = inv_key_mat_gen(base, rng.next_u64());
  keys.q_key = inv_key_mat_gen(base, rng.next_u64());
  keys.q_value = inv_key_mat_gen(base, rng.next_u64());
  keys.p_out = key_mat_gen(base, rng.next_u64());

  Matrix u_inv = keys.u_vo.partialPivLu().inverse();

  AttentionGroup out;
  out.wk = apply_block_perm_cols(
      apply_rot_scale(keys.q_key.mat * group.wk, keys.rot, keys.scale, true),
      keys.block_perm);
  out.wv = keys.q_value.mat * group.wv * keys.u_vo;
  out.wq.reserve(group.wq.size());
  out.wo.reserve(group.wo.size());
  for (size_t i = 0; i < group.wq.size(); ++i) {
    out.wq.push_back(apply_block_perm_cols(
        apply_rot_scale(keys.q_query.mat * group.wq[i], keys.rot, keys.scale, false),
        keys.block_perm));
    out.wo.push_back(u_inv * group.wo[i] * keys.p_out.mat);
  }

  if (keys_out) *keys_out = std::move(keys);
  return out;
}

void permute_heads(AttentionWeights& attn, const std::vector<int>& tau_kv,
                   const std::vector<int>& tau_group, const ModelConfig& cfg) {
  const int dh = cfg.head_dim;
  const int gs = cfg.group_size();
  if (static_cast<int>(tau_kv.size()) != cfg.n_kv_heads ||
      static_cast<int>(tau_group.size()) != gs)
    throw DataError("permute_heads: permutation sizes do not match config");

  AttentionWeights out = attn;
  for (int g = 0; g < cfg.n_kv_heads; ++g) {
    out.wk.middleCols(g * dh, dh) = attn.wk.middleCols(tau_kv[g] * dh, dh);
    out.wv.middleCols(g * dh, dh) = attn.wv.middleCols(tau_kv[g] * dh, dh);
    for (int j = 0; j < gs; ++j) {
      int src = tau_kv[g] * gs + tau_group[j];
      int dst = g * gs + j;
      out.wq.middleCols(dst * dh, dh) = attn.wq.middleCols(src * dh, dh);
      out.wo.middleRows(dst * dh, dh) = attn.wo.middleRows(src * dh, dh);
    }
  }
  attn = std::move(out);
}

FfnWeights obfuscate_ffn(const FfnWeights& f, const KeyBase& base,
                         const ObfuscationParams& params, Rng& rng,
                         FfnKeys* keys_out) {
  const int dff = static_cast<int>(f.gate.cols());
  FfnKeys keys;
  keys.perm = params.identity_perms ? identity_perm(dff) : uniform_perm(dff, rng);
  keys.scale = Vector(dff);
  for (int i = 0; i < dff; ++i)
    keys.scale(i) = params.identity_intra ? 1.0 : log_uniform_half_two(rng);
  keys.q_gate = inv_key_mat_gen(base, rng.next_u64());
  keys.q_up = inv_key_mat_gen(base, rng.next_u64());
  keys.p_down = key_mat_gen(base, rng.next_u64());

  Matrix gate_keyed = keys.q_gate.mat * f.gate;
  Matrix up_keyed = keys.q_up.mat * f.up;
  FfnWeights out;
  out.gate.resize(gate_keyed.rows(), dff);
  out.up.resize(up_keyed.rows(), dff);
  Matrix down_mid(dff, f.down.cols());
  for (int j = 0; j < dff; ++j) {
    int src = keys.perm[j];
    // Scaling is confined to the up path; SiLU on the gate path does not
    // commute with scaling.
    out.gate.col(j) = gate_keyed.col(src);
    out.up.col(j) = up_keyed.col(src) * keys.scale(src);
    down_mid.row(j) = f.down.row(src) / keys.scale(src);
  }
  out.down = down_mid * keys.p_down.mat;

  if (keys_out) *keys_out = std::move(keys);
  return out;
}

Matrix normalize_router(const Matrix& router) {
  Matrix out = router;
  for (int j = 0; j < out.cols(); ++j) {
    double n = out.col(j).norm();
    if (n < 1e-300) throw DataError("normalize_router: zero-norm expert column");
    out.col(j) /= n;
  }
  return out;
}

Matrix obfuscate_router(const Matrix& router, const KeyBase& base,
                        const ObfuscationParams& params, Rng& rng,
                        std::vector<int>* perm_out, InvKeyMatrix* q_out) {
  const int n_exp = static_cast<int>(router.cols());
  std::vector<int> perm =
      params.identity_perms ? identity_perm(n_exp) : uniform_perm(n_exp, rng);
  InvKeyMatrix q = inv_key_mat_gen(base, rng.next_u64());
  Matrix keyed = q.mat * normalize_router(router);
  Matrix out(keyed.rows(), n_exp);
  for (int j = 0; j < n_exp; ++j) out.col(j) = keyed.col(perm[j]);
  if (perm_out) *perm_out = std::move(perm);
  if (q_out) *q_out = std::move(q);
  return out;
}

namespace {

void fold_rows(Matrix& m, const Vector& w) {
  for (int r = 0; r < m.rows(); ++r) m.row(r) *= w(r);
}

}  // namespace

ModelWeights fuse_rmsnorm(const ModelWeights& w) {
  ModelWeights out = w;
  for (LayerWeights& layer : out.layers) {
    fold_rows(layer.attn.wq, layer.input_norm);
    fold_rows(layer.attn.wk, layer.input_norm);
    fold_rows(layer.attn.wv, layer.input_norm);
    layer.input_norm = Vector::Ones(w.config.hidden);
    if (w.config.n_experts > 0) {
      fold_rows(layer.router, layer.post_attn_norm);
      for (FfnWeights& e : layer.experts) {
        fold_rows(e.gate, layer.post_attn_norm);
        fold_rows(e.up, layer.post_attn_norm);
      }
    } else {
      fold_rows(layer.ffn.gate, layer.post_attn_norm);
      fold_rows(layer.ffn.up, layer.post_attn_norm);
    }
    layer.post_attn_norm = Vector::Ones(w.config.hidden);
  }
  fold_rows(out.head, out.final_norm);
  out.final_norm = Vector::Ones(w.config.hidden);
  return out;
}

KappaEstimate estimate_kappa(const KeyBase& base, int n_samples, uint64_t seed) {
  if (n_samples < 1) throw DataError("estimate_kappa: n_samples must be >= 1");
  Rng rng(seed);
  const int d = base.hidden;
  const int h = base.expand;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  double sum = 0.0, sum_sq = 0.0;
  Vector x(d);
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < d; ++i) x(i) = rng.normal();
    double xn = x.norm();
    double sq = (x * base.b).squaredNorm();
    if (h > 0) {
      // x * C with C = G N_c and fresh G ~ N(0, 1/d): the image x*G has iid
      // N(0, |x|^2/d) entries, so sample it directly.
      Vector xg(h / 2);
      for (int i = 0; i < h / 2; ++i) xg(i) = xn * inv_sqrt_d * rng.normal();
      sq += (xg * base.null_c).squaredNorm();
      sq += (x * base.e).squaredNorm();
    }
    double ratio = std::sqrt(sq) / xn;
    sum += ratio;
    sum_sq += ratio * ratio;
  }
  KappaEstimate est;
  est.mean = sum / n_samples;
  double var = std::max(0.0, sum_sq / n_samples - est.mean * est.mean);
  est.stderr_ = std::sqrt(var / n_samples);
  return est;
}

ObfuscationResult obfuscate_model(const ModelWeights& w,
                                  const ObfuscationParams& params,
                                  bool with_debug_keys) {
  validate_weights(w);
  params.validate();
  const ModelConfig& cfg = w.config;
  if (cfg.obfuscated) throw DataError("obfuscate_model: model is already obfuscated");

  ModelWeights fused = fuse_rmsnorm(w);
  Rng root(params.seed);

  KeyBase base = params.identity_base
                     ? identity_key_base(cfg.hidden)
                     : key_base_init(cfg.hidden, params.expand, params.lambda,
                                     root.fork(kBase).root_seed());
  const int d_out = base.expanded_dim();

  KappaEstimate kappa;
  if (params.identity_base) {
    kappa = KappaEstimate{1.0, 0.0};
  } else {
    kappa = estimate_kappa(base, params.kappa_samples, root.fork(kKappa).root_seed());
  }
  // The obfuscated RMSNorm divides by the RMS over d' entries while the
  // plaintext divides over d; fold the sqrt(d/d') mismatch into the stored
  // coefficient so the norm output tracks x P / rms_d(x) without bias.
  const double kappa_eff =
      kappa.mean * std::sqrt(static_cast<double>(cfg.hidden) / d_out);

  std::vector<int32_t> tau;
  if (params.identity_perms) {
    tau.resize(cfg.n_vocab);
    for (int i = 0; i < cfg.n_vocab; ++i) tau[i] = i;
  } else {
    tau = sample_vocab_permutation(cfg.n_vocab, root.fork(kTau).root_seed());
  }

  KeyMatrix embed_p = key_mat_gen(base, root.fork(kEmbedKey).root_seed());
  InvKeyMatrix head_q = inv_key_mat_gen(base, root.fork(kHeadKey).root_seed());
  if (verify_pair(embed_p, head_q) > kPairTol)
    throw InvariantError("obfuscate_model: key pair residual above tolerance");

  double sigma_e = entry_stddev(fused.embed);
  double sigma_h = entry_stddev(fused.head);

  ModelWeights out;
  out.config = cfg;
  out.config.hidden = d_out;
  out.config.obfuscated = true;
  out.embed = obfuscate_embedding(fused.embed, tau, params.alpha_embed, sigma_e,
                                  embed_p, root.fork(kEmbedNoise).root_seed());
  out.head = obfuscate_head(fused.head, tau, params.alpha_head, sigma_h, head_q,
                            root.fork(kHeadNoise).root_seed());
  out.final_norm = Vector::Constant(d_out, kappa_eff);

  DebugKeys debug;
  debug.base = base;
  debug.embed_p = embed_p;
  debug.head_q = head_q;
  debug.q_verify = inv_key_mat_gen(base, root.fork(kVerifyKey).root_seed());
  debug.kappa = kappa.mean;
  debug.kappa_stderr = kappa.stderr_;
  debug.plain_hidden = cfg.hidden;

  const int dh = cfg.head_dim;
  const int gs = cfg.group_size();
  out.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    Rng lrng = root.fork(kLayer0 + static_cast<uint64_t>(l));
    const LayerWeights& src = fused.layers[l];
    LayerWeights& dst = out.layers[l];
    LayerKeys lkeys;

    bool pin_heads = params.identity_perms || params.identity_head_perms;
    lkeys.tau_kv = pin_heads ? identity_perm(cfg.n_kv_heads)
                             : uniform_perm(cfg.n_kv_heads, lrng);
    lkeys.tau_group = pin_heads ? identity_perm(gs) : uniform_perm(gs, lrng);
    AttentionWeights permuted = src.attn;
    permute_heads(permuted, lkeys.tau_kv, lkeys.tau_group, cfg);

    dst.attn.wq.resize(d_out, cfg.n_heads * dh);
    dst.attn.wk.resize(d_out, cfg.n_kv_heads * dh);
    dst.attn.wv.resize(d_out, cfg.n_kv_heads * dh);
    dst.attn.wo.resize(cfg.n_heads * dh, d_out);
    for (int g = 0; g < cfg.n_kv_heads; ++g) {
      AttentionGroup grp;
      grp.wk = permuted.wk.middleCols(g * dh, dh);
      grp.wv = permuted.wv.middleCols(g * dh, dh);
      for (int j = 0; j < gs; ++j) {
        grp.wq.push_back(permuted.wq.middleCols((g * gs + j) * dh, dh));
        grp.wo.push_back(permuted.wo.middleRows((g * gs + j) * dh, dh));
      }
      GroupKeys gkeys;
      AttentionGroup obf = obfuscate_attention_group(grp, base, params,
                                                     cfg.rope_base, lrng, &gkeys);
      dst.attn.wk.middleCols(g * dh, dh) = obf.wk;
      dst.attn.wv.middleCols(g * dh, dh) = obf.wv;
      for (int j = 0; j < gs; ++j) {
        dst.attn.wq.middleCols((g * gs + j) * dh, dh) = obf.wq[j];
        dst.attn.wo.middleRows((g * gs + j) * dh, dh) = obf.wo[j];
      }
      lkeys.groups.push_back(std::move(gkeys));
    }

    if (cfg.n_experts > 0) {
      dst.router = obfuscate_router(src.router, base, params, lrng,
                                    &lkeys.router_perm, &lkeys.q_router);
      dst.experts.resize(cfg.n_experts);
      for (int e = 0; e < cfg.n_experts; ++e) {
        FfnKeys fkeys;
        dst.experts[e] = obfuscate_ffn(src.experts[lkeys.router_perm[e]], base,
                                       params, lrng, &fkeys);
        lkeys.ffns.push_back(std::move(fkeys));
      }
    } else {
      FfnKeys fkeys;
      dst.ffn = obfuscate_ffn(src.ffn, base, params, lrng, &fkeys);
      lkeys.ffns.push_back(std::move(fkeys));
    }

    dst.input_norm = Vector::Constant(d_out, kappa_eff);
    dst.post_attn_norm = Vector::Constant(d_out, kappa_eff);
    debug.layers.push_back(std::move(lkeys));
  }

  validate_weights(out);

  ObfuscationResult result;
  result.model = std::move(out);
  result.secret = ClientSecret{tau, params.seed, params};
  if (with_debug_keys) result.debug = std::move(debug);
  return result;
}

// ---------------------------------------------------------------------------
// secret / debug-key serialization

namespace {

ordered_json params_to_json(const ObfuscationParams& p) {
  ordered_json j;
  j["lambda"] = p.lambda;
  j["expand"] = p.expand;
  j["alpha_embed"] = p.alpha_embed;
  j["alpha_head"] = p.alpha_head;
  j["beta"] = p.beta;
  j["gamma"] = p.gamma;
  j["seed"] = p.seed;
  j["kappa_samples"] = p.kappa_samples;
  j["identity_base"] = p.identity_base;
  j["identity_perms"] = p.identity_perms;
  j["identity_head_perms"] = p.identity_head_perms;
  j["identity_intra"] = p.identity_intra;
  return j;
}

ObfuscationParams params_from_json(const ordered_json& j) {
  ObfuscationParams p;
  p.lambda = j.at("lambda").get<double>();
  p.expand = j.at("expand").get<int>();
  p.alpha_embed = j.at("alpha_embed").get<double>();
  p.alpha_head = j.at("alpha_head").get<double>();
  p.beta = j.at("beta").get<int>();
  p.gamma = j.at("gamma").get<double>();
  p.seed = j.at("seed").get<uint64_t>();
  p.kappa_samples = j.value("kappa_samples", 65536);
  p.identity_base = j.value("identity_base", false);
  p.identity_perms = j.value("identity_perms", false);
  p.identity_head_perms = j.value("identity_head_perms", false);
  p.identity_intra = j.value("identity_intra", false);
  return p;
}

Matrix perm_to_matrix_row(const std::vector<int>& p) {
  Matrix m(1, p.size());
  for (size_t i = 0; i < p.size(); ++i) m(0, i) = p[i];
  return m;
}

std::vector<int> matrix_row_to_perm(const Matrix& m) {
  std::vector<int> p(m.cols());
  for (int i = 0; i < m.cols(); ++i) p[i] = static_cast<int>(std::llround(m(0, i)));
  return p;
}

}  // namespace

void save_secret(const ClientSecret& secret, const std::string& path) {
  ordered_json j;
  j["tau"] = secret.tau;
  j["seed"] = secret.seed;
  j["params"] = params_to_json(secret.params);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << "\n";
}

ClientSecret load_secret(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed JSON in " + path);
  ClientSecret s;
  try {
    s.tau = j.at("tau").get<std::vector<int32_t>>();
    s.seed = j.at("seed").get<uint64_t>();
    s.params = params_from_json(j.at("params"));
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("secret file: ") + e.what());
  }
  return s;
}

void save_debug_keys(const DebugKeys& keys, const std::string& dir) {
  NamedTensors t;
  Matrix meta(1, 7);
  meta << keys.base.hidden, keys.base.expand, keys.base.lambda,
      static_cast<double>(keys.base.base_id & 0xFFFFFFFFULL),
      static_cast<double>(keys.base.base_id >> 32), keys.plain_hidden,
      static_cast<double>(keys.layers.size());
  t.emplace_back("meta", meta);
  Matrix kap(1, 2);
  kap << keys.kappa, keys.kappa_stderr;
  t.emplace_back("kappa", kap);
  t.emplace_back("base.B", keys.base.b);
  t.emplace_back("base.B_inv", keys.base.b_inv);
  if (keys.base.expand > 0) {
    t.emplace_back("base.E", keys.base.e);
    t.emplace_back("base.F", keys.base.f);
    t.emplace_back("base.null_c", keys.base.null_c);
    t.emplace_back("base.null_d", keys.base.null_d);
  }
  t.emplace_back("base.Z", keys.base.z);
  t.emplace_back("embed.P", keys.embed_p.mat);
  t.emplace_back("head.Q", keys.head_q.mat);
  t.emplace_back("q_verify", keys.q_verify.mat);
  for (size_t l = 0; l < keys.layers.size(); ++l) {
    const LayerKeys& lk = keys.layers[l];
    std::string p = "layer." + std::to_string(l) + ".";
    t.emplace_back(p + "tau_kv", perm_to_matrix_row(lk.tau_kv));
    t.emplace_back(p + "tau_group", perm_to_matrix_row(lk.tau_group));
    for (size_t g = 0; g < lk.groups.size(); ++g) {
      const GroupKeys& gk = lk.groups[g];
      std::string gp = p + "group." + std::to_string(g) + ".";
      t.emplace_back(gp + "rot", gk.rot);
      t.emplace_back(gp + "scale", gk.scale);
      t.emplace_back(gp + "block_perm", perm_to_matrix_row(gk.block_perm));
      t.emplace_back(gp + "u_vo", gk.u_vo);
      t.emplace_back(gp + "p_out", gk.p_out.mat);
      t.emplace_back(gp + "q_q", gk.q_query.mat);
      t.emplace_back(gp + "q_k", gk.q_key.mat);
      t.emplace_back(gp + "q_v", gk.q_value.mat);
    }
    for (size_t f = 0; f < lk.ffns.size(); ++f) {
      const FfnKeys& fk = lk.ffns[f];
      std::string fp = p + "ffn." + std::to_string(f) + ".";
      t.emplace_back(fp + "perm", perm_to_matrix_row(fk.perm));
      t.emplace_back(fp + "scale", fk.scale);
      t.emplace_back(fp + "p_down", fk.p_down.mat);
      t.emplace_back(fp + "q_gate", fk.q_gate.mat);
      t.emplace_back(fp + "q_up", fk.q_up.mat);
    }
    if (!lk.router_perm.empty()) {
      t.emplace_back(p + "router.perm", perm_to_matrix_row(lk.router_perm));
      t.emplace_back(p + "router.Q", lk.q_router.mat);
    }
  }
  write_tensor_dir(dir, t, "f64");
}

DebugKeys load_debug_keys(const std::string& dir) {
  NamedTensors tensors = read_tensor_dir(dir);
  auto find = [&](const std::string& name) -> const Matrix* {
    for (const auto& [n, m] : tensors)
      if (n == name) return &m;
    return nullptr;
  };
  auto require = [&](const std::string& name) -> const Matrix& {
    const Matrix* m = find(name);
    if (!m) throw DataError("debug keys missing tensor " + name);
    return *m;
  };

  DebugKeys keys;
  const Matrix& meta = require("meta");
  keys.base.hidden = static_cast<int>(meta(0, 0));
  keys.base.expand = static_cast<int>(meta(0, 1));
  keys.base.lambda = meta(0, 2);
  keys.base.base_id = static_cast<uint64_t>(meta(0, 3)) |
                      (static_cast<uint64_t>(meta(0, 4)) << 32);
  keys.plain_hidden = static_cast<int>(meta(0, 5));
  int n_layers = static_cast<int>(meta(0, 6));
  const Matrix& kap = require("kappa");
  keys.kappa = kap(0, 0);
  keys.kappa_stderr = kap(0, 1);
  keys.base.b = require("base.B");
  keys.base.b_inv = require("base.B_inv");
  if (keys.base.expand > 0) {
    keys.base.e = require("base.E");
    keys.base.f = require("base.F");
    keys.base.null_c = require("base.null_c");
    keys.base.null_d = require("base.null_d");
  } else {
    keys.base.e = Matrix(keys.base.hidden, 0);
    keys.base.f = Matrix(0, keys.base.hidden);
  }
  keys.base.z = require("base.Z");
  uint64_t id = keys.base.base_id;
  keys.embed_p = KeyMatrix{require("embed.P"), id};
  keys.head_q = InvKeyMatrix{require("head.Q"), id};
  keys.q_verify = InvKeyMatrix{require("q_verify"), id};
  for (int l = 0; l < n_layers; ++l) {
    LayerKeys lk;
    std::string p = "layer." + std::to_string(l) + ".";
    lk.tau_kv = matrix_row_to_perm(require(p + "tau_kv"));
    lk.tau_group = matrix_row_to_perm(require(p + "tau_group"));
    for (int g = 0;; ++g) {
      std::string gp = p + "group." + std::to_string(g) + ".";
      if (!find(gp + "rot")) break;
      GroupKeys gk;
      gk.rot = require(gp + "rot");
      gk.scale = require(gp + "scale");
      gk.block_perm = matrix_row_to_perm(require(gp + "block_perm"));
      gk.u_vo = require(gp + "u_vo");
      gk.p_out = KeyMatrix{require(gp + "p_out"), id};
      gk.q_query = InvKeyMatrix{require(gp + "q_q"), id};
      gk.q_key = InvKeyMatrix{require(gp + "q_k"), id};
      gk.q_value = InvKeyMatrix{require(gp + "q_v"), id};
      lk.groups.push_back(std::move(gk));
    }
    for (int f = 0;; ++f) {
      std::string fp = p + "ffn." + std::to_string(f) + ".";
      if (!find(fp + "perm")) break;
      FfnKeys fk;
      fk.perm = matrix_row_to_perm(require(fp + "perm"));
      fk.scale = require(fp + "scale");
      fk.p_down = KeyMatrix{require(fp + "p_down"), id};
      fk.q_gate = InvKeyMatrix{require(fp + "q_gate"), id};
      fk.q_up = InvKeyMatrix{require(fp + "q_up"), id};
      lk.ffns.push_back(std::move(fk));
    }
    if (const Matrix* rp = find(p + "router.perm")) {
      lk.router_perm = matrix_row_to_perm(*rp);
      lk.q_router = InvKeyMatrix{require(p + "router.Q"), id};
    }
    keys.layers.push_back(std::move(lk));
  }
  return keys;
}

}  // namespace covobf
