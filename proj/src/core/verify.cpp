#include "core/verify.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace covobf {

namespace {

std::vector<int32_t> inverse_tau(const std::vector<int32_t>& tau) {
  std::vector<int32_t> inv(tau.size());
  for (size_t r = 0; r < tau.size(); ++r) inv[tau[r]] = static_cast<int32_t>(r);
  return inv;
}

TokenSequence encode_tokens(const TokenSequence& plain, const std::vector<int32_t>& inv) {
  TokenSequence out(plain.size());
  for (size_t i = 0; i < plain.size(); ++i) out[i] = inv[plain[i]];
  return out;
}

Vector unit_normed_state(int dim, double eps, Rng& rng) {
  Vector g(dim);
  for (int i = 0; i < dim; ++i) g(i) = rng.normal();
  // random overall scale so the RMS denominator is exercised off the sphere
  g *= std::exp(2.0 * rng.uniform() - 1.0);
  return rmsnorm(g, Vector::Ones(dim), eps);
}

Vector raw_state(int dim, Rng& rng) {
  Vector g(dim);
  for (int i = 0; i < dim; ++i) g(i) = rng.normal();
  g *= std::exp(2.0 * rng.uniform() - 1.0);
  return g;
}

// Obfuscated RMSNorm as deployed (uniform kappa weights) or in oracle mode.
Vector obf_norm(const Vector& x_obf, const ModelWeights& obf, const DebugKeys& keys,
                bool oracle_norm) {
  if (oracle_norm) {
    Vector plain = x_obf * keys.q_verify.mat;
    double ms = plain.squaredNorm() / keys.plain_hidden;
    return x_obf / std::sqrt(ms + obf.config.eps_norm);
  }
  return rmsnorm(x_obf, obf.final_norm, obf.config.eps_norm);
}

LayerWeights reference_layer(const ModelWeights& plain_fused, int layer) {
  LayerWeights ref = plain_fused.layers[layer];
  if (plain_fused.config.n_experts > 0) ref.router = normalize_router(ref.router);
  return ref;
}

}  // namespace

Vector deobfuscate_hidden(const Vector& x, const InvKeyMatrix& q) {
  if (x.size() != q.mat.rows()) throw DataError("deobfuscate_hidden: shape mismatch");
  return x * q.mat;
}

NormOracle make_norm_oracle(const DebugKeys& keys) {
  return NormOracle{keys.q_verify.mat, keys.plain_hidden};
}

CommutationStats check_component_commutation(
    const std::string& component, int layer, int n_samples, uint64_t seed,
    const ModelWeights& plain_fused, const ModelWeights& obf,
    const DebugKeys& keys, const ClientSecret* secret, bool oracle_norm) {
  Rng rng(seed);
  const ModelConfig& cfg = plain_fused.config;
  const Matrix& q = keys.q_verify.mat;
  CommutationStats stats;
  double sum = 0.0;

  auto accumulate = [&](double d) {
    sum += d;
    stats.max = std::max(stats.max, d);
  };

  if (component == "embed") {
    if (!secret) throw DataError("embed commutation needs the client secret");
    std::vector<int32_t> inv = inverse_tau(secret->tau);
    for (int s = 0; s < n_samples; ++s) {
      int32_t x = static_cast<int32_t>(rng.uniform_int(0, cfg.n_vocab - 1));
      Vector deob = Vector(obf.embed.row(inv[x])) * q;
      accumulate((deob - Vector(plain_fused.embed.row(x))).norm());
    }
  } else if (component == "head") {
    for (int s = 0; s < n_samples; ++s) {
      Vector h = unit_normed_state(cfg.hidden, cfg.eps_norm, rng);
      KeyMatrix p = key_mat_gen(keys.base, rng.next_u64());
      Vector obf_logits = (h * p.mat) * obf.head;
      Vector plain_est(cfg.n_vocab);
      if (!secret) throw DataError("head commutation needs the client secret");
      for (int j = 0; j < cfg.n_vocab; ++j) plain_est(secret->tau[j]) = obf_logits(j);
      accumulate((plain_est - Vector(h * plain_fused.head)).norm());
    }
  } else if (component == "norm") {
    for (int s = 0; s < n_samples; ++s) {
      Vector x = raw_state(cfg.hidden, rng);
      KeyMatrix p = key_mat_gen(keys.base, rng.next_u64());
      Vector rt = obf_norm(Vector(x * p.mat), obf, keys, oracle_norm) * q;
      accumulate((rt - rmsnorm(x, Vector::Ones(cfg.hidden), cfg.eps_norm)).norm());
    }
  } else if (component == "attn") {
    const int seq = 4;
    for (int s = 0; s < n_samples; ++s) {
      Matrix xs(seq, cfg.hidden);
      for (int r = 0; r < seq; ++r)
        xs.row(r) = unit_normed_state(cfg.hidden, cfg.eps_norm, rng);
      KeyMatrix p = key_mat_gen(keys.base, rng.next_u64());
      Matrix plain_out = attention_forward(xs, plain_fused.layers[layer].attn, cfg);
      Matrix obf_out =
          attention_forward(xs * p.mat, obf.layers[layer].attn, obf.config);
      for (int r = 0; r < seq; ++r)
        accumulate((Vector(obf_out.row(r)) * q - Vector(plain_out.row(r))).norm());
    }
  } else if (component == "ffn") {
    LayerWeights ref = reference_layer(plain_fused, layer);
    for (int s = 0; s < n_samples; ++s) {
      Vector x = unit_normed_state(cfg.hidden, cfg.eps_norm, rng);
      KeyMatrix p = key_mat_gen(keys.base, rng.next_u64());
      Vector x_obf = x * p.mat;
      Vector plain_out, obf_out;
      if (cfg.n_experts > 0) {
        plain_out = moe_forward(x, ref, cfg);
        obf_out = moe_forward(x_obf, obf.layers[layer], obf.config);
      } else {
        plain_out = ffn_forward(x, ref.ffn);
        obf_out = ffn_forward(x_obf, obf.layers[layer].ffn);
      }
      accumulate((obf_out * q - plain_out).norm());
    }
  } else if (component == "value_output") {
    const int dh = cfg.head_dim;
    const int gs = cfg.group_size();
    const LayerKeys& lk = keys.layers[layer];
    AttentionWeights permuted = plain_fused.layers[layer].attn;
    permute_heads(permuted, lk.tau_kv, lk.tau_group, cfg);
    for (int s = 0; s < n_samples; ++s) {
      Vector x = unit_normed_state(cfg.hidden, cfg.eps_norm, rng);
      KeyMatrix p = key_mat_gen(keys.base, rng.next_u64());
      Vector x_obf = x * p.mat;
      for (int g = 0; g < cfg.n_kv_heads; ++g) {
        Vector v_plain = x * permuted.wv.middleCols(g * dh, dh);
        Vector v_obf = x_obf * obf.layers[layer].attn.wv.middleCols(g * dh, dh);
        Vector plain_out = Vector::Zero(cfg.hidden);
        Vector obf_out = Vector::Zero(obf.config.hidden);
        for (int j = 0; j < gs; ++j) {
          plain_out += v_plain * permuted.wo.middleRows((g * gs + j) * dh, dh);
          obf_out += v_obf * obf.layers[layer].attn.wo.middleRows((g * gs + j) * dh, dh);
        }
        accumulate((obf_out * q - plain_out).norm());
      }
    }
  } else {
    throw DataError("unknown component: " + component);
  }

  int count = n_samples;
  if (component == "attn") count *= 4;
  if (component == "value_output") count *= cfg.n_kv_heads;
  stats.mean = sum / count;
  return stats;
}

LipschitzEstimate estimate_lipschitz(
    const std::function<Vector(const Vector&)>& fn,
    const std::function<Vector(Rng&)>& sampler, int n_samples, uint64_t seed) {
  Rng rng(seed);
  double best = 0.0;
  Vector best_y, best_dir;

  auto ratio_at = [&](const Vector& y, const Vector& dir, double t) {
    Vector y2 = y + t * dir;
    return (fn(y2) - fn(y)).norm() / (t * dir.norm());
  };

  for (int s = 0; s < n_samples; ++s) {
    Vector y1 = sampler(rng);
    Vector y2 = sampler(rng);
    double dist = (y2 - y1).norm();
    if (dist < 1e-12) continue;
    double r = (fn(y2) - fn(y1)).norm() / dist;
    if (r > best) {
      best = r;
      best_y = y1;
      best_dir = (y2 - y1) / dist;
    }
    // local slope at y1 in a random direction
    Vector dir(y1.size());
    for (int i = 0; i < dir.size(); ++i) dir(i) = rng.normal();
    dir.normalize();
    double t = 1e-3 * (y1.norm() + 1.0);
    double rl = ratio_at(y1, dir, t);
    if (rl > best) {
      best = rl;
      best_y = y1;
      best_dir = dir;
    }
  }

  if (best_y.size() > 0) {
    // stochastic hill climb on the best (point, direction) pair
    double t = 1e-3 * (best_y.norm() + 1.0);
    for (int it = 0; it < 300; ++it) {
      Vector dir = best_dir;
      for (int i = 0; i < dir.size(); ++i) dir(i) += 0.3 * rng.normal();
      dir.normalize();
      Vector y = best_y;
      if (it % 3 == 2) {
        for (int i = 0; i < y.size(); ++i) y(i) += 0.1 * best_y.norm() * rng.normal();
      }
      double r = ratio_at(y, dir, t);
      if (r > best) {
        best = r;
        best_dir = dir;
        best_y = y;
      }
    }
  }

  return LipschitzEstimate{best, 1.5 * best};
}

double decoder_error_bound(double m_norm, double m_attn, double m_ffn,
                           double e_norm, double e_attn) {
  return (m_norm * (m_attn * e_norm + e_attn) + e_norm) * m_norm * m_ffn;
}

double error_bound(const BoundInputs& in, std::vector<double>* decoder_bounds) {
  const size_t layers = in.e_norm.size();
  std::vector<double> db(layers);
  for (size_t l = 0; l < layers; ++l)
    db[l] = decoder_error_bound(in.m_norm[l], in.m_attn[l], in.m_ffn[l],
                                in.e_norm[l], in.e_attn[l]);
  double total = in.e_head;
  // M_i = M_head * prod_{j > i} M_decoder_j; the embedding term passes
  // through every decoder layer.
  double mult = in.m_head;
  for (size_t l = layers; l-- > 0;) {
    total += mult * db[l];
    mult *= in.m_decoder[l];
  }
  total += mult * in.e_embed;
  if (decoder_bounds) *decoder_bounds = std::move(db);
  return total;
}

std::vector<double> layerwise_error_trace(const ModelWeights& plain_fused,
                                          const ModelWeights& obf,
                                          const DebugKeys& keys,
                                          const ClientSecret& secret,
                                          const std::vector<TokenSequence>& prompts,
                                          bool oracle_norm,
                                          double* final_mean, double* final_max) {
  const ModelConfig& cfg = plain_fused.config;
  const Matrix& q = keys.q_verify.mat;
  std::vector<int32_t> inv = inverse_tau(secret.tau);
  std::vector<double> layer_err(cfg.n_layers, 0.0);
  NormOracle oracle = make_norm_oracle(keys);
  double fsum = 0.0, fmax = 0.0;

  ModelWeights reference = plain_fused;
  if (cfg.n_experts > 0)
    for (LayerWeights& layer : reference.layers) layer.router = normalize_router(layer.router);

  for (const TokenSequence& prompt : prompts) {
    ForwardTrace tp, to;
    Vector plain_logits = model_forward(prompt, reference, nullptr, &tp);
    Vector obf_logits = model_forward(encode_tokens(prompt, inv), obf,
                                      oracle_norm ? &oracle : nullptr, &to);
    for (int l = 0; l < cfg.n_layers; ++l) {
      auto rel = [&](const Matrix& plain_cp, const Matrix& obf_cp) {
        Matrix deob = obf_cp * q;
        double denom = std::max(plain_cp.norm(), 1e-12);
        return (deob - plain_cp).norm() / denom;
      };
      layer_err[l] = std::max(layer_err[l], rel(tp.after_attn[l], to.after_attn[l]));
      layer_err[l] = std::max(layer_err[l], rel(tp.after_ffn[l], to.after_ffn[l]));
    }
    Vector plain_est(cfg.n_vocab);
    for (int j = 0; j < cfg.n_vocab; ++j) plain_est(secret.tau[j]) = obf_logits(j);
    double err = (plain_est - plain_logits).norm();
    fsum += err;
    fmax = std::max(fmax, err);
  }
  if (final_mean) *final_mean = fsum / static_cast<double>(prompts.size());
  if (final_max) *final_max = fmax;
  return layer_err;
}

double token_agreement(const ModelWeights& plain, const ModelWeights& obf,
                       const ClientSecret& secret,
                       const std::vector<TokenSequence>& prompts, int max_new,
                       const NormOracle* oracle) {
  std::vector<int32_t> inv = inverse_tau(secret.tau);
  ModelWeights reference = plain;
  if (plain.config.n_experts > 0)
    for (LayerWeights& layer : reference.layers) layer.router = normalize_router(layer.router);
  long agree = 0, total = 0;
  for (const TokenSequence& prompt : prompts) {
    TokenSequence plain_out = generate(prompt, reference, max_new);
    TokenSequence obf_out = generate(encode_tokens(prompt, inv), obf, max_new, oracle);
    for (size_t i = prompt.size(); i < plain_out.size(); ++i) {
      if (secret.tau[obf_out[i]] == plain_out[i]) ++agree;
      ++total;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(agree) / static_cast<double>(total);
}

CompositionCheck check_composition_theorems(uint64_t seed, int trials) {
  Rng rng(seed);
  CompositionCheck out;
  out.trials = trials;

  for (int trial = 0; trial < trials; ++trial) {
    const int d1 = 3 + static_cast<int>(rng.uniform_int(0, 3));
    const int d2 = 3 + static_cast<int>(rng.uniform_int(0, 3));
    const int d3 = 3 + static_cast<int>(rng.uniform_int(0, 3));
    Matrix a1 = gaussian_matrix(d1, d2, 1.0, rng);   // sequential first stage
    Matrix a2 = gaussian_matrix(d2, d3, 1.0, rng);   // sequential second stage
    Matrix a3 = gaussian_matrix(d1, d2, 1.0, rng);   // summation partner of a1
    Matrix ap = gaussian_matrix(d1, d3, 1.0, rng);   // parallel partner of a1
    Matrix ox = sample_orthogonal(d1, rng);
    Matrix oy = sample_orthogonal(d2, rng);
    Matrix oz = sample_orthogonal(d3, rng);

    auto offset = [&](int dim) {
      Vector b(dim);
      for (int i = 0; i < dim; ++i) b(i) = rng.normal();
      // every 7th trial exercises the zero-error case
      double mag = trial % 7 == 0 ? 0.0 : 0.5 * rng.uniform();
      return Vector((mag / b.norm()) * b);
    };
    Vector b1 = offset(d2), b2 = offset(d3), b3 = offset(d2), bp = offset(d3);
    const double e1 = b1.norm(), e2 = b2.norm(), e3 = b3.norm(), ep = bp.norm();

    // Obfuscated maps are the originals conjugated by the orthogonal data /
    // label transforms plus a fixed bounded offset (the injected error).
    Matrix a1_t = ox.transpose() * a1 * oy;
    Matrix a2_t = oy.transpose() * a2 * oz;
    Matrix a3_t = ox.transpose() * a3 * oy;
    Matrix ap_t = ox.transpose() * ap * oz;
    double m_g = Eigen::JacobiSVD<Matrix>(a2_t).singularValues()(0);

    for (int rep = 0; rep < 3; ++rep) {
      Vector x(d1);
      for (int i = 0; i < d1; ++i) x(i) = rng.normal();
      Vector xt = x * ox;

      // sequential: e_{C2 o C1} <= M_g e1 + e2
      Vector seq_obf = (xt * a1_t + b1) * a2_t + b2;
      Vector seq_ref = (x * a1 * a2) * oz;
      out.worst_sequential = std::max(
          out.worst_sequential, (seq_obf - seq_ref).norm() - (m_g * e1 + e2));

      // parallel with the L2 product distance: e_{C1 || C2} <= e1 + ep
      double df = (Vector(xt * a1_t + b1) - Vector((x * a1) * oy)).norm();
      double dg = (Vector(xt * ap_t + bp) - Vector((x * ap) * oz)).norm();
      out.worst_parallel = std::max(out.worst_parallel,
                                    std::sqrt(df * df + dg * dg) - (e1 + ep));

      // summation with shared phi_Y: e_{C1 + C2} <= e1 + e3
      Vector sum_obf = (xt * a1_t + b1) + (xt * a3_t + b3);
      Vector sum_ref = (x * (a1 + a3)) * oy;
      out.worst_summation =
          std::max(out.worst_summation, (sum_obf - sum_ref).norm() - (e1 + e3));
    }
  }
  return out;
}

namespace {

struct RoundTripMaps {
  // Obfuscated components conjugated back to plaintext coordinates through a
  // fixed key pair: y -> deobf(component~(y * P)).
  Matrix p;  // fixed key matrix for map definitions
  Matrix q;  // canonical inverse
};

}  // namespace

ErrorReport verify_report(const ModelWeights& plain, const ModelWeights& obf,
                          const DebugKeys& keys, const ClientSecret& secret,
                          uint64_t seed, bool oracle_norm, int lipschitz_samples) {
  ModelWeights fused = fuse_rmsnorm(plain);
  const ModelConfig& cfg = fused.config;
  const int layers = cfg.n_layers;
  Rng rng(seed);

  ErrorReport report;
  report.kappa = keys.kappa;
  report.kappa_stderr = keys.kappa_stderr;

  const int comm_samples = 48;
  report.e_embed = check_component_commutation("embed", 0, comm_samples,
                                               rng.next_u64(), fused, obf, keys,
                                               &secret, oracle_norm)
                       .mean;
  report.e_head = check_component_commutation("head", 0, comm_samples, rng.next_u64(),
                                              fused, obf, keys, &secret, oracle_norm)
                      .mean;
  for (int l = 0; l < layers; ++l) {
    report.e_norm.push_back(
        check_component_commutation("norm", l, comm_samples, rng.next_u64(), fused,
                                    obf, keys, &secret, oracle_norm)
            .mean);
    report.e_attn.push_back(
        check_component_commutation("attn", l, comm_samples / 4, rng.next_u64(),
                                    fused, obf, keys, &secret, oracle_norm)
            .mean);
    report.e_ffn.push_back(
        check_component_commutation("ffn", l, comm_samples, rng.next_u64(), fused,
                                    obf, keys, &secret, oracle_norm)
            .mean);
  }

  RoundTripMaps maps;
  maps.p = key_mat_gen(keys.base, rng.next_u64()).mat;
  maps.q = keys.q_verify.mat;
  const double eps = cfg.eps_norm;

  auto obf_norm_vec = [&](const Vector& y_obf) {
    return obf_norm(y_obf, obf, keys, oracle_norm);
  };
  auto raw_sampler = [d = cfg.hidden](Rng& r) { return raw_state(d, r); };
  auto normed_sampler = [d = cfg.hidden, eps](Rng& r) {
    return unit_normed_state(d, eps, r);
  };

  // fixed context rows for sequence-shaped maps
  Matrix ctx(3, cfg.hidden);
  for (int r = 0; r < 3; ++r) ctx.row(r) = unit_normed_state(cfg.hidden, eps, rng);

  for (int l = 0; l < layers; ++l) {
    const LayerWeights& olayer = obf.layers[l];

    auto norm_rt = [&](const Vector& y) {
      return Vector(obf_norm_vec(Vector(y * maps.p)) * maps.q);
    };
    report.m_norm.push_back(
        estimate_lipschitz(norm_rt, raw_sampler, lipschitz_samples, rng.next_u64())
            .safe);

    auto attn_rt = [&](const Vector& y) {
      Matrix xs(ctx.rows() + 1, cfg.hidden);
      xs.topRows(ctx.rows()) = ctx;
      xs.row(ctx.rows()) = y;
      Matrix out = attention_forward(xs * maps.p, olayer.attn, obf.config);
      return Vector(Vector(out.row(ctx.rows())) * maps.q);
    };
    report.m_attn.push_back(
        estimate_lipschitz(attn_rt, normed_sampler, lipschitz_samples, rng.next_u64())
            .safe);

    auto ffn_rt = [&](const Vector& y) {
      Vector yo = y * maps.p;
      Vector fo = obf.config.n_experts > 0 ? moe_forward(yo, olayer, obf.config)
                                           : ffn_forward(yo, olayer.ffn);
      return Vector(fo * maps.q);
    };
    report.m_ffn.push_back(
        estimate_lipschitz(ffn_rt, normed_sampler, lipschitz_samples, rng.next_u64())
            .safe);

    auto decoder_rt = [&](const Vector& y) {
      Matrix xs(ctx.rows() + 1, cfg.hidden);
      xs.topRows(ctx.rows()) = ctx;
      xs.row(ctx.rows()) = y;
      Matrix xo = xs * maps.p;
      Matrix normed(xo.rows(), xo.cols());
      for (int r = 0; r < xo.rows(); ++r) normed.row(r) = obf_norm_vec(Vector(xo.row(r)));
      Matrix mid = xo + attention_forward(normed, olayer.attn, obf.config);
      Vector n2 = obf_norm_vec(Vector(mid.row(ctx.rows())));
      Vector f = obf.config.n_experts > 0 ? moe_forward(n2, olayer, obf.config)
                                          : ffn_forward(n2, olayer.ffn);
      return Vector(Vector(mid.row(ctx.rows()) + f) * maps.q);
    };
    report.m_decoder.push_back(
        estimate_lipschitz(decoder_rt, raw_sampler, lipschitz_samples, rng.next_u64())
            .safe);
  }

  auto head_rt = [&](const Vector& y) {
    // tau permutes logits, which leaves distances unchanged
    return Vector(obf_norm_vec(Vector(y * maps.p)) * obf.head);
  };
  report.m_head =
      estimate_lipschitz(head_rt, raw_sampler, lipschitz_samples, rng.next_u64()).safe;

  BoundInputs bi;
  bi.e_embed = report.e_embed;
  bi.e_head = report.e_head;
  bi.e_norm = report.e_norm;
  bi.e_attn = report.e_attn;
  bi.m_norm = report.m_norm;
  bi.m_attn = report.m_attn;
  bi.m_ffn = report.m_ffn;
  bi.m_decoder = report.m_decoder;
  bi.m_head = report.m_head;
  report.bound_total = error_bound(bi, &report.bound_decoder);

  std::vector<TokenSequence> prompts;
  for (int p = 0; p < 8; ++p) {
    TokenSequence t(8);
    for (int i = 0; i < 8; ++i)
      t[i] = static_cast<int32_t>(rng.uniform_int(0, cfg.n_vocab - 1));
    prompts.push_back(t);
  }
  double final_mean = 0.0, final_max = 0.0;
  report.trace_errors = layerwise_error_trace(fused, obf, keys, secret, prompts,
                                              oracle_norm, &final_mean, &final_max);
  report.measured_final = final_mean;

  NormOracle oracle = make_norm_oracle(keys);
  std::vector<TokenSequence> agree_prompts(prompts.begin(), prompts.begin() + 4);
  report.token_agreement =
      token_agreement(fused, obf, secret, agree_prompts, 8,
                      oracle_norm ? &oracle : nullptr);
  return report;
}

}  // namespace covobf
