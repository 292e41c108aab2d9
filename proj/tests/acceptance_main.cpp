// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Covers key cancellation, exact-regime equivalence, fusion,
// per-component commutation, composition bounds, attack regimes, metric and
// privacy oracles, the wire protocol, the kappa estimator, and CLI
// determinism. Toy scale throughout; every tolerance is pinned here.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/attacks.hpp"
#include "core/obfuscate.hpp"
#include "core/privacy.hpp"
#include "core/protocol.hpp"
#include "core/tensor_io.hpp"
#include "core/tokenizer.hpp"
#include "core/verify.hpp"

using namespace covobf;
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string g_cli_path;
int g_failures = 0;

struct Check {
  bool ok = true;
  std::ostringstream detail;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << (detail.str().empty() ? "" : "; ") << what;
    }
  }
};

void criterion(int number, const std::string& title,
               const std::function<void(Check&)>& body) {
  Check check;
  try {
    body(check);
  } catch (const std::exception& e) {
    check.ok = false;
    check.detail << "exception: " << e.what();
  }
  if (check.ok) {
    std::cout << "PASS criterion " << number << ": " << title << "\n";
  } else {
    std::cout << "FAIL criterion " << number << ": " << title << " ["
              << check.detail.str() << "]\n";
    ++g_failures;
  }
  std::cout.flush();
}

ModelConfig toy_config(int layers, int experts = 0) {
  ModelConfig cfg;
  cfg.n_vocab = 64;
  cfg.hidden = 32;
  cfg.n_layers = layers;
  cfg.n_heads = 4;
  cfg.n_kv_heads = 2;
  cfg.head_dim = 8;
  cfg.ffn_dim = 64;
  cfg.n_experts = experts;
  cfg.top_k_experts = experts > 0 ? 2 : 0;
  cfg.max_seq = 64;
  return cfg;
}

ObfuscationParams exact_params(uint64_t seed, int expand) {
  ObfuscationParams p;
  p.seed = seed;
  p.alpha_embed = 0.0;
  p.alpha_head = 0.0;
  p.beta = 1;
  p.expand = expand;
  p.kappa_samples = 4096;
  return p;
}

ObfuscationParams paper_params(uint64_t seed, int expand = 4) {
  ObfuscationParams p;  // alpha_e 1.0, alpha_h 0.2, beta 8, gamma 1e3, lambda 0.3
  p.seed = seed;
  p.expand = expand;
  p.kappa_samples = 8192;
  return p;
}

std::vector<TokenSequence> random_prompts(int count, int length, int n_vocab,
                                          uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out;
  for (int p = 0; p < count; ++p) {
    TokenSequence t(length);
    for (auto& id : t) id = static_cast<int32_t>(rng.uniform_int(0, n_vocab - 1));
    out.push_back(t);
  }
  return out;
}

std::vector<Permutation> all_permutations(int n) {
  Permutation p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  std::vector<Permutation> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

struct CliRun {
  int exit_code = -1;
  std::string out;
};

CliRun run_cli(const std::string& args) {
  fs::path out_file = fs::temp_directory_path() / "covobf_accept_stdout.txt";
  std::string cmd =
      g_cli_path + " " + args + " > " + out_file.string() + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

// --------------------------------------------------------------------------

void criterion_1_key_cancellation(Check& check) {
  for (int d : {8, 16, 64}) {
    for (int h : {0, 4, 16}) {
      for (double lambda : {0.0, 0.3, 1.0}) {
        KeyBase base = key_base_init(d, h, lambda,
                                     splitmix64(d * 1000 + h * 10 + int(lambda * 10)));
        std::vector<KeyMatrix> keys;
        std::vector<InvKeyMatrix> invs;
        for (int i = 0; i < 5; ++i) keys.push_back(key_mat_gen(base, 100 + i));
        for (int i = 0; i < 4; ++i) invs.push_back(inv_key_mat_gen(base, 200 + i));
        for (const KeyMatrix& p : keys)
          for (const InvKeyMatrix& q : invs) {
            double residual = verify_pair(p, q);
            check.expect(residual <= 1e-8,
                         "residual " + std::to_string(residual) + " at d=" +
                             std::to_string(d) + " h=" + std::to_string(h) +
                             " lambda=" + std::to_string(lambda));
          }
      }
    }
  }
}

void criterion_2_exact_regime(Check& check) {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    int layers = 2 + static_cast<int>(seed % 3);  // 2..4
    int expand = seed % 2 == 0 ? 16 : 4;
    ModelWeights plain = random_model(toy_config(layers), seed);
    ObfuscationResult r = obfuscate_model(plain, exact_params(seed * 11, expand), true);
    ModelWeights fused = fuse_rmsnorm(plain);
    NormOracle oracle = make_norm_oracle(*r.debug);
    std::vector<int32_t> inv(r.secret.tau.size());
    for (size_t i = 0; i < inv.size(); ++i) inv[r.secret.tau[i]] = i;

    std::vector<TokenSequence> prompts = random_prompts(20, 6, 64, seed * 13);
    for (const TokenSequence& prompt : prompts) {
      Vector plain_logits = model_forward(prompt, fused);
      TokenSequence obf_prompt(prompt.size());
      for (size_t i = 0; i < prompt.size(); ++i) obf_prompt[i] = inv[prompt[i]];
      Vector obf_logits = model_forward(obf_prompt, r.model, &oracle);
      Vector deob(plain_logits.size());
      for (int j = 0; j < obf_logits.size(); ++j)
        deob(r.secret.tau[j]) = obf_logits(j);
      double rel = (deob - plain_logits).cwiseAbs().maxCoeff() /
                   plain_logits.cwiseAbs().maxCoeff();
      check.expect(rel <= 1e-6, "logit relative error " + std::to_string(rel));

      TokenSequence plain_out = generate(prompt, fused, 16);
      TokenSequence obf_out = generate(obf_prompt, r.model, 16, &oracle);
      bool same = true;
      for (size_t i = prompt.size(); i < plain_out.size(); ++i)
        if (r.secret.tau[obf_out[i]] != plain_out[i]) same = false;
      check.expect(same, "greedy sequence diverged at seed " + std::to_string(seed));
    }
  }
}

void criterion_3_fusion(Check& check) {
  Rng norm_rng(77);
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    for (int experts : {0, 4}) {
      ModelWeights w = random_model(toy_config(3, experts), seed + experts);
      for (LayerWeights& layer : w.layers) {
        for (int i = 0; i < layer.input_norm.size(); ++i) {
          layer.input_norm(i) = 0.5 + norm_rng.uniform();
          layer.post_attn_norm(i) = 0.5 + norm_rng.uniform();
        }
      }
      for (int i = 0; i < w.final_norm.size(); ++i)
        w.final_norm(i) = 0.5 + norm_rng.uniform();
      ModelWeights fused = fuse_rmsnorm(w);
      for (const TokenSequence& prompt : random_prompts(5, 8, 64, seed * 7)) {
        Vector a = model_forward(prompt, w);
        Vector b = model_forward(prompt, fused);
        double rel = (a - b).norm() / a.norm();
        check.expect(rel <= 1e-9, "fusion drift " + std::to_string(rel));
      }
    }
  }
}

void criterion_4_commutation(Check& check) {
  ModelWeights plain = random_model(toy_config(2), 21);
  ModelWeights fused = fuse_rmsnorm(plain);

  ObfuscationResult exact = obfuscate_model(plain, exact_params(22, 4), true);
  check.expect(check_component_commutation("embed", 0, 48, 1, fused, exact.model,
                                           *exact.debug, &exact.secret)
                       .max <= 1e-6,
               "embed commutation");
  check.expect(check_component_commutation("head", 0, 48, 2, fused, exact.model,
                                           *exact.debug, &exact.secret)
                       .max <= 1e-6,
               "head commutation");
  for (int l = 0; l < 2; ++l)
    check.expect(check_component_commutation("attn", l, 12, 3, fused, exact.model,
                                             *exact.debug, &exact.secret)
                         .max <= 1e-6,
                 "attention commutation at beta 1");

  ObfuscationResult defaults = obfuscate_model(plain, paper_params(23), true);
  for (int l = 0; l < 2; ++l) {
    check.expect(check_component_commutation("ffn", l, 48, 4, fused, defaults.model,
                                             *defaults.debug, &defaults.secret)
                         .max <= 1e-6,
                 "ffn commutation at defaults");
    check.expect(
        check_component_commutation("value_output", l, 24, 5, fused, defaults.model,
                                    *defaults.debug, &defaults.secret)
                .max <= 1e-6,
        "value-output commutation at defaults");
  }

  CommutationStats norm_stats = check_component_commutation(
      "norm", 0, 256, 6, fused, defaults.model, *defaults.debug, &defaults.secret);
  KappaEstimate spread = estimate_kappa(defaults.debug->base, 20000, 7);
  double mc_std = spread.stderr_ * std::sqrt(20000.0);
  double scale = std::sqrt(static_cast<double>(fused.config.hidden)) / spread.mean;
  check.expect(norm_stats.mean <= 3.0 * mc_std * scale,
               "norm error " + std::to_string(norm_stats.mean) + " vs 3*MC-std " +
                   std::to_string(3.0 * mc_std * scale));
}

void criterion_5_composition_bounds(Check& check) {
  CompositionCheck synthetic = check_composition_theorems(31, 100);
  check.expect(synthetic.worst_sequential <= 1e-9, "sequential bound");
  check.expect(synthetic.worst_parallel <= 1e-9, "parallel bound");
  check.expect(synthetic.worst_summation <= 1e-9, "summation bound");

  int holds = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ModelWeights plain = random_model(toy_config(2), 300 + seed);
    ObfuscationResult r = obfuscate_model(plain, paper_params(400 + seed), true);
    ErrorReport report =
        verify_report(plain, r.model, *r.debug, r.secret, 500 + seed, false, 200);
    bool ok = report.measured_final <= report.bound_total;
    if (!ok) {
      // one re-estimate with 10x samples before reporting failure
      report =
          verify_report(plain, r.model, *r.debug, r.secret, 500 + seed, false, 2000);
      ok = report.measured_final <= report.bound_total;
    }
    if (ok) ++holds;
  }
  check.expect(holds == 10,
               "bound held in " + std::to_string(holds) + "/10 seeded runs");
}

void criterion_6_vma_regimes(Check& check) {
  ModelWeights plain = random_model(toy_config(2), 41);
  ObfuscationParams off = paper_params(42);
  off.alpha_embed = 0.0;
  off.alpha_head = 0.0;
  ObfuscationResult clean = obfuscate_model(plain, off, false);
  ObfuscationResult noisy = obfuscate_model(plain, paper_params(42), false);
  double t_clean = vma_full(plain, clean.model, &clean.secret.tau).ttrsr;
  double t_noisy = vma_full(plain, noisy.model, &noisy.secret.tau).ttrsr;
  check.expect(t_clean == 1.0, "noiseless TTRSR " + std::to_string(t_clean));
  check.expect(t_noisy < t_clean,
               "paper-default noise TTRSR " + std::to_string(t_noisy));
  // the paper's large-model figure is not reproducible at toy scale; the
  // absolute value is reported alongside the required strict decrease
  std::cout << "  [info] VMA TTRSR at paper-default noise: " << t_noisy << "\n";
}

void criterion_7_invariant_attacks(Check& check) {
  ModelWeights deep = random_model(toy_config(4), 51);
  ObfuscationParams gate_off = paper_params(52);
  gate_off.alpha_embed = 0.0;
  ObfuscationResult g_off = obfuscate_model(deep, gate_off, false);
  ObfuscationResult g_on = obfuscate_model(deep, paper_params(52), false);
  double gate_clean = gate_ia(deep, g_off.model, &g_off.secret.tau).ttrsr;
  double gate_noisy = gate_ia(deep, g_on.model, &g_on.secret.tau).ttrsr;
  check.expect(gate_clean == 1.0, "gate-ia clean " + std::to_string(gate_clean));
  check.expect(gate_noisy < gate_clean, "gate-ia noisy " + std::to_string(gate_noisy));

  ModelWeights plain = random_model(toy_config(2), 53);
  ObfuscationParams unperm = paper_params(54);
  unperm.alpha_embed = 0.0;
  unperm.alpha_head = 0.0;
  unperm.beta = 1;
  unperm.identity_head_perms = true;
  ObfuscationResult a_off = obfuscate_model(plain, unperm, false);
  ObfuscationResult a_on = obfuscate_model(plain, paper_params(54), false);

  // per-token invariant multisets: obfuscated row r carries plaintext token
  // tau[r], and with heads/blocks unpermuted the sorted values match exactly
  ModelWeights fused = fuse_rmsnorm(plain);
  const int dh = plain.config.head_dim;
  double worst = 0.0;
  for (int row = 0; row < 8; ++row) {
    int tok = a_off.secret.tau[row];
    std::vector<double> pv, ov;
    for (int head = 0; head < plain.config.n_heads; ++head)
      for (int b = 0; b < dh / 2; ++b) {
        pv.push_back(block_quadratic_invariant(
            Vector(fused.embed.row(tok)), fused.embed,
            Matrix(fused.layers[0].attn.wq.middleCols(head * dh + 2 * b, 2))));
        ov.push_back(block_quadratic_invariant(
            Vector(a_off.model.embed.row(row)), a_off.model.embed,
            Matrix(a_off.model.layers[0].attn.wq.middleCols(head * dh + 2 * b, 2))));
      }
    std::sort(pv.begin(), pv.end());
    std::sort(ov.begin(), ov.end());
    for (size_t i = 0; i < pv.size(); ++i)
      worst = std::max(worst, std::abs(pv[i] - ov[i]));
  }
  check.expect(worst <= 1e-6, "invariant multiset drift " + std::to_string(worst));

  double attn_clean = attn_ia(plain, a_off.model, &a_off.secret.tau).ttrsr;
  double attn_noisy = attn_ia(plain, a_on.model, &a_on.secret.tau).ttrsr;
  check.expect(attn_clean == 1.0, "attn-ia clean " + std::to_string(attn_clean));
  check.expect(attn_noisy < attn_clean,
               "attn-ia defaults " + std::to_string(attn_noisy));
}

void criterion_8_metric_oracles(Check& check) {
  // BFS over the Cayley graph, exhaustively for n <= 5
  for (int n = 2; n <= 5; ++n) {
    std::vector<Permutation> perms = all_permutations(n);
    Permutation id = perms.front();
    // distances from identity by BFS layers: d(id, g) = n - cycles(g)
    for (const Permutation& g : perms) {
      // BFS oracle
      int oracle = 0;
      {
        std::map<Permutation, int> dist;
        std::vector<Permutation> frontier = {id};
        dist[id] = 0;
        while (!dist.count(g)) {
          std::vector<Permutation> next;
          for (const Permutation& cur : frontier)
            for (int i = 0; i < n; ++i)
              for (int j = i + 1; j < n; ++j) {
                Permutation t = cur;
                std::swap(t[i], t[j]);
                if (!dist.count(t)) {
                  dist[t] = dist[cur] + 1;
                  next.push_back(t);
                }
              }
          frontier = std::move(next);
        }
        oracle = dist[g];
      }
      check.expect(perm_metric(id, g) == oracle, "perm metric mismatch");
    }
  }
  // brute force over alphabet permutations for n <= 4, l <= 4
  for (int n = 2; n <= 4; ++n) {
    std::vector<Permutation> perms = all_permutations(n);
    Permutation id = perms.front();
    for (int l = 1; l <= 4; ++l) {
      int total = 1;
      for (int i = 0; i < l; ++i) total *= n;
      for (int xi = 0; xi < total; ++xi)
        for (int yi = 0; yi < total; ++yi) {
          std::vector<int> x = index_to_sequence(xi, n, l);
          std::vector<int> y = index_to_sequence(yi, n, l);
          int best = -1;
          for (const Permutation& g : perms) {
            bool maps = true;
            for (int i = 0; i < l; ++i)
              if (g[x[i]] != y[i]) maps = false;
            if (!maps) continue;
            int d = perm_metric(id, g);
            if (best < 0 || d < best) best = d;
          }
          std::optional<int> got = seq_perm_metric(x, y, n);
          if (best < 0)
            check.expect(!got.has_value(), "expected infinite distance");
          else
            check.expect(got.has_value() && *got == best, "sequence metric mismatch");
        }
    }
  }
  Permutation id4 = {0, 1, 2, 3}, swap4 = {1, 0, 2, 3};
  check.expect(std::abs(geodesic_metric_perm(id4, swap4) - M_PI) <= 1e-9,
               "transposition geodesic distance");
  Rng rng(81);
  for (int t = 0; t < 1000; ++t) {
    int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    Permutation g(n), h(n);
    for (int i = 0; i < n; ++i) g[i] = h[i] = i;
    rng.shuffle(g);
    rng.shuffle(h);
    check.expect(geodesic_metric_perm(g, h) <= M_PI * perm_metric(g, h) + 1e-9,
                 "geodesic exceeded pi * permutation distance");
  }
}

void criterion_9_privacy_math(Check& check) {
  const int n = 3, l = 2;
  const double eps1 = 1.2;
  std::vector<std::vector<double>> family;
  std::vector<std::vector<int>> inputs;
  for (int i = 0; i < 9; ++i) {
    inputs.push_back(index_to_sequence(i, n, l));
    family.push_back(exp_mechanism_enumerate(n, l, eps1, inputs.back()));
  }
  auto metric = [&](int a, int b) -> std::optional<double> {
    std::optional<int> d = seq_perm_metric(inputs[a], inputs[b], n);
    if (!d) return std::nullopt;
    return static_cast<double>(*d);
  };
  check.expect(verify_rmdp(family, metric, eps1, 2.0) <= 1e-9,
               "exponential mechanism budget");

  Rng rng(91);
  Matrix theta = gaussian_matrix(8, 5, 1.0, rng);
  GaussianMatrixCheck gm = verify_gaussian_matrix_mechanism(theta, 0.5, 1000, 92);
  check.expect(gm.worst_operator_violation <= 1e-9, "operator-form bound");
  check.expect(gm.worst_geodesic_violation <= 1e-9, "geodesic-form bound");

  for (int nv : {4, 8, 16, 32, 64}) {
    for (double eps2 : {0.001, 0.01, 0.1, 0.5, 1.0}) {
      double at = 2.0 * (nv - 1) * eps2;
      check.expect(std::abs(compose_budget(at, eps2, nv) - at / 2.0) <= 1e-12,
                   "branch continuity");
      for (double e1 : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0})
        check.expect(compose_budget(e1, eps2, nv) < e1, "composed not below eps1");
    }
  }
}

void criterion_10_renyi_mc(Check& check) {
  struct Fixture {
    int dim;
    uint64_t seed;
  };
  std::vector<Fixture> fixtures = {{2, 1}, {2, 2}, {3, 3}, {3, 4}, {4, 5}};
  for (const Fixture& f : fixtures) {
    Rng rng(f.seed * 1000);
    Vector delta(f.dim);
    for (int i = 0; i < f.dim; ++i) delta(i) = 0.3 + 0.5 * rng.uniform();
    Matrix a = gaussian_matrix(f.dim, f.dim, 0.6, rng);
    Matrix cov = a * a.transpose() + Matrix::Identity(f.dim, f.dim);
    double s = 0.8 + 0.4 * rng.uniform();
    double closed = renyi_gaussian_equal_cov(delta, cov, s, 2.0);

    // D_2 = log E_{y~p}[p(y)/q(y)] with p = N(delta, s^2 cov), q = N(0, s^2 cov)
    Eigen::LLT<Matrix> llt(Matrix(s * s * cov));
    Matrix chol = llt.matrixL();
    double acc = 0.0;
    const int samples = 1000000;
    Eigen::VectorXd z(f.dim);
    Matrix prec = (s * s * cov).inverse();
    for (int it = 0; it < samples; ++it) {
      for (int i = 0; i < f.dim; ++i) z(i) = rng.normal();
      Eigen::VectorXd y = chol * z + delta.transpose();
      // log p - log q = -0.5 [(y-delta) P (y-delta) - y P y]
      Eigen::VectorXd centered = y - delta.transpose();
      double log_ratio =
          -0.5 * (centered.dot(prec * centered) - y.dot(prec * y));
      acc += std::exp(log_ratio);
    }
    double mc = std::log(acc / samples);
    double rel = std::abs(mc - closed) / closed;
    check.expect(rel <= 0.05, "MC deviation " + std::to_string(rel) + " at dim " +
                                  std::to_string(f.dim));
  }
}

void criterion_11_tfma(Check& check) {
  const int n = 32;
  std::vector<int32_t> plain_corpus;
  for (int t = 0; t < n; ++t)
    for (int c = 0; c <= t; ++c) plain_corpus.push_back(t);
  std::vector<int32_t> tau = sample_vocab_permutation(n, 111);
  std::vector<int32_t> inv(n);
  for (int i = 0; i < n; ++i) inv[tau[i]] = i;
  std::vector<int32_t> cipher;
  for (int32_t t : plain_corpus) cipher.push_back(inv[t]);
  AttackReport same = tfma(plain_corpus, cipher, n, {1}, &tau);
  check.expect(same.top_k[1] == 1.0, "identical-corpus top-1");

  double matched_total = 0.0, disjoint_total = 0.0;
  for (uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed * 7);
    auto zipf = [&](const std::vector<int32_t>& order, int draws) {
      std::vector<int32_t> corpus;
      double total = 0;
      for (int r = 0; r < n; ++r) total += 1.0 / (r + 1);
      for (int d = 0; d < draws; ++d) {
        double u = rng.uniform() * total, acc = 0;
        int pick = n - 1;
        for (int r = 0; r < n; ++r) {
          acc += 1.0 / (r + 1);
          if (u < acc) {
            pick = r;
            break;
          }
        }
        corpus.push_back(order[pick]);
      }
      return corpus;
    };
    std::vector<int32_t> order_a = sample_vocab_permutation(n, seed + 10);
    std::vector<int32_t> order_b = sample_vocab_permutation(n, seed + 20);
    std::vector<int32_t> client = zipf(order_a, 4000);
    std::vector<int32_t> tau_s = sample_vocab_permutation(n, seed + 30);
    std::vector<int32_t> inv_s(n);
    for (int i = 0; i < n; ++i) inv_s[tau_s[i]] = i;
    std::vector<int32_t> cipher_s;
    for (int32_t t : client) cipher_s.push_back(inv_s[t]);
    matched_total += tfma(zipf(order_a, 4000), cipher_s, n, {1}, &tau_s).top_k[1];
    disjoint_total += tfma(zipf(order_b, 4000), cipher_s, n, {1}, &tau_s).top_k[1];
  }
  check.expect(disjoint_total < matched_total,
               "disjoint prior " + std::to_string(disjoint_total) +
                   " vs matched " + std::to_string(matched_total));
}

void criterion_12_protocol(Check& check) {
  ModelWeights plain = random_model(toy_config(2), 121);
  ObfuscationResult r = obfuscate_model(plain, paper_params(122), false);
  Tokenizer tok(make_default_vocab(64));
  TokenMap map = token_map_from_secret(r.secret, tok.vocab());
  InferenceServer server(r.model, tok);
  server.start("127.0.0.1", 0);

  // The substring scan needs a fixture where tau moves every prompt token AND
  // no generated obfuscated id collides byte-wise with a scanned plaintext
  // token (obf id 10 legitimately prints as "w10" while encoding another
  // token). Pick the first collision-free prompt from a candidate list.
  std::vector<std::vector<int32_t>> candidates = {
      {10, 23, 42}, {11, 24, 43}, {12, 25, 44}, {13, 26, 45}, {14, 27, 46}};
  bool fixture_found = false;
  for (const std::vector<int32_t>& ids : candidates) {
    std::vector<std::string> words;
    bool fixed_point = false;
    for (int32_t id : ids) {
      words.push_back(tok.vocab()[id]);
      if (map.forward.at(words.back()) == words.back()) fixed_point = true;
    }
    if (fixed_point) continue;
    std::string prompt = words[0] + " " + words[1] + " " + words[2];
    std::string obf_prompt = client_obfuscate_prompt(prompt, tok, map);
    TokenSequence local_ids = tok.tokenize(obf_prompt);
    TokenSequence local_full = generate(local_ids, r.model, 8);
    TokenSequence local_new(local_full.begin() + local_ids.size(), local_full.end());
    bool collision = false;
    for (int32_t generated : local_new)
      for (int32_t id : ids)
        if (generated == id) collision = true;
    if (collision) continue;
    fixture_found = true;

    ordered_json req;
    req["type"] = "generate";
    req["prompt"] = obf_prompt;
    req["max_new_tokens"] = 8;
    std::string request_line = req.dump();
    std::string response_line = request_raw("127.0.0.1", server.port(), request_line);
    ordered_json resp = ordered_json::parse(response_line);
    check.expect(resp["token_ids"].get<TokenSequence>() == local_new,
                 "loopback ids differ from the local pipeline");
    check.expect(
        client_deobfuscate_response(resp["text"].get<std::string>(), tok, map) ==
            client_deobfuscate_response(tok.detokenize(local_new), tok, map),
        "decoded text differs");
    for (const std::string& t : words) {
      check.expect(request_line.find(t) == std::string::npos, "prompt token on wire");
      check.expect(response_line.find(t) == std::string::npos,
                   "prompt token in response");
    }
    std::string bad = request_raw("127.0.0.1", server.port(), "{broken");
    check.expect(bad.find("error") != std::string::npos,
                 "malformed line not rejected");
    std::string ok = request_raw("127.0.0.1", server.port(), request_line);
    check.expect(ok == response_line, "connection unusable after a malformed line");
    break;
  }
  check.expect(fixture_found, "no collision-free prompt fixture found");
  server.stop();
}

void criterion_13_kappa(Check& check) {
  KeyBase ortho = key_base_init(32, 0, 0.0, 131);
  KappaEstimate unit = estimate_kappa(ortho, 4096, 132);
  check.expect(std::abs(unit.mean - 1.0) <= 1e-6,
               "orthogonal kappa " + std::to_string(unit.mean));
  KeyBase base = key_base_init(32, 16, 0.3, 133);
  KappaEstimate a = estimate_kappa(base, 65536, 134);
  KappaEstimate b = estimate_kappa(base, 65536, 135);
  double rel = std::abs(a.mean - b.mean) / a.mean;
  check.expect(rel <= 0.005, "estimates differ by " + std::to_string(rel));
}

void criterion_14_cli_determinism(Check& check) {
  if (g_cli_path.empty()) {
    check.expect(false, "CLI path not provided");
    return;
  }
  fs::path ws = fs::temp_directory_path() / "covobf_accept_ws";
  fs::remove_all(ws);
  fs::create_directories(ws);
  std::string plain = (ws / "plain").string();
  std::string obf = (ws / "obf").string();
  std::string keys = (ws / "keys").string();
  std::string secret = (ws / "secret.json").string();

  CliRun gen = run_cli("genmodel --vocab 64 --hidden 32 --layers 2 --heads 4 "
                       "--kv-heads 2 --head-dim 8 --ffn 64 --seed 9 --out " + plain);
  check.expect(gen.exit_code == 0, "genmodel failed");
  CliRun ob = run_cli("obfuscate --model " + plain + " --out " + obf +
                      " --secret-out " + secret + " --seed 10 --expand-h 4 "
                      "--debug-keys " + keys);
  check.expect(ob.exit_code == 0, "obfuscate failed");

  std::vector<std::string> commands = {
      "budget --model " + plain + " --alpha-e 1.0 --alpha-h 0.2 --eps1 2.0",
      "attack --attack vma --plain " + plain + " --obf " + obf + " --truth " + secret,
      "attack --attack gram-nn --plain " + plain + " --obf " + obf + " --truth " +
          secret,
      "verify --plain " + plain + " --obf " + obf + " --debug-keys " + keys +
          " --secret " + secret + " --seed 11",
      "infer --model " + plain + " --prompt \"w10 w20\" --max-new 4",
  };
  for (const std::string& cmd : commands) {
    CliRun first = run_cli(cmd);
    CliRun second = run_cli(cmd);
    check.expect(first.exit_code == 0, "command failed: " + cmd);
    check.expect(first.out == second.out, "report not byte-identical: " + cmd);
  }
  fs::remove_all(ws);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli_path = argv[1];

  criterion(1, "key-matrix cancellation over the (d, h, lambda) grid",
            criterion_1_key_cancellation);
  criterion(2, "exact-regime end-to-end logits and greedy sequences",
            criterion_2_exact_regime);
  criterion(3, "RMSNorm fusion preserves logits", criterion_3_fusion);
  criterion(4, "per-component commutation identities", criterion_4_commutation);
  criterion(5, "composition-theorem bounds and full-model error bound",
            criterion_5_composition_bounds);
  criterion(6, "VMA regimes: exact recovery, strict decrease under noise",
            criterion_6_vma_regimes);
  criterion(7, "Gate-IA and Attn-IA regimes", criterion_7_invariant_attacks);
  criterion(8, "metric oracles (BFS, brute force, geodesic)",
            criterion_8_metric_oracles);
  criterion(9, "privacy math: exponential mechanism, Gaussian bounds, composition",
            criterion_9_privacy_math);
  criterion(10, "closed-form Renyi-2 vs Monte-Carlo", criterion_10_renyi_mc);
  criterion(11, "TFMA corpus fixtures", criterion_11_tfma);
  criterion(12, "protocol loopback, wire scan, resilience", criterion_12_protocol);
  criterion(13, "kappa estimator", criterion_13_kappa);
  criterion(14, "CLI report determinism", criterion_14_cli_determinism);

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all acceptance criteria passed\n";
  return 0;
}
