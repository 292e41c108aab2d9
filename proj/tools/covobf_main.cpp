// covobf command-line tool. Machine-readable JSON goes to stdout, human
// summaries to stderr. Exit codes: 0 ok, 2 usage, 3 data error, 4 invariant
// violation.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "covobf.h"

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;

uint64_t seed_fallback() {
  const char* env = std::getenv("COVOBF_SEED");
  if (!env) return 0;
  return std::strtoull(env, nullptr, 10);
}

int finish(covobf_status status, const std::string& context) {
  if (status == COVOBF_OK) return 0;
  std::cerr << "error: " << context << ": " << covobf_last_error() << "\n";
  return static_cast<int>(status);
}

void emit(const std::string& command, uint64_t seed, const ordered_json& flags,
          const ordered_json& body) {
  ordered_json envelope;
  envelope["tool"] = "covobf";
  envelope["version"] = covobf_version();
  envelope["command"] = command;
  envelope["seed"] = seed;
  envelope["flags"] = flags;
  envelope["report"] = body;
  std::cout << envelope.dump(2) << "\n";
}

ordered_json parse_body(char* json_c) {
  ordered_json body = ordered_json::parse(json_c, nullptr, false);
  covobf_string_free(json_c);
  return body;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariant obfuscation toolkit for toy transformer inference"};
  app.require_subcommand(1);

  // ---- genmodel ----
  auto* gen = app.add_subcommand("genmodel", "generate a random toy model");
  int g_vocab = 64, g_hidden = 32, g_layers = 2, g_heads = 4, g_kv = 2, g_head_dim = 8,
      g_ffn = 64, g_experts = 0, g_topk = 0, g_max_seq = 64;
  double g_rope = 1e4, g_eps = 1e-6;
  uint64_t g_seed = seed_fallback();
  std::string g_out;
  gen->add_option("--vocab", g_vocab, "vocabulary size");
  gen->add_option("--hidden", g_hidden, "hidden size");
  gen->add_option("--layers", g_layers, "decoder layers");
  gen->add_option("--heads", g_heads, "query heads");
  gen->add_option("--kv-heads", g_kv, "key/value heads");
  gen->add_option("--head-dim", g_head_dim, "per-head dimension (even)");
  gen->add_option("--ffn", g_ffn, "FFN intermediate dimension");
  gen->add_option("--experts", g_experts, "MoE experts (0 = dense)");
  gen->add_option("--topk", g_topk, "activated experts");
  gen->add_option("--rope-base", g_rope, "RoPE base");
  gen->add_option("--eps-norm", g_eps, "RMSNorm epsilon");
  gen->add_option("--max-seq", g_max_seq, "maximum sequence length");
  gen->add_option("--seed", g_seed, "RNG seed");
  gen->add_option("--out", g_out, "output model directory")->required();

  // ---- obfuscate ----
  auto* obf = app.add_subcommand("obfuscate", "obfuscate a model offline");
  std::string o_model, o_out, o_secret, o_debug;
  double o_alpha_e = 1.0, o_alpha_h = 0.2, o_lambda = 0.3, o_gamma = 1e3;
  int o_expand = 16, o_beta = 8;
  uint64_t o_seed = seed_fallback();
  bool o_id_base = false, o_id_perms = false, o_id_intra = false;
  obf->add_option("--model", o_model, "plaintext model directory")->required();
  obf->add_option("--out", o_out, "obfuscated model directory")->required();
  obf->add_option("--secret-out", o_secret, "client secret path")->required();
  obf->add_option("--alpha-e", o_alpha_e, "embedding noise coefficient");
  obf->add_option("--alpha-h", o_alpha_h, "head noise coefficient");
  obf->add_option("--lambda", o_lambda, "key matrix coefficient");
  obf->add_option("--expand-h", o_expand, "expansion size h");
  obf->add_option("--beta", o_beta, "max block permutation window");
  obf->add_option("--gamma", o_gamma, "window sampling parameter");
  obf->add_option("--seed", o_seed, "RNG seed");
  obf->add_option("--debug-keys", o_debug, "write verification key material here");
  obf->add_flag("--identity-base", o_id_base, "test: B = Z = I, h = 0");
  obf->add_flag("--identity-perms", o_id_perms, "test: identity permutations");
  obf->add_flag("--identity-intra", o_id_intra, "test: identity intra-head transforms");

  // ---- infer ----
  auto* inf = app.add_subcommand("infer", "run inference locally or remotely");
  std::string i_model, i_addr, i_secret, i_prompt;
  int i_max_new = 16;
  double i_temp = 0.0;
  uint64_t i_seed = seed_fallback();
  inf->add_option("--model", i_model, "local model directory");
  inf->add_option("--addr", i_addr, "remote server host:port");
  inf->add_option("--secret", i_secret, "client secret for the obfuscated round trip");
  inf->add_option("--prompt", i_prompt, "prompt text")->required();
  inf->add_option("--max-new", i_max_new, "tokens to generate");
  inf->add_option("--temperature", i_temp, "demo sampler temperature (0 = greedy)");
  inf->add_option("--seed", i_seed, "sampler seed");

  // ---- serve ----
  auto* srv = app.add_subcommand("serve", "serve a model over TCP");
  std::string s_model, s_bind = "127.0.0.1:7700";
  srv->add_option("--model", s_model, "model directory")->required();
  srv->add_option("--bind", s_bind, "bind address host:port");

  // ---- verify ----
  auto* ver = app.add_subcommand("verify", "equivalence and error-bound report");
  std::string v_plain, v_obf, v_debug, v_secret;
  uint64_t v_seed = seed_fallback();
  bool v_oracle = false;
  ver->add_option("--plain", v_plain, "plaintext model directory")->required();
  ver->add_option("--obf", v_obf, "obfuscated model directory")->required();
  ver->add_option("--debug-keys", v_debug, "debug key directory")->required();
  ver->add_option("--secret", v_secret, "client secret path")->required();
  ver->add_option("--seed", v_seed, "RNG seed");
  ver->add_flag("--oracle-norm", v_oracle, "use the test-only norm oracle");

  // ---- attack ----
  auto* atk = app.add_subcommand("attack", "run a recovery attack");
  std::string a_name, a_plain, a_obf, a_truth, a_vocab;
  atk->add_option("--attack", a_name, "vma|gate-ia|attn-ia|gram-nn|tfma")->required();
  atk->add_option("--plain", a_plain, "plaintext model dir (tfma: prior corpus file)")
      ->required();
  atk->add_option("--obf", a_obf, "obfuscated model dir (tfma: cipher corpus file)")
      ->required();
  atk->add_option("--truth", a_truth, "secret file for TTRSR scoring");
  atk->add_option("--vocab", a_vocab, "vocab directory (tfma)");

  // ---- budget ----
  auto* bud = app.add_subcommand("budget", "RmDP privacy budget report");
  std::string b_model;
  double b_alpha_e = 1.0, b_alpha_h = 0.2;
  std::optional<double> b_eps1;
  bud->add_option("--model", b_model, "model directory")->required();
  bud->add_option("--alpha-e", b_alpha_e, "embedding noise coefficient");
  bud->add_option("--alpha-h", b_alpha_h, "head noise coefficient");
  bud->add_option("--eps1", b_eps1, "online exponential-mechanism budget");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;  // --help exits cleanly
  }

  if (gen->parsed()) {
    ordered_json cfg;
    cfg["n_vocab"] = g_vocab;
    cfg["hidden_size"] = g_hidden;
    cfg["n_layers"] = g_layers;
    cfg["n_heads"] = g_heads;
    cfg["n_kv_heads"] = g_kv;
    cfg["head_dim"] = g_head_dim;
    cfg["ffn_dim"] = g_ffn;
    cfg["n_experts"] = g_experts;
    cfg["top_k_experts"] = g_topk;
    cfg["rope_base"] = g_rope;
    cfg["eps_norm"] = g_eps;
    cfg["max_seq"] = g_max_seq;
    covobf_model* model = nullptr;
    covobf_status st = covobf_model_random(cfg.dump().c_str(), g_seed, &model);
    if (st == COVOBF_OK) st = covobf_model_save(model, g_out.c_str());
    covobf_model_free(model);
    if (st != COVOBF_OK) return finish(st, "genmodel");
    emit("genmodel", g_seed, cfg, ordered_json{{"out", g_out}});
    std::cerr << "wrote model to " << g_out << "\n";
    return 0;
  }

  if (obf->parsed()) {
    ordered_json params;
    params["lambda"] = o_lambda;
    params["expand"] = o_expand;
    params["alpha_embed"] = o_alpha_e;
    params["alpha_head"] = o_alpha_h;
    params["beta"] = o_beta;
    params["gamma"] = o_gamma;
    params["seed"] = o_seed;
    params["identity_base"] = o_id_base;
    params["identity_perms"] = o_id_perms;
    params["identity_intra"] = o_id_intra;
    covobf_model* model = nullptr;
    covobf_status st = covobf_model_load(o_model.c_str(), &model);
    if (st == COVOBF_OK)
      st = covobf_obfuscate(model, params.dump().c_str(), o_out.c_str(),
                            o_secret.c_str(), o_debug.empty() ? nullptr : o_debug.c_str());
    covobf_model_free(model);
    if (st != COVOBF_OK) return finish(st, "obfuscate");
    ordered_json flags = params;
    flags["model"] = o_model;
    flags["out"] = o_out;
    flags["secret_out"] = o_secret;
    flags["debug_keys"] = o_debug;
    emit("obfuscate", o_seed, flags,
         ordered_json{{"out", o_out}, {"secret", o_secret}});
    std::cerr << "wrote obfuscated model to " << o_out << "\n";
    return 0;
  }

  if (inf->parsed()) {
    if (i_model.empty() && i_addr.empty()) {
      std::cerr << "error: infer needs --model or --addr\n";
      return kExitUsage;
    }
    if (!i_addr.empty() && !i_secret.empty() && i_model.empty()) {
      std::cerr << "error: the remote secret round trip needs --model as the "
                   "vocabulary source\n";
      return kExitUsage;
    }
    ordered_json flags{{"model", i_model},     {"addr", i_addr},
                       {"secret", i_secret},   {"prompt", i_prompt},
                       {"max_new", i_max_new}, {"temperature", i_temp}};
    char* body = nullptr;
    covobf_status st = COVOBF_OK;
    if (!i_addr.empty()) {
      size_t colon = i_addr.rfind(':');
      if (colon == std::string::npos) {
        std::cerr << "error: --addr must be host:port\n";
        return kExitUsage;
      }
      std::string host = i_addr.substr(0, colon);
      int port = std::atoi(i_addr.c_str() + colon + 1);
      std::string vocab_dir = i_model.empty() ? "" : i_model;
      // remote mode still needs the vocabulary; require --model as vocab
      // source only when a secret round trip is requested
      if (i_secret.empty()) {
        st = covobf_client_generate(host.c_str(), port, nullptr, nullptr,
                                    i_prompt.c_str(), i_max_new, &body);
      } else {
        st = covobf_client_generate(host.c_str(), port, vocab_dir.c_str(),
                                    i_secret.c_str(), i_prompt.c_str(), i_max_new,
                                    &body);
      }
    } else {
      if (i_secret.empty()) {
        covobf_model* model = nullptr;
        st = covobf_model_load(i_model.c_str(), &model);
        if (st == COVOBF_OK)
          st = covobf_generate(model, i_prompt.c_str(), i_max_new, i_temp, i_seed,
                               &body);
        covobf_model_free(model);
      } else {
        st = covobf_client_generate_local(i_model.c_str(), i_secret.c_str(),
                                          i_prompt.c_str(), i_max_new, &body);
      }
    }
    if (st != COVOBF_OK) return finish(st, "infer");
    ordered_json parsed = parse_body(body);
    emit("infer", i_seed, flags, parsed);
    std::cerr << "text: " << parsed.value("text", "") << "\n";
    return 0;
  }

  if (srv->parsed()) {
    size_t colon = s_bind.rfind(':');
    if (colon == std::string::npos) {
      std::cerr << "error: --bind must be host:port\n";
      return kExitUsage;
    }
    std::string host = s_bind.substr(0, colon);
    int port = std::atoi(s_bind.c_str() + colon + 1);
    covobf_server* server = nullptr;
    covobf_status st = covobf_server_start(s_model.c_str(), host.c_str(), port, &server);
    if (st != COVOBF_OK) return finish(st, "serve");
    std::cerr << "serving " << s_model << " on " << host << ":"
              << covobf_server_port(server) << "\n";
    covobf_server_wait(server);
    covobf_server_free(server);
    return 0;
  }

  if (ver->parsed()) {
    char* body = nullptr;
    covobf_status st =
        covobf_verify(v_plain.c_str(), v_obf.c_str(), v_debug.c_str(),
                      v_secret.c_str(), v_seed, v_oracle ? 1 : 0, &body);
    if (st != COVOBF_OK) return finish(st, "verify");
    ordered_json flags{{"plain", v_plain},
                       {"obf", v_obf},
                       {"debug_keys", v_debug},
                       {"secret", v_secret},
                       {"oracle_norm", v_oracle}};
    ordered_json parsed = parse_body(body);
    emit("verify", v_seed, flags, parsed);
    std::cerr << "measured final error " << parsed.value("measured_final", 0.0)
              << " vs bound " << parsed.value("bound_total", 0.0) << "\n";
    return 0;
  }

  if (atk->parsed()) {
    char* body = nullptr;
    covobf_status st = covobf_attack(
        a_name.c_str(), a_plain.c_str(), a_obf.c_str(),
        a_truth.empty() ? nullptr : a_truth.c_str(),
        a_vocab.empty() ? nullptr : a_vocab.c_str(), &body);
    if (st != COVOBF_OK) return finish(st, "attack");
    ordered_json flags{{"attack", a_name},
                       {"plain", a_plain},
                       {"obf", a_obf},
                       {"truth", a_truth},
                       {"vocab", a_vocab}};
    ordered_json parsed = parse_body(body);
    emit("attack", 0, flags, parsed);
    if (parsed.contains("ttrsr"))
      std::cerr << a_name << " TTRSR " << parsed["ttrsr"].get<double>() << "\n";
    return 0;
  }

  if (bud->parsed()) {
    char* body = nullptr;
    double eps1_val = b_eps1.value_or(0.0);
    covobf_status st = covobf_budget(b_model.c_str(), b_alpha_e, b_alpha_h,
                                     b_eps1 ? &eps1_val : nullptr, &body);
    if (st != COVOBF_OK) return finish(st, "budget");
    ordered_json flags{{"model", b_model},
                       {"alpha_e", b_alpha_e},
                       {"alpha_h", b_alpha_h}};
    if (b_eps1) flags["eps1"] = *b_eps1;
    ordered_json parsed = parse_body(body);
    emit("budget", 0, flags, parsed);
    std::cerr << "eps2 = " << parsed.value("eps2", 0.0) << "\n";
    return 0;
  }

  return kExitUsage;
}
