#include "covobf.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "core/attacks.hpp"
#include "core/errors.hpp"
#include "core/obfuscate.hpp"
#include "core/privacy.hpp"
#include "core/protocol.hpp"
#include "core/report.hpp"
#include "core/tensor_io.hpp"
#include "core/tokenizer.hpp"
#include "core/verify.hpp"

using ordered_json = nlohmann::ordered_json;

namespace {

thread_local std::string g_last_error = "";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

covobf_status fail(covobf_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
covobf_status guarded(Fn&& fn) {
  try {
    fn();
    return COVOBF_OK;
  } catch (const covobf::InvariantError& e) {
    return fail(COVOBF_ERR_INVARIANT, e.what());
  } catch (const covobf::DataError& e) {
    return fail(COVOBF_ERR_DATA, e.what());
  } catch (const std::exception& e) {
    return fail(COVOBF_ERR_DATA, e.what());
  }
}

covobf::ModelConfig config_from_json_string(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw covobf::DataError("malformed config JSON");
  covobf::ModelConfig cfg;
  cfg.n_vocab = j.value("n_vocab", 64);
  cfg.hidden = j.value("hidden_size", 32);
  cfg.n_layers = j.value("n_layers", 2);
  cfg.n_heads = j.value("n_heads", 4);
  cfg.n_kv_heads = j.value("n_kv_heads", 2);
  cfg.head_dim = j.value("head_dim", 8);
  cfg.ffn_dim = j.value("ffn_dim", 64);
  cfg.n_experts = j.value("n_experts", 0);
  cfg.top_k_experts = j.value("top_k_experts", 0);
  cfg.rope_base = j.value("rope_base", 1e4);
  cfg.eps_norm = j.value("eps_norm", 1e-6);
  cfg.max_seq = j.value("max_seq", 64);
  cfg.validate();
  return cfg;
}

covobf::ObfuscationParams obf_params_from_json_string(const std::string& text) {
  ordered_json j = ordered_json::parse(text.empty() ? "{}" : text, nullptr, false);
  if (j.is_discarded()) throw covobf::DataError("malformed params JSON");
  covobf::ObfuscationParams p;
  p.lambda = j.value("lambda", p.lambda);
  p.expand = j.value("expand", p.expand);
  p.alpha_embed = j.value("alpha_embed", p.alpha_embed);
  p.alpha_head = j.value("alpha_head", p.alpha_head);
  p.beta = j.value("beta", p.beta);
  p.gamma = j.value("gamma", p.gamma);
  p.seed = j.value("seed", p.seed);
  p.kappa_samples = j.value("kappa_samples", p.kappa_samples);
  p.identity_base = j.value("identity_base", p.identity_base);
  p.identity_perms = j.value("identity_perms", p.identity_perms);
  p.identity_head_perms = j.value("identity_head_perms", p.identity_head_perms);
  p.identity_intra = j.value("identity_intra", p.identity_intra);
  p.validate();
  return p;
}

std::vector<int32_t> read_corpus_file(const std::string& path,
                                      const covobf::Tokenizer& tok) {
  std::ifstream in(path);
  if (!in) throw covobf::DataError("cannot open corpus " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return tok.tokenize(text);
}

}  // namespace

struct covobf_model {
  covobf::ModelWeights weights;
  std::vector<std::string> vocab;
};

struct covobf_server {
  std::unique_ptr<covobf::InferenceServer> impl;
};

extern "C" {

const char* covobf_version(void) { return covobf::kToolVersion; }

const char* covobf_last_error(void) { return g_last_error.c_str(); }

void covobf_string_free(char* s) { std::free(s); }

covobf_status covobf_model_random(const char* config_json, uint64_t seed,
                                  covobf_model** out) {
  if (!config_json || !out) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ModelConfig cfg = config_from_json_string(config_json);
    auto* m = new covobf_model;
    m->weights = covobf::random_model(cfg, seed);
    m->vocab = covobf::make_default_vocab(cfg.n_vocab);
    *out = m;
  });
}

covobf_status covobf_model_load(const char* dir, covobf_model** out) {
  if (!dir || !out) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    auto* m = new covobf_model;
    m->weights = covobf::load_model(dir);
    m->vocab = covobf::load_vocab(dir);
    *out = m;
  });
}

covobf_status covobf_model_save(const covobf_model* model, const char* dir) {
  if (!model || !dir) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] { covobf::save_model(model->weights, model->vocab, dir); });
}

covobf_status covobf_model_config(const covobf_model* model, char** out_json) {
  if (!model || !out_json) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    const covobf::ModelConfig& c = model->weights.config;
    ordered_json j;
    j["n_vocab"] = c.n_vocab;
    j["hidden_size"] = c.hidden;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["n_kv_heads"] = c.n_kv_heads;
    j["head_dim"] = c.head_dim;
    j["ffn_dim"] = c.ffn_dim;
    j["n_experts"] = c.n_experts;
    j["top_k_experts"] = c.top_k_experts;
    j["rope_base"] = c.rope_base;
    j["eps_norm"] = c.eps_norm;
    j["max_seq"] = c.max_seq;
    j["obfuscated"] = c.obfuscated;
    *out_json = dup_string(j.dump());
  });
}

void covobf_model_free(covobf_model* model) { delete model; }

covobf_status covobf_generate(const covobf_model* model, const char* prompt,
                              int max_new_tokens, double temperature,
                              uint64_t sample_seed, char** out_json) {
  if (!model || !prompt || !out_json) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::Tokenizer tok(model->vocab);
    covobf::TokenSequence ids = tok.tokenize(prompt);
    covobf::TokenSequence full =
        temperature > 0.0
            ? covobf::generate_sampled(ids, model->weights, max_new_tokens,
                                       temperature, sample_seed)
            : covobf::generate(ids, model->weights, max_new_tokens);
    covobf::TokenSequence fresh(full.begin() + static_cast<long>(ids.size()),
                                full.end());
    ordered_json j;
    j["text"] = tok.detokenize(fresh);
    j["token_ids"] = fresh;
    *out_json = dup_string(j.dump());
  });
}

covobf_status covobf_obfuscate(const covobf_model* model, const char* params_json,
                               const char* out_dir, const char* secret_path,
                               const char* debug_keys_dir) {
  if (!model || !out_dir || !secret_path)
    return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ObfuscationParams params =
        obf_params_from_json_string(params_json ? params_json : "{}");
    covobf::ObfuscationResult result =
        covobf::obfuscate_model(model->weights, params, debug_keys_dir != nullptr);
    covobf::save_model(result.model, model->vocab, out_dir);
    covobf::save_secret(result.secret, secret_path);
    if (debug_keys_dir) covobf::save_debug_keys(*result.debug, debug_keys_dir);
  });
}

covobf_status covobf_verify(const char* plain_dir, const char* obf_dir,
                            const char* debug_keys_dir, const char* secret_path,
                            uint64_t seed, int oracle_norm, char** out_report_json) {
  if (!plain_dir || !obf_dir || !debug_keys_dir || !secret_path || !out_report_json)
    return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ModelWeights plain = covobf::load_model(plain_dir);
    covobf::ModelWeights obf = covobf::load_model(obf_dir);
    covobf::DebugKeys keys = covobf::load_debug_keys(debug_keys_dir);
    covobf::ClientSecret secret = covobf::load_secret(secret_path);
    covobf::ErrorReport report =
        covobf::verify_report(plain, obf, keys, secret, seed, oracle_norm != 0);
    *out_report_json = dup_string(covobf::to_json(report).dump());
  });
}

covobf_status covobf_attack(const char* attack, const char* plain_dir,
                            const char* obf_dir, const char* truth_secret_path,
                            const char* vocab_dir, char** out_report_json) {
  if (!attack || !plain_dir || !obf_dir || !out_report_json)
    return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    std::string name = attack;
    std::optional<covobf::ClientSecret> secret;
    if (truth_secret_path) secret = covobf::load_secret(truth_secret_path);
    const std::vector<int32_t>* truth = secret ? &secret->tau : nullptr;

    covobf::AttackReport report;
    if (name == "tfma") {
      if (!vocab_dir) throw covobf::DataError("tfma needs a vocab directory");
      covobf::Tokenizer tok(covobf::load_vocab(vocab_dir));
      std::vector<int32_t> prior = read_corpus_file(plain_dir, tok);
      std::vector<int32_t> cipher = read_corpus_file(obf_dir, tok);
      report = covobf::tfma(prior, cipher, tok.size(), {1, 10, 100}, truth);
    } else {
      covobf::ModelWeights plain = covobf::load_model(plain_dir);
      covobf::ModelWeights obf = covobf::load_model(obf_dir);
      if (name == "vma")
        report = covobf::vma_full(plain, obf, truth);
      else if (name == "gate-ia")
        report = covobf::gate_ia(plain, obf, truth);
      else if (name == "attn-ia")
        report = covobf::attn_ia(plain, obf, truth);
      else if (name == "gram-nn")
        report = covobf::gram_nn(plain.embed, obf.embed, truth);
      else
        throw covobf::DataError("unknown attack: " + name);
    }
    *out_report_json = dup_string(covobf::to_json(report).dump());
  });
}

covobf_status covobf_budget(const char* model_dir, double alpha_embed,
                            double alpha_head, const double* eps1_opt,
                            char** out_report_json) {
  if (!model_dir || !out_report_json) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ModelWeights w = covobf::load_model(model_dir);
    std::optional<double> eps1;
    if (eps1_opt) eps1 = *eps1_opt;
    covobf::BudgetReport report =
        covobf::budget_report(w, alpha_embed, alpha_head, eps1);
    *out_report_json = dup_string(covobf::to_json(report).dump());
  });
}

covobf_status covobf_server_start(const char* model_dir, const char* host, int port,
                                  covobf_server** out) {
  if (!model_dir || !host || !out) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ModelWeights w = covobf::load_model(model_dir);
    covobf::Tokenizer tok(covobf::load_vocab(model_dir));
    auto* s = new covobf_server;
    s->impl = std::make_unique<covobf::InferenceServer>(std::move(w), std::move(tok));
    try {
      s->impl->start(host, port);
    } catch (...) {
      delete s;
      throw;
    }
    *out = s;
  });
}

int covobf_server_port(const covobf_server* server) {
  return server ? server->impl->port() : -1;
}

covobf_status covobf_server_wait(covobf_server* server) {
  if (!server) return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] { server->impl->wait(); });
}

void covobf_server_stop(covobf_server* server) {
  if (server) server->impl->stop();
}

void covobf_server_free(covobf_server* server) { delete server; }

covobf_status covobf_client_generate_local(const char* model_dir,
                                           const char* secret_path,
                                           const char* prompt, int max_new_tokens,
                                           char** out_json) {
  if (!model_dir || !secret_path || !prompt || !out_json)
    return fail(COVOBF_ERR_USAGE, "null argument");
  return guarded([&] {
    covobf::ModelWeights w = covobf::load_model(model_dir);
    covobf::Tokenizer tok(covobf::load_vocab(model_dir));
    covobf::ClientSecret secret = covobf::load_secret(secret_path);
    covobf::TokenMap map = covobf::token_map_from_secret(secret, tok.vocab());
    std::string obf_prompt = covobf::client_obfuscate_prompt(prompt, tok, map);
    covobf::TokenSequence ids = tok.tokenize(obf_prompt);
    covobf::TokenSequence full = covobf::generate(ids, w, max_new_tokens);
    covobf::TokenSequence fresh(full.begin() + static_cast<long>(ids.size()),
                                full.end());
    std::string text =
        covobf::client_deobfuscate_response(tok.detokenize(fresh), tok, map);
    ordered_json j;
    j["text"] = text;
    j["token_ids"] = tok.tokenize(text);
    j["raw_token_ids"] = fresh;
    *out_json = dup_string(j.dump());
  });
}

covobf_status covobf_client_generate(const char* host, int port,
                                     const char* vocab_dir, const char* secret_path,
                                     const char* prompt, int max_new_tokens,
                                     char** out_json) {
  if (!host || !prompt || !out_json)
    return fail(COVOBF_ERR_USAGE, "null argument");
  if (secret_path && !vocab_dir)
    return fail(COVOBF_ERR_USAGE, "secret round trip needs a vocab directory");
  return guarded([&] {
    ordered_json j;
    if (secret_path) {
      covobf::Tokenizer tok(covobf::load_vocab(vocab_dir));
      covobf::ClientSecret secret = covobf::load_secret(secret_path);
      covobf::TokenMap map = covobf::token_map_from_secret(secret, tok.vocab());
      std::string obf_prompt = covobf::client_obfuscate_prompt(prompt, tok, map);
      covobf::GenerateResponse resp =
          covobf::request_generate(host, port, obf_prompt, max_new_tokens);
      std::string text = covobf::client_deobfuscate_response(resp.text, tok, map);
      covobf::TokenSequence decoded_ids = tok.tokenize(text);
      j["text"] = text;
      j["token_ids"] = decoded_ids;
      j["raw_token_ids"] = resp.token_ids;
    } else {
      covobf::GenerateResponse resp =
          covobf::request_generate(host, port, prompt, max_new_tokens);
      j["text"] = resp.text;
      j["token_ids"] = resp.token_ids;
    }
    *out_json = dup_string(j.dump());
  });
}

}  // extern "C"
