#include "core/report.hpp"

namespace covobf {

using ordered_json = nlohmann::ordered_json;

ordered_json to_json(const ErrorReport& r) {
  ordered_json j;
  j["e_embed"] = r.e_embed;
  j["e_head"] = r.e_head;
  j["e_norm"] = r.e_norm;
  j["e_attn"] = r.e_attn;
  j["e_ffn"] = r.e_ffn;
  j["m_norm"] = r.m_norm;
  j["m_attn"] = r.m_attn;
  j["m_ffn"] = r.m_ffn;
  j["m_decoder"] = r.m_decoder;
  j["m_head"] = r.m_head;
  j["bound_decoder"] = r.bound_decoder;
  j["bound_total"] = r.bound_total;
  j["measured_final"] = r.measured_final;
  j["trace_errors"] = r.trace_errors;
  j["token_agreement"] = r.token_agreement;
  j["kappa"] = r.kappa;
  j["kappa_stderr"] = r.kappa_stderr;
  return j;
}

ordered_json to_json(const AttackReport& r) {
  ordered_json j;
  j["attack"] = r.attack;
  j["recovered"] = r.recovered;
  if (r.ttrsr >= 0.0) j["ttrsr"] = r.ttrsr;
  if (!r.top_k.empty()) {
    ordered_json tk = ordered_json::object();
    for (const auto& [k, acc] : r.top_k) tk["top_" + std::to_string(k)] = acc;
    j["top_k"] = tk;
  }
  if (!r.combos.empty()) {
    j["combos"] = r.combos;
    j["combo_agreement"] = r.combo_agreement;
  }
  return j;
}

ordered_json to_json(const BudgetReport& r) {
  ordered_json j;
  j["alpha"] = r.alpha;
  j["sigma_e"] = r.sigma_e;
  j["sigma_h"] = r.sigma_h;
  j["lambda1_e"] = r.lambda1_e;
  j["lambda2_e"] = r.lambda2_e;
  j["lambda1_h"] = r.lambda1_h;
  j["lambda2_h"] = r.lambda2_h;
  j["eps_e"] = r.eps_e;
  j["eps_h"] = r.eps_h;
  j["eps2"] = r.eps2;
  if (r.eps1) {
    j["eps1"] = *r.eps1;
    j["composed"] = *r.composed;
    j["branch"] = r.branch;
  }
  return j;
}

ordered_json report_envelope(const std::string& command, uint64_t seed,
                             const ordered_json& flags, const ordered_json& body) {
  ordered_json j;
  j["tool"] = "covobf";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["flags"] = flags;
  j["report"] = body;
  return j;
}

}  // namespace covobf
