#pragma once

#include <nlohmann/json.hpp>

#include "core/attacks.hpp"
#include "core/privacy.hpp"
#include "core/verify.hpp"

namespace covobf {

inline constexpr const char* kToolVersion = "0.1.0";

nlohmann::ordered_json to_json(const ErrorReport& r);
nlohmann::ordered_json to_json(const AttackReport& r);
nlohmann::ordered_json to_json(const BudgetReport& r);

// Report envelope: {"tool", "version", "command", "seed", "flags", ...body}.
// Identical inputs serialize byte-identically.
nlohmann::ordered_json report_envelope(const std::string& command, uint64_t seed,
                                       const nlohmann::ordered_json& flags,
                                       const nlohmann::ordered_json& body);

}  // namespace covobf
