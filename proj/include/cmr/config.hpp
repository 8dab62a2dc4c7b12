#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "cmr/builtins.hpp"

namespace cmr {

/// A fully resolved run request: the law/model pair (builtin or custom), the
/// task to run and its parameters.
struct RunRequest {
    DiscreteLaw law;
    MomentModel model;
    std::optional<MissingDataSpec> spec;
    std::string task;       // bound | score | oracle | missing | estimate | mc
    nlohmann::json params;  // task parameter object (may be empty)
};

/// Parse and validate a config document. Accepts either {"dgp": name} or
/// explicit {"law": ..., "model": ...} (+ optional {"missing": ...}), plus
/// {"task": ...} and an optional {"params": ...} object. Violations throw
/// ContractViolation with the offending key.
RunRequest parse_config(const nlohmann::json& config);

/// Execute a parsed request and return its report. seed_override, when set,
/// replaces the config seed for sampling tasks.
nlohmann::json run_task(const RunRequest& request,
                        std::optional<std::uint64_t> seed_override = {});

/// The registry listing printed by the CLI: builtins with example configs,
/// residual families, selection families, instrument families.
nlohmann::json registry_listing();

}  // namespace cmr
