#pragma once

#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/missing_data.hpp"
#include "cmr/model.hpp"

namespace cmr {

/// A ready-to-run law/model pair from the registry, with the missing-data
/// declaration attached when the blocks came from one.
struct Builtin {
    std::string name;
    std::string description;
    DiscreteLaw law;
    MomentModel model;
    std::optional<MissingDataSpec> spec;
    nlohmann::json example_config;  // a config snippet that reconstructs it
};

std::vector<std::string> builtin_names();
Builtin make_builtin(const std::string& name);

/// Registry entry for one residual family constructible from config.
struct FamilyInfo {
    std::string name;
    std::string description;
    nlohmann::json schema;  // parameter names and types
};

std::vector<FamilyInfo> block_family_registry();
std::vector<FamilyInfo> selection_family_registry();
std::vector<FamilyInfo> instrument_family_registry();

/// Build one moment block from a config object; see block_family_registry()
/// for the accepted families and parameters.
MomentBlock make_block(const nlohmann::json& config, int z_dim, int param_dim);

/// Seeded generator of small two-block test laws with exactly satisfied
/// restrictions: binary conditioning coordinates, symmetric two-point
/// residuals with random cell scales, random sign coupling across blocks,
/// and randomized conditioning sets (overlapping or nested).
struct RandomTwoBlockCase {
    DiscreteLaw law;
    MomentModel model;
};
RandomTwoBlockCase random_two_block_case(std::uint64_t seed);

}  // namespace cmr
