#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectralca/grad_check.hpp"

namespace spectralca {

struct ModuleGradCheck {
    std::string module;
    GradCheckReport report;
};

/// Finite-difference checks of every differentiable module at seeded random
/// test points: nn_ops composite, cross-attention, SpectralCA block (small
/// dims), full classifier, and with `include_cfg32` the block at cfg32 widths
/// on a 2x2x3 extent.
std::vector<ModuleGradCheck> gradcheck_suite(std::uint64_t seed, bool include_cfg32 = true,
                                             const GradCheckOptions& options = {});

void to_json(nlohmann::json& j, const ModuleGradCheck& m);

}  // namespace spectralca
