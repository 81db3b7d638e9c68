// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "matforge/denoiser.hpp"
#include "matforge/diffusion.hpp"
#include "matforge/forge.hpp"
#include "matforge/trainer.hpp"

namespace matforge {

struct EvalConfig {
    int replicates = 10;
    int lights = 128;
    double radius = 2.41;
    int preview_lights = 2;
    int tile = 64;
};

/// Every tunable of the pipeline, grouped by stage.
struct Profile {
    std::string name = "desk";
    NetConfig net;
    TrainConfig train;
    ForgeConfig forge;
    SamplerConfig sampler;
    EvalConfig eval;
};

/// "desk" (CPU-sized) or "paper" (full-scale constants).
Profile make_profile(const std::string& name);

/// Overlays a JSON document with optional sections "net", "train", "forge",
/// "sampler" and "eval"; unknown sections or keys are rejected.
void apply_config(Profile& profile, const std::string& json_text);

std::string profile_to_json(const Profile& profile);

std::string forge_config_json(const ForgeConfig& cfg);
ForgeConfig forge_config_from_json(const std::string& text);
std::string sampler_config_json(const SamplerConfig& cfg);

} // namespace matforge
