// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "matforge/capture.hpp"
#include "matforge/lighting.hpp"
#include "matforge/profile.hpp"

namespace matforge::cli {

namespace fs = std::filesystem;

struct RunContext {
    std::string command;
    Profile profile;
    std::uint64_t seed = 0;
    bool deterministic = false;

    std::string config_hash() const;
};

/// Stable content hash of a file, or of every file below a directory
/// (relative path + bytes, sorted by path).
std::string hash_path(const fs::path& path);

/// <dir>/<name>.json with tool, command, profile, seed and config hash.
/// Wall-clock fields are left out in deterministic mode.
void write_sidecar(const fs::path& path, const RunContext& ctx, const nlohmann::json& extra);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

/// A capture directory: capture.json plus linear photographs as PFM.
///   {"variant": "colocated", "distance": 1.5, "photos": ["photo-0.pfm"],
///    "env": {"procedural_seed": 7} | {"file": "env.pfm", "rotation": 0.3},
///    "log_ratio": 0.0, "env_samples": 64, "seed": 0}
struct Capture {
    CaptureLighting lighting;
    ConditionStack condition;
};

Capture read_capture(const fs::path& dir);
void write_capture(const fs::path& dir, const CaptureLighting& lighting, const std::vector<Image>& photos,
                   const nlohmann::json& env_spec);

/// Per-pixel unit vectors toward a camera at `distance`.
Image view_vector_map(int resolution, double distance);

EnvironmentMap environment_from_spec(const nlohmann::json& spec, const fs::path& base);

/// Replicate directories written by `sample`: <dir>/seed-<n>/material.json.
std::vector<Replicate> read_replicates(const fs::path& dir);

} // namespace matforge::cli
