// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capture_io.hpp"

namespace matforge::cli {

struct ForgeArgs {
    fs::path sources; // empty: synthetic sources
    fs::path out;
    bool manifest_only = false;
};

struct TrainArgs {
    fs::path data;
    fs::path out;
    fs::path backbone; // finetune only
    std::string variant = "colocated";
    std::optional<long> steps;
    bool resume = false;
    bool quiet = false;
};

struct SampleArgs {
    fs::path model;
    fs::path capture; // empty for an unconditional model
    fs::path out;
    std::vector<std::uint64_t> seeds;
    int replicates = 0; // 0: profile default
    std::optional<int> steps;
    std::optional<double> guidance;
};

struct SelectArgs {
    fs::path replicates;
    fs::path capture;
    fs::path out;
    std::string mode = "render"; // render | fixed | pick
    std::optional<std::uint64_t> pick;
};

struct EvalArgs {
    fs::path material;
    fs::path reference;
    fs::path out;
    std::optional<int> lights;
    std::optional<double> radius;
};

struct RenderArgs {
    fs::path material;
    fs::path out;
    std::string variant = "colocated";
    double distance = 1.0;
    std::vector<double> light; // x, y, z: point-light render instead of a capture
    double intensity = 1.0;
    double log_ratio = 0.0;
    std::optional<std::uint64_t> env_seed;
};

struct SheetArgs {
    fs::path replicates;
    fs::path out;
    std::optional<int> previews;
    std::optional<int> tile;
    std::optional<double> radius;
};

void run_forge(const RunContext& ctx, const ForgeArgs& args);
void run_train(const RunContext& ctx, const TrainArgs& args);
void run_finetune(const RunContext& ctx, const TrainArgs& args);
void run_sample(const RunContext& ctx, const SampleArgs& args);
void run_select(const RunContext& ctx, const SelectArgs& args);
void run_eval(const RunContext& ctx, const EvalArgs& args);
void run_render(const RunContext& ctx, const RenderArgs& args);
void run_sheet(const RunContext& ctx, const SheetArgs& args);

/// Train split of a forge output directory (manifest.jsonl + materials/),
/// or every material below a plain directory.
std::vector<MaterialMaps> load_training_data(const fs::path& dir);

} // namespace matforge::cli
