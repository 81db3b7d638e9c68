// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "matforge/denoiser.hpp"
#include "matforge/diffusion.hpp"
#include "matforge/lighting.hpp"
#include "matforge/material.hpp"
#include "matforge/shading.hpp"

namespace matforge {

inline constexpr int kDefaultReplicates = 10;
inline constexpr int kDefaultEvalLights = 128;
inline constexpr double kDefaultEvalRadius = 2.41;

struct Replicate {
    std::uint64_t seed = 0;
    MaterialMaps material;
    Image render;       // under the capture lighting, filled by selection
    double score = 0.0; // proxy error against the condition photographs
};

struct ReplicateSet {
    ConditionStack condition;
    std::vector<Replicate> replicates; // ascending seed
};

/// One sampled and decoded material per seed (sorted, duplicates rejected).
ReplicateSet generate_replicates(const DenoiserWeights& model, const ConditionStack& condition,
                                 std::span<const std::uint64_t> seeds, const SamplerConfig& sampler = {});

struct Selection {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    std::vector<double> scores;
};

/// Lowest score wins; ties go to the earlier entry.
std::size_t argmin_score(std::span<const double> scores);

/// Renders every replicate under the capture lighting and keeps the one
/// closest to the condition photographs under proxy_perceptual_error.
Selection select_by_render_error(ReplicateSet& rs, const CaptureLighting& lighting);

/// Multi-scale image distance: over 4 dyadic levels, mean absolute
/// difference of per-channel x / (1 + |x|) tone-mapped values plus mean
/// absolute forward-difference gradient of (a - b). Symmetric, zero iff
/// a == b, non-decreasing along a -> b blends.
double proxy_perceptual_error(const Image& a, const Image& b);

/// Uniform over solid angle on the upper hemisphere; light i depends only on
/// (seed, i), so longer sets extend shorter ones.
std::vector<PointLight> hemisphere_lights(int count, double radius, std::uint64_t seed);

struct EvalReport {
    std::array<double, 4> map_rmse{}; // diffuse, specular, roughness, normal
    std::vector<double> light_rmse;
    std::vector<double> light_proxy;
    double mean_rmse = 0.0;
    double mean_proxy = 0.0;
    int light_count = 0;
    double radius = 0.0;
    std::uint64_t light_seed = 0;
};

EvalReport evaluate_relighting(const MaterialMaps& m, const MaterialMaps& reference, int light_count = kDefaultEvalLights,
                               double radius = kDefaultEvalRadius, std::uint64_t seed = 0);
/// Same metrics under an explicit light set (radius and seed left at 0).
EvalReport evaluate_relighting(const MaterialMaps& m, const MaterialMaps& reference,
                               std::span<const PointLight> lights);

std::string eval_report_json(const EvalReport& r);

struct SheetLayout {
    int tile = 64;
    int columns = 0;
    int rows = 0;
    int width = 0;
    int height = 0;
};

SheetLayout contact_sheet_layout(int replicates, int preview_lights, int tile);

/// Rows of [diffuse, specular, roughness, normal, previews...] tiles, each
/// row headed by its seed; display-encoded sRGB in [0, 1].
Image contact_sheet(const ReplicateSet& rs, std::span<const PointLight> preview_lights, int tile = 64);

/// Draws text with a built-in 5x7 font (digits, letters, '-', '=', ' ').
void draw_label(Image& img, int x, int y, const std::string& text, const Rgb& color);

} // namespace matforge
