// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "matforge/common.hpp"
#include "matforge/denoiser.hpp"
#include "matforge/shading.hpp"

namespace matforge {

/// Which photographs condition the model.
enum class Variant { Backbone, Colocated, Natural, FlashNoFlash };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

/// k for a variant: colocated = photo + view vectors, flash/no-flash = two photos.
int condition_channels(Variant v);

/// Lighting under which a condition photograph was (or is) taken.
struct CaptureLighting {
    Variant variant = Variant::Colocated;
    double distance = 1.0;              // camera distance; the flash is colocated
    std::optional<EnvironmentMap> env;  // natural and flash/no-flash
    double log_ratio = 0.0;             // flash/no-flash only
    int env_samples = 64;
    std::uint64_t seed = 0;             // environment Monte-Carlo stream
};

/// Random lighting for training-time condition synthesis: camera distance
/// from sample_camera_distance, a rotated procedural environment, and a
/// uniform log flash ratio.
CaptureLighting draw_capture_lighting(Variant v, Rng& rng, int env_samples);

/// The photographs a camera would record (view vectors excluded).
std::vector<Image> render_capture(const MaterialMaps& m, const CaptureLighting& lighting);

/// Photographs plus, for the colocated variant, the view-vector map.
ConditionStack render_condition(const MaterialMaps& m, const CaptureLighting& lighting);

} // namespace matforge
