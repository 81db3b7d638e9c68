// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

#include "matforge/common.hpp"
#include "matforge/image.hpp"
#include "matforge/material.hpp"

namespace matforge {

// Scene convention: the exemplar covers [-0.5, 0.5]^2 in the z = 0 plane,
// +x to the right, +y up (image row 0 is the top edge), +z out of the surface.

struct PointLight {
    Vec3 position;     // z must be > 0
    Rgb intensity{1, 1, 1};
};

/// Pinhole camera looking down -z at the exemplar. The field of view always
/// matches the exemplar, so pixels map to surface points independent of the
/// distance; distance only changes per-pixel view vectors and light falloff.
struct CameraModel {
    Vec3 position{0, 0, 1};
    double focal_length_mm = 35.0; // 35 mm convention: distance 1 == exemplar size

    static CameraModel at_distance(double distance);
    double distance() const { return position.z; }
    /// Full horizontal field of view in radians for the framed exemplar.
    double field_of_view() const;
    Vec3 view_vector(const Vec3& surface_point) const;
};

/// Equirectangular radiance; row 0 is the zenith (+z), column 0 is phi = -pi.
struct EnvironmentMap {
    Image radiance; // H_e x W_e x 3, finite, >= 0
    double rotation = 0.0; // about +z, radians

    Rgb lookup(const Vec3& direction) const;
    void validate() const;
    static EnvironmentMap constant(const Rgb& value, int height = 8, int width = 16);
};

Vec3 surface_point(int y, int x, int resolution);

double ggx_distribution(double n_dot_h, double alpha);
double smith_g2_height_correlated(double n_dot_wi, double n_dot_wo, double alpha);
/// Schlick with the grazing value min(1, 50 F0) per channel.
Rgb fresnel_schlick(const Rgb& f0, double cos_theta);

/// Lambertian diffuse + GGX specular (height-correlated Smith, Schlick
/// Fresnel with the specular albedo as F0). Units: 1/sr.
Rgb eval_brdf(const Rgb& diffuse, const Rgb& specular, double roughness, const Vec3& n, const Vec3& wi,
              const Vec3& wo);

/// Direct illumination from one point light, linear HDR.
Image render_point(const MaterialMaps& m, const PointLight& light, const CameraModel& cam);

/// Gamma-distributed camera distance: 0.5 * Gamma(shape 2, scale 2), mean 2.
double sample_camera_distance(Rng& rng);

/// Flash intensity for a light at `distance` so that a white Lambertian
/// facing it renders to 1 at the image centre.
double normalized_flash_intensity(double distance);

struct ColocatedCapture {
    Image photo;        // H x W x 3 linear radiance
    Image view_vectors; // H x W x 3 unit vectors from surface to camera
};

ColocatedCapture render_colocated(const MaterialMaps& m, double distance);

/// Cosine-weighted hemisphere estimate of single-bounce environment lighting
/// about the shading normal. Per-pixel streams derive from (seed, pixel index),
/// so results do not depend on evaluation order.
Image render_env(const MaterialMaps& m, const EnvironmentMap& env, const CameraModel& cam, int samples_per_pixel,
                 std::uint64_t seed);

struct FlashPair {
    Image flash;
    Image no_flash;
    double flash_scale = 0.0; // multiplier applied to the normalized colocated render
};

inline const double kMinFlashLogRatio = std::log(1.0 / 50.0);
inline const double kMaxFlashLogRatio = std::log(1.5);

/// no_flash = env render; flash = env render + scaled colocated flash term,
/// where the scale makes mean luminance(flash term) / mean luminance(env)
/// equal exp(log_ratio). With a black environment the flash term is left at
/// its normalized intensity.
FlashPair synth_flash_noflash(const MaterialMaps& m, const EnvironmentMap& env, const CameraModel& cam,
                              double log_ratio, int samples_per_pixel, std::uint64_t seed);

/// Simple outdoor-like HDR environment (sky gradient, ground, one or two
/// bright lobes); used when no HDR library is supplied.
EnvironmentMap procedural_environment(Rng& rng, int height = 32, int width = 64);

double mean_luminance(const Image& rgb);

} // namespace matforge
