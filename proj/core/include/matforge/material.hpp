// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <string_view>

#include "matforge/image.hpp"

namespace matforge {

/// Roughness floor; GGX degenerates as alpha -> 0.
inline constexpr double kRoughnessFloor = 0.01;
/// Decoded normals never tilt past this z before renormalization.
inline constexpr double kNormalZFloor = 0.05;

inline constexpr int kLatentChannels = 10;
inline constexpr std::array<std::string_view, 4> kMapNames = {"diffuse", "specular", "roughness", "normal"};

/// Spatially varying reflectance at one square resolution.
///
/// Invariants (checked by validate()): every map is resolution x resolution;
/// albedos in [0,1]; roughness in [kRoughnessFloor, 1]; normals unit length
/// (1e-4) with z > 0; all values finite.
struct MaterialMaps {
    Image diffuse;   // 3 channels, linear
    Image specular;  // 3 channels, linear
    Image roughness; // 1 channel, GGX alpha
    Image normal;    // 3 channels, tangent space = world for the flat exemplar

    int resolution() const { return diffuse.height(); }

    /// Throws StructuralError on shape problems, NumericError on range problems.
    void validate() const;
    bool is_valid() const;

    static MaterialMaps constant(int resolution, const Rgb& diffuse, const Rgb& specular, double roughness,
                                 const Vec3& normal = {0, 0, 1});

    bool operator==(const MaterialMaps&) const = default;
};

/// Network-facing 10-channel image: diffuse(3) specular(3) roughness(1) normal(3).
/// Values are nominally in [-1, 1] but intermediate diffusion states are unclamped.
struct LatentImage {
    Image values;

    LatentImage() = default;
    explicit LatentImage(Image v);
    LatentImage(int height, int width) : values(height, width, kLatentChannels) {}

    int height() const { return values.height(); }
    int width() const { return values.width(); }
};

/// Albedos and roughness map v -> 2v - 1; normals are stored as raw xyz.
LatentImage encode_material(const MaterialMaps& m);

/// Inverse of encode_material followed by projection onto valid materials
/// (clamping, normal z floor, renormalization). Throws NumericError on NaN/Inf.
MaterialMaps decode_material(const LatentImage& latent);

/// Quarter turn counter-clockwise: pixels follow rotate90 and normals turn
/// with the texture, (x, y, z) -> (-y, x, z).
MaterialMaps rotate90(const MaterialMaps& m);

/// Directory layout: diffuse.png, specular.png, roughness.png, normal.png
/// (16-bit linear) plus material.json. See docs in README for the schema.
void save_material(const MaterialMaps& m, const std::filesystem::path& dir);
MaterialMaps load_material(const std::filesystem::path& dir);

inline constexpr int kMaterialFormatVersion = 1;

/// Quantization helpers shared by save/load; exposed for tests.
std::uint16_t quantize_unit(double v);      // [0,1] -> round(v * 65535)
double dequantize_unit(std::uint16_t code); // code / 65535
std::uint16_t quantize_normal(double v);    // [-1,1] -> 32767 + round(32767 v)
double dequantize_normal(std::uint16_t code);

} // namespace matforge
