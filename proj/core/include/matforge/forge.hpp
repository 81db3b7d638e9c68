// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matforge/common.hpp"
#include "matforge/material.hpp"

namespace matforge {

struct SourceMaterial {
    std::string id;
    MaterialMaps maps;
};

/// Procedural SVBRDF (tiles, noise, rings or spots) with specular assigned
/// via assign_specular. Stands in for scanned source libraries.
MaterialMaps synthetic_source(int resolution, std::uint64_t seed);
std::vector<SourceMaterial> synthetic_sources(int count, int resolution, std::uint64_t seed);

/// Every subdirectory holding a material.json, sorted by name; ids are the
/// directory names.
std::vector<SourceMaterial> load_sources(const std::filesystem::path& dir);

/// Frozen random MLP with sine hidden activations. Weights are drawn once
/// from N(0, gain^2 / fan_in); hidden biases from U(-pi, pi).
class RandomFeatureNet {
public:
    RandomFeatureNet(int inputs, std::vector<int> hidden, int outputs, std::uint64_t seed);

    int inputs() const { return inputs_; }
    int outputs() const { return outputs_; }
    std::vector<double> evaluate(std::span<const double> input) const;

private:
    struct Layer {
        int in = 0, out = 0;
        std::vector<double> w; // in x out, row-major
        std::vector<double> b;
    };
    int inputs_;
    int outputs_;
    std::vector<Layer> layers_;
};

inline constexpr int kFeatureInputs = 4;
inline constexpr int kFeatureHidden = 32;

/// Per-pixel network input: diffuse + specular albedo (RGB) and the
/// integrated height standardized to zero mean and unit variance.
Image pixel_features(const MaterialMaps& m);

struct CropSpec {
    double x0 = 0, y0 = 0; // top-left corner of the unrotated square, source pixels
    int size = 0;
    double angle = 0;      // counter-clockwise, radians

    bool operator==(const CropSpec&) const = default;
};

/// Axis-aligned extent of a rotated square crop.
double rotated_extent(int size, double angle);

/// Resamples the (rotated) square to out_res x out_res and rotates normals
/// with the texture. Throws StructuralError if the crop leaves the source.
MaterialMaps extract_crop(const MaterialMaps& src, const CropSpec& spec, int out_res);

std::vector<CropSpec> random_crop_specs(int source_resolution, int count, int min_px, int max_px, Rng& rng);
std::vector<MaterialMaps> random_crops(const MaterialMaps& src, int count, int min_px, int max_px, int out_res,
                                       Rng& rng);

struct RoughnessRecipe {
    std::uint64_t net_seed = 0;
    double beta = 0.5; // weight of the procedural map

    bool operator==(const RoughnessRecipe&) const = default;
};

inline constexpr double kMinRoughnessBlend = 0.25;
inline constexpr double kMaxRoughnessBlend = 0.75;

RoughnessRecipe draw_roughness_recipe(Rng& rng);
/// Logistic output of the roughness net at every pixel (1 channel, (0,1)).
Image procedural_roughness_map(const MaterialMaps& m, std::uint64_t net_seed);
/// (1 - beta) * original + beta * procedural, floored at kRoughnessFloor.
MaterialMaps blend_roughness(const MaterialMaps& m, const Image& procedural, double beta);
MaterialMaps apply_roughness_recipe(const MaterialMaps& m, const RoughnessRecipe& recipe);
MaterialMaps procedural_roughness(const MaterialMaps& m, Rng& rng);

struct MixResult {
    MaterialMaps material;
    std::vector<int> selection; // source index per pixel of the 2x grid, row-major
    int grid = 0;               // 2x resolution
};

/// Piece-wise selection among 2 or 3 equally sized sources on a 2x grid of
/// bilinearly upsampled features, averaged back down: each output pixel is
/// sum_i (n_i / 4) * source_i with n_i the selected sub-pixels. The selection
/// net sees the mean of the sources' pixel features; ties go to the lowest
/// source index.
MixResult mix_materials_detailed(std::span<const MaterialMaps> sources, std::uint64_t net_seed);
MaterialMaps mix_materials(std::span<const MaterialMaps> sources, Rng& rng);

inline constexpr double kMinBaseSpecular = 0.04;
inline constexpr double kMaxBaseSpecular = 0.08;

/// m.diffuse is the base albedo; m.specular is ignored. Metalness is an
/// optional 1-channel map.
MaterialMaps assign_specular(const MaterialMaps& m, const Image* metalness, double base_specular);
MaterialMaps assign_specular(const MaterialMaps& m, const Image* metalness, Rng& rng);

struct ForgeConfig {
    int source_count = 32;      // synthetic sources when no directory is given
    int source_resolution = 128;
    int crops_per_source = 16;
    int min_crop = 32;
    int max_crop = 88;
    int out_res = 32;
    double roughness_fraction = 0.5; // share of train crops that get a roughness-blend record
    int mixtures = 64;
    double two_source_fraction = 0.66;
    double test_fraction = 0.125; // share of sources held out
    std::uint64_t seed = 0;

    static ForgeConfig desk();
    static ForgeConfig paper();
    void validate() const;
};

enum class RecordKind { Crop, RoughnessBlend, Mixture };
std::string to_string(RecordKind kind);

struct ManifestRecord {
    std::string id;
    RecordKind kind = RecordKind::Crop;
    std::string split = "train";
    std::uint64_t seed = 0;
    std::vector<std::string> source_materials; // original source ids
    std::vector<std::string> parents;          // crop record ids (blend and mixture records)
    std::optional<CropSpec> crop;
    std::optional<RoughnessRecipe> roughness;
    std::uint64_t mix_net_seed = 0;
    int out_res = 0;

    bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    /// One JSON object per line with sorted keys.
    std::string to_jsonl() const;
    static DatasetManifest from_jsonl(const std::string& text);
    std::string hash() const;

    const ManifestRecord& find(const std::string& id) const;
    std::vector<const ManifestRecord*> split(const std::string& tag) const;

    bool operator==(const DatasetManifest&) const = default;
};

/// Closed-form record counts for a configuration and source count.
struct ManifestCounts {
    int test_sources = 0, train_sources = 0;
    int train_crops = 0, test_crops = 0;
    int roughness = 0;
    int two_source = 0, three_source = 0;
};
ManifestCounts expected_counts(const ForgeConfig& cfg, int source_count);

/// Draws every recipe from cfg.seed; throws ConfigError when the mixtures
/// need more train crops than exist (sources are drawn without replacement).
DatasetManifest build_manifest(std::span<const SourceMaterial> sources, const ForgeConfig& cfg);

/// Deterministic materialization of one record.
MaterialMaps realize_record(const ManifestRecord& record, const DatasetManifest& manifest,
                            const std::map<std::string, const MaterialMaps*>& sources);

std::map<std::string, const MaterialMaps*> index_sources(std::span<const SourceMaterial> sources);

} // namespace matforge
