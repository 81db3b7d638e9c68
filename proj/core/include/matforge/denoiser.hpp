// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matforge/diffusion.hpp"
#include "matforge/image.hpp"
#include "matforge/nn/autograd.hpp"

namespace matforge {

enum class BlockType { ConvNeXt, Residual };

std::string to_string(BlockType type);
BlockType block_type_from_string(const std::string& name);

/// U-Net shape. Level l runs at resolution / 2^l with base_width * width_multipliers[l] channels.
struct NetConfig {
    int resolution = 32;
    int levels = 3;
    int base_width = 32;
    std::vector<int> width_multipliers = {1, 2, 2};
    int blocks_per_level = 1;
    BlockType block = BlockType::ConvNeXt;
    std::vector<int> attention_resolutions = {8};
    int heads = 4;
    int groups = 8;
    int fourier_width = 32; // sinusoidal features fed to the time MLP
    int time_width = 128;   // time MLP output
    int condition_channels = 0;
    int timesteps = kDefaultTimesteps;

    static NetConfig desk(int resolution = 32);
    static NetConfig paper(int resolution = 256);

    int level_width(int level) const { return base_width * width_multipliers.at(static_cast<std::size_t>(level)); }
    int level_resolution(int level) const { return resolution >> level; }
    bool has_attention(int level) const;

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    std::string to_json() const;
    static NetConfig from_json(const std::string& text);

    bool operator==(const NetConfig&) const = default;
};

/// Hidden width of a Residual block chosen to match the ConvNeXt block it
/// replaces in parameter count (multiple of the group count).
int residual_hidden_width(const NetConfig& cfg, int in_channels, int out_channels);

/// All learnable tensors keyed by layer path ("enc.1.0.pw1.w", "in.w", ...).
struct DenoiserWeights {
    NetConfig config;
    std::map<std::string, nn::Tensor> tensors;

    std::size_t parameter_count() const;
    bool all_finite() const;
    const nn::Tensor& at(const std::string& name) const;
    bool operator==(const DenoiserWeights&) const = default;
};

/// Tensor shapes keyed by layer path, without allocating values.
std::map<std::string, std::vector<int>> parameter_shapes(const NetConfig& cfg);

/// Closed-form parameter count for a configuration, independent of init.
std::size_t parameter_count(const NetConfig& cfg);

/// Random init (fan-in Gaussian); the output projection is zero so the
/// initial prediction is 0. init_backbone requires condition_channels == 0.
DenoiserWeights init_network(const NetConfig& cfg, std::uint64_t seed);
DenoiserWeights init_backbone(const NetConfig& cfg, std::uint64_t seed);

/// Grows the input head by k zero-initialized condition channels.
DenoiserWeights expand_input_head(const DenoiserWeights& backbone, int k);

/// Sinusoidal features at geometrically spaced frequencies, [sin | cos].
std::vector<double> fourier_features(int t, int width);

/// Fourier features passed through the network's 2-layer time MLP.
std::vector<double> time_embedding(const DenoiserWeights& w, int t);

/// N photographs plus an optional per-pixel view-vector map.
struct ConditionStack {
    std::vector<Image> photos;         // linear RGB
    std::optional<Image> view_vectors; // unit vectors

    int channels() const;
    int height() const;
    int width() const;
    /// H x W x k network input: encoded photos, then raw view vectors.
    Image flatten() const;
};

/// Linear radiance -> [-1, 1] network range: 2 * clamp(x, 0, 1)^(1/2.2) - 1.
Image encode_photo(const Image& linear_rgb);

using ParamVars = std::map<std::string, nn::Var>;
ParamVars as_constants(const DenoiserWeights& w);
ParamVars as_parameters(const DenoiserWeights& w);

/// Differentiable forward over a batch. y: [N, H, W, 10]; t: N timesteps;
/// cond: [N, H, W, k] or null when k == 0. Returns [N, H, W, 10].
nn::Var forward_graph(const NetConfig& cfg, const ParamVars& params, const nn::Var& y, std::span<const int> t,
                      const nn::Var& cond);

/// Single-sample inference convenience.
Image forward(const DenoiserWeights& w, const Image& y, int t, const ConditionStack* cond = nullptr);

/// Velocity callback for the sampler with the weights bound once.
VelocityFn make_velocity_fn(const DenoiserWeights& w, const ConditionStack* cond = nullptr);
/// Same, with an already flattened H x W x k condition (e.g. all zeros for
/// the unconditional branch of guidance).
VelocityFn make_velocity_fn(const DenoiserWeights& w, const Image& flat_condition);

/// Stacks equally shaped images into an [N, H, W, C] tensor and back.
nn::Tensor stack_images(std::span<const Image* const> images);
Image unstack_image(const nn::Tensor& t, int index);

} // namespace matforge
