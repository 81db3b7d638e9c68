// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "matforge/checkpoint.hpp"
#include "matforge/denoiser.hpp"
#include "matforge/lighting.hpp"
#include "matforge/nn/ops.hpp"
#include "test_util.hpp"

using namespace matforge;
using namespace matforge::nn;

namespace {

NetConfig tiny_config(int k = 0)
{
    NetConfig c = NetConfig::desk(16);
    c.base_width = 8;
    c.width_multipliers = {1, 2, 2};
    c.groups = 4;
    c.heads = 2;
    c.fourier_width = 8;
    c.time_width = 16;
    c.condition_channels = k;
    return c;
}

/// Every tensor moved off its init so no gradient path is masked by zeros.
DenoiserWeights randomized(const NetConfig& cfg, std::uint64_t seed)
{
    DenoiserWeights w = init_network(cfg, seed);
    Rng rng = derive_rng(seed, 0xabc);
    for (auto& [name, t] : w.tensors)
        for (double& v : t.values())
            v += 0.1 * uniform(rng, -1.0, 1.0);
    return w;
}

Tensor as_batch(const Image& img)
{
    const Image* p[] = {&img};
    return stack_images(p);
}

} // namespace

TEST(NetConfig, DeskAndPaperProfiles)
{
    const NetConfig d = NetConfig::desk();
    EXPECT_EQ(d.levels, 3);
    EXPECT_EQ(d.base_width, 32);
    EXPECT_EQ(d.groups, 8);
    EXPECT_TRUE(d.has_attention(2));
    EXPECT_FALSE(d.has_attention(0));
    EXPECT_NO_THROW(d.validate());
    const NetConfig p = NetConfig::paper();
    EXPECT_EQ(p.time_width, 512);
    EXPECT_EQ(p.resolution, 256);
    EXPECT_NO_THROW(p.validate());
}

TEST(NetConfig, ValidationNamesTheProblem)
{
    NetConfig c = NetConfig::desk();
    c.base_width = 30; // not divisible by 8 groups
    EXPECT_THROW(c.validate(), ConfigError);
    c = NetConfig::desk();
    c.width_multipliers = {1, 2};
    EXPECT_THROW(c.validate(), ConfigError);
    c = NetConfig::desk();
    c.resolution = 34;
    EXPECT_THROW(c.validate(), ConfigError);
    c = NetConfig::desk();
    c.heads = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = NetConfig::desk();
    c.fourier_width = 7;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(NetConfig, JsonRoundTrip)
{
    NetConfig c = NetConfig::paper();
    c.block = BlockType::Residual;
    c.condition_channels = 6;
    EXPECT_EQ(NetConfig::from_json(c.to_json()), c);
    EXPECT_THROW(NetConfig::from_json("{\"levels\": \"three\"}"), ConfigError);
    EXPECT_EQ(block_type_from_string(to_string(BlockType::ConvNeXt)), BlockType::ConvNeXt);
    EXPECT_THROW(block_type_from_string("unet"), ConfigError);
}

TEST(Parameters, DeskCountMatchesLayerByLayerSum)
{
    const NetConfig d = NetConfig::desk();
    // time MLP 4224 + 16512, input head 2912, encoder/mid/decoder blocks and
    // three attention layers, output head 2954.
    EXPECT_EQ(parameter_count(d), 456682u);
    EXPECT_EQ(init_backbone(d, 1).parameter_count(), 456682u);
    std::size_t from_shapes = 0;
    for (const auto& [name, shape] : parameter_shapes(d))
        from_shapes += shape_numel(shape);
    EXPECT_EQ(from_shapes, 456682u);
}

TEST(Parameters, ClosedFormAgreesForOtherConfigs)
{
    for (NetConfig c : {NetConfig::paper(), tiny_config(6), NetConfig::desk(64)}) {
        for (BlockType b : {BlockType::ConvNeXt, BlockType::Residual}) {
            c.block = b;
            std::size_t from_shapes = 0;
            for (const auto& [name, shape] : parameter_shapes(c))
                from_shapes += shape_numel(shape);
            EXPECT_EQ(parameter_count(c), from_shapes);
        }
    }
}

TEST(Parameters, ResidualToggleWithinTenPercent)
{
    for (NetConfig c : {NetConfig::desk(), NetConfig::paper()}) {
        const double convnext = static_cast<double>(parameter_count(c));
        c.block = BlockType::Residual;
        const double residual = static_cast<double>(parameter_count(c));
        EXPECT_LT(std::abs(residual - convnext) / convnext, 0.10) << residual << " vs " << convnext;
        EXPECT_EQ(residual_hidden_width(c, c.base_width, c.base_width) % c.groups, 0);
    }
}

TEST(Init, SeedDeterminismAndZeroOutput)
{
    const NetConfig c = tiny_config();
    const DenoiserWeights a = init_backbone(c, 3);
    EXPECT_EQ(a, init_backbone(c, 3));
    EXPECT_NE(a, init_backbone(c, 4));
    const Image y = fixtures::random_image(16, 16, kLatentChannels, 1);
    const Image out = forward(a, y, 500);
    EXPECT_EQ(out.height(), 16);
    EXPECT_EQ(out.channels(), kLatentChannels);
    for (double v : out.data())
        EXPECT_EQ(v, 0.0);
    EXPECT_THROW(init_backbone(tiny_config(3), 1), ConfigError);
}

TEST(Forward, ShapeContractAndTimeSensitivity)
{
    const NetConfig c = tiny_config();
    const DenoiserWeights w = randomized(c, 5);
    const Image y = fixtures::random_image(16, 16, kLatentChannels, 2);
    const Image a = forward(w, y, 1), b = forward(w, y, 1000);
    EXPECT_TRUE(a.same_shape(y));
    EXPECT_GT(a.max_abs_diff(b), 1e-6);
    EXPECT_EQ(forward(w, y, 1), a);
    EXPECT_THROW(forward(w, fixtures::random_image(14, 14, kLatentChannels, 2), 5), StructuralError);
    EXPECT_THROW(forward(w, y, 1001), StructuralError);
    EXPECT_THROW(forward(w, fixtures::random_image(16, 16, 3, 2), 5), StructuralError);
}

TEST(Forward, BatchedEqualsPerSample)
{
    const NetConfig c = tiny_config();
    const DenoiserWeights w = randomized(c, 6);
    const Image y0 = fixtures::random_image(16, 16, kLatentChannels, 3), y1 = fixtures::random_image(16, 16, kLatentChannels, 4);
    const Image* ys[] = {&y0, &y1};
    const int ts[] = {10, 700};
    const Tensor out = forward_graph(c, as_constants(w), constant(stack_images(ys)), ts, nullptr)->value;
    EXPECT_LT(unstack_image(out, 0).max_abs_diff(forward(w, y0, 10)), 1e-10);
    EXPECT_LT(unstack_image(out, 1).max_abs_diff(forward(w, y1, 700)), 1e-10);
}

TEST(Forward, GradientMatchesFiniteDifferences)
{
    for (BlockType block : {BlockType::ConvNeXt, BlockType::Residual}) {
        NetConfig c = tiny_config(3);
        c.block = block;
        const DenoiserWeights w = randomized(c, 7);
        const Tensor y = as_batch(fixtures::random_image(16, 16, kLatentChannels, 5));
        const Tensor cond = as_batch(fixtures::random_image(16, 16, 3, 6));
        const Tensor probe = as_batch(fixtures::random_image(16, 16, kLatentChannels, 7));
        const int t[] = {321};
        auto probe_value = [&](const DenoiserWeights& ww) {
            const Tensor out = forward_graph(c, as_constants(ww), constant(y), t, constant(cond))->value;
            double s = 0;
            for (std::size_t i = 0; i < out.numel(); ++i)
                s += out[i] * probe[i];
            return s;
        };
        const ParamVars params = as_parameters(w);
        const Var out = forward_graph(c, params, constant(y), t, constant(cond));
        const Var root = make_node(Tensor({1}, 0.0), {out}, [out, &probe](Node& self) {
            Tensor& g = out->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i)
                g[i] += self.grad[0] * probe[i];
        });
        backward(root);

        Rng rng = derive_rng(8, 8);
        int checked = 0;
        for (const auto& [name, var] : params) {
            ASSERT_EQ(var->grad.numel(), var->value.numel()) << name << " has no gradient";
            for (int k = 0; k < 2; ++k) {
                const auto i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(var->value.numel()) - 1));
                DenoiserWeights p = w, m = w;
                const double h = 1e-5;
                p.tensors.at(name)[i] += h;
                m.tensors.at(name)[i] -= h;
                const double fd = (probe_value(p) - probe_value(m)) / (2 * h);
                EXPECT_NEAR(var->grad[i], fd, 1e-7 + 1e-3 * std::abs(fd)) << to_string(block) << " " << name << "[" << i << "]";
                ++checked;
            }
        }
        EXPECT_GT(checked, 100);
    }
}

TEST(ExpandInputHead, BitIdenticalForAnyCondition)
{
    const NetConfig c = tiny_config();
    const DenoiserWeights backbone = randomized(c, 9);
    for (int k : {3, 6}) {
        const DenoiserWeights expanded = expand_input_head(backbone, k);
        EXPECT_EQ(expanded.config.condition_channels, k);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const Image y = fixtures::random_image(16, 16, kLatentChannels, 20 + s, -3, 3);
            const Image cond = fixtures::random_image(16, 16, k, 40 + s, -10, 10);
            const int t = 1 + static_cast<int>(s * 199);
            const Image base = forward(backbone, y, t);
            EXPECT_EQ(make_velocity_fn(expanded, cond)(y, t), base);
        }
    }
    EXPECT_EQ(condition_channels(Variant::FlashNoFlash), 6);
    EXPECT_EQ(condition_channels(Variant::Colocated), 6);
    EXPECT_EQ(condition_channels(Variant::Natural), 3);
}

TEST(ExpandInputHead, ConditionMismatchIsRejected)
{
    const DenoiserWeights w = expand_input_head(init_backbone(tiny_config(), 1), 6);
    const Image y = fixtures::random_image(16, 16, kLatentChannels, 1);
    EXPECT_THROW(forward(w, y, 10), StructuralError);
    ConditionStack one;
    one.photos.push_back(Image(16, 16, 3, 0.5));
    EXPECT_THROW(forward(w, y, 10, &one), StructuralError);
}

TEST(TimeEmbedding, DistinctAndStable)
{
    const DenoiserWeights w = randomized(tiny_config(), 2);
    std::vector<double> prev = time_embedding(w, 1);
    EXPECT_EQ(prev, time_embedding(w, 1));
    EXPECT_EQ(time_embedding(w, 1).size(), 16u);
    for (int t = 2; t <= 1000; ++t) {
        const std::vector<double> cur = time_embedding(w, t);
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            dot += cur[i] * prev[i];
            na += cur[i] * cur[i];
            nb += prev[i] * prev[i];
        }
        ASSERT_LT(dot / std::sqrt(na * nb), 1.0) << t;
        prev = cur;
    }
    const std::vector<double> f = fourier_features(0, 8);
    EXPECT_EQ(f[0], 0.0);
    EXPECT_EQ(f[4], 1.0);
    EXPECT_EQ(time_embedding(init_backbone(NetConfig::paper(), 0), 5).size(), 512u);
}

TEST(Checkpoint, RoundTripIsBitIdentical)
{
    const auto dir = fixtures::temp_dir("ckpt");
    const DenoiserWeights w = randomized(tiny_config(3), 11);
    save_weights(w, dir / "w.mfck");
    const DenoiserWeights r = load_weights(dir / "w.mfck");
    EXPECT_EQ(r, w);
    ConditionStack cond;
    cond.photos.push_back(fixtures::random_image(16, 16, 3, 1, 0, 1));
    const Image y = fixtures::random_image(16, 16, kLatentChannels, 2);
    EXPECT_EQ(forward(r, y, 77, &cond), forward(w, y, 77, &cond));
}

TEST(Checkpoint, CorruptionIsDetected)
{
    const auto dir = fixtures::temp_dir("ckpt-bad");
    save_weights(init_backbone(tiny_config(), 1), dir / "w.mfck");
    std::filesystem::resize_file(dir / "w.mfck", std::filesystem::file_size(dir / "w.mfck") - 16);
    EXPECT_THROW(load_weights(dir / "w.mfck"), IoError);
    std::ofstream(dir / "junk.mfck") << "not a checkpoint";
    EXPECT_THROW(load_weights(dir / "junk.mfck"), IoError);

    TensorArchive a;
    a.header = R"({"kind":"denoiser","net":)" + tiny_config().to_json() + "}";
    a.tensors["in.w"] = Tensor({1});
    save_archive(a, dir / "short.mfck");
    EXPECT_THROW(load_weights(dir / "short.mfck"), Error);
}

TEST(Condition, FlattenEncodesPhotosAndAppendsViewVectors)
{
    ConditionStack c;
    c.photos.push_back(Image(2, 2, 3, 1.0));
    c.photos.push_back(Image(2, 2, 3, 0.0));
    c.view_vectors = Image(2, 2, 3, 0.25);
    EXPECT_EQ(c.channels(), 9);
    const Image f = c.flatten();
    EXPECT_EQ(f.channels(), 9);
    EXPECT_EQ(f.at(0, 0, 0), 1.0);
    EXPECT_EQ(f.at(0, 0, 3), -1.0);
    EXPECT_EQ(f.at(1, 1, 8), 0.25);
    EXPECT_NEAR(encode_photo(Image(1, 1, 1, 0.5)).at(0, 0, 0), 2 * std::pow(0.5, 1 / 2.2) - 1, 1e-15);
}
