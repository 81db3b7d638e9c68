// SPDX-License-Identifier: Apache-2.0
#include "matforge/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "json.hpp"
#include "matforge/common.hpp"
#include "matforge/material.hpp"
#include "matforge/nn/ops.hpp"

namespace matforge {

using nn::Tensor;
using nn::Var;

std::string to_string(BlockType type)
{
    return type == BlockType::ConvNeXt ? "convnext" : "residual";
}

BlockType block_type_from_string(const std::string& name)
{
    if (name == "convnext")
        return BlockType::ConvNeXt;
    if (name == "residual")
        return BlockType::Residual;
    throw ConfigError("unknown block type '" + name + "' (expected convnext or residual)");
}

NetConfig NetConfig::desk(int resolution)
{
    NetConfig c;
    c.resolution = resolution;
    c.attention_resolutions = {resolution / 4};
    return c;
}

NetConfig NetConfig::paper(int resolution)
{
    NetConfig c;
    c.resolution = resolution;
    c.levels = 6;
    c.base_width = 128;
    c.width_multipliers = {1, 1, 2, 2, 4, 4};
    c.blocks_per_level = 2;
    c.attention_resolutions = {32, 16};
    c.heads = 8;
    c.groups = 32;
    c.fourier_width = 128;
    c.time_width = 512;
    return c;
}

bool NetConfig::has_attention(int level) const
{
    return std::find(attention_resolutions.begin(), attention_resolutions.end(), level_resolution(level)) !=
           attention_resolutions.end();
}

namespace {

/// Walks the U-Net channel flow, calling visit(prefix, in, out) for every
/// block and attn(prefix, channels) for every attention layer.
template <class BlockVisit, class AttnVisit>
void walk_blocks(const NetConfig& cfg, BlockVisit&& visit, AttnVisit&& attn)
{
    int ch = cfg.level_width(0);
    std::vector<int> skips;
    for (int l = 0; l < cfg.levels; ++l)
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            const std::string p = "enc." + std::to_string(l) + "." + std::to_string(b);
            visit(p, ch, cfg.level_width(l));
            ch = cfg.level_width(l);
            if (cfg.has_attention(l))
                attn(p + ".attn", ch);
            skips.push_back(ch);
        }
    visit(std::string("mid.0"), ch, ch);
    attn(std::string("mid.attn"), ch);
    visit(std::string("mid.1"), ch, ch);
    for (int l = cfg.levels - 1; l >= 0; --l)
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            const std::string p = "dec." + std::to_string(l) + "." + std::to_string(b);
            const int skip = skips.back();
            skips.pop_back();
            visit(p, ch + skip, cfg.level_width(l));
            ch = cfg.level_width(l);
            if (cfg.has_attention(l))
                attn(p + ".attn", ch);
        }
}

std::size_t convnext_count(int ci, int co, int tw)
{
    std::size_t n = 49u * ci + ci;                         // depth-wise 7x7
    n += static_cast<std::size_t>(tw) * ci + ci;           // time projection
    n += 2u * ci;                                          // group norm
    n += static_cast<std::size_t>(ci) * 4 * co + 4u * co;  // expansion
    n += static_cast<std::size_t>(4) * co * co + co;       // contraction
    if (ci != co)
        n += static_cast<std::size_t>(ci) * co + co;
    return n;
}

std::size_t residual_count(int ci, int co, int hidden, int tw)
{
    std::size_t n = 2u * ci;
    n += 9u * ci * hidden + hidden;
    n += static_cast<std::size_t>(tw) * hidden + hidden;
    n += 2u * hidden;
    n += 9u * hidden * co + co;
    if (ci != co)
        n += static_cast<std::size_t>(ci) * co + co;
    return n;
}

std::size_t attention_count(int c)
{
    return 2u * c + static_cast<std::size_t>(c) * 3 * c + 3u * c + static_cast<std::size_t>(c) * c + c;
}

} // namespace

int residual_hidden_width(const NetConfig& cfg, int in_channels, int out_channels)
{
    const auto target = static_cast<double>(convnext_count(in_channels, out_channels, cfg.time_width));
    int best = cfg.groups;
    double best_gap = 1e300;
    for (int h = cfg.groups; h <= 8 * std::max(in_channels, out_channels); h += cfg.groups) {
        const double gap =
            std::abs(static_cast<double>(residual_count(in_channels, out_channels, h, cfg.time_width)) - target);
        if (gap < best_gap) {
            best_gap = gap;
            best = h;
        }
    }
    return best;
}

void NetConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ConfigError("network config: " + msg); };
    if (levels < 1)
        fail("levels must be >= 1");
    if (resolution <= 0 || resolution % (1 << (levels - 1)) != 0)
        fail("resolution " + std::to_string(resolution) + " not divisible by 2^(levels-1)");
    if (static_cast<int>(width_multipliers.size()) != levels)
        fail("width_multipliers needs one entry per level");
    if (base_width <= 0 || blocks_per_level < 1 || heads < 1 || groups < 1)
        fail("widths, blocks, heads and groups must be positive");
    if (fourier_width <= 0 || fourier_width % 2 != 0)
        fail("fourier_width must be positive and even");
    if (time_width <= 0)
        fail("time_width must be positive");
    if (condition_channels < 0)
        fail("condition_channels must be >= 0");
    if (timesteps < 2)
        fail("timesteps must be >= 2");
    for (int r : attention_resolutions) {
        bool found = false;
        for (int l = 0; l < levels; ++l)
            found = found || level_resolution(l) == r;
        if (!found)
            fail("attention resolution " + std::to_string(r) + " is not a U-Net resolution");
    }
    for (int l = 0; l < levels; ++l)
        if (width_multipliers[static_cast<std::size_t>(l)] <= 0)
            fail("width multipliers must be positive");
    walk_blocks(
        *this,
        [&](const std::string& p, int ci, int co) {
            if (ci % groups || co % groups)
                fail(p + ": channels " + std::to_string(ci) + "->" + std::to_string(co) + " not divisible by " +
                     std::to_string(groups) + " groups");
        },
        [&](const std::string& p, int c) {
            if (c % heads)
                fail(p + ": " + std::to_string(c) + " channels not divisible by " + std::to_string(heads) + " heads");
        });
}

std::string NetConfig::to_json() const
{
    nlohmann::json j;
    j["resolution"] = resolution;
    j["levels"] = levels;
    j["base_width"] = base_width;
    j["width_multipliers"] = width_multipliers;
    j["blocks_per_level"] = blocks_per_level;
    j["block"] = to_string(block);
    j["attention_resolutions"] = attention_resolutions;
    j["heads"] = heads;
    j["groups"] = groups;
    j["fourier_width"] = fourier_width;
    j["time_width"] = time_width;
    j["condition_channels"] = condition_channels;
    j["timesteps"] = timesteps;
    return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text)
{
    NetConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.resolution = j.value("resolution", c.resolution);
        c.levels = j.value("levels", c.levels);
        c.base_width = j.value("base_width", c.base_width);
        c.width_multipliers = j.value("width_multipliers", c.width_multipliers);
        c.blocks_per_level = j.value("blocks_per_level", c.blocks_per_level);
        c.block = block_type_from_string(j.value("block", to_string(c.block)));
        c.attention_resolutions = j.value("attention_resolutions", c.attention_resolutions);
        c.heads = j.value("heads", c.heads);
        c.groups = j.value("groups", c.groups);
        c.fourier_width = j.value("fourier_width", c.fourier_width);
        c.time_width = j.value("time_width", c.time_width);
        c.condition_channels = j.value("condition_channels", c.condition_channels);
        c.timesteps = j.value("timesteps", c.timesteps);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("network config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t parameter_count(const NetConfig& cfg)
{
    cfg.validate();
    const int c0 = cfg.level_width(0);
    std::size_t n = static_cast<std::size_t>(cfg.fourier_width) * cfg.time_width + cfg.time_width;
    n += static_cast<std::size_t>(cfg.time_width) * cfg.time_width + cfg.time_width;
    n += 9u * (kLatentChannels + cfg.condition_channels) * c0 + c0;
    walk_blocks(
        cfg,
        [&](const std::string&, int ci, int co) {
            n += cfg.block == BlockType::ConvNeXt
                     ? convnext_count(ci, co, cfg.time_width)
                     : residual_count(ci, co, residual_hidden_width(cfg, ci, co), cfg.time_width);
        },
        [&](const std::string&, int c) { n += attention_count(c); });
    n += 2u * c0 + 9u * c0 * kLatentChannels + kLatentChannels;
    return n;
}

std::size_t DenoiserWeights::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : tensors)
        n += t.numel();
    return n;
}

bool DenoiserWeights::all_finite() const
{
    for (const auto& [name, t] : tensors)
        for (double v : t.values())
            if (!std::isfinite(v))
                return false;
    return true;
}

const Tensor& DenoiserWeights::at(const std::string& name) const
{
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw StructuralError("denoiser weights: missing tensor '" + name + "'");
    return it->second;
}

namespace {

enum class Init { Zero, One, FanIn };

struct LayerSpec {
    std::string name;
    std::vector<int> shape;
    Init init;
    int fan_in = 1;
};

std::vector<LayerSpec> layer_specs(const NetConfig& cfg)
{
    std::vector<LayerSpec> specs;
    auto weight = [&](const std::string& name, std::vector<int> shape, int fan_in) {
        specs.push_back({name, std::move(shape), Init::FanIn, fan_in});
    };
    auto zeros = [&](const std::string& name, std::vector<int> shape) {
        specs.push_back({name, std::move(shape), Init::Zero, 1});
    };
    auto ones = [&](const std::string& name, std::vector<int> shape) {
        specs.push_back({name, std::move(shape), Init::One, 1});
    };
    auto norm = [&](const std::string& p, int c) {
        ones(p + ".g", {c});
        zeros(p + ".b", {c});
    };
    auto conv = [&](const std::string& p, int k, int ci, int co) {
        weight(p + ".w", {k, k, ci, co}, k * k * ci);
        zeros(p + ".b", {co});
    };
    auto dense = [&](const std::string& p, int d, int e) {
        weight(p + ".w", {d, e}, d);
        zeros(p + ".b", {e});
    };

    const int tw = cfg.time_width;
    const int c0 = cfg.level_width(0);
    dense("time.fc1", cfg.fourier_width, tw);
    dense("time.fc2", tw, tw);
    conv("in", 3, kLatentChannels + cfg.condition_channels, c0);
    walk_blocks(
        cfg,
        [&](const std::string& p, int ci, int co) {
            if (cfg.block == BlockType::ConvNeXt) {
                weight(p + ".dw.w", {7, 7, ci}, 49);
                zeros(p + ".dw.b", {ci});
                dense(p + ".time", tw, ci);
                norm(p + ".norm", ci);
                conv(p + ".pw1", 1, ci, 4 * co);
                conv(p + ".pw2", 1, 4 * co, co);
            } else {
                const int h = residual_hidden_width(cfg, ci, co);
                norm(p + ".norm1", ci);
                conv(p + ".conv1", 3, ci, h);
                dense(p + ".time", tw, h);
                norm(p + ".norm2", h);
                conv(p + ".conv2", 3, h, co);
            }
            if (ci != co)
                conv(p + ".skip", 1, ci, co);
        },
        [&](const std::string& p, int c) {
            norm(p + ".norm", c);
            conv(p + ".qkv", 1, c, 3 * c);
            conv(p + ".proj", 1, c, c);
        });
    norm("out.norm", c0);
    zeros("out.conv.w", {3, 3, c0, kLatentChannels});
    zeros("out.conv.b", {kLatentChannels});
    return specs;
}

} // namespace

std::map<std::string, std::vector<int>> parameter_shapes(const NetConfig& cfg)
{
    cfg.validate();
    std::map<std::string, std::vector<int>> shapes;
    for (LayerSpec& s : layer_specs(cfg))
        shapes.emplace(std::move(s.name), std::move(s.shape));
    return shapes;
}

DenoiserWeights init_network(const NetConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    DenoiserWeights w;
    w.config = cfg;
    Rng rng = derive_rng(seed, 0x6e6574);
    for (const LayerSpec& s : layer_specs(cfg)) {
        Tensor t(s.shape);
        if (s.init == Init::One)
            t.fill(1.0);
        else if (s.init == Init::FanIn) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
            for (double& v : t.values())
                v = scale * gaussian(rng);
        }
        w.tensors.emplace(s.name, std::move(t));
    }
    return w;
}

DenoiserWeights init_backbone(const NetConfig& cfg, std::uint64_t seed)
{
    if (cfg.condition_channels != 0)
        throw ConfigError("init_backbone: backbone config must have condition_channels = 0");
    return init_network(cfg, seed);
}

DenoiserWeights expand_input_head(const DenoiserWeights& backbone, int k)
{
    if (k <= 0)
        throw ConfigError("expand_input_head: k must be positive, got " + std::to_string(k));
    if (backbone.config.condition_channels != 0)
        throw StructuralError("expand_input_head: weights already have " +
                              std::to_string(backbone.config.condition_channels) + " condition channels");
    DenoiserWeights out = backbone;
    out.config.condition_channels = k;
    const Tensor& old = backbone.at("in.w");
    const int ci = old.dim(2);
    const int co = old.dim(3);
    const int ni = ci + k;
    Tensor grown({3, 3, ni, co});
    for (int tap = 0; tap < 9; ++tap)
        for (int c = 0; c < ci; ++c)
            for (int o = 0; o < co; ++o)
                grown[(static_cast<std::size_t>(tap) * ni + c) * co + o] =
                    old[(static_cast<std::size_t>(tap) * ci + c) * co + o];
    out.tensors["in.w"] = std::move(grown);
    return out;
}

std::vector<double> fourier_features(int t, int width)
{
    if (width <= 0 || width % 2)
        throw ConfigError("fourier_features: width must be positive and even");
    const int half = width / 2;
    std::vector<double> f(static_cast<std::size_t>(width));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        f[static_cast<std::size_t>(i)] = std::sin(t * freq);
        f[static_cast<std::size_t>(half + i)] = std::cos(t * freq);
    }
    return f;
}

namespace {

class Graph {
public:
    Graph(const NetConfig& cfg, const ParamVars& p) : cfg_(cfg), p_(p) {}

    const Var& param(const std::string& name) const
    {
        auto it = p_.find(name);
        if (it == p_.end())
            throw StructuralError("denoiser: missing parameter '" + name + "'");
        return it->second;
    }

    Var conv(const std::string& p, const Var& x) const { return nn::conv2d(x, param(p + ".w"), param(p + ".b")); }
    Var dense(const std::string& p, const Var& x) const { return nn::linear(x, param(p + ".w"), param(p + ".b")); }
    Var norm(const std::string& p, const Var& x) const
    {
        return nn::group_norm(x, param(p + ".g"), param(p + ".b"), cfg_.groups);
    }

    Var time_mlp(std::span<const int> t) const
    {
        Tensor f({static_cast<int>(t.size()), cfg_.fourier_width});
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto feats = fourier_features(t[i], cfg_.fourier_width);
            std::copy(feats.begin(), feats.end(), f.data() + i * feats.size());
        }
        return dense("time.fc2", nn::silu(dense("time.fc1", nn::constant(std::move(f)))));
    }

    Var block(const std::string& p, const Var& x, const Var& temb_act) const
    {
        const int ci = x->value.dim(3);
        Var h;
        if (cfg_.block == BlockType::ConvNeXt) {
            h = nn::depthwise_conv2d(x, param(p + ".dw.w"), param(p + ".dw.b"));
            h = nn::add_channel_bias(h, dense(p + ".time", temb_act));
            h = norm(p + ".norm", h);
            h = nn::gelu(conv(p + ".pw1", h));
            h = conv(p + ".pw2", h);
        } else {
            h = conv(p + ".conv1", nn::silu(norm(p + ".norm1", x)));
            h = nn::add_channel_bias(h, dense(p + ".time", temb_act));
            h = conv(p + ".conv2", nn::silu(norm(p + ".norm2", h)));
        }
        const int co = h->value.dim(3);
        return nn::add(ci == co ? x : conv(p + ".skip", x), h);
    }

    Var attention(const std::string& p, const Var& x) const
    {
        Var h = conv(p + ".qkv", norm(p + ".norm", x));
        h = nn::self_attention(h, cfg_.heads);
        return nn::add(x, conv(p + ".proj", h));
    }

private:
    const NetConfig& cfg_;
    const ParamVars& p_;
};

} // namespace

std::vector<double> time_embedding(const DenoiserWeights& w, int t)
{
    const ParamVars p = as_constants(w);
    Graph g(w.config, p);
    const int ts[1] = {t};
    const Var e = g.time_mlp(ts);
    const nn::TensorStorage& v = e->value.values();
    return {v.begin(), v.end()};
}

Var forward_graph(const NetConfig& cfg, const ParamVars& params, const Var& y, std::span<const int> t, const Var& cond)
{
    const Tensor& yv = y->value;
    if (yv.rank() != 4 || yv.dim(3) != kLatentChannels)
        throw StructuralError("denoiser: latent must be [N, H, W, 10], got " + yv.shape_string());
    const int div = 1 << (cfg.levels - 1);
    if (yv.dim(1) % div || yv.dim(2) % div)
        throw StructuralError("denoiser: resolution " + std::to_string(yv.dim(1)) + "x" + std::to_string(yv.dim(2)) +
                              " not divisible by 2^(levels-1) = " + std::to_string(div));
    if (static_cast<int>(t.size()) != yv.dim(0))
        throw StructuralError("denoiser: need one timestep per batch item");
    for (int ti : t)
        if (ti < 0 || ti > cfg.timesteps)
            throw StructuralError("denoiser: timestep " + std::to_string(ti) + " outside [0, T]");
    if ((cfg.condition_channels > 0) != static_cast<bool>(cond))
        throw StructuralError("denoiser: model expects " + std::to_string(cfg.condition_channels) +
                              " condition channels but " + (cond ? "a condition was" : "none was") + " supplied");
    if (cond && cond->value.dim(3) != cfg.condition_channels)
        throw StructuralError("denoiser: condition has " + std::to_string(cond->value.dim(3)) + " channels, model expects " +
                              std::to_string(cfg.condition_channels));

    Graph g(cfg, params);
    const Var temb = nn::silu(g.time_mlp(t));

    Var h = nn::input_head_conv(y, cond, g.param("in.w"), g.param("in.b"));
    std::vector<Var> skips;
    for (int l = 0; l < cfg.levels; ++l) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            const std::string p = "enc." + std::to_string(l) + "." + std::to_string(b);
            h = g.block(p, h, temb);
            if (cfg.has_attention(l))
                h = g.attention(p + ".attn", h);
            skips.push_back(h);
        }
        if (l + 1 < cfg.levels)
            h = nn::avg_pool2(h);
    }
    h = g.block("mid.0", h, temb);
    h = g.attention("mid.attn", h);
    h = g.block("mid.1", h, temb);
    for (int l = cfg.levels - 1; l >= 0; --l) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            const std::string p = "dec." + std::to_string(l) + "." + std::to_string(b);
            h = g.block(p, nn::concat_channels(h, skips.back()), temb);
            skips.pop_back();
            if (cfg.has_attention(l))
                h = g.attention(p + ".attn", h);
        }
        if (l > 0)
            h = nn::upsample_nearest2(h);
    }
    return g.conv("out.conv", nn::silu(g.norm("out.norm", h)));
}

ParamVars as_constants(const DenoiserWeights& w)
{
    ParamVars p;
    for (const auto& [name, t] : w.tensors)
        p.emplace(name, nn::constant(t));
    return p;
}

ParamVars as_parameters(const DenoiserWeights& w)
{
    ParamVars p;
    for (const auto& [name, t] : w.tensors)
        p.emplace(name, nn::parameter(t));
    return p;
}

int ConditionStack::channels() const
{
    return 3 * static_cast<int>(photos.size()) + (view_vectors ? 3 : 0);
}

int ConditionStack::height() const
{
    return photos.empty() ? (view_vectors ? view_vectors->height() : 0) : photos.front().height();
}

int ConditionStack::width() const
{
    return photos.empty() ? (view_vectors ? view_vectors->width() : 0) : photos.front().width();
}

Image encode_photo(const Image& linear_rgb)
{
    Image out = linear_rgb;
    for (double& v : out.data()) {
        if (!std::isfinite(v))
            throw NumericError("encode_photo: non-finite pixel");
        v = 2.0 * std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2) - 1.0;
    }
    return out;
}

Image ConditionStack::flatten() const
{
    std::vector<Image> parts;
    for (const Image& p : photos) {
        if (p.channels() != 3)
            throw StructuralError("condition photo must have 3 channels");
        parts.push_back(encode_photo(p));
    }
    if (view_vectors)
        parts.push_back(*view_vectors);
    if (parts.empty())
        throw StructuralError("condition stack is empty");
    std::vector<const Image*> ptrs;
    for (const Image& p : parts)
        ptrs.push_back(&p);
    return concat_channels(ptrs);
}

Tensor stack_images(std::span<const Image* const> images)
{
    if (images.empty())
        throw StructuralError("stack_images: no images");
    const Image& first = *images.front();
    Tensor t({static_cast<int>(images.size()), first.height(), first.width(), first.channels()});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i]->same_shape(first))
            throw StructuralError("stack_images: shape mismatch in batch");
        std::copy(images[i]->data().begin(), images[i]->data().end(), t.data() + i * first.size());
    }
    return t;
}

Image unstack_image(const Tensor& t, int index)
{
    Image img(t.dim(1), t.dim(2), t.dim(3));
    std::copy_n(t.data() + static_cast<std::size_t>(index) * img.size(), img.size(), img.data().begin());
    return img;
}

Image forward(const DenoiserWeights& w, const Image& y, int t, const ConditionStack* cond)
{
    return make_velocity_fn(w, cond)(y, t);
}

namespace {

VelocityFn bind_velocity_fn(const DenoiserWeights& w, const Image* flat)
{
    auto params = std::make_shared<ParamVars>(as_constants(w));
    std::shared_ptr<Tensor> cond_tensor;
    if (flat) {
        const Image* ptr = flat;
        cond_tensor = std::make_shared<Tensor>(stack_images({&ptr, 1}));
    }
    NetConfig cfg = w.config;
    return [cfg, params, cond_tensor](const Image& y, int t) {
        const Image* ptr = &y;
        const Var yv = nn::constant(stack_images({&ptr, 1}));
        const Var cv = cond_tensor ? nn::constant(*cond_tensor) : Var{};
        const int ts[1] = {t};
        return unstack_image(forward_graph(cfg, *params, yv, ts, cv)->value, 0);
    };
}

} // namespace

VelocityFn make_velocity_fn(const DenoiserWeights& w, const ConditionStack* cond)
{
    if (!cond)
        return bind_velocity_fn(w, nullptr);
    const Image flat = cond->flatten();
    return bind_velocity_fn(w, &flat);
}

VelocityFn make_velocity_fn(const DenoiserWeights& w, const Image& flat_condition)
{
    return bind_velocity_fn(w, &flat_condition);
}

} // namespace matforge
