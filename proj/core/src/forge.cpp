// SPDX-License-Identifier: Apache-2.0
#include "matforge/forge.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "matforge/geometry.hpp"

namespace matforge {

namespace {

double smoothstep(double t)
{
    return t * t * (3.0 - 2.0 * t);
}

/// Periodic value noise on a cells x cells lattice, sampled at (u, v) in [0, 1).
class ValueNoise {
public:
    ValueNoise(int cells, Rng& rng) : cells_(cells), values_(static_cast<std::size_t>(cells) * cells)
    {
        for (double& v : values_)
            v = uniform(rng, -1.0, 1.0);
    }

    double operator()(double u, double v) const
    {
        const double x = u * cells_;
        const double y = v * cells_;
        const int x0 = static_cast<int>(std::floor(x));
        const int y0 = static_cast<int>(std::floor(y));
        const double fx = smoothstep(x - x0);
        const double fy = smoothstep(y - y0);
        auto at = [&](int i, int j) {
            i = ((i % cells_) + cells_) % cells_;
            j = ((j % cells_) + cells_) % cells_;
            return values_[static_cast<std::size_t>(j) * cells_ + i];
        };
        const double a = at(x0, y0) + fx * (at(x0 + 1, y0) - at(x0, y0));
        const double b = at(x0, y0 + 1) + fx * (at(x0 + 1, y0 + 1) - at(x0, y0 + 1));
        return a + fy * (b - a);
    }

private:
    int cells_;
    std::vector<double> values_;
};

class Fbm {
public:
    Fbm(int base_cells, int octaves, Rng& rng)
    {
        for (int o = 0; o < octaves; ++o)
            layers_.emplace_back(base_cells << o, rng);
    }

    double operator()(double u, double v) const
    {
        double sum = 0.0, amp = 0.5;
        for (const ValueNoise& n : layers_) {
            sum += amp * n(u, v);
            amp *= 0.5;
        }
        return sum;
    }

private:
    std::vector<ValueNoise> layers_;
};

Rgb random_color(Rng& rng)
{
    const double v = uniform(rng, 0.05, 0.85);
    const double hue = uniform(rng, 0.0, 2.0 * kPi);
    const double sat = uniform(rng, 0.0, 0.6);
    Rgb c{v * (1.0 + sat * std::cos(hue)), v * (1.0 + sat * std::cos(hue - 2.0944)),
          v * (1.0 + sat * std::cos(hue + 2.0944))};
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

Rgb mix(const Rgb& a, const Rgb& b, double t)
{
    return a + (b - a) * t;
}

void renormalize_normals(Image& normal)
{
    for (int y = 0; y < normal.height(); ++y)
        for (int x = 0; x < normal.width(); ++x) {
            Vec3 n = normal.rgb(y, x);
            n.z = std::max(n.z, kNormalZFloor);
            normal.set_rgb(y, x, normalize(n));
        }
}

void clamp_image(Image& img, double lo, double hi)
{
    for (double& v : img.data())
        v = std::clamp(v, lo, hi);
}

} // namespace

MaterialMaps synthetic_source(int resolution, std::uint64_t seed)
{
    if (resolution < 8)
        throw ConfigError("synthetic_source: resolution must be >= 8");
    Rng rng = derive_rng(seed, 0x737263);
    const int pattern = uniform_int(rng, 0, 3);
    const Rgb c0 = random_color(rng);
    const Rgb c1 = random_color(rng);
    const double rough0 = uniform(rng, 0.05, 0.9);
    const double rough1 = uniform(rng, 0.05, 0.9);
    const double bump = uniform(rng, 0.002, 0.02);
    const bool metallic = uniform(rng) < 0.25;
    const Fbm fine(uniform_int(rng, 4, 8), 4, rng);
    const Fbm coarse(uniform_int(rng, 2, 3), 2, rng);

    const int tiles = uniform_int(rng, 2, 6);
    const double grout = uniform(rng, 0.04, 0.12);
    const double ring_freq = uniform(rng, 3.0, 10.0);
    const int spot_count = uniform_int(rng, 6, 30);
    std::vector<std::array<double, 3>> spots(static_cast<std::size_t>(spot_count));
    for (auto& s : spots)
        s = {uniform(rng), uniform(rng), uniform(rng, 0.03, 0.12)};
    std::vector<double> tile_shade(static_cast<std::size_t>(tiles * tiles));
    for (double& v : tile_shade)
        v = uniform(rng);

    const int R = resolution;
    Image base(R, R, 3), rough(R, R, 1), height(R, R, 1), metal(R, R, 1);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            const double u = (x + 0.5) / R;
            const double v = (y + 0.5) / R;
            const double n = fine(u, v);
            double mask = 0.0; // 0 -> c0 / rough0, 1 -> c1 / rough1
            double h = 0.3 * n;
            switch (pattern) {
            case 0: // layered noise
                mask = std::clamp(0.5 + 2.0 * coarse(u, v), 0.0, 1.0);
                h += 0.7 * coarse(u, v);
                break;
            case 1: { // tiles with grout
                const double tu = u * tiles, tv = v * tiles;
                const double du = std::min(tu - std::floor(tu), std::ceil(tu) - tu);
                const double dv = std::min(tv - std::floor(tv), std::ceil(tv) - tv);
                const double edge = std::min(du, dv);
                const double in_tile = smoothstep(std::clamp(edge / grout, 0.0, 1.0));
                const int ti = std::min(tiles - 1, static_cast<int>(tu));
                const int tj = std::min(tiles - 1, static_cast<int>(tv));
                mask = 1.0 - in_tile;
                h += in_tile * (0.5 + 0.2 * tile_shade[static_cast<std::size_t>(tj * tiles + ti)]);
                break;
            }
            case 2: { // rings
                const double r = std::hypot(u - 0.3, v - 0.6) + 0.15 * coarse(u, v);
                const double s = 0.5 + 0.5 * std::sin(2.0 * kPi * ring_freq * r);
                mask = s;
                h += 0.3 * s;
                break;
            }
            default: // spots
                for (const auto& s : spots) {
                    double dx = std::abs(u - s[0]), dy = std::abs(v - s[1]);
                    dx = std::min(dx, 1.0 - dx);
                    dy = std::min(dy, 1.0 - dy);
                    const double d = std::hypot(dx, dy) / s[2];
                    if (d < 1.0) {
                        const double bumpv = 1.0 - d * d;
                        mask = std::max(mask, smoothstep(std::min(1.0, 3.0 * bumpv)));
                        h += 0.6 * bumpv;
                    }
                }
                break;
            }
            const Rgb albedo = mix(c0, c1, mask) * (1.0 + 0.35 * n);
            base.set_rgb(y, x, {std::clamp(albedo.x, 0.0, 1.0), std::clamp(albedo.y, 0.0, 1.0),
                                std::clamp(albedo.z, 0.0, 1.0)});
            rough.at(y, x, 0) = std::clamp(rough0 + (rough1 - rough0) * mask + 0.1 * n, kRoughnessFloor, 1.0);
            height.at(y, x, 0) = bump * h;
            metal.at(y, x, 0) = metallic ? mask : 0.0;
        }

    MaterialMaps m;
    m.diffuse = std::move(base);
    m.roughness = std::move(rough);
    m.normal = height_to_normals(HeightField{std::move(height)}, 1.0 / R);
    m.specular = Image(R, R, 3);
    return assign_specular(m, metallic ? &metal : nullptr, rng);
}

std::vector<SourceMaterial> synthetic_sources(int count, int resolution, std::uint64_t seed)
{
    std::vector<SourceMaterial> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "synthetic-%04d", i);
        out.push_back({id, synthetic_source(resolution, splitmix64(seed + static_cast<std::uint64_t>(i)))});
    }
    return out;
}

std::vector<SourceMaterial> load_sources(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw IoError("source directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_directory() && std::filesystem::exists(entry.path() / "material.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty())
        throw IoError("no material directories under " + dir.string());
    std::vector<SourceMaterial> out;
    for (const auto& d : dirs)
        out.push_back({d.filename().string(), load_material(d)});
    return out;
}

RandomFeatureNet::RandomFeatureNet(int inputs, std::vector<int> hidden, int outputs, std::uint64_t seed)
    : inputs_(inputs), outputs_(outputs)
{
    if (inputs < 1 || outputs < 1)
        throw ConfigError("RandomFeatureNet: need at least one input and output");
    // Gains: a wider first layer spreads the sine features over several
    // periods; the output gain widens the logistic range.
    constexpr double kInputGain = 3.0;
    constexpr double kOutputGain = 2.0;
    Rng rng = derive_rng(seed, 0x72666e);
    std::vector<int> widths{inputs};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(outputs);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        Layer layer;
        layer.in = widths[l];
        layer.out = widths[l + 1];
        const bool last = l + 2 == widths.size();
        const double gain = l == 0 ? kInputGain : (last ? kOutputGain : 1.0);
        const double scale = gain / std::sqrt(static_cast<double>(layer.in));
        layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
        for (double& v : layer.w)
            v = scale * gaussian(rng);
        layer.b.resize(static_cast<std::size_t>(layer.out));
        for (double& v : layer.b)
            v = last ? 0.0 : uniform(rng, -kPi, kPi);
        layers_.push_back(std::move(layer));
    }
}

std::vector<double> RandomFeatureNet::evaluate(std::span<const double> input) const
{
    if (static_cast<int>(input.size()) != inputs_)
        throw StructuralError("RandomFeatureNet: expected " + std::to_string(inputs_) + " inputs");
    std::vector<double> cur(input.begin(), input.end()), next;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        next.assign(layer.b.begin(), layer.b.end());
        for (int i = 0; i < layer.in; ++i)
            for (int o = 0; o < layer.out; ++o)
                next[static_cast<std::size_t>(o)] += cur[static_cast<std::size_t>(i)] *
                                                     layer.w[static_cast<std::size_t>(i) * layer.out + o];
        if (l + 1 < layers_.size())
            for (double& v : next)
                v = std::sin(v);
        cur.swap(next);
    }
    return cur;
}

Image pixel_features(const MaterialMaps& m)
{
    const int R = m.resolution();
    HeightField h = normals_to_height(m.normal, 1.0 / R);
    double mean = 0.0, var = 0.0;
    for (double v : h.heights.data())
        mean += v;
    mean /= static_cast<double>(h.heights.size());
    for (double v : h.heights.data())
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(h.heights.size()));
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    Image f(R, R, kFeatureInputs);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            const Rgb a = m.diffuse.rgb(y, x) + m.specular.rgb(y, x);
            f.at(y, x, 0) = a.x;
            f.at(y, x, 1) = a.y;
            f.at(y, x, 2) = a.z;
            f.at(y, x, 3) = (h.at(y, x) - mean) * inv;
        }
    return f;
}

double rotated_extent(int size, double angle)
{
    return size * (std::abs(std::cos(angle)) + std::abs(std::sin(angle)));
}

MaterialMaps extract_crop(const MaterialMaps& src, const CropSpec& spec, int out_res)
{
    src.validate();
    if (out_res < 1 || spec.size < 1)
        throw ConfigError("extract_crop: sizes must be positive");
    const int R = src.resolution();
    const double half = 0.5 * rotated_extent(spec.size, spec.angle);
    const double cx = spec.x0 + 0.5 * spec.size;
    const double cy = spec.y0 + 0.5 * spec.size;
    constexpr double kSlack = 1e-9;
    if (cx - half < -kSlack || cy - half < -kSlack || cx + half > R + kSlack || cy + half > R + kSlack)
        throw StructuralError("extract_crop: crop of size " + std::to_string(spec.size) + " at (" +
                              std::to_string(spec.x0) + ", " + std::to_string(spec.y0) + ") leaves the " +
                              std::to_string(R) + " px source");
    const double c = std::cos(spec.angle);
    const double s = std::sin(spec.angle);
    const bool axis_aligned = spec.angle == 0.0;

    MaterialMaps out;
    out.diffuse = Image(out_res, out_res, 3);
    out.specular = Image(out_res, out_res, 3);
    out.roughness = Image(out_res, out_res, 1);
    out.normal = Image(out_res, out_res, 3);
    const double scale = static_cast<double>(spec.size) / out_res;
    for (int v = 0; v < out_res; ++v)
        for (int u = 0; u < out_res; ++u) {
            const double ox = ((u + 0.5) / out_res - 0.5) * spec.size;
            const double oy = ((v + 0.5) / out_res - 0.5) * spec.size;
            // Image coordinates (y down) of a counter-clockwise world rotation.
            const double px = axis_aligned ? spec.x0 + (u + 0.5) * scale : cx + c * ox + s * oy;
            const double py = axis_aligned ? spec.y0 + (v + 0.5) * scale : cy - s * ox + c * oy;
            sample_bilinear(src.diffuse, px, py, out.diffuse.pixel(v, u));
            sample_bilinear(src.specular, px, py, out.specular.pixel(v, u));
            sample_bilinear(src.roughness, px, py, out.roughness.pixel(v, u));
            Vec3 n;
            double buf[3];
            sample_bilinear(src.normal, px, py, buf);
            // The output shows the source rotated by -angle; rotate normals alike.
            n = {c * buf[0] + s * buf[1], -s * buf[0] + c * buf[1], buf[2]};
            out.normal.set_rgb(v, u, n);
        }
    if (!(axis_aligned && spec.size == out_res))
        renormalize_normals(out.normal);
    clamp_image(out.roughness, kRoughnessFloor, 1.0);
    return out;
}

std::vector<CropSpec> random_crop_specs(int source_resolution, int count, int min_px, int max_px, Rng& rng)
{
    if (count < 1)
        throw ConfigError("random_crops: count must be >= 1");
    if (min_px < 1 || min_px > max_px)
        throw ConfigError("random_crops: need 1 <= min_px <= max_px");
    if (max_px > source_resolution)
        throw ConfigError("random_crops: max_px " + std::to_string(max_px) + " exceeds source resolution " +
                          std::to_string(source_resolution));
    if (min_px * std::sqrt(2.0) > source_resolution)
        throw StructuralError("random_crops: " + std::to_string(source_resolution) + " px source too small for " +
                              std::to_string(min_px) + " px crops under rotation");
    std::vector<CropSpec> specs;
    for (int i = 0; i < count; ++i) {
        const double angle = uniform(rng, 0.0, 2.0 * kPi);
        const double k = std::abs(std::cos(angle)) + std::abs(std::sin(angle));
        const int largest = std::min(max_px, static_cast<int>(std::floor(source_resolution / k)));
        CropSpec spec;
        spec.angle = angle;
        spec.size = uniform_int(rng, min_px, std::max(min_px, largest));
        const double half = 0.5 * rotated_extent(spec.size, angle);
        const double cx = uniform(rng, half, source_resolution - half);
        const double cy = uniform(rng, half, source_resolution - half);
        spec.x0 = cx - 0.5 * spec.size;
        spec.y0 = cy - 0.5 * spec.size;
        specs.push_back(spec);
    }
    return specs;
}

std::vector<MaterialMaps> random_crops(const MaterialMaps& src, int count, int min_px, int max_px, int out_res,
                                       Rng& rng)
{
    std::vector<MaterialMaps> out;
    for (const CropSpec& spec : random_crop_specs(src.resolution(), count, min_px, max_px, rng))
        out.push_back(extract_crop(src, spec, out_res));
    return out;
}

RoughnessRecipe draw_roughness_recipe(Rng& rng)
{
    RoughnessRecipe r;
    r.net_seed = rng();
    r.beta = uniform(rng, kMinRoughnessBlend, kMaxRoughnessBlend);
    return r;
}

Image procedural_roughness_map(const MaterialMaps& m, std::uint64_t net_seed)
{
    const RandomFeatureNet net(kFeatureInputs, {kFeatureHidden, kFeatureHidden}, 1, net_seed);
    const Image f = pixel_features(m);
    Image out(m.resolution(), m.resolution(), 1);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
            const double z = net.evaluate(f.pixel(y, x))[0];
            out.at(y, x, 0) = 1.0 / (1.0 + std::exp(-z));
        }
    return out;
}

MaterialMaps blend_roughness(const MaterialMaps& m, const Image& procedural, double beta)
{
    if (!procedural.same_shape(m.roughness))
        throw StructuralError("blend_roughness: procedural map does not match the roughness map");
    if (!(beta >= 0.0 && beta <= 1.0))
        throw ConfigError("blend_roughness: beta must be in [0, 1]");
    MaterialMaps out = m;
    if (beta == 0.0)
        return out;
    for (std::size_t i = 0; i < out.roughness.size(); ++i)
        out.roughness.data()[i] = std::clamp((1.0 - beta) * m.roughness.data()[i] + beta * procedural.data()[i],
                                             kRoughnessFloor, 1.0);
    return out;
}

MaterialMaps apply_roughness_recipe(const MaterialMaps& m, const RoughnessRecipe& recipe)
{
    return blend_roughness(m, procedural_roughness_map(m, recipe.net_seed), recipe.beta);
}

MaterialMaps procedural_roughness(const MaterialMaps& m, Rng& rng)
{
    return apply_roughness_recipe(m, draw_roughness_recipe(rng));
}

MixResult mix_materials_detailed(std::span<const MaterialMaps> sources, std::uint64_t net_seed)
{
    if (sources.size() < 2 || sources.size() > 3)
        throw StructuralError("mix_materials: need 2 or 3 sources, got " + std::to_string(sources.size()));
    const int R = sources.front().resolution();
    for (const MaterialMaps& s : sources) {
        s.validate();
        if (s.resolution() != R)
            throw StructuralError("mix_materials: sources differ in resolution");
    }
    const int G = 2 * R;
    std::vector<Image> feats;
    for (const MaterialMaps& s : sources) {
        MaterialMaps u;
        u.diffuse = upsample2_bilinear(s.diffuse);
        u.specular = upsample2_bilinear(s.specular);
        u.roughness = upsample2_bilinear(s.roughness);
        u.normal = upsample2_bilinear(s.normal);
        renormalize_normals(u.normal);
        feats.push_back(pixel_features(u));
    }
    const int M = static_cast<int>(sources.size());
    const RandomFeatureNet net(kFeatureInputs, {kFeatureHidden, kFeatureHidden}, M, net_seed);

    MixResult res;
    res.grid = G;
    res.selection.resize(static_cast<std::size_t>(G) * G);
    double input[kFeatureInputs];
    for (int y = 0; y < G; ++y)
        for (int x = 0; x < G; ++x) {
            for (int k = 0; k < kFeatureInputs; ++k) {
                double sum = 0.0;
                for (const Image& f : feats)
                    sum += f.at(y, x, k);
                input[k] = sum / M;
            }
            const auto logits = net.evaluate(input);
            int pick = 0;
            for (int i = 1; i < M; ++i)
                if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(pick)])
                    pick = i;
            res.selection[static_cast<std::size_t>(y) * G + x] = pick;
        }

    // Each coarse pixel is the 2x2 average of the selected sources' values at
    // that pixel, written as base + weighted differences so that agreeing
    // sources reproduce the input bit-for-bit.
    MaterialMaps& out = res.material;
    out = sources.front();
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            int count[3] = {0, 0, 0};
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    ++count[res.selection[static_cast<std::size_t>(2 * y + dy) * G + 2 * x + dx]];
            int base = 0;
            while (count[base] == 0)
                ++base;
            auto blend = [&](Image MaterialMaps::*map) {
                const Image& b = sources[static_cast<std::size_t>(base)].*map;
                Image& o = out.*map;
                for (int c = 0; c < o.channels(); ++c) {
                    double v = b.at(y, x, c);
                    for (int i = 0; i < M; ++i)
                        if (i != base && count[i] > 0)
                            v += 0.25 * count[i] * ((sources[static_cast<std::size_t>(i)].*map).at(y, x, c) - b.at(y, x, c));
                    o.at(y, x, c) = v;
                }
            };
            blend(&MaterialMaps::diffuse);
            blend(&MaterialMaps::specular);
            blend(&MaterialMaps::roughness);
            blend(&MaterialMaps::normal);
            const Vec3 n = out.normal.rgb(y, x);
            if (n != sources[static_cast<std::size_t>(base)].normal.rgb(y, x))
                out.normal.set_rgb(y, x, n / length(n));
        }
    clamp_image(out.diffuse, 0.0, 1.0);
    clamp_image(out.specular, 0.0, 1.0);
    clamp_image(out.roughness, kRoughnessFloor, 1.0);
    return res;
}

MaterialMaps mix_materials(std::span<const MaterialMaps> sources, Rng& rng)
{
    return mix_materials_detailed(sources, rng()).material;
}

MaterialMaps assign_specular(const MaterialMaps& m, const Image* metalness, double base_specular)
{
    const int R = m.resolution();
    if (metalness && (metalness->height() != R || metalness->width() != R || metalness->channels() != 1))
        throw StructuralError("assign_specular: metalness map must be a 1-channel map at the material resolution");
    MaterialMaps out = m;
    out.specular = Image(R, R, 3);
    for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) {
            const double metal = metalness ? std::clamp(metalness->at(y, x, 0), 0.0, 1.0) : 0.0;
            for (int c = 0; c < 3; ++c) {
                const double albedo = m.diffuse.at(y, x, c);
                out.specular.at(y, x, c) = std::clamp(base_specular + albedo * metal, 0.0, 1.0);
                out.diffuse.at(y, x, c) = std::clamp(albedo * (1.0 - metal), 0.0, 1.0);
            }
        }
    return out;
}

MaterialMaps assign_specular(const MaterialMaps& m, const Image* metalness, Rng& rng)
{
    return assign_specular(m, metalness, uniform(rng, kMinBaseSpecular, kMaxBaseSpecular));
}

ForgeConfig ForgeConfig::desk()
{
    return {};
}

ForgeConfig ForgeConfig::paper()
{
    ForgeConfig c;
    c.source_resolution = 2048;
    c.min_crop = 512;
    c.max_crop = 1400;
    c.out_res = 512;
    c.mixtures = 1024;
    return c;
}

void ForgeConfig::validate() const
{
    if (source_count < 1 || source_resolution < 1 || crops_per_source < 1 || out_res < 1)
        throw ConfigError("forge config: counts and resolutions must be positive");
    if (min_crop < 1 || min_crop > max_crop || max_crop > source_resolution)
        throw ConfigError("forge config: need 1 <= min_crop <= max_crop <= source_resolution");
    if (!(roughness_fraction >= 0.0 && roughness_fraction <= 1.0) ||
        !(two_source_fraction >= 0.0 && two_source_fraction <= 1.0) || !(test_fraction >= 0.0 && test_fraction < 1.0))
        throw ConfigError("forge config: fractions must lie in [0, 1]");
    if (mixtures < 0)
        throw ConfigError("forge config: mixtures must be >= 0");
}

std::string to_string(RecordKind kind)
{
    switch (kind) {
    case RecordKind::Crop:
        return "crop";
    case RecordKind::RoughnessBlend:
        return "roughness-blend";
    case RecordKind::Mixture:
        return "mixture";
    }
    return "crop";
}

namespace {

RecordKind record_kind_from_string(const std::string& s)
{
    if (s == "crop")
        return RecordKind::Crop;
    if (s == "roughness-blend")
        return RecordKind::RoughnessBlend;
    if (s == "mixture")
        return RecordKind::Mixture;
    throw ConfigError("manifest: unknown record kind '" + s + "'");
}

nlohmann::json record_to_json(const ManifestRecord& r)
{
    nlohmann::json j;
    j["id"] = r.id;
    j["kind"] = to_string(r.kind);
    j["split"] = r.split;
    j["seed"] = r.seed;
    j["source_materials"] = r.source_materials;
    j["parents"] = r.parents;
    j["out_res"] = r.out_res;
    if (r.crop)
        j["crop"] = {{"x0", r.crop->x0}, {"y0", r.crop->y0}, {"size", r.crop->size}, {"angle", r.crop->angle}};
    if (r.roughness)
        j["roughness"] = {{"net_seed", r.roughness->net_seed}, {"beta", r.roughness->beta}};
    if (r.kind == RecordKind::Mixture)
        j["mix_net_seed"] = r.mix_net_seed;
    j["output"] = "materials/" + r.id;
    return j;
}

ManifestRecord record_from_json(const nlohmann::json& j)
{
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.kind = record_kind_from_string(j.at("kind").get<std::string>());
    r.split = j.at("split").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.source_materials = j.at("source_materials").get<std::vector<std::string>>();
    r.parents = j.at("parents").get<std::vector<std::string>>();
    r.out_res = j.at("out_res").get<int>();
    if (j.contains("crop")) {
        const auto& c = j["crop"];
        r.crop = CropSpec{c.at("x0").get<double>(), c.at("y0").get<double>(), c.at("size").get<int>(),
                          c.at("angle").get<double>()};
    }
    if (j.contains("roughness"))
        r.roughness = RoughnessRecipe{j["roughness"].at("net_seed").get<std::uint64_t>(),
                                      j["roughness"].at("beta").get<double>()};
    r.mix_net_seed = j.value("mix_net_seed", std::uint64_t{0});
    return r;
}

std::string record_id(const char* prefix, int index)
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s-%06d", prefix, index);
    return buf;
}

} // namespace

std::string DatasetManifest::to_jsonl() const
{
    std::string out;
    for (const ManifestRecord& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

DatasetManifest DatasetManifest::from_jsonl(const std::string& text)
{
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        try {
            m.records.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return m;
}

std::string DatasetManifest::hash() const
{
    return fnv1a_hex(to_jsonl());
}

const ManifestRecord& DatasetManifest::find(const std::string& id) const
{
    for (const ManifestRecord& r : records)
        if (r.id == id)
            return r;
    throw StructuralError("manifest: no record '" + id + "'");
}

std::vector<const ManifestRecord*> DatasetManifest::split(const std::string& tag) const
{
    std::vector<const ManifestRecord*> out;
    for (const ManifestRecord& r : records)
        if (r.split == tag)
            out.push_back(&r);
    return out;
}

ManifestCounts expected_counts(const ForgeConfig& cfg, int source_count)
{
    ManifestCounts c;
    c.test_sources = static_cast<int>(std::lround(cfg.test_fraction * source_count));
    if (source_count > 1)
        c.test_sources = std::min(c.test_sources, source_count - 1);
    else
        c.test_sources = 0;
    c.train_sources = source_count - c.test_sources;
    c.train_crops = c.train_sources * cfg.crops_per_source;
    c.test_crops = c.test_sources * cfg.crops_per_source;
    c.roughness = static_cast<int>(std::lround(cfg.roughness_fraction * c.train_crops));
    c.two_source = static_cast<int>(std::lround(cfg.two_source_fraction * cfg.mixtures));
    c.three_source = cfg.mixtures - c.two_source;
    return c;
}

DatasetManifest build_manifest(std::span<const SourceMaterial> sources, const ForgeConfig& cfg)
{
    cfg.validate();
    if (sources.empty())
        throw ConfigError("build_manifest: no source materials");
    const ManifestCounts counts = expected_counts(cfg, static_cast<int>(sources.size()));
    if (2 * counts.two_source + 3 * counts.three_source > counts.train_crops)
        throw ConfigError("build_manifest: " + std::to_string(cfg.mixtures) + " mixtures need " +
                          std::to_string(2 * counts.two_source + 3 * counts.three_source) + " distinct train crops, only " +
                          std::to_string(counts.train_crops) + " exist");
    for (const SourceMaterial& s : sources)
        if (cfg.max_crop > s.maps.resolution())
            throw ConfigError("build_manifest: source '" + s.id + "' is smaller than max_crop");

    Rng rng = derive_rng(cfg.seed, 0x6d616e);
    std::vector<std::size_t> order(sources.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_test(sources.size(), false);
    for (int i = 0; i < counts.test_sources; ++i)
        is_test[order[static_cast<std::size_t>(i)]] = true;

    DatasetManifest m;
    std::vector<std::size_t> train_crops;
    int crop_index = 0;
    for (std::size_t s = 0; s < sources.size(); ++s) {
        Rng crop_rng = derive_rng(cfg.seed, splitmix64(0x63726f70 + s));
        const auto specs =
            random_crop_specs(sources[s].maps.resolution(), cfg.crops_per_source, cfg.min_crop, cfg.max_crop, crop_rng);
        for (const CropSpec& spec : specs) {
            ManifestRecord r;
            r.id = record_id("crop", crop_index++);
            r.kind = RecordKind::Crop;
            r.split = is_test[s] ? "test" : "train";
            r.seed = crop_rng();
            r.source_materials = {sources[s].id};
            r.crop = spec;
            r.out_res = cfg.out_res;
            if (!is_test[s])
                train_crops.push_back(m.records.size());
            m.records.push_back(std::move(r));
        }
    }

    std::vector<std::size_t> blend_pick = train_crops;
    std::shuffle(blend_pick.begin(), blend_pick.end(), rng);
    blend_pick.resize(static_cast<std::size_t>(counts.roughness));
    std::sort(blend_pick.begin(), blend_pick.end());
    int blend_index = 0;
    for (std::size_t idx : blend_pick) {
        const ManifestRecord parent = m.records[idx];
        ManifestRecord r;
        r.id = record_id("rough", blend_index++);
        r.kind = RecordKind::RoughnessBlend;
        r.seed = rng();
        r.source_materials = parent.source_materials;
        r.parents = {parent.id};
        Rng rr = derive_rng(r.seed, 0);
        r.roughness = draw_roughness_recipe(rr);
        r.out_res = cfg.out_res;
        m.records.push_back(std::move(r));
    }

    // Mixtures draw crop records without replacement.
    std::vector<std::size_t> pool = train_crops;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<int> arity(static_cast<std::size_t>(counts.two_source), 2);
    arity.insert(arity.end(), static_cast<std::size_t>(counts.three_source), 3);
    std::shuffle(arity.begin(), arity.end(), rng);
    std::size_t next = 0;
    int mix_index = 0;
    for (int k : arity) {
        ManifestRecord r;
        r.id = record_id("mix", mix_index++);
        r.kind = RecordKind::Mixture;
        r.seed = rng();
        r.mix_net_seed = splitmix64(r.seed);
        r.out_res = cfg.out_res;
        for (int i = 0; i < k; ++i) {
            const ManifestRecord& parent = m.records[pool[next++]];
            r.parents.push_back(parent.id);
            r.source_materials.push_back(parent.source_materials.front());
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

std::map<std::string, const MaterialMaps*> index_sources(std::span<const SourceMaterial> sources)
{
    std::map<std::string, const MaterialMaps*> idx;
    for (const SourceMaterial& s : sources)
        if (!idx.emplace(s.id, &s.maps).second)
            throw StructuralError("duplicate source id '" + s.id + "'");
    return idx;
}

MaterialMaps realize_record(const ManifestRecord& record, const DatasetManifest& manifest,
                            const std::map<std::string, const MaterialMaps*>& sources)
{
    switch (record.kind) {
    case RecordKind::Crop: {
        if (!record.crop || record.source_materials.size() != 1)
            throw StructuralError("manifest record " + record.id + ": crop needs one source and a crop spec");
        auto it = sources.find(record.source_materials.front());
        if (it == sources.end())
            throw StructuralError("manifest record " + record.id + ": unknown source '" +
                                  record.source_materials.front() + "'");
        return extract_crop(*it->second, *record.crop, record.out_res);
    }
    case RecordKind::RoughnessBlend: {
        if (!record.roughness || record.parents.size() != 1)
            throw StructuralError("manifest record " + record.id + ": blend needs one parent and a recipe");
        const MaterialMaps base = realize_record(manifest.find(record.parents.front()), manifest, sources);
        return apply_roughness_recipe(base, *record.roughness);
    }
    case RecordKind::Mixture: {
        std::vector<MaterialMaps> parts;
        for (const std::string& p : record.parents)
            parts.push_back(realize_record(manifest.find(p), manifest, sources));
        return mix_materials_detailed(parts, record.mix_net_seed).material;
    }
    }
    throw StructuralError("manifest record " + record.id + ": unknown kind");
}

} // namespace matforge
