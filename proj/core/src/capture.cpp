// SPDX-License-Identifier: Apache-2.0
#include "matforge/capture.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "json.hpp"
#include "matforge/image_io.hpp"

namespace matforge {

ReplicateSet generate_replicates(const DenoiserWeights& model, const ConditionStack& condition,
                                 std::span<const std::uint64_t> seeds, const SamplerConfig& sampler)
{
    if (seeds.empty())
        throw ConfigError("generate_replicates: no seeds");
    if (model.config.condition_channels != condition.channels())
        throw ConfigError("generate_replicates: model expects " + std::to_string(model.config.condition_channels) +
                          " condition channels, the condition provides " + std::to_string(condition.channels()) +
                          " (model/condition variant mismatch)");
    const bool unconditional = condition.channels() == 0;
    const int res = unconditional ? model.config.resolution : condition.height();
    if (res != model.config.resolution || (!unconditional && condition.width() != res))
        throw StructuralError("generate_replicates: condition is " + std::to_string(res) + "x" +
                              std::to_string(condition.width()) + ", model resolution is " +
                              std::to_string(model.config.resolution));
    std::vector<std::uint64_t> sorted(seeds.begin(), seeds.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ConfigError("generate_replicates: duplicate seeds");

    const NoiseSchedule schedule = build_schedule(model.config.timesteps);
    const Image flat = unconditional ? Image(res, res, 0) : condition.flatten();
    const VelocityFn cond_fn = unconditional ? make_velocity_fn(model) : make_velocity_fn(model, flat);
    VelocityFn uncond_fn;
    if (sampler.guidance_scale != 1.0 && !unconditional)
        uncond_fn = make_velocity_fn(model, Image(flat.height(), flat.width(), flat.channels()));

    ReplicateSet rs;
    rs.condition = condition;
    for (std::uint64_t seed : sorted) {
        SamplerConfig cfg = sampler;
        cfg.seed = seed;
        const Image x = sample_eulera(cond_fn, uncond_fn ? &uncond_fn : nullptr, res, res, kLatentChannels, schedule, cfg);
        Replicate r;
        r.seed = seed;
        r.material = decode_material(LatentImage(x));
        rs.replicates.push_back(std::move(r));
    }
    return rs;
}

std::size_t argmin_score(std::span<const double> scores)
{
    if (scores.empty())
        throw ConfigError("argmin_score: no scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] < scores[best])
            best = i;
    return best;
}

Selection select_by_render_error(ReplicateSet& rs, const CaptureLighting& lighting)
{
    if (lighting.variant == Variant::Backbone)
        throw ConfigError("render-error selection needs the capture lighting; for unknown lighting use fixed-seed "
                          "selection (--seed) or the contact sheet with --pick");
    if (rs.replicates.empty())
        throw ConfigError("select_by_render_error: empty replicate set");
    Selection sel;
    for (Replicate& r : rs.replicates) {
        std::vector<Image> photos = render_capture(r.material, lighting);
        if (photos.size() != rs.condition.photos.size())
            throw ConfigError("select_by_render_error: lighting variant does not match the condition photographs");
        double score = 0.0;
        for (std::size_t i = 0; i < photos.size(); ++i)
            score += proxy_perceptual_error(photos[i], rs.condition.photos[i]);
        r.score = score;
        r.render = std::move(photos.front());
        sel.scores.push_back(score);
    }
    sel.index = argmin_score(sel.scores);
    sel.seed = rs.replicates[sel.index].seed;
    return sel;
}

namespace {

double tone(double x)
{
    return x / (1.0 + std::abs(x));
}

Image halve(const Image& img)
{
    return downsample2_average(img);
}

} // namespace

double proxy_perceptual_error(const Image& a, const Image& b)
{
    if (!a.same_shape(b))
        throw StructuralError("proxy_perceptual_error: image shapes differ");
    if (!a.all_finite() || !b.all_finite())
        throw NumericError("proxy_perceptual_error: non-finite pixel");
    constexpr int kLevels = 4;
    Image la = a, lb = b;
    double total = 0.0;
    for (int level = 0; level < kLevels; ++level) {
        const int h = la.height(), w = la.width(), c = la.channels();
        double tone_sum = 0.0;
        for (std::size_t i = 0; i < la.size(); ++i)
            tone_sum += std::abs(tone(la.data()[i]) - tone(lb.data()[i]));
        total += tone_sum / static_cast<double>(la.size());

        double grad_sum = 0.0;
        std::size_t grad_count = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int k = 0; k < c; ++k) {
                    const double e = la.at(y, x, k) - lb.at(y, x, k);
                    if (x + 1 < w) {
                        grad_sum += std::abs(la.at(y, x + 1, k) - lb.at(y, x + 1, k) - e);
                        ++grad_count;
                    }
                    if (y + 1 < h) {
                        grad_sum += std::abs(la.at(y + 1, x, k) - lb.at(y + 1, x, k) - e);
                        ++grad_count;
                    }
                }
        if (grad_count)
            total += grad_sum / static_cast<double>(grad_count);

        if (h % 2 || w % 2 || h < 2 || w < 2)
            break;
        la = halve(la);
        lb = halve(lb);
    }
    return total;
}

std::vector<PointLight> hemisphere_lights(int count, double radius, std::uint64_t seed)
{
    if (count < 1 || !(radius > 0.0))
        throw ConfigError("hemisphere_lights: need count >= 1 and radius > 0");
    const double intensity = normalized_flash_intensity(radius);
    std::vector<PointLight> lights;
    for (int i = 0; i < count; ++i) {
        Rng rng = derive_rng(seed, static_cast<std::uint64_t>(i));
        const double z = 1.0 - uniform(rng); // (0, 1]: uniform in solid angle
        const double phi = uniform(rng, 0.0, 2.0 * kPi);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        lights.push_back({Vec3{r * std::cos(phi), r * std::sin(phi), z} * radius, {intensity, intensity, intensity}});
    }
    return lights;
}

EvalReport evaluate_relighting(const MaterialMaps& m, const MaterialMaps& reference,
                               std::span<const PointLight> lights)
{
    m.validate();
    reference.validate();
    if (m.resolution() != reference.resolution())
        throw StructuralError("evaluate_relighting: resolutions differ (" + std::to_string(m.resolution()) + " vs " +
                              std::to_string(reference.resolution()) + ")");
    if (lights.empty())
        throw ConfigError("evaluate_relighting: need at least one light");
    EvalReport r;
    r.light_count = static_cast<int>(lights.size());
    r.map_rmse = {m.diffuse.rmse(reference.diffuse), m.specular.rmse(reference.specular),
                  m.roughness.rmse(reference.roughness), m.normal.rmse(reference.normal)};
    const CameraModel cam;
    for (const PointLight& light : lights) {
        const Image a = render_point(m, light, cam);
        const Image b = render_point(reference, light, cam);
        r.light_rmse.push_back(a.rmse(b));
        r.light_proxy.push_back(proxy_perceptual_error(a, b));
    }
    for (std::size_t i = 0; i < r.light_rmse.size(); ++i) {
        r.mean_rmse += r.light_rmse[i];
        r.mean_proxy += r.light_proxy[i];
    }
    r.mean_rmse /= r.light_count;
    r.mean_proxy /= r.light_count;
    return r;
}

EvalReport evaluate_relighting(const MaterialMaps& m, const MaterialMaps& reference, int light_count, double radius,
                               std::uint64_t seed)
{
    const std::vector<PointLight> lights = hemisphere_lights(light_count, radius, seed);
    EvalReport r = evaluate_relighting(m, reference, lights);
    r.radius = radius;
    r.light_seed = seed;
    return r;
}

std::string eval_report_json(const EvalReport& r)
{
    nlohmann::json j;
    j["map_rmse"] = {{"diffuse", r.map_rmse[0]},
                     {"specular", r.map_rmse[1]},
                     {"roughness", r.map_rmse[2]},
                     {"normal", r.map_rmse[3]}};
    j["relighting"] = {{"mean_rmse", r.mean_rmse}, {"mean_proxy", r.mean_proxy}};
    j["lights"] = {{"count", r.light_count}, {"radius", r.radius}, {"seed", r.light_seed}};
    j["per_light_rmse"] = r.light_rmse;
    j["per_light_proxy"] = r.light_proxy;
    return j.dump(2);
}

namespace {

// 5x7 glyphs, one string per row, '#' = ink.
const std::map<char, std::array<const char*, 7>>& font()
{
    static const std::map<char, std::array<const char*, 7>> glyphs = {
        {'0', {" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "}},
        {'1', {"  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
        {'2', {" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"}},
        {'3', {"#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "}},
        {'4', {"   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "}},
        {'5', {"#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "}},
        {'6', {"  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "}},
        {'7', {"#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "}},
        {'8', {" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "}},
        {'9', {" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "}},
        {'A', {" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
        {'B', {"#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "}},
        {'C', {" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "}},
        {'D', {"#### ", "#   #", "#   #", "#   #", "#   #", "#   #", "#### "}},
        {'E', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"}},
        {'F', {"#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "}},
        {'G', {" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ####"}},
        {'H', {"#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"}},
        {'I', {" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "}},
        {'J', {"  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "}},
        {'K', {"#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"}},
        {'L', {"#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"}},
        {'M', {"#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"}},
        {'N', {"#   #", "#   #", "##  #", "# # #", "#  ##", "#   #", "#   #"}},
        {'O', {" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
        {'P', {"#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "}},
        {'Q', {" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"}},
        {'R', {"#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"}},
        {'S', {" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "}},
        {'T', {"#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'U', {"#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "}},
        {'V', {"#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "}},
        {'W', {"#   #", "#   #", "#   #", "# # #", "# # #", "# # #", " # # "}},
        {'X', {"#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"}},
        {'Y', {"#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "}},
        {'Z', {"#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"}},
        {'-', {"     ", "     ", "     ", "#####", "     ", "     ", "     "}},
        {'=', {"     ", "     ", "#####", "     ", "#####", "     ", "     "}},
        {':', {"     ", "  #  ", "  #  ", "     ", "  #  ", "  #  ", "     "}},
        {'.', {"     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "}},
        {' ', {"     ", "     ", "     ", "     ", "     ", "     ", "     "}},
    };
    return glyphs;
}

void blit(Image& dst, const Image& tile, int x0, int y0)
{
    for (int y = 0; y < tile.height(); ++y)
        for (int x = 0; x < tile.width(); ++x)
            for (int c = 0; c < 3; ++c)
                dst.at(y0 + y, x0 + x, c) = tile.at(y, x, tile.channels() == 1 ? 0 : c);
}

Image display_tile(const Image& img, int tile, bool srgb)
{
    Image r = resize_bilinear(img, tile, tile);
    for (double& v : r.data())
        v = srgb ? srgb_encode(std::clamp(v, 0.0, 1.0)) : std::clamp(v, 0.0, 1.0);
    return r;
}

} // namespace

void draw_label(Image& img, int x, int y, const std::string& text, const Rgb& color)
{
    const auto& glyphs = font();
    int pen = x;
    for (char ch : text) {
        auto it = glyphs.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it == glyphs.end())
            it = glyphs.find(' ');
        for (int gy = 0; gy < 7; ++gy)
            for (int gx = 0; gx < 5; ++gx) {
                const int px = pen + gx, py = y + gy;
                if (it->second[static_cast<std::size_t>(gy)][gx] == '#' && px >= 0 && py >= 0 && px < img.width() &&
                    py < img.height())
                    img.set_rgb(py, px, color);
            }
        pen += 6;
    }
}

SheetLayout contact_sheet_layout(int replicates, int preview_lights, int tile)
{
    if (replicates < 1 || preview_lights < 0 || tile < 8)
        throw ConfigError("contact sheet: need >= 1 replicate, >= 0 previews and tile >= 8");
    SheetLayout l;
    l.tile = tile;
    l.columns = 4 + preview_lights;
    l.rows = replicates;
    l.width = l.columns * tile;
    l.height = l.rows * tile;
    return l;
}

Image contact_sheet(const ReplicateSet& rs, std::span<const PointLight> preview_lights, int tile)
{
    const SheetLayout l =
        contact_sheet_layout(static_cast<int>(rs.replicates.size()), static_cast<int>(preview_lights.size()), tile);
    Image sheet(l.height, l.width, 3);
    const CameraModel cam;
    for (int row = 0; row < l.rows; ++row) {
        const Replicate& r = rs.replicates[static_cast<std::size_t>(row)];
        const MaterialMaps& m = r.material;
        const int y0 = row * tile;
        Image normal_vis = m.normal;
        for (double& v : normal_vis.data())
            v = 0.5 * v + 0.5;
        blit(sheet, display_tile(m.diffuse, tile, true), 0, y0);
        blit(sheet, display_tile(m.specular, tile, true), tile, y0);
        blit(sheet, display_tile(m.roughness, tile, false), 2 * tile, y0);
        blit(sheet, display_tile(normal_vis, tile, false), 3 * tile, y0);
        for (std::size_t p = 0; p < preview_lights.size(); ++p)
            blit(sheet, display_tile(render_point(m, preview_lights[p], cam), tile, true),
                 (4 + static_cast<int>(p)) * tile, y0);
        const std::string label = "SEED " + std::to_string(r.seed);
        const int box_w = std::min(tile, 6 * static_cast<int>(label.size()) + 3);
        for (int y = y0; y < y0 + 10 && y < l.height; ++y)
            for (int x = 0; x < box_w; ++x)
                sheet.set_rgb(y, x, {0, 0, 0});
        draw_label(sheet, 2, y0 + 2, label, {1, 1, 1});
    }
    return sheet;
}

} // namespace matforge
