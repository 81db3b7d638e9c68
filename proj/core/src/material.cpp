// SPDX-License-Identifier: Apache-2.0
#include "matforge/material.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "matforge/common.hpp"
#include "matforge/image_io.hpp"

namespace matforge {

namespace {

void check_map(const Image& img, std::string_view name, int res, int channels)
{
    if (img.height() != res || img.width() != res)
        throw StructuralError("material map '" + std::string(name) + "' has resolution " +
                              std::to_string(img.height()) + "x" + std::to_string(img.width()) + ", expected " +
                              std::to_string(res));
    if (img.channels() != channels)
        throw StructuralError("material map '" + std::string(name) + "' has " + std::to_string(img.channels()) +
                              " channels, expected " + std::to_string(channels));
}

void check_range(const Image& img, std::string_view name, double lo, double hi)
{
    for (double v : img.data()) {
        if (!std::isfinite(v))
            throw NumericError("material map '" + std::string(name) + "' contains non-finite values");
        if (v < lo || v > hi)
            throw NumericError("material map '" + std::string(name) + "' value " + std::to_string(v) +
                               " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
}

} // namespace

void MaterialMaps::validate() const
{
    const int res = diffuse.height();
    if (res <= 0 || diffuse.width() != res)
        throw StructuralError("material maps must be square and non-empty");
    check_map(diffuse, "diffuse", res, 3);
    check_map(specular, "specular", res, 3);
    check_map(roughness, "roughness", res, 1);
    check_map(normal, "normal", res, 3);
    check_range(diffuse, "diffuse", 0.0, 1.0);
    check_range(specular, "specular", 0.0, 1.0);
    check_range(roughness, "roughness", kRoughnessFloor, 1.0);
    check_range(normal, "normal", -1.0, 1.0);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const Vec3 n = normal.rgb(y, x);
            if (std::abs(length(n) - 1.0) > 1e-4 || n.z <= 0.0)
                throw NumericError("normal at (" + std::to_string(y) + ", " + std::to_string(x) +
                                   ") is not a unit vector with positive z");
        }
}

bool MaterialMaps::is_valid() const
{
    try {
        validate();
        return true;
    } catch (const Error&) {
        return false;
    }
}

MaterialMaps MaterialMaps::constant(int resolution, const Rgb& d, const Rgb& s, double r, const Vec3& n)
{
    MaterialMaps m{Image(resolution, resolution, 3), Image(resolution, resolution, 3),
                   Image(resolution, resolution, 1, r), Image(resolution, resolution, 3)};
    const Vec3 nn = normalize(n);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            m.diffuse.set_rgb(y, x, d);
            m.specular.set_rgb(y, x, s);
            m.normal.set_rgb(y, x, nn);
        }
    return m;
}

LatentImage::LatentImage(Image v) : values(std::move(v))
{
    if (values.channels() != kLatentChannels)
        throw StructuralError("latent image must have 10 channels");
}

LatentImage encode_material(const MaterialMaps& m)
{
    const int res = m.resolution();
    check_map(m.diffuse, "diffuse", res, 3);
    check_map(m.specular, "specular", res, 3);
    check_map(m.roughness, "roughness", res, 1);
    check_map(m.normal, "normal", res, 3);
    LatentImage out(res, res);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            auto p = out.values.pixel(y, x);
            for (int c = 0; c < 3; ++c) {
                p[c] = 2.0 * m.diffuse.at(y, x, c) - 1.0;
                p[3 + c] = 2.0 * m.specular.at(y, x, c) - 1.0;
                p[7 + c] = m.normal.at(y, x, c);
            }
            p[6] = 2.0 * m.roughness.at(y, x, 0) - 1.0;
        }
    return out;
}

MaterialMaps decode_material(const LatentImage& latent)
{
    const Image& v = latent.values;
    if (v.channels() != kLatentChannels)
        throw StructuralError("decode_material: latent must have 10 channels");
    if (v.height() != v.width() || v.height() <= 0)
        throw StructuralError("decode_material: latent must be square");
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v.data()[i])) {
            const std::size_t pix = i / kLatentChannels;
            throw NumericError("decode_material: non-finite value at pixel (" + std::to_string(pix / v.width()) +
                               ", " + std::to_string(pix % v.width()) + ") channel " +
                               std::to_string(i % kLatentChannels));
        }
    const int res = v.height();
    MaterialMaps m{Image(res, res, 3), Image(res, res, 3), Image(res, res, 1), Image(res, res, 3)};
    const auto unit = [](double e) { return std::clamp(0.5 * (e + 1.0), 0.0, 1.0); };
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            auto p = v.pixel(y, x);
            for (int c = 0; c < 3; ++c) {
                m.diffuse.at(y, x, c) = unit(p[c]);
                m.specular.at(y, x, c) = unit(p[3 + c]);
            }
            m.roughness.at(y, x, 0) = std::clamp(0.5 * (p[6] + 1.0), kRoughnessFloor, 1.0);
            Vec3 n{p[7], p[8], std::max(p[9], kNormalZFloor)};
            m.normal.set_rgb(y, x, normalize(n));
        }
    return m;
}

std::uint16_t quantize_unit(double v)
{
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
}

double dequantize_unit(std::uint16_t code) { return code / 65535.0; }

std::uint16_t quantize_normal(double v)
{
    return static_cast<std::uint16_t>(32767 + std::lround(std::clamp(v, -1.0, 1.0) * 32767.0));
}

double dequantize_normal(std::uint16_t code) { return (static_cast<int>(code) - 32767) / 32767.0; }

namespace {

void write_map(const Image& img, const std::filesystem::path& path, bool is_normal)
{
    std::vector<std::uint16_t> codes(img.size());
    for (std::size_t i = 0; i < codes.size(); ++i)
        codes[i] = is_normal ? quantize_normal(img.data()[i]) : quantize_unit(img.data()[i]);
    write_png16(path, img.height(), img.width(), img.channels(), codes);
}

Image read_map(const std::filesystem::path& path, std::string_view name, int channels, bool is_normal)
{
    if (!std::filesystem::exists(path))
        throw IoError("material map '" + std::string(name) + "' missing: " + path.string());
    const Png16 png = read_png(path);
    if (png.channels != channels)
        throw StructuralError("material map '" + std::string(name) + "' has " + std::to_string(png.channels) +
                              " channels, expected " + std::to_string(channels));
    Image img(png.height, png.width, channels);
    for (std::size_t i = 0; i < img.size(); ++i)
        img.data()[i] = is_normal ? dequantize_normal(png.codes[i]) : dequantize_unit(png.codes[i]);
    return img;
}

} // namespace

void save_material(const MaterialMaps& m, const std::filesystem::path& dir)
{
    m.validate();
    std::filesystem::create_directories(dir);
    write_map(m.diffuse, dir / "diffuse.png", false);
    write_map(m.specular, dir / "specular.png", false);
    write_map(m.roughness, dir / "roughness.png", false);
    write_map(m.normal, dir / "normal.png", true);

    nlohmann::json sidecar;
    sidecar["format"] = "matforge-material";
    sidecar["format_version"] = kMaterialFormatVersion;
    sidecar["resolution"] = m.resolution();
    sidecar["channel_order"] = {"diffuse.r", "diffuse.g", "diffuse.b",  "specular.r", "specular.g",
                                "specular.b", "roughness", "normal.x", "normal.y",   "normal.z"};
    sidecar["maps"] = {
        {"diffuse", {{"file", "diffuse.png"}, {"encoding", "linear16"}}},
        {"specular", {{"file", "specular.png"}, {"encoding", "linear16"}}},
        {"roughness", {{"file", "roughness.png"}, {"encoding", "linear16"}}},
        {"normal", {{"file", "normal.png"}, {"encoding", "signed16"}}},
    };
    std::ofstream out(dir / "material.json");
    out << sidecar.dump(2) << "\n";
    if (!out)
        throw IoError("cannot write " + (dir / "material.json").string());
}

MaterialMaps load_material(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir))
        throw IoError("material directory not found: " + dir.string());
    int declared = -1;
    if (std::filesystem::exists(dir / "material.json")) {
        std::ifstream in(dir / "material.json");
        nlohmann::json sidecar = nlohmann::json::parse(in, nullptr, false);
        if (sidecar.is_discarded())
            throw IoError("malformed material.json in " + dir.string());
        if (sidecar.value("format_version", 0) > kMaterialFormatVersion)
            throw IoError("material.json format_version is newer than supported");
        declared = sidecar.value("resolution", -1);
    }
    MaterialMaps m{read_map(dir / "diffuse.png", "diffuse", 3, false),
                   read_map(dir / "specular.png", "specular", 3, false),
                   read_map(dir / "roughness.png", "roughness", 1, false),
                   read_map(dir / "normal.png", "normal", 3, true)};
    for (double& r : m.roughness.data())
        r = std::max(r, kRoughnessFloor);
    if (declared >= 0 && declared != m.resolution())
        throw StructuralError("material.json declares resolution " + std::to_string(declared) + " but maps are " +
                              std::to_string(m.resolution()));
    m.validate();
    return m;
}

MaterialMaps rotate90(const MaterialMaps& m)
{
    MaterialMaps r{rotate90(m.diffuse), rotate90(m.specular), rotate90(m.roughness), rotate90(m.normal)};
    for (int y = 0; y < r.normal.height(); ++y)
        for (int x = 0; x < r.normal.width(); ++x) {
            const Vec3 n = r.normal.rgb(y, x);
            r.normal.set_rgb(y, x, {-n.y, n.x, n.z});
        }
    return r;
}

} // namespace matforge
