// SPDX-License-Identifier: Apache-2.0
#include "capture_io.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "matforge/common.hpp"
#include "matforge/image_io.hpp"

namespace matforge::cli {

using nlohmann::json;

std::string RunContext::config_hash() const { return fnv1a_hex(profile_to_json(profile)); }

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out)
            throw IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hash_path(const fs::path& path)
{
    if (fs::is_regular_file(path))
        return fnv1a_hex(read_text(path));
    if (!fs::is_directory(path))
        throw IoError("no such file or directory: " + path.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file())
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const fs::path& f : files)
        acc += fs::relative(f, path).generic_string() + ":" + fnv1a_hex(read_text(f)) + "\n";
    return fnv1a_hex(acc);
}

void write_sidecar(const fs::path& path, const RunContext& ctx, const json& extra)
{
    json j = extra;
    j["tool"] = "matforge";
    j["command"] = ctx.command;
    j["profile"] = ctx.profile.name;
    j["seed"] = ctx.seed;
    j["config_hash"] = ctx.config_hash();
    j["config"] = json::parse(profile_to_json(ctx.profile));
    j["deterministic"] = ctx.deterministic;
    if (!ctx.deterministic)
        j["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
    write_text(path, j.dump(2) + "\n");
}

Image view_vector_map(int resolution, double distance)
{
    const CameraModel cam = CameraModel::at_distance(distance);
    Image out(resolution, resolution, 3);
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x)
            out.set_rgb(y, x, cam.view_vector(surface_point(y, x, resolution)));
    return out;
}

EnvironmentMap environment_from_spec(const json& spec, const fs::path& base)
{
    if (spec.contains("procedural_seed")) {
        Rng rng = derive_rng(spec.at("procedural_seed").get<std::uint64_t>(), 0);
        return procedural_environment(rng, spec.value("height", 16), spec.value("width", 32));
    }
    if (spec.contains("file")) {
        EnvironmentMap env;
        env.radiance = read_pfm(base / spec.at("file").get<std::string>());
        env.rotation = spec.value("rotation", 0.0);
        env.validate();
        return env;
    }
    throw ConfigError("capture env needs 'procedural_seed' or 'file'");
}

Capture read_capture(const fs::path& dir)
{
    json j;
    try {
        j = json::parse(read_text(dir / "capture.json"));
    } catch (const json::exception& e) {
        throw ConfigError("capture.json: " + std::string(e.what()));
    }
    Capture c;
    try {
        c.lighting.variant = variant_from_string(j.at("variant").get<std::string>());
        c.lighting.distance = j.value("distance", 1.0);
        c.lighting.log_ratio = j.value("log_ratio", 0.0);
        c.lighting.env_samples = j.value("env_samples", c.lighting.env_samples);
        c.lighting.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("env"))
            c.lighting.env = environment_from_spec(j.at("env"), dir);
        for (const auto& name : j.at("photos"))
            c.condition.photos.push_back(read_pfm(dir / name.get<std::string>()));
    } catch (const json::exception& e) {
        throw ConfigError("capture.json: " + std::string(e.what()));
    }
    if (c.condition.photos.empty())
        throw ConfigError("capture.json lists no photos");
    if (c.lighting.variant == Variant::Colocated)
        c.condition.view_vectors = view_vector_map(c.condition.height(), c.lighting.distance);
    if (c.lighting.variant != Variant::Colocated && !c.lighting.env)
        throw ConfigError("capture.json: variant " + to_string(c.lighting.variant) + " needs an env entry");
    if (c.condition.channels() != condition_channels(c.lighting.variant))
        throw ConfigError("capture.json: photo count does not match variant " + to_string(c.lighting.variant));
    return c;
}

void write_capture(const fs::path& dir, const CaptureLighting& l, const std::vector<Image>& photos,
                   const json& env_spec)
{
    fs::create_directories(dir);
    json j;
    j["variant"] = to_string(l.variant);
    j["distance"] = l.distance;
    j["log_ratio"] = l.log_ratio;
    j["env_samples"] = l.env_samples;
    j["seed"] = l.seed;
    if (!env_spec.is_null())
        j["env"] = env_spec;
    json names = json::array();
    for (std::size_t i = 0; i < photos.size(); ++i) {
        const std::string name = "photo-" + std::to_string(i);
        write_pfm(dir / (name + ".pfm"), photos[i]);
        write_png8(dir / (name + ".png"), to_display(photos[i]));
        names.push_back(name + ".pfm");
    }
    j["photos"] = names;
    write_text(dir / "capture.json", j.dump(2) + "\n");
}

std::vector<Replicate> read_replicates(const fs::path& dir)
{
    std::vector<Replicate> out;
    if (!fs::is_directory(dir))
        throw IoError("no replicate directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (!e.is_directory() || name.rfind("seed-", 0) != 0)
            continue;
        Replicate r;
        try {
            r.seed = std::stoull(name.substr(5));
        } catch (const std::exception&) {
            throw IoError("bad replicate directory name: " + name);
        }
        r.material = load_material(e.path());
        out.push_back(std::move(r));
    }
    if (out.empty())
        throw IoError("no seed-* replicates under " + dir.string());
    std::sort(out.begin(), out.end(), [](const Replicate& a, const Replicate& b) { return a.seed < b.seed; });
    return out;
}

} // namespace matforge::cli
