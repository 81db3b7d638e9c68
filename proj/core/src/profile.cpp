// SPDX-License-Identifier: Apache-2.0
#include "matforge/profile.hpp"

#include "json.hpp"

namespace matforge {

using nlohmann::json;

namespace {

/// Rejects keys that the current section does not know about.
void check_keys(const json& patch, const json& known, const std::string& section)
{
    if (!patch.is_object())
        throw ConfigError("config section '" + section + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it)
        if (!known.contains(it.key()))
            throw ConfigError("config section '" + section + "': unknown key '" + it.key() + "'");
}

json overlay(const std::string& current, const json& patch, const std::string& section)
{
    json base = json::parse(current);
    check_keys(patch, base, section);
    base.merge_patch(patch);
    return base;
}

json eval_json(const EvalConfig& e)
{
    return {{"replicates", e.replicates},
            {"lights", e.lights},
            {"radius", e.radius},
            {"preview_lights", e.preview_lights},
            {"tile", e.tile}};
}

} // namespace

std::string forge_config_json(const ForgeConfig& c)
{
    json j;
    j["source_count"] = c.source_count;
    j["source_resolution"] = c.source_resolution;
    j["crops_per_source"] = c.crops_per_source;
    j["min_crop"] = c.min_crop;
    j["max_crop"] = c.max_crop;
    j["out_res"] = c.out_res;
    j["roughness_fraction"] = c.roughness_fraction;
    j["mixtures"] = c.mixtures;
    j["two_source_fraction"] = c.two_source_fraction;
    j["test_fraction"] = c.test_fraction;
    j["seed"] = c.seed;
    return j.dump();
}

ForgeConfig forge_config_from_json(const std::string& text)
{
    ForgeConfig c;
    try {
        const json j = json::parse(text);
        c.source_count = j.value("source_count", c.source_count);
        c.source_resolution = j.value("source_resolution", c.source_resolution);
        c.crops_per_source = j.value("crops_per_source", c.crops_per_source);
        c.min_crop = j.value("min_crop", c.min_crop);
        c.max_crop = j.value("max_crop", c.max_crop);
        c.out_res = j.value("out_res", c.out_res);
        c.roughness_fraction = j.value("roughness_fraction", c.roughness_fraction);
        c.mixtures = j.value("mixtures", c.mixtures);
        c.two_source_fraction = j.value("two_source_fraction", c.two_source_fraction);
        c.test_fraction = j.value("test_fraction", c.test_fraction);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("forge config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string sampler_config_json(const SamplerConfig& c)
{
    return json{{"steps", c.steps}, {"guidance_scale", c.guidance_scale}, {"seed", c.seed}, {"eta", c.eta}}.dump();
}

Profile make_profile(const std::string& name)
{
    Profile p;
    p.name = name;
    if (name == "desk") {
        p.net = NetConfig::desk();
        p.train = TrainConfig::desk();
        p.forge = ForgeConfig::desk();
    } else if (name == "paper") {
        p.net = NetConfig::paper();
        p.train = TrainConfig::paper();
        p.forge = ForgeConfig::paper();
    } else {
        throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
    }
    return p;
}

void apply_config(Profile& p, const std::string& json_text)
{
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!doc.is_object())
        throw ConfigError("config: top level must be an object");
    try {
        for (auto it = doc.begin(); it != doc.end(); ++it) {
            const std::string& key = it.key();
            if (key == "profile")
                continue;
            if (key == "net")
                p.net = NetConfig::from_json(overlay(p.net.to_json(), *it, key).dump());
            else if (key == "train")
                p.train = TrainConfig::from_json(overlay(p.train.to_json(), *it, key).dump());
            else if (key == "forge")
                p.forge = forge_config_from_json(overlay(forge_config_json(p.forge), *it, key).dump());
            else if (key == "sampler") {
                const json s = overlay(sampler_config_json(p.sampler), *it, key);
                p.sampler.steps = s.at("steps").get<int>();
                p.sampler.guidance_scale = s.at("guidance_scale").get<double>();
                p.sampler.seed = s.at("seed").get<std::uint64_t>();
                p.sampler.eta = s.at("eta").get<double>();
                if (p.sampler.steps < 1)
                    throw ConfigError("sampler: steps must be >= 1");
            } else if (key == "eval") {
                const json e = overlay(eval_json(p.eval).dump(), *it, key);
                p.eval.replicates = e.at("replicates").get<int>();
                p.eval.lights = e.at("lights").get<int>();
                p.eval.radius = e.at("radius").get<double>();
                p.eval.preview_lights = e.at("preview_lights").get<int>();
                p.eval.tile = e.at("tile").get<int>();
            } else
                throw ConfigError("config: unknown section '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string profile_to_json(const Profile& p)
{
    json j;
    j["profile"] = p.name;
    j["net"] = json::parse(p.net.to_json());
    j["train"] = json::parse(p.train.to_json());
    j["forge"] = json::parse(forge_config_json(p.forge));
    j["sampler"] = json::parse(sampler_config_json(p.sampler));
    j["eval"] = eval_json(p.eval);
    return j.dump(2);
}

} // namespace matforge
