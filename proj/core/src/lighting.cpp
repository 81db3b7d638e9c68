// SPDX-License-Identifier: Apache-2.0
#include "matforge/lighting.hpp"

namespace matforge {

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::Backbone:
        return "backbone";
    case Variant::Colocated:
        return "colocated";
    case Variant::Natural:
        return "natural";
    case Variant::FlashNoFlash:
        return "flash-noflash";
    }
    return "backbone";
}

Variant variant_from_string(const std::string& name)
{
    for (Variant v : {Variant::Backbone, Variant::Colocated, Variant::Natural, Variant::FlashNoFlash})
        if (to_string(v) == name)
            return v;
    throw ConfigError("unknown variant '" + name + "' (expected backbone, colocated, natural or flash-noflash)");
}

int condition_channels(Variant v)
{
    switch (v) {
    case Variant::Backbone:
        return 0;
    case Variant::Colocated:
        return 6;
    case Variant::Natural:
        return 3;
    case Variant::FlashNoFlash:
        return 6;
    }
    return 0;
}

CaptureLighting draw_capture_lighting(Variant v, Rng& rng, int env_samples)
{
    CaptureLighting l;
    l.variant = v;
    l.env_samples = env_samples;
    switch (v) {
    case Variant::Backbone:
        break;
    case Variant::Colocated:
        l.distance = sample_camera_distance(rng);
        break;
    case Variant::Natural:
    case Variant::FlashNoFlash: {
        l.env = procedural_environment(rng, 16, 32);
        l.seed = rng();
        if (v == Variant::FlashNoFlash)
            l.log_ratio = uniform(rng, kMinFlashLogRatio, kMaxFlashLogRatio);
        break;
    }
    }
    return l;
}

std::vector<Image> render_capture(const MaterialMaps& m, const CaptureLighting& l)
{
    const CameraModel cam = CameraModel::at_distance(l.variant == Variant::Colocated ? l.distance : 1.0);
    switch (l.variant) {
    case Variant::Backbone:
        throw ConfigError("render_capture: the backbone variant has no capture lighting");
    case Variant::Colocated:
        return {render_colocated(m, l.distance).photo};
    case Variant::Natural:
        if (!l.env)
            throw ConfigError("render_capture: natural lighting needs an environment map");
        return {render_env(m, *l.env, cam, l.env_samples, l.seed)};
    case Variant::FlashNoFlash: {
        if (!l.env)
            throw ConfigError("render_capture: flash/no-flash lighting needs an environment map");
        FlashPair p = synth_flash_noflash(m, *l.env, cam, l.log_ratio, l.env_samples, l.seed);
        return {std::move(p.flash), std::move(p.no_flash)};
    }
    }
    throw ConfigError("render_capture: unknown variant");
}

ConditionStack render_condition(const MaterialMaps& m, const CaptureLighting& l)
{
    ConditionStack c;
    if (l.variant == Variant::Colocated) {
        ColocatedCapture cap = render_colocated(m, l.distance);
        c.photos.push_back(std::move(cap.photo));
        c.view_vectors = std::move(cap.view_vectors);
        return c;
    }
    c.photos = render_capture(m, l);
    return c;
}

} // namespace matforge
