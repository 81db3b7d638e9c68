// SPDX-License-Identifier: Apache-2.0
#include "matforge/shading.hpp"

#include <algorithm>
#include <cmath>

namespace matforge {

CameraModel CameraModel::at_distance(double distance)
{
    if (!(distance > 0.0))
        throw ConfigError("camera distance must be positive");
    return CameraModel{{0.0, 0.0, distance}, 35.0};
}

double CameraModel::field_of_view() const { return 2.0 * std::atan(0.5 / position.z); }

Vec3 CameraModel::view_vector(const Vec3& surface_point) const { return normalize(position - surface_point); }

void EnvironmentMap::validate() const
{
    if (radiance.channels() != 3 || radiance.height() < 1 || radiance.width() < 1)
        throw StructuralError("environment map must be a non-empty RGB image");
    for (double v : radiance.data())
        if (!std::isfinite(v) || v < 0.0)
            throw NumericError("environment map radiance must be finite and non-negative");
}

EnvironmentMap EnvironmentMap::constant(const Rgb& value, int height, int width)
{
    EnvironmentMap env{Image(height, width, 3), 0.0};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            env.radiance.set_rgb(y, x, value);
    return env;
}

Rgb EnvironmentMap::lookup(const Vec3& d) const
{
    const int h = radiance.height();
    const int w = radiance.width();
    const double theta = std::acos(std::clamp(d.z, -1.0, 1.0));
    double u = (std::atan2(d.y, d.x) - rotation + kPi) / (2.0 * kPi);
    u -= std::floor(u);
    const double fx = u * w - 0.5;
    const double fy = std::clamp(theta / kPi * h - 0.5, 0.0, static_cast<double>(h - 1));
    const double x0f = std::floor(fx);
    const double tx = fx - x0f;
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    const int x0 = ((static_cast<int>(x0f) % w) + w) % w;
    const int x1 = (x0 + 1) % w;
    return (1 - ty) * ((1 - tx) * radiance.rgb(y0, x0) + tx * radiance.rgb(y0, x1)) +
           ty * ((1 - tx) * radiance.rgb(y1, x0) + tx * radiance.rgb(y1, x1));
}

Vec3 surface_point(int y, int x, int resolution)
{
    return {(x + 0.5) / resolution - 0.5, 0.5 - (y + 0.5) / resolution, 0.0};
}

double ggx_distribution(double n_dot_h, double alpha)
{
    if (n_dot_h <= 0.0)
        return 0.0;
    const double a2 = alpha * alpha;
    const double t = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    return a2 / (kPi * t * t);
}

namespace {

double smith_lambda(double cos_theta, double alpha)
{
    const double c2 = cos_theta * cos_theta;
    const double tan2 = std::max(0.0, 1.0 - c2) / c2;
    return 0.5 * (-1.0 + std::sqrt(1.0 + alpha * alpha * tan2));
}

} // namespace

double smith_g2_height_correlated(double n_dot_wi, double n_dot_wo, double alpha)
{
    if (n_dot_wi <= 0.0 || n_dot_wo <= 0.0)
        return 0.0;
    return 1.0 / (1.0 + smith_lambda(n_dot_wi, alpha) + smith_lambda(n_dot_wo, alpha));
}

Rgb fresnel_schlick(const Rgb& f0, double cos_theta)
{
    const double m = std::clamp(1.0 - cos_theta, 0.0, 1.0);
    const double m5 = m * m * m * m * m;
    // grazing reflectance fades out below F0 = 0.02 so a zero albedo stays black
    const Rgb f90{std::min(1.0, 50.0 * f0.x), std::min(1.0, 50.0 * f0.y), std::min(1.0, 50.0 * f0.z)};
    return f0 + (f90 - f0) * m5;
}

Rgb eval_brdf(const Rgb& diffuse, const Rgb& specular, double roughness, const Vec3& n, const Vec3& wi,
              const Vec3& wo)
{
    const double n_wi = dot(n, wi);
    const double n_wo = dot(n, wo);
    if (n_wi <= 0.0 || n_wo <= 0.0)
        return {};
    const Rgb diffuse_term = diffuse / kPi;
    const Vec3 h_sum = wi + wo;
    const double h_len = length(h_sum);
    if (h_len < 1e-12)
        return diffuse_term;
    const Vec3 h = h_sum / h_len;
    const double alpha = std::max(roughness, kRoughnessFloor);
    const double d = ggx_distribution(dot(n, h), alpha);
    if (d == 0.0)
        return diffuse_term;
    const double g = smith_g2_height_correlated(n_wi, n_wo, alpha);
    const Rgb f = fresnel_schlick(specular, std::max(0.0, dot(wi, h)));
    return diffuse_term + f * (d * g / (4.0 * n_wi * n_wo));
}

Image render_point(const MaterialMaps& m, const PointLight& light, const CameraModel& cam)
{
    if (!(light.position.z > 0.0))
        throw ConfigError("point light must be above the surface plane (z > 0)");
    if (!(cam.position.z > 0.0))
        throw ConfigError("camera must be above the surface plane (z > 0)");
    const int res = m.resolution();
    Image out(res, res, 3);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const Vec3 p = surface_point(y, x, res);
            const Vec3 to_light = light.position - p;
            const double r2 = dot(to_light, to_light);
            const Vec3 wi = to_light / std::sqrt(r2);
            const Vec3 wo = cam.view_vector(p);
            const Vec3 n = m.normal.rgb(y, x);
            const double cos_i = dot(n, wi);
            if (cos_i <= 0.0)
                continue;
            const Rgb f = eval_brdf(m.diffuse.rgb(y, x), m.specular.rgb(y, x), m.roughness.at(y, x, 0), n, wi, wo);
            out.set_rgb(y, x, f * light.intensity * (cos_i / r2));
        }
    return out;
}

double sample_camera_distance(Rng& rng)
{
    std::gamma_distribution<double> gamma(2.0, 2.0);
    return 0.5 * gamma(rng);
}

double normalized_flash_intensity(double distance) { return kPi * distance * distance; }

ColocatedCapture render_colocated(const MaterialMaps& m, double distance)
{
    const CameraModel cam = CameraModel::at_distance(distance);
    const double intensity = normalized_flash_intensity(distance);
    const PointLight flash{cam.position, {intensity, intensity, intensity}};
    ColocatedCapture cap{render_point(m, flash, cam), Image(m.resolution(), m.resolution(), 3)};
    for (int y = 0; y < m.resolution(); ++y)
        for (int x = 0; x < m.resolution(); ++x)
            cap.view_vectors.set_rgb(y, x, cam.view_vector(surface_point(y, x, m.resolution())));
    return cap;
}

namespace {

void orthonormal_basis(const Vec3& n, Vec3& t, Vec3& b)
{
    // Duff et al. branchless construction.
    const double sign = std::copysign(1.0, n.z);
    const double a = -1.0 / (sign + n.z);
    const double bb = n.x * n.y * a;
    t = {1.0 + sign * n.x * n.x * a, sign * bb, -sign * n.x};
    b = {bb, sign + n.y * n.y * a, -n.y};
}

} // namespace

Image render_env(const MaterialMaps& m, const EnvironmentMap& env, const CameraModel& cam, int samples_per_pixel,
                 std::uint64_t seed)
{
    if (samples_per_pixel < 1)
        throw ConfigError("samples_per_pixel must be >= 1");
    env.validate();
    const int res = m.resolution();
    Image out(res, res, 3);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            Rng rng = derive_rng(seed, static_cast<std::uint64_t>(y) * res + x);
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            const Vec3 p = surface_point(y, x, res);
            const Vec3 wo = cam.view_vector(p);
            const Vec3 n = m.normal.rgb(y, x);
            Vec3 t, b;
            orthonormal_basis(n, t, b);
            const Rgb kd = m.diffuse.rgb(y, x);
            const Rgb ks = m.specular.rgb(y, x);
            const double alpha = m.roughness.at(y, x, 0);
            Rgb sum;
            for (int s = 0; s < samples_per_pixel; ++s) {
                const double u1 = u01(rng);
                const double u2 = u01(rng);
                const double r = std::sqrt(u1);
                const double phi = 2.0 * kPi * u2;
                const double cz = std::sqrt(std::max(0.0, 1.0 - u1));
                const Vec3 wi = normalize(t * (r * std::cos(phi)) + b * (r * std::sin(phi)) + n * cz);
                // f * L * cos / pdf with pdf = cos / pi.
                sum += eval_brdf(kd, ks, alpha, n, wi, wo) * env.lookup(wi) * kPi;
            }
            out.set_rgb(y, x, sum / samples_per_pixel);
        }
    return out;
}

double mean_luminance(const Image& rgb)
{
    if (rgb.channels() != 3 || rgb.empty())
        throw StructuralError("mean_luminance expects a non-empty RGB image");
    double s = 0.0;
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x)
            s += luminance(rgb.rgb(y, x));
    return s / (static_cast<double>(rgb.height()) * rgb.width());
}

FlashPair synth_flash_noflash(const MaterialMaps& m, const EnvironmentMap& env, const CameraModel& cam,
                              double log_ratio, int samples_per_pixel, std::uint64_t seed)
{
    if (!(log_ratio >= kMinFlashLogRatio - 1e-12 && log_ratio <= kMaxFlashLogRatio + 1e-12))
        throw ConfigError("flash/no-flash log ratio " + std::to_string(log_ratio) + " outside [log(1/50), log(3/2)]");
    FlashPair pair;
    pair.no_flash = render_env(m, env, cam, samples_per_pixel, seed);
    const ColocatedCapture flash = render_colocated(m, cam.distance());
    const double env_mean = mean_luminance(pair.no_flash);
    const double flash_mean = mean_luminance(flash.photo);
    if (env_mean > 0.0 && flash_mean > 0.0)
        pair.flash_scale = std::exp(log_ratio) * env_mean / flash_mean;
    else
        pair.flash_scale = 1.0;
    pair.flash = pair.no_flash;
    for (std::size_t i = 0; i < pair.flash.size(); ++i)
        pair.flash.data()[i] += pair.flash_scale * flash.photo.data()[i];
    return pair;
}

EnvironmentMap procedural_environment(Rng& rng, int height, int width)
{
    const double sun_elev = uniform(rng, 0.25, 1.2);
    const double sun_az = uniform(rng, -kPi, kPi);
    const Vec3 sun{std::cos(sun_elev) * std::cos(sun_az), std::cos(sun_elev) * std::sin(sun_az), std::sin(sun_elev)};
    const double sun_power = uniform(rng, 5.0, 40.0);
    const double sun_sharpness = uniform(rng, 20.0, 200.0);
    const Rgb sky_zenith{uniform(rng, 0.2, 0.5), uniform(rng, 0.35, 0.7), uniform(rng, 0.6, 1.2)};
    const Rgb sky_horizon{uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0)};
    const Rgb ground{uniform(rng, 0.05, 0.3), uniform(rng, 0.05, 0.25), uniform(rng, 0.03, 0.2)};
    EnvironmentMap env{Image(height, width, 3), uniform(rng, 0.0, 2.0 * kPi)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double theta = (y + 0.5) / height * kPi;
            const double phi = (x + 0.5) / width * 2.0 * kPi - kPi;
            const Vec3 d{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
            Rgb c;
            if (d.z >= 0.0) {
                const double t = std::pow(d.z, 0.5);
                c = sky_horizon * (1.0 - t) + sky_zenith * t;
            } else {
                c = ground;
            }
            c += Rgb{1.0, 0.95, 0.85} * (sun_power * std::exp(sun_sharpness * (dot(d, sun) - 1.0)));
            env.radiance.set_rgb(y, x, c);
        }
    return env;
}

} // namespace matforge
