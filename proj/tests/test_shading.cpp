// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "matforge/shading.hpp"
#include "test_util.hpp"

using namespace matforge;

namespace {

Vec3 random_upper_direction(Rng& rng)
{
    const double z = uniform(rng, 0.02, 1.0);
    const double phi = uniform(rng, 0.0, 2 * kPi);
    const double r = std::sqrt(1 - z * z);
    return {r * std::cos(phi), r * std::sin(phi), z};
}

MaterialMaps lambertian(int res, double rho)
{
    return MaterialMaps::constant(res, {rho, rho, rho}, {0, 0, 0}, 0.5);
}

} // namespace

TEST(Brdf, GgxAtNormalIncidence)
{
    for (double alpha : {0.1, 0.5, 1.0})
        EXPECT_NEAR(ggx_distribution(1.0, alpha), 1.0 / (kPi * alpha * alpha), 1e-6 / (alpha * alpha)) << alpha;
    EXPECT_NEAR(ggx_distribution(1.0, 0.5), 1.27324, 1e-5);
}

TEST(Brdf, GgxIntegratesProjectedAreaToOne)
{
    // Integral of D(m) (n.m) over the hemisphere is 1.
    for (double alpha : {0.2, 0.6}) {
        const int n = 4000;
        double sum = 0;
        for (int i = 0; i < n; ++i) {
            const double ct = (i + 0.5) / n;
            sum += ggx_distribution(ct, alpha) * ct * (1.0 / n) * 2 * kPi;
        }
        EXPECT_NEAR(sum, 1.0, 2e-3) << alpha;
    }
}

TEST(Brdf, Reciprocity)
{
    Rng rng = derive_rng(5, 0);
    const Vec3 n{0, 0, 1};
    for (int i = 0; i < 10000; ++i) {
        const Vec3 wi = random_upper_direction(rng), wo = random_upper_direction(rng);
        const Rgb d{uniform(rng), uniform(rng), uniform(rng)}, s{uniform(rng), uniform(rng), uniform(rng)};
        const double r = uniform(rng, kRoughnessFloor, 1.0);
        const Rgb a = eval_brdf(d, s, r, n, wi, wo), b = eval_brdf(d, s, r, n, wo, wi);
        ASSERT_NEAR(a.x, b.x, 1e-6 * std::max(1.0, a.x));
        ASSERT_NEAR(a.y, b.y, 1e-6 * std::max(1.0, a.y));
        ASSERT_NEAR(a.z, b.z, 1e-6 * std::max(1.0, a.z));
    }
}

TEST(Brdf, BlackMaterialIsBlack)
{
    Rng rng = derive_rng(6, 0);
    for (int i = 0; i < 200; ++i) {
        const Rgb v = eval_brdf({0, 0, 0}, {0, 0, 0}, 0.3, {0, 0, 1}, random_upper_direction(rng),
                                random_upper_direction(rng));
        EXPECT_EQ(v, (Rgb{0, 0, 0}));
    }
}

TEST(Brdf, LambertianTermAndFresnelLimits)
{
    const Rgb v = eval_brdf({0.6, 0.3, 0.9}, {0, 0, 0}, 0.4, {0, 0, 1}, normalize(Vec3{0.3, 0.1, 1}),
                            normalize(Vec3{-0.2, 0.4, 1}));
    EXPECT_NEAR(v.x, 0.6 / kPi, 1e-12);
    EXPECT_NEAR(v.z, 0.9 / kPi, 1e-12);
    EXPECT_EQ(fresnel_schlick({0.04, 0.05, 0.06}, 1.0), (Rgb{0.04, 0.05, 0.06}));
    const Rgb grazing = fresnel_schlick({0.04, 0.04, 0.04}, 0.0);
    EXPECT_NEAR(grazing.x, 1.0, 1e-12);
    EXPECT_EQ(fresnel_schlick({0, 0, 0}, 0.0), (Rgb{0, 0, 0}));
}

TEST(Brdf, SmithMaskingInUnitRange)
{
    Rng rng = derive_rng(7, 0);
    for (int i = 0; i < 1000; ++i) {
        const double g = smith_g2_height_correlated(uniform(rng, 1e-3, 1), uniform(rng, 1e-3, 1), uniform(rng, 0.01, 1));
        ASSERT_GT(g, 0.0);
        ASSERT_LE(g, 1.0 + 1e-12);
    }
    EXPECT_NEAR(smith_g2_height_correlated(1.0, 1.0, 0.3), 1.0, 1e-12);
}

TEST(RenderPoint, LambertianAnalytic)
{
    const int res = 5;
    const double rho = 0.7, d = 1.8, intensity = 3.0;
    const MaterialMaps m = lambertian(res, rho);
    const PointLight light{{0, 0, d}, {intensity, intensity, intensity}};
    const CameraModel cam = CameraModel::at_distance(d);
    const Image img = render_point(m, light, cam);
    EXPECT_NEAR(img.at(2, 2, 1), rho * intensity / (kPi * d * d), 1e-12);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const Vec3 p = surface_point(y, x, res);
            const Vec3 to_light = light.position - p;
            const double r2 = dot(to_light, to_light);
            const double cos_t = to_light.z / std::sqrt(r2);
            EXPECT_NEAR(img.at(y, x, 0), rho * intensity * cos_t / (kPi * r2), 1e-4);
        }
}

TEST(RenderPoint, ZeroIntensityIsBlackAndInverseSquare)
{
    const MaterialMaps m = lambertian(5, 0.5);
    const CameraModel cam = CameraModel::at_distance(1.0);
    const Image black = render_point(m, PointLight{{0.2, 0.1, 1.0}, {0, 0, 0}}, cam);
    for (double v : black.data())
        EXPECT_EQ(v, 0.0);
    const double near = render_point(m, PointLight{{0, 0, 1.5}, {1, 1, 1}}, cam).at(2, 2, 0);
    const double far = render_point(m, PointLight{{0, 0, 3.0}, {1, 1, 1}}, cam).at(2, 2, 0);
    EXPECT_NEAR(far / near, 0.25, 1e-4 * 0.25);
}

TEST(RenderPoint, NinetyDegreeLightRotationPermutesPixels)
{
    const MaterialMaps m = MaterialMaps::constant(8, {0.4, 0.5, 0.6}, {0.05, 0.05, 0.05}, 0.3);
    const CameraModel cam = CameraModel::at_distance(2.0);
    const Vec3 l{0.6, -0.3, 1.2};
    const Image a = render_point(m, PointLight{l, {2, 2, 2}}, cam);
    const Image b = render_point(m, PointLight{{-l.y, l.x, l.z}, {2, 2, 2}}, cam);
    EXPECT_LT(rotate90(a).max_abs_diff(b), 1e-12);
}

TEST(Colocated, OnAxisViewVectorAndDeterminism)
{
    const MaterialMaps m = fixtures::random_material(5, 3);
    const ColocatedCapture c = render_colocated(m, 1.0);
    const Vec3 v = c.view_vectors.rgb(2, 2);
    EXPECT_NEAR(v.x, 0.0, 1e-15);
    EXPECT_NEAR(v.y, 0.0, 1e-15);
    EXPECT_NEAR(v.z, 1.0, 1e-15);
    EXPECT_EQ(render_colocated(m, 1.0).photo, c.photo);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            EXPECT_NEAR(length(c.view_vectors.rgb(y, x)), 1.0, 1e-12);
}

TEST(Colocated, WhiteLambertCentreIsOne)
{
    for (double d : {0.7, 1.0, 2.5}) {
        const Image photo = render_colocated(lambertian(5, 1.0), d).photo;
        EXPECT_NEAR(photo.at(2, 2, 0), 1.0, 1e-12) << d;
    }
    EXPECT_NEAR(normalized_flash_intensity(2.0), kPi * 4.0, 1e-12);
}

TEST(Colocated, CameraDistanceMean)
{
    Rng rng = derive_rng(11, 0);
    double s = 0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double d = sample_camera_distance(rng);
        ASSERT_GT(d, 0.0);
        s += d;
    }
    EXPECT_NEAR(s / n, 2.0, 0.02);
}

TEST(Colocated, MirrorSymmetricMaterialRendersSymmetric)
{
    const int res = 12;
    MaterialMaps m = fixtures::random_material(res, 4);
    for (int y = 0; y < res; ++y)
        for (int x = res / 2; x < res; ++x) {
            m.diffuse.set_rgb(y, x, m.diffuse.rgb(y, res - 1 - x));
            m.specular.set_rgb(y, x, m.specular.rgb(y, res - 1 - x));
            m.roughness.at(y, x, 0) = m.roughness.at(y, res - 1 - x, 0);
            const Vec3 n = m.normal.rgb(y, res - 1 - x);
            m.normal.set_rgb(y, x, {-n.x, n.y, n.z});
        }
    const Image photo = render_colocated(m, 1.3).photo;
    EXPECT_LT(flip_horizontal(photo).max_abs_diff(photo), 1e-5);
}

TEST(Env, WhiteFurnace)
{
    const MaterialMaps flat = lambertian(4, 0.6);
    MaterialMaps bumpy = fixtures::random_material(4, 8);
    bumpy.diffuse = Image(4, 4, 3, 0.6);
    bumpy.specular = Image(4, 4, 3, 0.0);
    const EnvironmentMap white = EnvironmentMap::constant({1, 1, 1});
    for (const MaterialMaps* m : std::initializer_list<const MaterialMaps*>{&flat, &bumpy}) {
        const Image img = render_env(*m, white, CameraModel::at_distance(1.0), 256, 3);
        for (double v : img.data())
            EXPECT_NEAR(v, 0.6, 0.02 * 0.6);
    }
}

TEST(Env, FullTurnRotationAndBlackMaterial)
{
    Rng rng = derive_rng(12, 0);
    EnvironmentMap env = procedural_environment(rng);
    const MaterialMaps m = fixtures::random_material(6, 9);
    const CameraModel cam = CameraModel::at_distance(1.2);
    const Image a = render_env(m, env, cam, 16, 4);
    env.rotation += 2 * kPi;
    EXPECT_LT(render_env(m, env, cam, 16, 4).max_abs_diff(a), 1e-6);
    EXPECT_EQ(render_env(m, env, cam, 16, 4), render_env(m, env, cam, 16, 4));
    const MaterialMaps black = MaterialMaps::constant(6, {0, 0, 0}, {0, 0, 0}, 0.4);
    const Image dark = render_env(black, env, cam, 8, 1);
    for (double v : dark.data())
        EXPECT_EQ(v, 0.0);
}

TEST(FlashNoFlash, RatioAndDecomposition)
{
    Rng rng = derive_rng(13, 0);
    const EnvironmentMap env = procedural_environment(rng);
    const MaterialMaps m = fixtures::random_material(8, 10);
    const CameraModel cam = CameraModel::at_distance(1.4);
    const FlashPair p = synth_flash_noflash(m, env, cam, std::log(1.5), 16, 5);
    Image flash_term = p.flash;
    for (std::size_t i = 0; i < flash_term.size(); ++i)
        flash_term.data()[i] -= p.no_flash.data()[i];
    EXPECT_NEAR(mean_luminance(flash_term) / mean_luminance(p.no_flash), 1.5, 1e-3);
    for (std::size_t i = 0; i < p.flash.size(); ++i)
        ASSERT_GE(p.flash.data()[i], p.no_flash.data()[i]);

    const EnvironmentMap dark = EnvironmentMap::constant({0, 0, 0});
    const FlashPair q = synth_flash_noflash(m, dark, cam, 0.2, 8, 5);
    for (double v : q.no_flash.data())
        EXPECT_EQ(v, 0.0);
    EXPECT_LT(q.flash.max_abs_diff(render_colocated(m, 1.4).photo), 1e-12);
}
