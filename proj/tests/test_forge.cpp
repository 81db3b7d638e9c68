// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "matforge/forge.hpp"
#include "matforge/geometry.hpp"
#include "matforge/shading.hpp"
#include "test_util.hpp"

using namespace matforge;

namespace {

/// Band-limited material so bilinear resampling stays accurate.
MaterialMaps smooth_material(int res)
{
    MaterialMaps m;
    m.diffuse = Image(res, res, 3);
    m.specular = Image(res, res, 3, 0.06);
    m.roughness = Image(res, res, 1);
    HeightField h{Image(res, res, 1)};
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const double u = static_cast<double>(x) / res, v = static_cast<double>(y) / res;
            m.diffuse.set_rgb(y, x, {0.5 + 0.3 * std::sin(2 * M_PI * u), 0.4 + 0.2 * std::cos(2 * M_PI * v),
                                     0.5 + 0.2 * std::sin(2 * M_PI * (u + v))});
            m.roughness.at(y, x, 0) = 0.35 + 0.15 * std::cos(2 * M_PI * (u - v));
            h.heights.at(y, x, 0) = 0.02 * std::sin(2 * M_PI * 1.5 * u) * std::cos(2 * M_PI * v);
        }
    m.normal = height_to_normals(h, 1.0 / res);
    return m;
}

bool near_material(const MaterialMaps& a, const MaterialMaps& b, double tol)
{
    return a.diffuse.max_abs_diff(b.diffuse) <= tol && a.specular.max_abs_diff(b.specular) <= tol &&
           a.roughness.max_abs_diff(b.roughness) <= tol && a.normal.max_abs_diff(b.normal) <= tol;
}

ForgeConfig small_config()
{
    ForgeConfig c;
    c.source_count = 8;
    c.source_resolution = 48;
    c.crops_per_source = 4;
    c.min_crop = 16;
    c.max_crop = 32;
    c.out_res = 16;
    c.mixtures = 6;
    c.test_fraction = 0.25;
    c.seed = 5;
    return c;
}

} // namespace

TEST(RandomFeatureNet, FrozenAndSeedStable)
{
    const RandomFeatureNet a(4, {32, 32}, 3, 9), b(4, {32, 32}, 3, 9), c(4, {32, 32}, 3, 10);
    const double x[4] = {0.3, 0.7, 0.1, -1.2};
    EXPECT_EQ(a.evaluate(x), b.evaluate(x));
    EXPECT_EQ(a.evaluate(x), a.evaluate(x));
    EXPECT_NE(a.evaluate(x), c.evaluate(x));
    EXPECT_EQ(a.evaluate(x).size(), 3u);
    const double wrong[3] = {0, 0, 0};
    EXPECT_THROW(a.evaluate(wrong), StructuralError);
}

TEST(Crop, IdentityCropIsExactSubImage)
{
    const MaterialMaps src = fixtures::random_material(32, 1);
    const MaterialMaps c = extract_crop(src, {0, 0, 16, 0.0}, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            ASSERT_EQ(c.diffuse.rgb(y, x), src.diffuse.rgb(y, x));
            ASSERT_EQ(c.normal.rgb(y, x), src.normal.rgb(y, x));
            ASSERT_EQ(c.roughness.at(y, x, 0), src.roughness.at(y, x, 0));
        }
    const MaterialMaps whole = extract_crop(src, {0, 0, 32, 0.0}, 32);
    EXPECT_EQ(whole, src);
}

TEST(Crop, ConstantMaterialStaysConstant)
{
    const MaterialMaps src = MaterialMaps::constant(40, {0.2, 0.4, 0.6}, {0.05, 0.05, 0.05}, 0.3);
    Rng rng = derive_rng(2, 0);
    for (const MaterialMaps& c : random_crops(src, 16, 10, 28, 12, rng)) {
        ASSERT_NO_THROW(c.validate());
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                ASSERT_NEAR(c.diffuse.at(y, x, 1), 0.4, 1e-12);
                ASSERT_NEAR(c.roughness.at(y, x, 0), 0.3, 1e-12);
                ASSERT_NEAR(c.normal.at(y, x, 2), 1.0, 1e-12);
                ASSERT_NEAR(c.normal.at(y, x, 0), 0.0, 1e-12);
            }
    }
}

TEST(Crop, SpecsStayInsideTheSource)
{
    Rng rng = derive_rng(3, 0);
    for (const CropSpec& s : random_crop_specs(100, 500, 20, 70, rng)) {
        const double half = 0.5 * rotated_extent(s.size, s.angle);
        const double cx = s.x0 + 0.5 * s.size, cy = s.y0 + 0.5 * s.size;
        ASSERT_GE(s.size, 20);
        ASSERT_LE(s.size, 70);
        ASSERT_GE(cx - half, -1e-9);
        ASSERT_LE(cx + half, 100 + 1e-9);
        ASSERT_GE(cy - half, -1e-9);
        ASSERT_LE(cy + half, 100 + 1e-9);
    }
}

TEST(Crop, Errors)
{
    const MaterialMaps src = fixtures::random_material(32, 1);
    Rng rng = derive_rng(4, 0);
    EXPECT_THROW(random_crops(src, 4, 24, 30, 16, rng), StructuralError); // 24 * sqrt(2) > 32
    EXPECT_THROW(random_crops(src, 4, 8, 40, 16, rng), ConfigError);
    EXPECT_THROW(random_crops(src, 0, 8, 16, 16, rng), ConfigError);
    EXPECT_THROW(extract_crop(src, {20, 0, 16, 0.0}, 16), StructuralError);
    EXPECT_THROW(extract_crop(src, {0, 0, 32, 0.3}, 16), StructuralError);
}

TEST(Crop, RotatedCropMatchesRotatedLighting)
{
    const MaterialMaps src = smooth_material(128);
    const int n = 64;
    const MaterialMaps straight = extract_crop(src, {32, 32, n, 0.0}, n);
    const CameraModel cam = CameraModel::at_distance(1.5);
    const Vec3 light{0.6, 0.3, 1.2};
    const Image reference = render_point(straight, {light, {2, 2, 2}}, cam);
    for (double angle : {0.4, -1.1, 2.5}) {
        const MaterialMaps turned = extract_crop(src, {32, 32, n, angle}, n);
        const double c = std::cos(angle), s = std::sin(angle);
        const Vec3 turned_light{c * light.x + s * light.y, -s * light.x + c * light.y, light.z};
        const Image img = render_point(turned, {turned_light, {2, 2, 2}}, cam);
        double err = 0;
        int count = 0;
        for (int v = 0; v < n; ++v)
            for (int u = 0; u < n; ++u) {
                const double ox = (u + 0.5) - 0.5 * n, oy = (v + 0.5) - 0.5 * n;
                const double qx = 0.5 * n + c * ox + s * oy, qy = 0.5 * n - s * ox + c * oy;
                if (qx < 1 || qy < 1 || qx > n - 1 || qy > n - 1)
                    continue;
                double expect[3];
                sample_bilinear(reference, qx, qy, expect);
                for (int k = 0; k < 3; ++k)
                    err += std::pow(img.at(v, u, k) - expect[k], 2);
                count += 3;
            }
        ASSERT_GT(count, n * n);
        EXPECT_LT(std::sqrt(err / count), 2e-2) << "angle " << angle;
    }
}

TEST(Roughness, BlendLimitsAndRange)
{
    const MaterialMaps m = fixtures::random_material(24, 4);
    const Image proc = procedural_roughness_map(m, 11);
    EXPECT_EQ(blend_roughness(m, proc, 0.0).roughness, m.roughness);
    const MaterialMaps full = blend_roughness(m, proc, 1.0);
    for (int i = 0; i < 24 * 24; ++i) {
        EXPECT_GT(proc.data()[static_cast<std::size_t>(i)], 0.0);
        EXPECT_LT(proc.data()[static_cast<std::size_t>(i)], 1.0);
        EXPECT_NEAR(full.roughness.data()[static_cast<std::size_t>(i)],
                    std::max(kRoughnessFloor, proc.data()[static_cast<std::size_t>(i)]), 1e-15);
    }
    Rng rng = derive_rng(5, 0);
    for (int i = 0; i < 200; ++i) {
        const RoughnessRecipe r = draw_roughness_recipe(rng);
        ASSERT_GE(r.beta, kMinRoughnessBlend);
        ASSERT_LE(r.beta, kMaxRoughnessBlend);
        const MaterialMaps out = apply_roughness_recipe(m, r);
        if (i < 10)
            ASSERT_NO_THROW(out.validate());
        ASSERT_EQ(out.diffuse, m.diffuse);
        ASSERT_EQ(out.normal, m.normal);
    }
}

TEST(Roughness, ConstantInputGivesConstantMap)
{
    const MaterialMaps m = MaterialMaps::constant(16, {0.3, 0.5, 0.2}, {0.04, 0.04, 0.04}, 0.5);
    const Image p = procedural_roughness_map(m, 3);
    for (double v : p.data())
        EXPECT_EQ(v, p.data().front());
}

TEST(Roughness, DifferentSeedsGiveDistinctMaps)
{
    const MaterialMaps m = synthetic_source(32, 6);
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Image a = procedural_roughness_map(m, 100 + s), b = procedural_roughness_map(m, 200 + s);
        int differ = 0;
        for (std::size_t i = 0; i < a.data().size(); ++i)
            differ += std::abs(a.data()[i] - b.data()[i]) > 0.05;
        EXPECT_GE(differ, 0.05 * static_cast<double>(a.data().size())) << "seed pair " << s;
    }
}

TEST(Mixture, SelectionIsOneHotOnTheDoubledGrid)
{
    const MaterialMaps srcs[3] = {fixtures::random_material(12, 1), fixtures::random_material(12, 2),
                                  fixtures::random_material(12, 3)};
    for (std::size_t count : {2u, 3u}) {
        const MixResult r = mix_materials_detailed({srcs, count}, 77);
        EXPECT_EQ(r.grid, 24);
        ASSERT_EQ(r.selection.size(), 24u * 24u);
        for (int s : r.selection) {
            ASSERT_GE(s, 0);
            ASSERT_LT(s, static_cast<int>(count));
        }
        EXPECT_NO_THROW(r.material.validate());
    }
    EXPECT_THROW(mix_materials_detailed({srcs, 1}, 1), StructuralError);
}

TEST(Mixture, IdenticalSourcesReproduceTheSource)
{
    const MaterialMaps m = fixtures::random_material(16, 5);
    const MaterialMaps same[3] = {m, m, m};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        EXPECT_EQ(mix_materials_detailed({same, 2}, seed).material, m);
        EXPECT_EQ(mix_materials_detailed({same, 3}, seed).material, m);
    }
}

TEST(Mixture, TwoConstantsBlendInQuarterSteps)
{
    const Rgb a{0.1, 0.2, 0.3}, b{0.9, 0.6, 0.5};
    const MaterialMaps srcs[2] = {MaterialMaps::constant(16, a, {0.04, 0.04, 0.04}, 0.2),
                                  MaterialMaps::constant(16, b, {0.08, 0.08, 0.08}, 0.7)};
    std::set<double> weights;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const MaterialMaps out = mix_materials_detailed(srcs, seed).material;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const double w = (out.diffuse.at(y, x, 0) - a.x) / (b.x - a.x);
                const double q = std::round(4 * w) / 4;
                ASSERT_NEAR(w, q, 1e-12);
                ASSERT_NEAR(out.diffuse.at(y, x, 1), a.y + q * (b.y - a.y), 1e-12);
                ASSERT_NEAR(out.roughness.at(y, x, 0), 0.2 + q * 0.5, 1e-12);
                weights.insert(q);
            }
    }
    for (double w : weights) {
        EXPECT_GE(w, 0.0);
        EXPECT_LE(w, 1.0);
    }
}

TEST(Specular, RangeAndMetalnessEndpoints)
{
    const MaterialMaps m = fixtures::random_material(8, 6);
    Rng rng = derive_rng(7, 0);
    for (int i = 0; i < 100; ++i) {
        const MaterialMaps out = assign_specular(m, nullptr, rng);
        const double u = out.specular.at(0, 0, 0);
        ASSERT_GE(u, kMinBaseSpecular);
        ASSERT_LE(u, kMaxBaseSpecular);
        for (double v : out.specular.data())
            ASSERT_EQ(v, u);
        ASSERT_EQ(out.diffuse, m.diffuse);
    }
    const Image zero(8, 8, 1, 0.0), one(8, 8, 1, 1.0);
    EXPECT_EQ(assign_specular(m, &zero, 0.05), assign_specular(m, nullptr, 0.05));
    const MaterialMaps metal = assign_specular(m, &one, 0.05);
    for (std::size_t i = 0; i < metal.diffuse.data().size(); ++i) {
        EXPECT_EQ(metal.diffuse.data()[i], 0.0);
        EXPECT_NEAR(metal.specular.data()[i], std::min(1.0, 0.05 + m.diffuse.data()[i]), 1e-15);
    }
    const Image bad(4, 4, 1, 0.0);
    EXPECT_THROW(assign_specular(m, &bad, 0.05), StructuralError);
}

TEST(Fuzz, ThousandRecipesYieldValidMaterials)
{
    std::vector<MaterialMaps> sources;
    for (std::uint64_t s = 0; s < 6; ++s)
        sources.push_back(synthetic_source(32, s));
    Rng rng = derive_rng(8, 0);
    for (int i = 0; i < 1000; ++i) {
        const MaterialMaps& src = sources[static_cast<std::size_t>(i) % sources.size()];
        const std::vector<MaterialMaps> crops = random_crops(src, 3, 8, 22, 8, rng);
        MaterialMaps out;
        switch (i % 3) {
        case 0:
            out = crops[0];
            break;
        case 1:
            out = procedural_roughness(crops[0], rng);
            break;
        default:
            out = mix_materials({crops.data(), static_cast<std::size_t>(2 + i % 2)}, rng);
        }
        ASSERT_TRUE(out.is_valid()) << "recipe " << i;
    }
}

TEST(Sources, SyntheticSourcesAreValidAndDistinct)
{
    const auto s = synthetic_sources(4, 32, 1);
    ASSERT_EQ(s.size(), 4u);
    std::set<std::string> ids;
    for (const auto& src : s) {
        EXPECT_NO_THROW(src.maps.validate());
        ids.insert(src.id);
    }
    EXPECT_EQ(ids.size(), 4u);
    EXPECT_NE(s[0].maps, s[1].maps);
    EXPECT_EQ(synthetic_source(32, 9), synthetic_source(32, 9));
}

TEST(Manifest, DeterministicAndMatchesClosedFormCounts)
{
    const ForgeConfig cfg = small_config();
    const auto sources = synthetic_sources(cfg.source_count, cfg.source_resolution, cfg.seed);
    const DatasetManifest a = build_manifest(sources, cfg), b = build_manifest(sources, cfg);
    EXPECT_EQ(a.to_jsonl(), b.to_jsonl());
    EXPECT_EQ(a.hash(), b.hash());
    EXPECT_EQ(DatasetManifest::from_jsonl(a.to_jsonl()), a);

    const ManifestCounts want = expected_counts(cfg, cfg.source_count);
    ManifestCounts got;
    std::set<std::string> test_sources;
    for (const ManifestRecord& r : a.records) {
        if (r.kind == RecordKind::Crop && r.split == "test") {
            ++got.test_crops;
            test_sources.insert(r.source_materials.front());
        }
        if (r.kind == RecordKind::Crop && r.split == "train")
            ++got.train_crops;
        if (r.kind == RecordKind::RoughnessBlend)
            ++got.roughness;
        if (r.kind == RecordKind::Mixture)
            ++(r.parents.size() == 2 ? got.two_source : got.three_source);
    }
    EXPECT_EQ(got.train_crops, want.train_crops);
    EXPECT_EQ(got.test_crops, want.test_crops);
    EXPECT_EQ(got.roughness, want.roughness);
    EXPECT_EQ(got.two_source, want.two_source);
    EXPECT_EQ(got.three_source, want.three_source);
    EXPECT_EQ(static_cast<int>(test_sources.size()), want.test_sources);
    EXPECT_EQ(want.test_sources + want.train_sources, cfg.source_count);

    // train/test disjoint; mixtures draw parents without replacement
    std::set<std::string> used;
    for (const ManifestRecord& r : a.records) {
        if (r.split == "train")
            for (const std::string& id : r.source_materials)
                EXPECT_FALSE(test_sources.count(id)) << r.id;
        if (r.kind == RecordKind::Mixture) {
            EXPECT_TRUE(r.parents.size() == 2 || r.parents.size() == 3);
            for (const std::string& p : r.parents) {
                EXPECT_TRUE(used.insert(p).second) << p << " reused";
                EXPECT_EQ(a.find(p).split, "train");
            }
        }
    }

    ForgeConfig other = cfg;
    other.seed = 6;
    EXPECT_NE(build_manifest(sources, other).to_jsonl(), a.to_jsonl());
}

TEST(Manifest, DeskScaleCounts)
{
    const ManifestCounts c = expected_counts(ForgeConfig::desk(), 32);
    EXPECT_EQ((c.train_crops + c.test_crops), 32 * 16);
    EXPECT_EQ(c.test_sources + c.train_sources, 32);
    EXPECT_EQ(c.two_source + c.three_source, ForgeConfig::desk().mixtures);
}

TEST(Manifest, RealizationIsBitReproducible)
{
    const ForgeConfig cfg = small_config();
    const auto sources = synthetic_sources(cfg.source_count, cfg.source_resolution, cfg.seed);
    const auto index = index_sources(sources);
    const DatasetManifest m = build_manifest(sources, cfg);
    for (const ManifestRecord& r : m.records) {
        const MaterialMaps a = realize_record(r, m, index);
        ASSERT_NO_THROW(a.validate()) << r.id;
        ASSERT_EQ(a.resolution(), cfg.out_res);
        ASSERT_EQ(a, realize_record(r, m, index)) << r.id;
    }
}

TEST(Manifest, CapacityErrorsAreReported)
{
    ForgeConfig cfg = small_config();
    cfg.mixtures = 1000;
    const auto sources = synthetic_sources(cfg.source_count, cfg.source_resolution, cfg.seed);
    EXPECT_THROW(build_manifest(sources, cfg), ConfigError);
    EXPECT_THROW(build_manifest({}, small_config()), ConfigError);
    EXPECT_THROW(DatasetManifest::from_jsonl("{\"id\": 3}\n"), Error);
}
