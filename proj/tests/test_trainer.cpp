// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "matforge/checkpoint.hpp"
#include "matforge/trainer.hpp"
#include "test_util.hpp"

using namespace matforge;

namespace {

NetConfig tiny_net()
{
    NetConfig c = NetConfig::desk(16);
    c.base_width = 8;
    c.width_multipliers = {1, 2, 2};
    c.groups = 4;
    c.heads = 2;
    c.attention_resolutions = {4};
    c.fourier_width = 8;
    c.time_width = 16;
    return c;
}

TrainConfig tiny_train(Variant v = Variant::Backbone)
{
    TrainConfig c;
    c.batch_size = 2;
    c.max_steps = 6;
    c.warmup = 2;
    c.seed = 4;
    c.variant = v;
    c.env_samples = 2;
    return c;
}

std::vector<MaterialMaps> tiny_data(int count = 3)
{
    std::vector<MaterialMaps> d;
    for (int i = 0; i < count; ++i)
        d.push_back(fixtures::random_material(16, 100 + static_cast<std::uint64_t>(i)));
    return d;
}

DenoiserWeights init_for(Variant v, std::uint64_t seed = 1)
{
    const DenoiserWeights b = init_backbone(tiny_net(), seed);
    return v == Variant::Backbone ? b : expand_input_head(b, condition_channels(v));
}

} // namespace

TEST(TrainConfig, WarmupRampIsLinear)
{
    TrainConfig c;
    c.lr = 1e-3;
    c.warmup = 100;
    EXPECT_EQ(learning_rate_at(c, 0), 0.0);
    EXPECT_DOUBLE_EQ(learning_rate_at(c, 50), 5e-4);
    EXPECT_EQ(learning_rate_at(c, 100), 1e-3);
    EXPECT_EQ(learning_rate_at(c, 5000), 1e-3);
    c.warmup = 0;
    EXPECT_EQ(learning_rate_at(c, 0), 1e-3);
}

TEST(TrainConfig, ValidationAndJson)
{
    TrainConfig c = TrainConfig::paper();
    EXPECT_EQ(c.batch_size, 32);
    EXPECT_EQ(c.warmup, 100000);
    EXPECT_DOUBLE_EQ(c.lr, 2e-5);
    c.variant = Variant::FlashNoFlash;
    const TrainConfig r = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(r.to_json(), c.to_json());
    EXPECT_EQ(r.variant, Variant::FlashNoFlash);
    TrainConfig bad;
    bad.lr = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.ema_decay = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.max_steps = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Trainer, RejectsMismatchedInputsAndEmptyData)
{
    EXPECT_THROW(Trainer(tiny_train(), init_for(Variant::Backbone), {}), ConfigError);
    EXPECT_THROW(Trainer(tiny_train(Variant::Colocated), init_for(Variant::Backbone), tiny_data()), ConfigError);
    std::vector<MaterialMaps> wrong = {fixtures::random_material(8, 1)}; // below the network resolution
    EXPECT_THROW(Trainer(tiny_train(), init_for(Variant::Backbone), wrong), Error);
}

TEST(Trainer, DeterministicGivenSeed)
{
    auto run = [] {
        Trainer t(tiny_train(), init_for(Variant::Backbone), tiny_data());
        t.run_to_completion();
        return std::make_pair(t.loss_curve(), t.weights());
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    ASSERT_EQ(a.first.size(), 6u);
    for (double l : a.first)
        EXPECT_TRUE(std::isfinite(l));

    TrainConfig other = tiny_train();
    other.seed = 5;
    Trainer t(other, init_for(Variant::Backbone), tiny_data());
    t.run_to_completion();
    EXPECT_NE(t.loss_curve(), a.first);
}

TEST(Trainer, FirstStepHasZeroLearningRate)
{
    TrainConfig c = tiny_train();
    c.weight_decay = 0.5;
    const DenoiserWeights init = init_for(Variant::Backbone);
    Trainer t(c, init, tiny_data());
    t.step();
    EXPECT_EQ(t.weights(), init);
    t.step();
    EXPECT_NE(t.weights(), init);
}

TEST(Trainer, EmaWithZeroDecayTracksRawWeights)
{
    TrainConfig c = tiny_train();
    c.ema_decay = 0.0;
    Trainer t(c, init_for(Variant::Backbone), tiny_data());
    for (int i = 0; i < 4; ++i) {
        t.step();
        ASSERT_EQ(t.ema().tensors, t.weights().tensors) << "step " << i;
    }
}

TEST(Trainer, EmaLagsRawWeights)
{
    TrainConfig c = tiny_train();
    c.ema_decay = 0.9;
    const DenoiserWeights init = init_for(Variant::Backbone);
    Trainer t(c, init, tiny_data());
    t.run_to_completion();
    // per tensor element the EMA lies between the init and current values in aggregate
    double to_raw = 0, init_to_raw = 0;
    for (const auto& [name, w] : t.weights().tensors)
        for (std::size_t i = 0; i < w.numel(); ++i) {
            to_raw += std::pow(t.ema().tensors.at(name)[i] - w[i], 2);
            init_to_raw += std::pow(init.tensors.at(name)[i] - w[i], 2);
        }
    EXPECT_GT(to_raw, 0.0);
    EXPECT_LT(to_raw, init_to_raw);
}

TEST(Trainer, ResumeEqualsContinuousRun)
{
    TrainConfig c = tiny_train(Variant::FlashNoFlash);
    c.max_steps = 5; // crosses an epoch boundary with 3 items and batch 2
    Trainer full(c, init_for(Variant::FlashNoFlash), tiny_data());
    full.run_to_completion();

    const auto dir = fixtures::temp_dir("resume");
    Trainer first(c, init_for(Variant::FlashNoFlash), tiny_data());
    first.run(3);
    first.save_state(dir);
    Trainer second = Trainer::resume(dir, tiny_data());
    EXPECT_EQ(second.steps_done(), 3);
    second.run_to_completion();
    EXPECT_EQ(second.loss_curve(), full.loss_curve());
    EXPECT_EQ(second.weights(), full.weights());
    EXPECT_EQ(second.ema(), full.ema());
    EXPECT_TRUE(std::filesystem::exists(dir / "loss.csv"));
    EXPECT_THROW(Trainer::resume(dir / "missing", tiny_data()), Error);
}

TEST(Trainer, SetMaxStepsExtendsARun)
{
    Trainer t(tiny_train(), init_for(Variant::Backbone), tiny_data());
    t.run(4);
    EXPECT_THROW(t.set_max_steps(3), ConfigError);
    t.set_max_steps(7);
    t.run_to_completion();
    EXPECT_EQ(t.steps_done(), 7);
}

TEST(Trainer, EpochModeCoversTheData)
{
    TrainConfig c = tiny_train();
    c.max_steps = 0;
    c.epochs = 2;
    Trainer t(c, init_for(Variant::Backbone), tiny_data(4));
    EXPECT_EQ(t.total_steps(), 4);
    t.run_to_completion();
    EXPECT_EQ(t.steps_done(), 4);
}

TEST(Trainer, DivergenceAbortsWithDiagnostics)
{
    TrainConfig c = tiny_train();
    c.lr = 1e150;
    c.warmup = 0;
    c.max_steps = 20;
    Trainer t(c, init_for(Variant::Backbone), tiny_data());
    try {
        t.run_to_completion();
        FAIL() << "expected divergence";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
    }
}

TEST(Finetune, StepZeroLossEqualsBackboneLoss)
{
    const DenoiserWeights backbone = [] {
        Trainer t(tiny_train(), init_for(Variant::Backbone, 2), tiny_data());
        t.run_to_completion();
        return t.weights();
    }();
    for (Variant v : {Variant::Colocated, Variant::Natural, Variant::FlashNoFlash}) {
        const DenoiserWeights expanded = expand_input_head(backbone, condition_channels(v));
        Trainer t(tiny_train(v), expanded, tiny_data());
        Rng rng = derive_rng(9, 9);
        const std::size_t items[] = {0, 1, 2};
        const TrainingBatch cond = t.make_batch(items, rng);
        ASSERT_TRUE(cond.cond.has_value());
        EXPECT_EQ(cond.cond->shape().back(), condition_channels(v));
        TrainingBatch plain = cond;
        plain.cond.reset();
        EXPECT_NEAR(batch_loss(expanded, cond), batch_loss(backbone, plain), 1e-6) << to_string(v);
    }
}

TEST(Finetune, ExpandsTheHeadAndTrains)
{
    const DenoiserWeights backbone = init_for(Variant::Backbone, 3);
    const TrainResult r = finetune_conditional(backbone, tiny_train(Variant::Colocated), tiny_data());
    EXPECT_EQ(r.weights.config.condition_channels, 6);
    EXPECT_EQ(r.losses.size(), 6u);
    EXPECT_THROW(finetune_conditional(backbone, tiny_train(Variant::Backbone), tiny_data()), ConfigError);
    const TrainResult b = train_backbone(tiny_net(), tiny_train(), tiny_data());
    EXPECT_EQ(b.weights.config.condition_channels, 0);
}

TEST(Conditions, VariantLightingDraws)
{
    Rng rng = derive_rng(10, 0);
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const CaptureLighting l = draw_capture_lighting(Variant::Colocated, rng, 4);
        ASSERT_GT(l.distance, 0.0);
        ASSERT_FALSE(l.env.has_value());
        sum += l.distance;
    }
    EXPECT_NEAR(sum / n, 2.0, 0.05);
    for (int i = 0; i < 2000; ++i) {
        const CaptureLighting l = draw_capture_lighting(Variant::FlashNoFlash, rng, 4);
        ASSERT_GE(l.log_ratio, std::log(1.0 / 50.0));
        ASSERT_LE(l.log_ratio, std::log(1.5));
        ASSERT_TRUE(l.env.has_value());
    }
    const MaterialMaps m = fixtures::random_material(8, 1);
    const ConditionStack colocated = render_condition(m, draw_capture_lighting(Variant::Colocated, rng, 4));
    EXPECT_EQ(colocated.channels(), 6);
    ASSERT_TRUE(colocated.view_vectors.has_value());
    const ConditionStack pair = render_condition(m, draw_capture_lighting(Variant::FlashNoFlash, rng, 4));
    EXPECT_EQ(pair.photos.size(), 2u);
    EXPECT_FALSE(pair.view_vectors.has_value());
    EXPECT_EQ(render_condition(m, draw_capture_lighting(Variant::Natural, rng, 4)).channels(), 3);
}

TEST(Trainer, LargerExemplarsAreWindowedPerEpoch)
{
    std::vector<MaterialMaps> big = {fixtures::random_material(24, 1), fixtures::random_material(24, 2)};
    TrainConfig c = tiny_train(Variant::Colocated);
    c.max_steps = 4;
    Trainer a(c, init_for(Variant::Colocated), big), b(c, init_for(Variant::Colocated), big);
    a.run_to_completion();
    b.run_to_completion();
    EXPECT_EQ(a.loss_curve(), b.loss_curve());
    EXPECT_EQ(a.weights(), b.weights());
    std::vector<MaterialMaps> small = {fixtures::random_material(8, 1)};
    EXPECT_THROW(Trainer(c, init_for(Variant::Colocated), small), StructuralError);
}
