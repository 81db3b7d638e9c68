// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "matforge/diffusion.hpp"
#include "test_util.hpp"

using namespace matforge;

namespace {

/// Exact velocity for data ~ N(0, s2 I): E[x | y] = a s2 y / (a^2 s2 + b^2).
VelocityFn gaussian_oracle(const NoiseSchedule& sched, double s2)
{
    return [&sched, s2](const Image& y, int t) {
        const double a = sched.a(t), b = sched.b(t);
        const double k = a * s2 / (a * a * s2 + b * b);
        Image v = y;
        for (double& e : v.data()) {
            const double ex = k * e;
            const double en = (e - a * ex) / b;
            e = a * en - b * ex;
        }
        return v;
    };
}

/// Closed-form output variance of the ancestral Euler recursion for a
/// Gaussian target: every step is linear in the state.
double predicted_variance(const NoiseSchedule& sched, int steps, double s2)
{
    const auto ts = sampling_timesteps(sched, steps);
    double var = sched.sigma(ts.front()) * sched.sigma(ts.front());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const double s = sched.sigma(ts[i]);
        const double sn = i + 1 < ts.size() ? sched.sigma(ts[i + 1]) : 0.0;
        const AncestralStep st = ancestral_step(s, sn);
        const double shrink = s2 / (s2 + s * s); // E_x = shrink * state
        const double k = shrink + (st.sigma_down / s) * (1 - shrink);
        var = k * k * var + st.sigma_up * st.sigma_up;
    }
    return var;
}

struct Moments {
    double mean = 0, var = 0;
};

Moments moments(const Image& img)
{
    Moments m;
    for (double v : img.data())
        m.mean += v;
    m.mean /= static_cast<double>(img.size());
    for (double v : img.data())
        m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(img.size());
    return m;
}

} // namespace

TEST(Schedule, Identities)
{
    const NoiseSchedule s = build_schedule(1000);
    ASSERT_EQ(s.steps(), 1000);
    EXPECT_EQ(s.sigma(0), 0.0);
    EXPECT_EQ(s.a(0), 1.0);
    for (int t = 0; t <= 1000; ++t)
        ASSERT_LT(std::abs(s.a(t) * s.a(t) + s.b(t) * s.b(t) - 1.0), 1e-12) << t;
    for (int t = 1; t <= 1000; ++t)
        ASSERT_GT(s.sigma(t), s.sigma(t - 1)) << t;
    EXPECT_NEAR(s.sigma(1), std::sqrt(1e-4 / (1 - 1e-4)), 1e-15);
    EXPECT_NEAR(s.sigma(1), 0.010001, 1e-6);
}

TEST(Schedule, SamplingTimestepsSpanTto1)
{
    const NoiseSchedule s = build_schedule(1000);
    const auto ts = sampling_timesteps(s, 20);
    ASSERT_EQ(ts.size(), 20u);
    EXPECT_EQ(ts.front(), 1000);
    EXPECT_EQ(ts.back(), 1);
    for (std::size_t i = 1; i < ts.size(); ++i)
        EXPECT_LT(ts[i], ts[i - 1]);
}

TEST(TrainingPair, Limits)
{
    const NoiseSchedule s = build_schedule(1000);
    const Image x = fixtures::random_image(4, 4, kLatentChannels, 1);
    Rng rng = derive_rng(1, 1);
    const TrainingPair lo = make_training_pair(x, 1, s, rng);
    EXPECT_LT(lo.y.max_abs_diff(x), 0.1);
    EXPECT_LT(lo.v_target.max_abs_diff(lo.noise), 0.02);
    const TrainingPair hi = make_training_pair(x, 1000, s, rng);
    EXPECT_LT(s.a(1000), 0.01);
    double max_n = 0;
    for (double v : hi.noise.data())
        max_n = std::max(max_n, std::abs(v));
    // residuals are a * |x| + (1 - b) * |n| and a * |n| + (1 - b) * |x|
    const double bound = s.a(1000) * std::max(1.0, max_n) + (1 - s.b(1000)) * std::max(1.0, max_n) + 1e-12;
    EXPECT_LT(hi.y.max_abs_diff(hi.noise), bound);
    Image neg = x;
    for (double& v : neg.data())
        v = -v;
    EXPECT_LT(hi.v_target.max_abs_diff(neg), bound);
}

TEST(TrainingPair, SecondMoment)
{
    const NoiseSchedule s = build_schedule(1000);
    const Image x = fixtures::random_image(4, 4, kLatentChannels, 2);
    double xx = 0;
    for (double v : x.data())
        xx += v * v;
    const int t = 400;
    const double a = s.a(t), b = s.b(t);
    Rng rng = derive_rng(2, 2);
    double acc = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const TrainingPair p = make_training_pair(x, t, s, rng);
        for (double v : p.y.data())
            acc += v * v;
    }
    const double expected = a * a * xx + b * b * 16 * kLatentChannels;
    EXPECT_NEAR(acc / n, expected, 0.01 * expected);
}

TEST(Expectations, ExactTargetsAndReconstruction)
{
    const NoiseSchedule s = build_schedule(1000);
    Rng rng = derive_rng(3, 3);
    double worst_x = 0, worst_n = 0, worst_y = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int t = uniform_int(rng, 1, 1000);
        const Image x = fixtures::random_image(3, 3, kLatentChannels, 100 + trial);
        const TrainingPair p = make_training_pair(x, t, s, rng);
        const Expectations e = expectations(p.y, p.v_target, s.a(t), s.b(t));
        worst_x = std::max(worst_x, e.signal.max_abs_diff(x));
        worst_n = std::max(worst_n, e.noise.max_abs_diff(p.noise));
        const Image v = fixtures::random_image(3, 3, kLatentChannels, 900 + trial, -3, 3);
        const Expectations r = expectations(p.y, v, s.a(t), s.b(t));
        for (std::size_t i = 0; i < v.size(); ++i)
            worst_y = std::max(worst_y, std::abs(s.a(t) * r.signal.data()[i] + s.b(t) * r.noise.data()[i] -
                                                 p.y.data()[i]));
    }
    EXPECT_LT(worst_x, 1e-6);
    EXPECT_LT(worst_n, 1e-6);
    EXPECT_LT(worst_y, 1e-6);

    const Image y = fixtures::random_image(2, 2, 3, 7);
    const Expectations z = expectations(y, Image(2, 2, 3), 0.6, 0.8);
    for (std::size_t i = 0; i < y.size(); ++i) {
        EXPECT_NEAR(z.signal.data()[i], 0.6 * y.data()[i], 1e-15);
        EXPECT_NEAR(z.noise.data()[i], 0.8 * y.data()[i], 1e-15);
    }
}

TEST(Loss, ValuesAndFiniteDifferenceGradient)
{
    const Image a = fixtures::random_image(4, 4, 1, 1);
    EXPECT_EQ(kdiffusion_loss(a, a), 0.0);
    Image b = a;
    for (double& v : b.data())
        v += 0.3;
    EXPECT_NEAR(kdiffusion_loss(b, a), 0.09, 1e-12);

    const Image target = fixtures::random_image(4, 4, 1, 2);
    const Image g = kdiffusion_loss_grad(a, target);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double h = 1e-6;
        Image p = a, m = a;
        p.data()[i] += h;
        m.data()[i] -= h;
        const double fd = (kdiffusion_loss(p, target) - kdiffusion_loss(m, target)) / (2 * h);
        EXPECT_NEAR(g.data()[i], fd, 1e-4 * std::max(1e-3, std::abs(fd)));
    }
}

TEST(Sampler, AncestralSplitPreservesSigma)
{
    const AncestralStep st = ancestral_step(3.0, 1.5);
    EXPECT_NEAR(st.sigma_up * st.sigma_up + st.sigma_down * st.sigma_down, 2.25, 1e-12);
    EXPECT_NEAR(st.sigma_up * st.sigma_up, 2.25 * (9.0 - 2.25) / 9.0, 1e-12);
    const AncestralStep last = ancestral_step(0.5, 0.0);
    EXPECT_EQ(last.sigma_up, 0.0);
    EXPECT_EQ(last.sigma_down, 0.0);
    const AncestralStep ode = ancestral_step(3.0, 1.5, 0.0);
    EXPECT_EQ(ode.sigma_up, 0.0);
    EXPECT_NEAR(ode.sigma_down, 1.5, 1e-15);
}

TEST(Sampler, GaussianOracleMatchesClosedFormRecursion)
{
    const NoiseSchedule sched = build_schedule(1000);
    for (double s2 : {1.0, 0.25}) {
        const VelocityFn f = gaussian_oracle(sched, s2);
        for (int steps : {5, 20, 80}) {
            SamplerConfig cfg;
            cfg.steps = steps;
            cfg.seed = 11;
            const Moments m = moments(sample_eulera(f, nullptr, 100, 100, 1, sched, cfg));
            const double expected = predicted_variance(sched, steps, s2);
            EXPECT_LT(std::abs(m.mean), 0.05) << s2 << " " << steps;
            // Sampling error of a variance estimate from 1e4 draws is ~1.4% of the variance.
            EXPECT_NEAR(m.var, expected, 0.06 * expected) << s2 << " " << steps;
        }
    }
}

TEST(Sampler, MomentErrorShrinksWithSteps)
{
    const NoiseSchedule sched = build_schedule(1000);
    const VelocityFn f = gaussian_oracle(sched, 1.0);
    double previous = 1e9;
    for (int steps : {5, 20, 80}) {
        SamplerConfig cfg;
        cfg.steps = steps;
        cfg.seed = 3;
        const Moments m = moments(sample_eulera(f, nullptr, 100, 100, 1, sched, cfg));
        const double err = std::abs(m.mean) + std::abs(m.var - 1.0);
        EXPECT_LT(err, previous) << steps;
        previous = err;
    }
}

TEST(Sampler, SeedDeterminism)
{
    const NoiseSchedule sched = build_schedule(1000);
    const VelocityFn f = gaussian_oracle(sched, 0.5);
    SamplerConfig cfg;
    cfg.seed = 5;
    const Image a = sample_eulera(f, nullptr, 4, 4, 10, sched, cfg);
    EXPECT_EQ(a, sample_eulera(f, nullptr, 4, 4, 10, sched, cfg));
    cfg.seed = 6;
    EXPECT_NE(a, sample_eulera(f, nullptr, 4, 4, 10, sched, cfg));
}

TEST(Sampler, FirstStepSignalEstimateIsNearlyNoiseIndependent)
{
    const NoiseSchedule sched = build_schedule(1000);
    // A velocity field that depends on y; E_x = a y - b v changes by at most
    // a |dy| + b |dv| and here v does not depend on y.
    const Image cond = fixtures::random_image(4, 4, 10, 9);
    const VelocityFn f = [&cond](const Image&, int) { return cond; };
    SampleTrace t1, t2;
    SamplerConfig cfg;
    cfg.steps = 3;
    cfg.seed = 1;
    sample_eulera(f, nullptr, 4, 4, 10, sched, cfg, &t1);
    cfg.seed = 2;
    sample_eulera(f, nullptr, 4, 4, 10, sched, cfg, &t2);
    // Unnormalized starting states differ by |dx| <= 2 sigma_max * max|n|; y = a x.
    const double a = sched.a(1000);
    double max_dy = 0;
    {
        Rng r1(1), r2(2);
        std::normal_distribution<double> n01(0.0, 1.0);
        for (int i = 0; i < 160; ++i)
            max_dy = std::max(max_dy, std::abs(a * sched.sigma(1000) * (n01(r1) - n01(r2))));
    }
    EXPECT_LE(t1.signal_estimates.front().max_abs_diff(t2.signal_estimates.front()), a * max_dy + 1e-12);
    EXPECT_LT(t1.signal_estimates.front().max_abs_diff(t2.signal_estimates.front()), 0.05);
}

TEST(Sampler, GuidanceNeedsUnconditionalBranch)
{
    const NoiseSchedule sched = build_schedule(1000);
    const VelocityFn f = gaussian_oracle(sched, 1.0);
    SamplerConfig cfg;
    cfg.guidance_scale = 2.0;
    EXPECT_THROW(sample_eulera(f, nullptr, 2, 2, 1, sched, cfg), ConfigError);
    // Identical branches make guidance a no-op.
    const Image a = sample_eulera(f, &f, 3, 3, 1, sched, cfg);
    cfg.guidance_scale = 1.0;
    EXPECT_LT(a.max_abs_diff(sample_eulera(f, nullptr, 3, 3, 1, sched, cfg)), 1e-9);
}

TEST(Sampler, NonFiniteModelAborts)
{
    const NoiseSchedule sched = build_schedule(1000);
    const VelocityFn bad = [](const Image& y, int t) {
        Image v = y;
        if (t < 500)
            v.data()[0] = std::nan("");
        return v;
    };
    SamplerConfig cfg;
    EXPECT_THROW(sample_eulera(bad, nullptr, 2, 2, 1, sched, cfg), NumericError);
}
