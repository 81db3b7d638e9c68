// SPDX-License-Identifier: Apache-2.0
#include "matforge/diffusion.hpp"

#include <cmath>
#include <string>

namespace matforge {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar)
{
    const std::size_t n = alpha_bar.size();
    sigma_.assign(n + 1, 0.0);
    a_.assign(n + 1, 1.0);
    b_.assign(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double ab = alpha_bar[i];
        if (!(ab > 0.0 && ab < 1.0))
            throw ConfigError("alpha_bar must lie in (0, 1)");
        a_[i + 1] = std::sqrt(ab);
        b_[i + 1] = std::sqrt(1.0 - ab);
        sigma_[i + 1] = b_[i + 1] / a_[i + 1];
    }
}

NoiseSchedule build_schedule(int timesteps, double beta_start, double beta_end)
{
    if (timesteps < 2)
        throw ConfigError("schedule needs at least 2 timesteps");
    std::vector<double> alpha_bar(timesteps);
    double prod = 1.0;
    for (int i = 0; i < timesteps; ++i) {
        const double beta = beta_start + (beta_end - beta_start) * i / (timesteps - 1);
        prod *= 1.0 - beta;
        alpha_bar[i] = prod;
    }
    return NoiseSchedule(std::move(alpha_bar));
}

TrainingPair make_training_pair(const Image& x, const Image& noise, double a, double b)
{
    if (!x.same_shape(noise))
        throw StructuralError("make_training_pair: signal/noise shape mismatch");
    TrainingPair p{noise, Image(x.height(), x.width(), x.channels()), Image(x.height(), x.width(), x.channels())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xv = x.data()[i];
        const double nv = noise.data()[i];
        p.y.data()[i] = a * xv + b * nv;
        p.v_target.data()[i] = a * nv - b * xv;
    }
    return p;
}

TrainingPair make_training_pair(const Image& x, int t, const NoiseSchedule& schedule, Rng& rng)
{
    if (t < 1 || t > schedule.steps())
        throw ConfigError("timestep " + std::to_string(t) + " outside [1, T]");
    Image noise(x.height(), x.width(), x.channels());
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : noise.data())
        v = n01(rng);
    return make_training_pair(x, noise, schedule.a(t), schedule.b(t));
}

Expectations expectations(const Image& y, const Image& v, double a, double b)
{
    if (!y.same_shape(v))
        throw StructuralError("expectations: shape mismatch");
    Expectations e{Image(y.height(), y.width(), y.channels()), Image(y.height(), y.width(), y.channels())};
    for (std::size_t i = 0; i < y.size(); ++i) {
        e.signal.data()[i] = a * y.data()[i] - b * v.data()[i];
        e.noise.data()[i] = b * y.data()[i] + a * v.data()[i];
    }
    return e;
}

double kdiffusion_loss(const Image& v_pred, const Image& v_target)
{
    if (!v_pred.same_shape(v_target))
        throw StructuralError("kdiffusion_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < v_pred.size(); ++i) {
        const double d = v_pred.data()[i] - v_target.data()[i];
        s += d * d;
    }
    return v_pred.size() ? s / static_cast<double>(v_pred.size()) : 0.0;
}

Image kdiffusion_loss_grad(const Image& v_pred, const Image& v_target)
{
    if (!v_pred.same_shape(v_target))
        throw StructuralError("kdiffusion_loss_grad: shape mismatch");
    Image g(v_pred.height(), v_pred.width(), v_pred.channels());
    const double scale = 2.0 / static_cast<double>(v_pred.size());
    for (std::size_t i = 0; i < v_pred.size(); ++i)
        g.data()[i] = scale * (v_pred.data()[i] - v_target.data()[i]);
    return g;
}

std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps)
{
    if (steps < 1)
        throw ConfigError("sampler needs at least one step");
    const int T = schedule.steps();
    std::vector<int> ts(steps);
    if (steps == 1) {
        ts[0] = T;
        return ts;
    }
    for (int i = 0; i < steps; ++i)
        ts[i] = static_cast<int>(std::lround(T - static_cast<double>(i) * (T - 1) / (steps - 1)));
    return ts;
}

AncestralStep ancestral_step(double sigma_from, double sigma_to, double eta)
{
    if (sigma_to <= 0.0)
        return {0.0, 0.0};
    const double up2 = sigma_to * sigma_to * (sigma_from * sigma_from - sigma_to * sigma_to) / (sigma_from * sigma_from);
    const double up = std::min(sigma_to, eta * std::sqrt(std::max(0.0, up2)));
    return {up, std::sqrt(sigma_to * sigma_to - up * up)};
}

Image sample_eulera(const VelocityFn& model, const VelocityFn* unconditional, int height, int width, int channels,
                    const NoiseSchedule& schedule, const SamplerConfig& cfg, SampleTrace* trace)
{
    if (cfg.guidance_scale != 1.0 && unconditional == nullptr)
        throw ConfigError("guidance_scale != 1 requires an unconditional model");
    const std::vector<int> ts = sampling_timesteps(schedule, cfg.steps);
    Rng rng(cfg.seed);
    std::normal_distribution<double> n01(0.0, 1.0);

    // Unnormalized state x_hat = x + sigma n.
    Image state(height, width, channels);
    const double sigma_start = schedule.sigma(ts.front());
    for (double& v : state.data())
        v = sigma_start * n01(rng);

    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const double sigma = schedule.sigma(t);
        const double sigma_next = i + 1 < ts.size() ? schedule.sigma(ts[i + 1]) : 0.0;
        const double a = schedule.a(t);
        const double b = schedule.b(t);

        Image y = state;
        for (double& v : y.data())
            v *= a;
        Image v = model(y, t);
        if (cfg.guidance_scale != 1.0) {
            const Image vu = (*unconditional)(y, t);
            for (std::size_t k = 0; k < v.size(); ++k)
                v.data()[k] = vu.data()[k] + cfg.guidance_scale * (v.data()[k] - vu.data()[k]);
        }
        if (!v.same_shape(y))
            throw StructuralError("sampler: model output shape does not match its input");

        const AncestralStep st = ancestral_step(sigma, sigma_next, cfg.eta);
        const double dt = st.sigma_down - sigma;
        Image signal;
        if (trace)
            signal = Image(height, width, channels);
        for (std::size_t k = 0; k < state.size(); ++k) {
            const double ex = a * y.data()[k] - b * v.data()[k];
            const double d = (state.data()[k] - ex) / sigma;
            state.data()[k] += d * dt;
            if (trace)
                signal.data()[k] = ex;
        }
        if (st.sigma_up > 0.0)
            for (double& s : state.data())
                s += st.sigma_up * n01(rng);
        if (!state.all_finite())
            throw NumericError("sampler: non-finite state after step " + std::to_string(i + 1) + " (t = " +
                               std::to_string(t) + ")");
        if (trace)
            trace->signal_estimates.push_back(std::move(signal));
    }
    return state;
}

} // namespace matforge
