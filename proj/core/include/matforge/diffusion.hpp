// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "matforge/common.hpp"
#include "matforge/image.hpp"

namespace matforge {

/// Discrete noise schedule indexed by t in [0, T]. t = 0 is the clean signal
/// (sigma 0, a 1, b 0). For t >= 1: a_t = sqrt(alpha_bar_t),
/// b_t = sqrt(1 - alpha_bar_t), sigma_t = b_t / a_t, so a^2 + b^2 = 1 and the
/// network input y = a x + b n equals the unnormalized state x + sigma n
/// scaled by 1 / sqrt(1 + sigma^2).
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(std::vector<double> alpha_bar);

    int steps() const { return static_cast<int>(sigma_.size()) - 1; }
    double sigma(int t) const { return sigma_.at(t); }
    double a(int t) const { return a_.at(t); }
    double b(int t) const { return b_.at(t); }
    double sigma_max() const { return sigma_.back(); }

private:
    std::vector<double> sigma_, a_, b_;
};

inline constexpr int kDefaultTimesteps = 1000;

/// DDPM linear-beta schedule: beta from beta_start to beta_end over T steps,
/// alpha_bar_t = prod_{s<=t} (1 - beta_s).
NoiseSchedule build_schedule(int timesteps = kDefaultTimesteps, double beta_start = 1e-4, double beta_end = 0.02);

struct TrainingPair {
    Image noise;
    Image y;        // a x + b n
    Image v_target; // a n - b x
};

TrainingPair make_training_pair(const Image& x, int t, const NoiseSchedule& schedule, Rng& rng);
TrainingPair make_training_pair(const Image& x, const Image& noise, double a, double b);

struct Expectations {
    Image signal; // E_x = a y - b v
    Image noise;  // E_n = b y + a v
};

Expectations expectations(const Image& y, const Image& v, double a, double b);

/// Mean squared error over every element.
double kdiffusion_loss(const Image& v_pred, const Image& v_target);
/// d loss / d v_pred.
Image kdiffusion_loss_grad(const Image& v_pred, const Image& v_target);

struct SamplerConfig {
    int steps = 20;
    double guidance_scale = 1.0;
    std::uint64_t seed = 0;
    double eta = 1.0; // 1 = full ancestral noise, 0 = deterministic Euler
};

/// Velocity predictor for a single latent at integer timestep t.
using VelocityFn = std::function<Image(const Image& y, int t)>;

/// Timesteps visited by the sampler: evenly spaced indices from T down to 1.
std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int steps);

struct AncestralStep {
    double sigma_up = 0.0;
    double sigma_down = 0.0;
};

AncestralStep ancestral_step(double sigma_from, double sigma_to, double eta = 1.0);

struct SampleTrace {
    std::vector<Image> signal_estimates; // E_x per step, in sampling order
};

/// Euler-ancestral integration of the probability-flow ODE in sigma, from
/// pure noise at sigma_max to sigma = 0. With guidance_scale != 1 the
/// prediction is uncond + s (cond - uncond); `unconditional` is then required.
Image sample_eulera(const VelocityFn& model, const VelocityFn* unconditional, int height, int width, int channels,
                    const NoiseSchedule& schedule, const SamplerConfig& cfg, SampleTrace* trace = nullptr);

} // namespace matforge
