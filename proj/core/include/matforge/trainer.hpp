// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "matforge/denoiser.hpp"
#include "matforge/diffusion.hpp"
#include "matforge/lighting.hpp"
#include "matforge/material.hpp"
#include "matforge/nn/tensor.hpp"

namespace matforge {

struct TrainConfig {
    double lr = 1e-3;
    int warmup = 100;
    int batch_size = 4;
    int max_steps = 2000; // 0: run `epochs` passes instead
    int epochs = 0;
    double weight_decay = 0.01;
    double ema_decay = 0.999;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    Variant variant = Variant::Backbone;
    int env_samples = 16; // Monte-Carlo samples for environment-lit conditions
    int checkpoint_every = 0;

    static TrainConfig desk();
    static TrainConfig paper();
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// lr * min(1, step / warmup); step counts completed updates.
double learning_rate_at(const TrainConfig& cfg, long step);

/// One assembled minibatch in network layout.
struct TrainingBatch {
    std::vector<std::size_t> items;
    std::vector<int> t;
    nn::Tensor y;                   // [N, H, W, 10]
    nn::Tensor v_target;            // [N, H, W, 10]
    std::optional<nn::Tensor> cond; // [N, H, W, k]
};

/// MSE of the model's velocity on a batch (no gradients).
double batch_loss(const DenoiserWeights& w, const TrainingBatch& batch);

/// Backbone pretraining and conditional finetuning share this loop:
/// shuffled epochs, per-item uniform t in [1, T], velocity MSE, AdamW with
/// linear warmup and decoupled weight decay, then an EMA update.
/// Conditions are re-rendered with fresh lighting at the start of every epoch.
/// Exemplars larger than the network resolution are cut to random windows,
/// also redrawn every epoch.
class Trainer {
public:
    Trainer(TrainConfig cfg, DenoiserWeights init, std::vector<MaterialMaps> data);

    /// One optimizer update; returns the batch loss before the update.
    double step();
    void run(long steps, const std::function<void(long step, double loss)>& on_step = {});
    /// Runs until cfg.max_steps (or cfg.epochs) updates have been applied.
    void run_to_completion(const std::function<void(long step, double loss)>& on_step = {});
    long total_steps() const;
    /// Moves the stopping point (step-count mode); must not precede steps_done().
    void set_max_steps(long max_steps);

    long steps_done() const { return step_; }
    const DenoiserWeights& weights() const { return weights_; }
    const DenoiserWeights& ema() const { return ema_; }
    const std::vector<double>& loss_curve() const { return losses_; }
    const TrainConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    /// A batch over the given items with its own draws of t, noise and lighting.
    TrainingBatch make_batch(std::span<const std::size_t> items, Rng& rng) const;

    double evaluate(const TrainingBatch& batch, bool use_ema = false) const;

    /// weights.mfck, ema.mfck, state.mfck (moments, RNG, data order), loss.csv, config.json.
    void save_state(const std::filesystem::path& dir) const;
    static Trainer resume(const std::filesystem::path& dir, std::vector<MaterialMaps> data);

private:
    TrainingBatch next_batch();
    void begin_epoch();
    void prepare_epoch();
    const MaterialMaps& view(std::size_t i) const { return cropping_ ? views_[i] : data_[i]; }

    TrainConfig cfg_;
    DenoiserWeights weights_;
    DenoiserWeights ema_;
    std::map<std::string, nn::Tensor> m_, v_;
    std::vector<MaterialMaps> data_;
    bool cropping_ = false;
    std::vector<MaterialMaps> views_; // current windows when exemplars exceed the network resolution
    std::vector<Image> latents_;
    std::vector<Image> conditions_; // flattened, current epoch
    NoiseSchedule schedule_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    long epoch_ = -1;
    long step_ = 0;
    std::vector<double> losses_;
};

struct TrainResult {
    DenoiserWeights weights;
    DenoiserWeights ema;
    std::vector<double> losses;
};

TrainResult train_backbone(const NetConfig& net, const TrainConfig& cfg, std::vector<MaterialMaps> data);

/// Expands the input head for cfg.variant and continues training.
TrainResult finetune_conditional(const DenoiserWeights& backbone, const TrainConfig& cfg,
                                 std::vector<MaterialMaps> data);

} // namespace matforge
