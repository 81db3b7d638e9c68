// SPDX-License-Identifier: Apache-2.0
#include "matforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "matforge/checkpoint.hpp"
#include "matforge/forge.hpp"
#include "matforge/nn/ops.hpp"

namespace matforge {

using nn::Tensor;
using nn::Var;

TrainConfig TrainConfig::desk()
{
    return {};
}

TrainConfig TrainConfig::paper()
{
    TrainConfig c;
    c.lr = 2e-5;
    c.warmup = 100000;
    c.batch_size = 32;
    c.max_steps = 0;
    c.epochs = 50;
    return c;
}

void TrainConfig::validate() const
{
    if (!(lr > 0.0) || warmup < 0 || batch_size < 1)
        throw ConfigError("train config: lr must be > 0, warmup >= 0, batch_size >= 1");
    if (max_steps < 0 || epochs < 0 || (max_steps == 0 && epochs == 0))
        throw ConfigError("train config: set max_steps or epochs");
    if (!(weight_decay >= 0.0) || !(ema_decay >= 0.0 && ema_decay < 1.0))
        throw ConfigError("train config: weight_decay >= 0 and ema_decay in [0, 1) required");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0))
        throw ConfigError("train config: Adam betas must lie in [0, 1) and eps > 0");
    if (env_samples < 1 || checkpoint_every < 0)
        throw ConfigError("train config: env_samples >= 1 and checkpoint_every >= 0 required");
}

std::string TrainConfig::to_json() const
{
    nlohmann::json j;
    j["lr"] = lr;
    j["warmup"] = warmup;
    j["batch_size"] = batch_size;
    j["max_steps"] = max_steps;
    j["epochs"] = epochs;
    j["weight_decay"] = weight_decay;
    j["ema_decay"] = ema_decay;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["seed"] = seed;
    j["variant"] = to_string(variant);
    j["env_samples"] = env_samples;
    j["checkpoint_every"] = checkpoint_every;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text)
{
    TrainConfig c;
    try {
        const auto j = nlohmann::json::parse(text);
        c.lr = j.value("lr", c.lr);
        c.warmup = j.value("warmup", c.warmup);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.epochs = j.value("epochs", c.epochs);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.ema_decay = j.value("ema_decay", c.ema_decay);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.seed = j.value("seed", c.seed);
        c.variant = variant_from_string(j.value("variant", to_string(c.variant)));
        c.env_samples = j.value("env_samples", c.env_samples);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double learning_rate_at(const TrainConfig& cfg, long step)
{
    if (cfg.warmup == 0)
        return cfg.lr;
    return cfg.lr * std::min(1.0, static_cast<double>(step) / cfg.warmup);
}

double batch_loss(const DenoiserWeights& w, const TrainingBatch& batch)
{
    const ParamVars p = as_constants(w);
    const Var cond = batch.cond ? nn::constant(*batch.cond) : Var{};
    const Var out = forward_graph(w.config, p, nn::constant(batch.y), batch.t, cond);
    return nn::mse_loss(out, batch.v_target)->value[0];
}

namespace {

TrainingBatch assemble(const std::vector<Image>& latents, std::span<const std::size_t> items,
                       const NoiseSchedule& schedule, Rng& rng, const std::function<Image(std::size_t)>& condition)
{
    TrainingBatch b;
    b.items.assign(items.begin(), items.end());
    std::vector<Image> ys, vs, cs;
    for (std::size_t item : items) {
        const int t = uniform_int(rng, 1, schedule.steps());
        TrainingPair pair = make_training_pair(latents.at(item), t, schedule, rng);
        b.t.push_back(t);
        ys.push_back(std::move(pair.y));
        vs.push_back(std::move(pair.v_target));
        if (condition)
            cs.push_back(condition(item));
    }
    auto stack = [](const std::vector<Image>& imgs) {
        std::vector<const Image*> ptrs;
        for (const Image& i : imgs)
            ptrs.push_back(&i);
        return stack_images(ptrs);
    };
    b.y = stack(ys);
    b.v_target = stack(vs);
    if (!cs.empty())
        b.cond = stack(cs);
    return b;
}

std::uint64_t condition_stream_seed(std::uint64_t seed)
{
    return splitmix64(seed ^ 0x636f6e646974ULL);
}

} // namespace

Trainer::Trainer(TrainConfig cfg, DenoiserWeights init, std::vector<MaterialMaps> data)
    : cfg_(std::move(cfg)), weights_(std::move(init)), data_(std::move(data))
{
    cfg_.validate();
    weights_.config.validate();
    if (data_.empty())
        throw ConfigError("trainer: empty dataset");
    const int k = condition_channels(cfg_.variant);
    if (weights_.config.condition_channels != k)
        throw ConfigError("trainer: variant '" + to_string(cfg_.variant) + "' needs " + std::to_string(k) +
                          " condition channels, weights have " + std::to_string(weights_.config.condition_channels));
    const int res = weights_.config.resolution;
    for (const MaterialMaps& m : data_) {
        m.validate();
        if (m.resolution() < res)
            throw StructuralError("trainer: material resolution " + std::to_string(m.resolution()) +
                                  " is below the network resolution " + std::to_string(res));
        cropping_ = cropping_ || m.resolution() > res;
    }
    // Larger exemplars are cut to random res x res windows every epoch;
    // before the first epoch the centre window stands in.
    for (const MaterialMaps& m : data_) {
        if (cropping_) {
            const double off = 0.5 * (m.resolution() - res);
            views_.push_back(extract_crop(m, {std::floor(off), std::floor(off), res, 0.0}, res));
        }
        latents_.push_back(encode_material(cropping_ ? views_.back() : m).values);
    }
    ema_ = weights_;
    for (const auto& [name, t] : weights_.tensors) {
        m_.emplace(name, Tensor(t.shape()));
        v_.emplace(name, Tensor(t.shape()));
    }
    schedule_ = build_schedule(weights_.config.timesteps);
    rng_ = derive_rng(cfg_.seed, 0x747261696eULL);
}

long Trainer::total_steps() const
{
    if (cfg_.max_steps > 0)
        return cfg_.max_steps;
    const long per_epoch = (static_cast<long>(data_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    return per_epoch * cfg_.epochs;
}

void Trainer::begin_epoch()
{
    ++epoch_;
    order_.resize(data_.size());
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
    prepare_epoch();
}

void Trainer::prepare_epoch()
{
    // Per-item streams keyed by (epoch, item) keep windows and renders order-independent.
    const auto stream = [&](std::size_t i) { return static_cast<std::uint64_t>(epoch_) * data_.size() + i; };
    if (cropping_) {
        const std::uint64_t seed = splitmix64(cfg_.seed ^ 0x63726f70ULL);
        const int res = weights_.config.resolution;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            Rng wr = derive_rng(seed, stream(i));
            const int span = data_[i].resolution() - res;
            const double x0 = uniform_int(wr, 0, span), y0 = uniform_int(wr, 0, span);
            views_[i] = extract_crop(data_[i], {x0, y0, res, 0.0}, res);
            latents_[i] = encode_material(views_[i]).values;
        }
    }
    conditions_.clear();
    if (cfg_.variant == Variant::Backbone)
        return;
    const std::uint64_t seed = condition_stream_seed(cfg_.seed);
    for (std::size_t i = 0; i < data_.size(); ++i) {
        Rng lr = derive_rng(seed, stream(i));
        conditions_.push_back(
            render_condition(view(i), draw_capture_lighting(cfg_.variant, lr, cfg_.env_samples)).flatten());
    }
}

TrainingBatch Trainer::next_batch()
{
    std::vector<std::size_t> items;
    while (static_cast<int>(items.size()) < cfg_.batch_size) {
        if (epoch_ < 0 || cursor_ >= order_.size())
            begin_epoch();
        items.push_back(order_[cursor_++]);
    }
    std::function<Image(std::size_t)> cond;
    if (cfg_.variant != Variant::Backbone)
        cond = [this](std::size_t i) { return conditions_[i]; };
    return assemble(latents_, items, schedule_, rng_, cond);
}

TrainingBatch Trainer::make_batch(std::span<const std::size_t> items, Rng& rng) const
{
    for (std::size_t i : items)
        if (i >= data_.size())
            throw StructuralError("make_batch: item index out of range");
    std::function<Image(std::size_t)> cond;
    if (cfg_.variant != Variant::Backbone)
        cond = [this, &rng](std::size_t i) {
            return render_condition(view(i), draw_capture_lighting(cfg_.variant, rng, cfg_.env_samples)).flatten();
        };
    return assemble(latents_, items, schedule_, rng, cond);
}

double Trainer::evaluate(const TrainingBatch& batch, bool use_ema) const
{
    return batch_loss(use_ema ? ema_ : weights_, batch);
}

double Trainer::step()
{
    const TrainingBatch batch = next_batch();
    const ParamVars params = as_parameters(weights_);
    const Var cond = batch.cond ? nn::constant(*batch.cond) : Var{};
    const Var out = forward_graph(weights_.config, params, nn::constant(batch.y), batch.t, cond);
    const Var loss = nn::mse_loss(out, batch.v_target);
    const double value = loss->value[0];
    if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step_ << " (items";
        for (std::size_t i = 0; i < batch.items.size(); ++i)
            msg << ' ' << batch.items[i] << "@t=" << batch.t[i];
        msg << ")";
        throw NumericError(msg.str());
    }
    nn::backward(loss);

    const double lr = learning_rate_at(cfg_, step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_ + 1));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_ + 1));
    for (auto& [name, w] : weights_.tensors) {
        const Tensor& g = params.at(name)->grad;
        Tensor& m = m_.at(name);
        Tensor& v = v_.at(name);
        Tensor& e = ema_.tensors.at(name);
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
            e[i] = cfg_.ema_decay * e[i] + (1.0 - cfg_.ema_decay) * w[i];
        }
    }
    ++step_;
    losses_.push_back(value);
    return value;
}

void Trainer::run(long steps, const std::function<void(long, double)>& on_step)
{
    for (long i = 0; i < steps; ++i) {
        const double loss = step();
        if (on_step)
            on_step(step_, loss);
    }
}

void Trainer::run_to_completion(const std::function<void(long, double)>& on_step)
{
    run(std::max(0L, total_steps() - step_), on_step);
}

void Trainer::set_max_steps(long max_steps)
{
    if (max_steps < step_)
        throw ConfigError("max_steps " + std::to_string(max_steps) + " precedes the completed step " +
                          std::to_string(step_));
    cfg_.max_steps = static_cast<int>(max_steps);
    cfg_.epochs = 0;
    cfg_.validate();
}

void Trainer::save_state(const std::filesystem::path& dir) const
{
    std::filesystem::create_directories(dir);
    save_weights(weights_, dir / "weights.mfck");
    save_weights(ema_, dir / "ema.mfck");

    nlohmann::json h;
    h["kind"] = "trainer-state";
    h["step"] = step_;
    h["epoch"] = epoch_;
    h["cursor"] = cursor_;
    h["order"] = order_;
    h["rng"] = rng_state(rng_);
    h["train"] = nlohmann::json::parse(cfg_.to_json());
    TensorArchive state;
    state.header = h.dump();
    for (const auto& [name, t] : m_)
        state.tensors.emplace("m/" + name, t);
    for (const auto& [name, t] : v_)
        state.tensors.emplace("v/" + name, t);
    save_archive(state, dir / "state.mfck");

    std::ofstream csv(dir / "loss.csv", std::ios::trunc);
    csv << "step,loss,lr\n";
    char line[96];
    for (std::size_t i = 0; i < losses_.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", i, losses_[i],
                      learning_rate_at(cfg_, static_cast<long>(i)));
        csv << line;
    }
    std::ofstream cfg(dir / "config.json", std::ios::trunc);
    nlohmann::json c;
    c["train"] = nlohmann::json::parse(cfg_.to_json());
    c["net"] = nlohmann::json::parse(weights_.config.to_json());
    cfg << c.dump(2) << '\n';
    if (!csv || !cfg)
        throw IoError("failed to write training state to " + dir.string());
}

Trainer Trainer::resume(const std::filesystem::path& dir, std::vector<MaterialMaps> data)
{
    const TensorArchive state = load_archive(dir / "state.mfck");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(state.header);
        if (h.value("kind", "") != "trainer-state")
            throw IoError(dir.string() + "/state.mfck is not a trainer state");
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad trainer state header: " + std::string(e.what()));
    }
    Trainer t(TrainConfig::from_json(h.at("train").dump()), load_weights(dir / "weights.mfck"), std::move(data));
    t.ema_ = load_weights(dir / "ema.mfck");
    for (auto& [name, m] : t.m_)
        m = state.tensors.at("m/" + name);
    for (auto& [name, v] : t.v_)
        v = state.tensors.at("v/" + name);
    t.step_ = h.at("step").get<long>();
    t.epoch_ = h.at("epoch").get<long>();
    t.cursor_ = h.at("cursor").get<std::size_t>();
    t.order_ = h.at("order").get<std::vector<std::size_t>>();
    t.rng_ = rng_from_state(h.at("rng").get<std::string>());
    if (t.order_.size() != (t.epoch_ >= 0 ? t.data_.size() : 0))
        throw IoError("trainer state does not match the dataset size");
    if (t.epoch_ >= 0)
        t.prepare_epoch();
    std::ifstream csv(dir / "loss.csv");
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos)
            throw IoError("malformed loss.csv line: " + line);
        t.losses_.push_back(std::stod(line.substr(a + 1, b - a - 1)));
    }
    if (static_cast<long>(t.losses_.size()) != t.step_)
        throw IoError("loss.csv has " + std::to_string(t.losses_.size()) + " rows, state is at step " +
                      std::to_string(t.step_));
    return t;
}

TrainResult train_backbone(const NetConfig& net, const TrainConfig& cfg, std::vector<MaterialMaps> data)
{
    if (cfg.variant != Variant::Backbone)
        throw ConfigError("train_backbone: variant must be backbone");
    Trainer t(cfg, init_backbone(net, cfg.seed), std::move(data));
    t.run_to_completion();
    return {t.weights(), t.ema(), t.loss_curve()};
}

TrainResult finetune_conditional(const DenoiserWeights& backbone, const TrainConfig& cfg,
                                 std::vector<MaterialMaps> data)
{
    if (cfg.variant == Variant::Backbone)
        throw ConfigError("finetune_conditional: choose a conditional variant");
    Trainer t(cfg, expand_input_head(backbone, condition_channels(cfg.variant)), std::move(data));
    t.run_to_completion();
    return {t.weights(), t.ema(), t.loss_curve()};
}

} // namespace matforge
