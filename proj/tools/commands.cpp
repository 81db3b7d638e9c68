// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdio>

#include "matforge/checkpoint.hpp"
#include "matforge/forge.hpp"
#include "matforge/image_io.hpp"
#include "matforge/trainer.hpp"

namespace matforge::cli {

using nlohmann::json;

namespace {

void log(const char* fmt, auto... args)
{
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}

} // namespace

void run_forge(const RunContext& ctx, const ForgeArgs& args)
{
    const ForgeConfig& cfg = ctx.profile.forge;
    std::vector<SourceMaterial> sources = args.sources.empty()
                                              ? synthetic_sources(cfg.source_count, cfg.source_resolution, cfg.seed)
                                              : load_sources(args.sources);
    const DatasetManifest manifest = build_manifest(sources, cfg);
    fs::create_directories(args.out);
    write_text(args.out / "manifest.jsonl", manifest.to_jsonl());
    log("forge: %zu sources, %zu records", sources.size(), manifest.records.size());

    json counts = json::object();
    for (const ManifestRecord& r : manifest.records)
        counts[to_string(r.kind) + "/" + r.split] = counts.value(to_string(r.kind) + "/" + r.split, 0) + 1;

    if (!args.manifest_only) {
        const auto index = index_sources(sources);
        for (const ManifestRecord& r : manifest.records) {
            const MaterialMaps m = realize_record(r, manifest, index);
            m.validate();
            save_material(m, args.out / "materials" / r.id);
        }
    }
    json extra;
    extra["manifest_hash"] = manifest.hash();
    extra["records"] = manifest.records.size();
    extra["counts"] = counts;
    extra["sources"] = args.sources.empty() ? json("synthetic") : json(hash_path(args.sources));
    extra["materialized"] = !args.manifest_only;
    write_sidecar(args.out / "forge.json", ctx, extra);
}

std::vector<MaterialMaps> load_training_data(const fs::path& dir)
{
    std::vector<MaterialMaps> data;
    if (fs::exists(dir / "manifest.jsonl")) {
        const DatasetManifest manifest = DatasetManifest::from_jsonl(read_text(dir / "manifest.jsonl"));
        for (const ManifestRecord* r : manifest.split("train")) {
            const fs::path p = dir / "materials" / r->id;
            if (!fs::exists(p / "material.json"))
                throw IoError("record " + r->id + " is not materialized (run forge without --manifest-only)");
            data.push_back(load_material(p));
        }
    } else {
        for (SourceMaterial& s : load_sources(dir))
            data.push_back(std::move(s.maps));
    }
    if (data.empty())
        throw ConfigError("no training materials under " + dir.string());
    return data;
}

namespace {

void train_common(const RunContext& ctx, const TrainArgs& args, bool finetune)
{
    std::vector<MaterialMaps> data = load_training_data(args.data);
    TrainConfig cfg = ctx.profile.train;
    if (args.steps) {
        cfg.max_steps = *args.steps;
        cfg.epochs = 0;
    }
    cfg.variant = finetune ? variant_from_string(args.variant) : Variant::Backbone;
    if (finetune && cfg.variant == Variant::Backbone)
        throw ConfigError("finetune needs a conditional variant");
    cfg.validate();

    const fs::path state_dir = args.out / "state";
    const bool resuming = args.resume && fs::exists(state_dir / "state.mfck");
    auto make = [&]() {
        if (resuming)
            return Trainer::resume(state_dir, std::move(data));
        if (finetune)
            return Trainer(cfg, expand_input_head(load_weights(args.backbone), condition_channels(cfg.variant)),
                           std::move(data));
        NetConfig net = ctx.profile.net;
        net.condition_channels = 0;
        return Trainer(cfg, init_backbone(net, cfg.seed), std::move(data));
    };
    Trainer trainer = make();
    if (resuming && args.steps)
        trainer.set_max_steps(*args.steps);
    if (resuming)
        log("%s: resumed at step %ld", ctx.command.c_str(), trainer.steps_done());

    const int every = trainer.config().checkpoint_every;
    double window = 0.0;
    int count = 0;
    trainer.run_to_completion([&](long step, double loss) {
        window += loss;
        ++count;
        if (!args.quiet && (step % 50 == 0 || step == trainer.total_steps())) {
            log("%s: step %ld/%ld loss %.5f lr %.3g", ctx.command.c_str(), step, trainer.total_steps(),
                window / count, learning_rate_at(trainer.config(), step));
            window = 0.0;
            count = 0;
        }
        if (every > 0 && step % every == 0)
            trainer.save_state(state_dir);
    });

    trainer.save_state(state_dir);
    save_weights(trainer.ema(), args.out / "model.mfck");
    save_weights(trainer.weights(), args.out / "raw.mfck");

    json extra;
    extra["steps"] = trainer.steps_done();
    extra["variant"] = to_string(trainer.config().variant);
    extra["train"] = json::parse(trainer.config().to_json());
    extra["net"] = json::parse(trainer.weights().config.to_json());
    extra["data_hash"] = hash_path(args.data);
    if (finetune)
        extra["backbone_hash"] = hash_path(args.backbone);
    extra["final_loss"] = trainer.loss_curve().empty() ? 0.0 : trainer.loss_curve().back();
    extra["model_hash"] = hash_path(args.out / "model.mfck");
    extra["raw_hash"] = hash_path(args.out / "raw.mfck");
    write_sidecar(args.out / (ctx.command + ".json"), ctx, extra);
}

std::vector<std::uint64_t> replicate_seeds(const RunContext& ctx, const SampleArgs& args)
{
    if (!args.seeds.empty())
        return args.seeds;
    const int n = args.replicates > 0 ? args.replicates : ctx.profile.eval.replicates;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n; ++i)
        seeds.push_back(ctx.profile.sampler.seed + static_cast<std::uint64_t>(i));
    return seeds;
}

} // namespace

void run_train(const RunContext& ctx, const TrainArgs& args) { train_common(ctx, args, false); }

void run_finetune(const RunContext& ctx, const TrainArgs& args)
{
    if (args.backbone.empty() && !args.resume)
        throw ConfigError("finetune needs --backbone");
    train_common(ctx, args, true);
}

void run_sample(const RunContext& ctx, const SampleArgs& args)
{
    const DenoiserWeights model = load_weights(args.model);
    Capture capture;
    if (!args.capture.empty())
        capture = read_capture(args.capture);
    SamplerConfig sampler = ctx.profile.sampler;
    if (args.steps)
        sampler.steps = *args.steps;
    if (args.guidance)
        sampler.guidance_scale = *args.guidance;
    const std::vector<std::uint64_t> seeds = replicate_seeds(ctx, args);

    const ReplicateSet rs = generate_replicates(model, capture.condition, seeds, sampler);
    json per_seed = json::object();
    for (const Replicate& r : rs.replicates) {
        const fs::path dir = args.out / ("seed-" + std::to_string(r.seed));
        save_material(r.material, dir);
        per_seed[std::to_string(r.seed)] = hash_path(dir);
        log("sample: seed %llu done", static_cast<unsigned long long>(r.seed));
    }
    json extra;
    extra["seeds"] = seeds;
    extra["sampler"] = json::parse(sampler_config_json(sampler));
    extra["model_hash"] = hash_path(args.model);
    extra["capture_hash"] = args.capture.empty() ? json(nullptr) : json(hash_path(args.capture));
    extra["replicate_hashes"] = per_seed;
    write_sidecar(args.out / "sample.json", ctx, extra);
}

void run_select(const RunContext& ctx, const SelectArgs& args)
{
    ReplicateSet rs;
    rs.replicates = read_replicates(args.replicates);
    Selection sel;
    if (args.mode == "render") {
        if (args.capture.empty())
            throw ConfigError("render-error selection needs --capture; without known lighting use --mode fixed or "
                              "--mode pick with a seed from the contact sheet");
        const Capture capture = read_capture(args.capture);
        rs.condition = capture.condition;
        sel = select_by_render_error(rs, capture.lighting);
    } else if (args.mode == "fixed") {
        sel.index = 0;
    } else if (args.mode == "pick") {
        if (!args.pick)
            throw ConfigError("--mode pick needs --pick <seed>");
        const auto it = std::find_if(rs.replicates.begin(), rs.replicates.end(),
                                     [&](const Replicate& r) { return r.seed == *args.pick; });
        if (it == rs.replicates.end())
            throw ConfigError("--pick " + std::to_string(*args.pick) + " is not among the replicates");
        sel.index = static_cast<std::size_t>(it - rs.replicates.begin());
    } else {
        throw ConfigError("unknown selection mode '" + args.mode + "' (render, fixed or pick)");
    }
    sel.seed = rs.replicates[sel.index].seed;
    save_material(rs.replicates[sel.index].material, args.out / "material");
    log("select: %s picked seed %llu", args.mode.c_str(), static_cast<unsigned long long>(sel.seed));

    json seeds = json::array();
    for (const Replicate& r : rs.replicates)
        seeds.push_back(r.seed);
    json extra;
    extra["mode"] = args.mode;
    extra["selected_seed"] = sel.seed;
    extra["seeds"] = seeds;
    extra["scores"] = sel.scores;
    extra["replicates_hash"] = hash_path(args.replicates);
    if (!args.capture.empty())
        extra["capture_hash"] = hash_path(args.capture);
    extra["material_hash"] = hash_path(args.out / "material");
    write_sidecar(args.out / "select.json", ctx, extra);
}

void run_eval(const RunContext& ctx, const EvalArgs& args)
{
    const MaterialMaps m = load_material(args.material);
    const MaterialMaps ref = load_material(args.reference);
    const EvalReport r = evaluate_relighting(m, ref, args.lights.value_or(ctx.profile.eval.lights),
                                             args.radius.value_or(ctx.profile.eval.radius), ctx.seed);
    json extra = json::parse(eval_report_json(r));
    extra["material_hash"] = hash_path(args.material);
    extra["reference_hash"] = hash_path(args.reference);
    write_sidecar(args.out, ctx, extra);
    log("eval: mean relighting rmse %.6f proxy %.6f", r.mean_rmse, r.mean_proxy);
}

void run_render(const RunContext& ctx, const RenderArgs& args)
{
    const MaterialMaps m = load_material(args.material);
    json extra;
    extra["material_hash"] = hash_path(args.material);
    if (!args.light.empty()) {
        if (args.light.size() != 3)
            throw ConfigError("--light takes x,y,z");
        PointLight light;
        light.position = Vec3{args.light[0], args.light[1], args.light[2]};
        light.intensity = Rgb{args.intensity, args.intensity, args.intensity};
        const Image img = render_point(m, light, CameraModel::at_distance(args.distance));
        fs::create_directories(args.out);
        write_pfm(args.out / "render.pfm", img);
        write_png8(args.out / "render.png", to_display(img));
        extra["light"] = args.light;
        extra["intensity"] = args.intensity;
        extra["distance"] = args.distance;
    } else {
        CaptureLighting l;
        l.variant = variant_from_string(args.variant);
        if (l.variant == Variant::Backbone)
            throw ConfigError("render needs a capture variant or --light");
        l.distance = args.distance;
        l.log_ratio = args.log_ratio;
        l.env_samples = 64;
        l.seed = ctx.seed;
        json env_spec;
        if (l.variant != Variant::Colocated) {
            env_spec = {{"procedural_seed", args.env_seed.value_or(ctx.seed)}};
            l.env = environment_from_spec(env_spec, args.out);
        }
        write_capture(args.out, l, render_capture(m, l), env_spec);
        extra["capture"] = json::parse(read_text(args.out / "capture.json"));
    }
    write_sidecar(args.out / "render.json", ctx, extra);
}

void run_sheet(const RunContext& ctx, const SheetArgs& args)
{
    ReplicateSet rs;
    rs.replicates = read_replicates(args.replicates);
    const int previews = args.previews.value_or(ctx.profile.eval.preview_lights);
    const int tile = args.tile.value_or(ctx.profile.eval.tile);
    const std::vector<PointLight> lights =
        hemisphere_lights(previews, args.radius.value_or(ctx.profile.eval.radius), ctx.seed);
    const Image sheet = contact_sheet(rs, lights, tile);
    write_png8(args.out, sheet);
    const SheetLayout layout = contact_sheet_layout(static_cast<int>(rs.replicates.size()), previews, tile);
    json extra;
    extra["rows"] = layout.rows;
    extra["columns"] = layout.columns;
    extra["tile"] = layout.tile;
    extra["replicates_hash"] = hash_path(args.replicates);
    json seeds = json::array();
    for (const Replicate& r : rs.replicates)
        seeds.push_back(r.seed);
    extra["seeds"] = seeds;
    fs::path side = args.out;
    side.replace_extension(".json");
    write_sidecar(side, ctx, extra);
}

} // namespace matforge::cli
