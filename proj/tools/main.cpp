// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <exception>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace matforge;
using namespace matforge::cli;

int main(int argc, char** argv)
{
    CLI::App app{"matforge: SVBRDF diffusion pipeline (forge, train, sample, select, evaluate)"};
    app.require_subcommand(1);

    std::string profile_name = "desk";
    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    app.add_option("--profile", profile_name, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--config", config_path, "JSON file overlaying the profile")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "top-level seed for every stage");
    app.add_flag("--deterministic", deterministic, "byte-reproducible outputs (no wall-clock fields)");

    ForgeArgs forge;
    auto* forge_cmd = app.add_subcommand("forge", "build a dataset manifest and materialize its records");
    forge_cmd->add_option("--sources", forge.sources, "directory of source materials (default: synthetic)");
    forge_cmd->add_option("--out", forge.out)->required();
    forge_cmd->add_flag("--manifest-only", forge.manifest_only);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "pretrain the unconditional backbone");
    train_cmd->add_option("--data", train.data, "forge output or material directory")->required();
    train_cmd->add_option("--out", train.out)->required();
    train_cmd->add_option("--steps", train.steps);
    train_cmd->add_flag("--resume", train.resume, "continue from <out>/state if present");
    train_cmd->add_flag("--quiet", train.quiet);

    TrainArgs finetune;
    auto* finetune_cmd = app.add_subcommand("finetune", "finetune a conditional model from a backbone");
    finetune_cmd->add_option("--data", finetune.data)->required();
    finetune_cmd->add_option("--out", finetune.out)->required();
    finetune_cmd->add_option("--backbone", finetune.backbone, "backbone checkpoint (.mfck)");
    finetune_cmd->add_option("--variant", finetune.variant)
        ->check(CLI::IsMember({"colocated", "natural", "flash-noflash"}));
    finetune_cmd->add_option("--steps", finetune.steps);
    finetune_cmd->add_flag("--resume", finetune.resume);
    finetune_cmd->add_flag("--quiet", finetune.quiet);

    SampleArgs sample;
    auto* sample_cmd = app.add_subcommand("sample", "generate replicate materials, one per seed");
    sample_cmd->add_option("--model", sample.model)->required()->check(CLI::ExistingFile);
    sample_cmd->add_option("--capture", sample.capture, "capture directory (conditional models)");
    sample_cmd->add_option("--out", sample.out)->required();
    sample_cmd->add_option("--seeds", sample.seeds, "explicit seeds")->delimiter(',');
    sample_cmd->add_option("--replicates", sample.replicates, "seed count starting at the sampler seed");
    sample_cmd->add_option("--steps", sample.steps);
    sample_cmd->add_option("--guidance", sample.guidance);

    SelectArgs select;
    auto* select_cmd = app.add_subcommand("select", "choose one replicate");
    select_cmd->add_option("--replicates", select.replicates)->required();
    select_cmd->add_option("--capture", select.capture);
    select_cmd->add_option("--out", select.out)->required();
    select_cmd->add_option("--mode", select.mode)->check(CLI::IsMember({"render", "fixed", "pick"}));
    select_cmd->add_option("--pick", select.pick, "seed chosen from the contact sheet");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "compare a material to a reference");
    eval_cmd->add_option("--material", eval.material)->required();
    eval_cmd->add_option("--reference", eval.reference)->required();
    eval_cmd->add_option("--out", eval.out, "report .json")->required();
    eval_cmd->add_option("--lights", eval.lights);
    eval_cmd->add_option("--radius", eval.radius);

    RenderArgs render;
    auto* render_cmd = app.add_subcommand("render", "render a capture or a point-lit image of a material");
    render_cmd->add_option("--material", render.material)->required();
    render_cmd->add_option("--out", render.out)->required();
    render_cmd->add_option("--variant", render.variant)
        ->check(CLI::IsMember({"colocated", "natural", "flash-noflash"}));
    render_cmd->add_option("--distance", render.distance);
    render_cmd->add_option("--light", render.light, "x,y,z point light")->delimiter(',')->expected(3);
    render_cmd->add_option("--intensity", render.intensity);
    render_cmd->add_option("--log-ratio", render.log_ratio, "flash/no-flash log luminance ratio");
    render_cmd->add_option("--env-seed", render.env_seed);

    SheetArgs sheet;
    auto* sheet_cmd = app.add_subcommand("sheet", "contact sheet of replicates for manual picking");
    sheet_cmd->add_option("--replicates", sheet.replicates)->required();
    sheet_cmd->add_option("--out", sheet.out, ".png")->required();
    sheet_cmd->add_option("--previews", sheet.previews);
    sheet_cmd->add_option("--tile", sheet.tile);
    sheet_cmd->add_option("--radius", sheet.radius);

    CLI11_PARSE(app, argc, argv);

    try {
        RunContext ctx;
        ctx.profile = make_profile(profile_name);
        if (!config_path.empty())
            apply_config(ctx.profile, read_text(config_path));
        if (seed) {
            ctx.profile.forge.seed = *seed;
            ctx.profile.train.seed = *seed;
            ctx.profile.sampler.seed = *seed;
        }
        ctx.seed = seed.value_or(ctx.profile.train.seed);
        ctx.deterministic = deterministic;
        ctx.command = app.get_subcommands().front()->get_name();

        if (*forge_cmd)
            run_forge(ctx, forge);
        else if (*train_cmd)
            run_train(ctx, train);
        else if (*finetune_cmd)
            run_finetune(ctx, finetune);
        else if (*sample_cmd)
            run_sample(ctx, sample);
        else if (*select_cmd)
            run_select(ctx, select);
        else if (*eval_cmd)
            run_eval(ctx, eval);
        else if (*render_cmd)
            run_render(ctx, render);
        else if (*sheet_cmd)
            run_sheet(ctx, sheet);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
