#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lora_fleet/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"lora-fleet: trace-driven simulator for batched multi-LoRA fine-tuning"};
    app.require_subcommand(1);
    // let global flags (--config/--seed/--out) appear after the subcommand too
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    app.add_option("--config", config_path, "run configuration file")->capture_default_str();
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "override the output directory");

    auto* gen = app.add_subcommand("gen-trace", "synthesize a job arrival trace");
    lora_fleet::GenTraceOpts gen_opts;
    gen->add_option("--jobs", gen_opts.jobs, "number of jobs")->required();
    gen->add_option("--arrival-scale", gen_opts.arrival_scale,
                    "compress (>1) or stretch (<1) arrival times");
    double max_slowdown_flag = 0.0;
    auto* msd = gen->add_option("--max-slowdown", max_slowdown_flag, "slowdown bound for all jobs");
    gen->add_option("--trace-out", gen_opts.out_file, "output trace path");

    auto* replay = app.add_subcommand("replay", "simulate one trace end to end");
    lora_fleet::ReplayOpts replay_opts;
    std::string policy_flag;
    replay->add_option("--trace", replay_opts.trace_file, "trace CSV to replay")->required();
    replay->add_option("--policy", policy_flag, "tlora | mlora_fifo | isolated");

    auto* sweep = app.add_subcommand("sweep", "cross-product ablation runs");
    lora_fleet::SweepOpts sweep_opts;
    sweep->add_option("--trace", sweep_opts.trace_file, "trace CSV (default: synthesize)");
    sweep->add_option("--axes", sweep_opts.axes, "axes to sweep: arrival, cluster, nano");
    sweep->add_option("--threads", sweep_opts.threads, "parallel simulations");

    auto* report = app.add_subcommand("report", "summarize a finished run directory");
    lora_fleet::ReportOpts report_opts;
    report->add_option("--run", report_opts.run_dir, "run or sweep output directory")->required();
    report->add_option("--format", report_opts.format, "table | csv | json");

    CLI11_PARSE(app, argc, argv);

    try {
        lora_fleet::RunConfig cfg;
        if (!config_path.empty()) cfg = lora_fleet::parse_config(config_path);
        else cfg.catalog = lora_fleet::builtin_catalog();
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;

        if (gen->parsed()) {
            if (msd->count() > 0) gen_opts.max_slowdown = max_slowdown_flag;
            lora_fleet::cmd_gen_trace(cfg, gen_opts);
        } else if (replay->parsed()) {
            if (!policy_flag.empty()) replay_opts.policy = lora_fleet::parse_policy(policy_flag);
            lora_fleet::cmd_replay(cfg, replay_opts);
        } else if (sweep->parsed()) {
            lora_fleet::cmd_sweep(cfg, sweep_opts);
        } else if (report->parsed()) {
            std::cout << lora_fleet::cmd_report(report_opts);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
