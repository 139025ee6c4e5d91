// Command-line entry point: theory verification, meta-training, adaptation,
// behavior cloning, and run comparison reports.

#include "apb/errors.hpp"
#include "apb/experiment.hpp"
#include "apb/theory_suite.hpp"

#include <CLI11.hpp>

#include <functional>
#include <future>
#include <iostream>
#include <optional>

namespace {

using namespace apb;

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
};

ExperimentConfig load_config(const CommonOptions& options) {
    ExperimentConfig cfg = options.config_path.empty()
                               ? ExperimentConfig::defaults()
                               : ExperimentConfig::from_file(options.config_path);
    for (const std::string& o : options.overrides) cfg.apply_override(o);
    return cfg;
}

std::vector<std::uint64_t> pick_seeds(const CommonOptions& options,
                                      const ExperimentConfig& cfg) {
    return options.seeds.empty() ? cfg.seeds() : options.seeds;
}

void add_common(CLI::App* cmd, CommonOptions& options) {
    cmd->add_option("--config", options.config_path, "JSON config file");
    cmd->add_option("--override", options.overrides,
                    "section.key=value overrides (repeatable)");
    cmd->add_option("--seed", options.seeds, "seed list (default: config seeds)");
    cmd->add_option("--jobs", options.jobs, "parallel seed workers");
}

ExploreProtocol parse_protocol(const std::string& name) {
    if (name == "action-noise") return ExploreProtocol::ActionNoise;
    if (name == "param-noise") return ExploreProtocol::ParamNoise;
    throw ValidationError("protocol must be action-noise or param-noise");
}

/// Runs one job per seed with at most `jobs` workers.
void for_each_seed(const std::vector<std::uint64_t>& seeds, int jobs,
                   const std::function<void(std::uint64_t)>& work) {
    if (jobs <= 1) {
        for (std::uint64_t seed : seeds) work(seed);
        return;
    }
    std::vector<std::future<void>> pending;
    std::size_t next = 0;
    while (next < seeds.size() || !pending.empty()) {
        while (next < seeds.size() && static_cast<int>(pending.size()) < jobs)
            pending.push_back(std::async(std::launch::async, work, seeds[next++]));
        pending.front().get();
        pending.erase(pending.begin());
    }
}

int run_verify_theory(const CommonOptions& options,
                      const std::vector<std::string>& scenarios, int trials,
                      std::optional<std::uint64_t> seed,
                      const std::string& report_path) {
    ExperimentConfig cfg = load_config(options);
    TheorySuiteOptions opts = cfg.theory_options();
    if (seed) opts.seed = *seed;
    if (trials > 0) opts.bound_trials = trials;
    opts.scenario_paths = scenarios;

    const std::vector<TheoryCheck> checks = run_theory_suite(opts);
    const std::string report = theory_report_jsonl(checks);
    if (!report_path.empty()) write_text_file(report_path, report);
    std::cout << report;
    const bool ok = all_pass(checks);
    std::cout << (ok ? "all checks passed" : "CHECK FAILURES PRESENT") << "\n";
    return ok ? 0 : 1;
}

struct RunLayout {
    std::filesystem::path dir;
    ExperimentRecord record;
};

RunLayout open_run(const ExperimentConfig& cfg, const std::string& command,
                   const std::string& method, const std::string& family,
                   const std::vector<std::uint64_t>& seeds) {
    RunLayout layout;
    layout.dir = make_run_dir(cfg.output_root(), command + "-" + family + "-" + method);
    write_text_file(layout.dir / "config.json", cfg.resolved_text());
    layout.record.run_id = layout.dir.filename().string();
    layout.record.command = command;
    layout.record.method = method;
    layout.record.family = family;
    layout.record.config_hash = cfg.hash();
    layout.record.revision = source_revision();
    layout.record.seeds = seeds;
    return layout;
}

int run_meta_train(const CommonOptions& options, const std::string& family_label) {
    ExperimentConfig cfg = load_config(options);
    const TaskFamily family = parse_family(family_label);
    const auto seeds = pick_seeds(options, cfg);
    RunLayout layout = open_run(cfg, "meta-train", "apb", family_label, seeds);

    std::vector<std::string> outcomes(seeds.size());
    std::vector<double> finals(seeds.size());
    for_each_seed(seeds, options.jobs, [&](std::uint64_t seed) {
        MetaTrainConfig mcfg = cfg.meta_train_config();
        mcfg.seed = seed;
        const MetaTrainResult result = meta_train(family, mcfg, cfg.actor_config(),
                                                  cfg.env_config(), cfg.td3_config());
        const auto seed_dir = layout.dir / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(seed_dir);
        write_text_file(seed_dir / "metrics.csv", metrics_csv(result.rows));
        Checkpoint ckpt = result.checkpoint;
        ckpt.config_hash = cfg.hash();
        save_checkpoint((seed_dir / "checkpoint.json").string(), ckpt);
        const std::size_t idx =
            std::find(seeds.begin(), seeds.end(), seed) - seeds.begin();
        outcomes[idx] = result.outcome;
        double mean = 0.0;
        for (double r : result.final_task_returns) mean += r;
        finals[idx] = result.final_task_returns.empty()
                          ? 0.0
                          : mean / result.final_task_returns.size();
    });

    layout.record.outcomes = outcomes;
    layout.record.final_returns = finals;
    write_record(layout.dir, layout.record);
    std::cout << "run directory: " << layout.dir.string() << "\n";
    const EvalSummary s = summarize(finals);
    std::cout << "final per-task return over seeds: mean " << s.mean << " +- "
              << s.stddev << "\n";
    return 0;
}

int run_adapt(const CommonOptions& options, const std::string& family_label,
              bool use_ood, double task_param, bool have_task_param,
              const std::string& backbone_path, bool baseline, bool random_init,
              const std::string& protocol_name) {
    ExperimentConfig cfg = load_config(options);
    const TaskFamily family = parse_family(family_label);
    TaskSpec task = ood_task(family);
    if (!use_ood) {
        if (!have_task_param) throw ValidationError("adapt: need --ood or --task-param");
        task = sample_train_tasks({family, 0}, 1)[0];
        task.param(0) = task_param; // explicit parameter on the family objective
        task.is_ood = !in_train_support(family, task);
    }

    std::optional<Checkpoint> backbone;
    if (!backbone_path.empty()) backbone = load_checkpoint(backbone_path);
    if (!baseline && !random_init && !backbone)
        throw ValidationError(
            "adapt: need --backbone, --random-init-backbone, or --baseline");

    const ExploreProtocol protocol = parse_protocol(protocol_name);
    const std::string method = baseline      ? "baseline"
                               : random_init ? "apb-random-init"
                                             : "apb";
    const auto seeds = pick_seeds(options, cfg);
    RunLayout layout =
        open_run(cfg, "adapt", method + "-" + protocol_name, family_label, seeds);

    std::vector<std::string> outcomes(seeds.size());
    std::vector<double> finals(seeds.size());
    for_each_seed(seeds, options.jobs, [&](std::uint64_t seed) {
        AdaptConfig acfg = cfg.adapt_config(family, protocol);
        acfg.seed = seed;
        acfg.freeze_backbone = !baseline;
        acfg.random_init_backbone = random_init;
        const AdaptResult result =
            run_adaptation(baseline ? std::nullopt : backbone, task, acfg,
                           cfg.actor_config(), cfg.env_config(), cfg.td3_config());
        const auto seed_dir = layout.dir / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(seed_dir);
        write_text_file(seed_dir / "metrics.csv", metrics_csv(result.rows));
        Checkpoint final_actor = result.final_actor;
        final_actor.config_hash = cfg.hash();
        save_checkpoint((seed_dir / "checkpoint.json").string(), final_actor);
        const std::size_t idx =
            std::find(seeds.begin(), seeds.end(), seed) - seeds.begin();
        outcomes[idx] = result.outcome;
        finals[idx] = result.final_eval_return;
    });

    layout.record.outcomes = outcomes;
    layout.record.final_returns = finals;
    layout.record.extra["task_param"] = {task.param(0), task.param(1)};
    layout.record.extra["ood"] = task.is_ood;
    write_record(layout.dir, layout.record);
    std::cout << "run directory: " << layout.dir.string() << "\n";
    const EvalSummary s = summarize(finals);
    std::cout << "final eval return: mean " << s.mean << " +- " << s.stddev << " (ci95 "
              << s.ci95 << ")\n";
    return 0;
}

int run_bc(const CommonOptions& options, const std::string& family_label,
           const std::string& backbone_path, const std::string& dataset_path,
           const std::string& mode_name) {
    ExperimentConfig cfg = load_config(options);
    const TaskFamily family = parse_family(family_label);
    const auto seeds = pick_seeds(options, cfg);

    BcDataset dataset;
    if (!dataset_path.empty()) {
        dataset = load_bc_dataset(dataset_path);
    } else {
        // Train an expert on the OOD task with the full-parameter setup, then
        // roll demonstrations from its best evaluation snapshot.
        std::cout << "no dataset given; training an expert first\n";
        AdaptConfig expert_cfg = cfg.adapt_config(family, ExploreProtocol::ActionNoise);
        expert_cfg.seed = 9090;
        expert_cfg.freeze_backbone = false;
        expert_cfg.snapshot_best = true;
        const AdaptResult expert =
            run_adaptation(std::nullopt, ood_task(family), expert_cfg,
                           cfg.actor_config(), cfg.env_config(), cfg.td3_config());
        Rng tmp(0);
        ApbActor expert_actor = ApbActor::init(cfg.actor_config(), tmp);
        load_actor(expert_actor,
                   expert.best_actor ? *expert.best_actor : expert.final_actor);
        dataset = collect_demonstrations(expert_actor, ood_task(family),
                                         cfg.env_config(),
                                         cfg.json().at("bc").at("n_pairs").get<int>(),
                                         7171);
    }

    const std::vector<BcMode> modes =
        mode_name == "apb-frozen"     ? std::vector<BcMode>{BcMode::ApbFrozen}
        : mode_name == "full-scratch" ? std::vector<BcMode>{BcMode::FullScratch}
                                      : std::vector<BcMode>{BcMode::ApbFrozen,
                                                            BcMode::FullScratch};

    std::optional<Checkpoint> backbone;
    if (!backbone_path.empty()) backbone = load_checkpoint(backbone_path);

    const int h_demo = cfg.json().at("bc").at("h_demo").get<int>();
    const int h_eval = cfg.json().at("bc").at("h_eval").get<int>();

    for (BcMode mode : modes) {
        const std::string method =
            mode == BcMode::ApbFrozen ? "bc-apb-frozen" : "bc-full-scratch";
        RunLayout layout = open_run(cfg, "bc", method, family_label, seeds);
        std::vector<std::string> outcomes(seeds.size());
        std::vector<double> finals(seeds.size());
        for_each_seed(seeds, options.jobs, [&](std::uint64_t seed) {
            BcConfig bcfg = cfg.bc_config(family);
            bcfg.seed = seed;
            const BcResult trained =
                bc_train(dataset, mode, backbone, cfg.actor_config(), bcfg);
            const EvalSummary eval =
                bc_eval(trained.actor, dataset.task, cfg.env_config(), h_eval, h_demo,
                        10, mix_seed(seed, 404));
            const std::size_t idx =
                std::find(seeds.begin(), seeds.end(), seed) - seeds.begin();
            outcomes[idx] = "completed";
            finals[idx] = eval.mean;
            const auto seed_dir = layout.dir / ("seed_" + std::to_string(seed));
            std::filesystem::create_directories(seed_dir);
            std::vector<MetricRow> rows;
            for (std::size_t e = 0; e < trained.loss_curve.size(); ++e) {
                MetricRow row;
                row.episode = static_cast<int>(e) + 1;
                row.env_steps = static_cast<long>(e) + 1;
                row.grad_steps = static_cast<long>(e) + 1;
                row.episode_return = eval.mean;
                row.critic_loss = trained.loss_curve[e];
                rows.push_back(row);
            }
            write_text_file(seed_dir / "metrics.csv", metrics_csv(rows));
        });
        layout.record.outcomes = outcomes;
        layout.record.final_returns = finals;
        write_record(layout.dir, layout.record);
        const EvalSummary s = summarize(finals);
        std::cout << method << ": mean return " << s.mean << " +- " << s.stddev
                  << " (ci95 " << s.ci95 << ") at horizon " << h_eval << "\n"
                  << "run directory: " << layout.dir.string() << "\n";
    }
    return 0;
}

int run_report(const std::vector<std::string>& dirs, const std::string& out_path) {
    std::vector<LoadedRun> runs;
    for (const std::string& d : dirs) runs.push_back(load_run(d));
    const std::string report = report_comparison(runs);
    if (!out_path.empty()) write_text_file(out_path, report);
    std::cout << report;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive policy backbone toolkit"};
    app.require_subcommand(1);

    CommonOptions verify_opts, meta_opts, adapt_opts, bc_opts;

    auto* verify =
        app.add_subcommand("verify-theory", "Run the exact verification suite");
    add_common(verify, verify_opts);
    std::vector<std::string> scenarios;
    int trials = 0;
    std::uint64_t verify_seed = 0;
    bool have_verify_seed = false;
    std::string report_path;
    verify->add_option("--scenario", scenarios, "extra MDP scenario files");
    verify->add_option("--trials", trials, "bound-trial count override");
    verify->add_option("--suite-seed", verify_seed, "suite seed override")
        ->each([&](const std::string&) { have_verify_seed = true; });
    verify->add_option("--report", report_path, "write the JSONL report here");

    auto* meta = app.add_subcommand("meta-train", "Train the shared trunk");
    add_common(meta, meta_opts);
    std::string meta_family;
    meta->add_option("--family", meta_family, "task family")->required();

    auto* adapt = app.add_subcommand("adapt", "Adapt to one task");
    add_common(adapt, adapt_opts);
    std::string adapt_family;
    bool use_ood = false, baseline = false, random_init = false;
    double task_param = 0.0;
    bool have_task_param = false;
    std::string backbone_path, protocol = "param-noise";
    adapt->add_option("--family", adapt_family, "task family")->required();
    adapt->add_flag("--ood", use_ood, "use the family's fixed out-of-distribution task");
    adapt->add_option("--task-param", task_param, "explicit task parameter")
        ->each([&](const std::string&) { have_task_param = true; });
    adapt->add_option("--backbone", backbone_path, "trunk checkpoint to load");
    adapt->add_flag("--baseline", baseline, "full-parameter run, nothing frozen");
    adapt->add_flag("--random-init-backbone", random_init,
                    "freeze a fresh random trunk instead of a trained one");
    adapt->add_option("--protocol", protocol, "action-noise or param-noise");

    auto* bc = app.add_subcommand("bc", "Behavior cloning on expert demonstrations");
    add_common(bc, bc_opts);
    std::string bc_family, bc_backbone, bc_dataset, bc_mode = "both";
    bc->add_option("--family", bc_family, "task family")->required();
    bc->add_option("--backbone", bc_backbone, "trunk checkpoint for the frozen mode");
    bc->add_option("--dataset", bc_dataset, "precollected demonstration file");
    bc->add_option("--mode", bc_mode, "apb-frozen, full-scratch, or both");

    auto* report = app.add_subcommand("report", "Compare finished runs");
    std::vector<std::string> report_dirs;
    std::string report_out;
    report->add_option("dirs", report_dirs, "run directories")->required();
    report->add_option("--out", report_out, "write the comparison here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed())
            return run_verify_theory(
                verify_opts, scenarios, trials,
                have_verify_seed ? std::optional<std::uint64_t>(verify_seed)
                                 : std::nullopt,
                report_path);
        if (meta->parsed()) return run_meta_train(meta_opts, meta_family);
        if (adapt->parsed())
            return run_adapt(adapt_opts, adapt_family, use_ood, task_param,
                             have_task_param, backbone_path, baseline, random_init,
                             protocol);
        if (bc->parsed())
            return run_bc(bc_opts, bc_family, bc_backbone, bc_dataset, bc_mode);
        if (report->parsed()) return run_report(report_dirs, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
