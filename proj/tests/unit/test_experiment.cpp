#include <doctest.h>

#include "apb/errors.hpp"
#include "apb/experiment.hpp"

#include <cstdlib>
#include <filesystem>

using namespace apb;

namespace {

std::vector<MetricRow> fake_rows(int n, double base_return) {
    std::vector<MetricRow> rows;
    for (int i = 1; i <= n; ++i) {
        MetricRow r;
        r.episode = i;
        r.env_steps = 100L * i;
        r.grad_steps = 10L * i;
        r.episode_return = base_return + i;
        r.actor_loss = -0.1 * i;
        r.critic_loss = 0.2 * i;
        r.reset = (i % 5 == 0) ? 1 : 0;
        rows.push_back(r);
    }
    return rows;
}

} // namespace

TEST_CASE("metrics csv round-trips and rejects foreign versions") {
    const auto rows = fake_rows(7, -50.0);
    const std::string text = metrics_csv(rows);
    const auto parsed = parse_metrics_csv(text);
    REQUIRE(parsed.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(parsed[i].episode == rows[i].episode);
        CHECK(parsed[i].env_steps == rows[i].env_steps);
        CHECK(parsed[i].episode_return == rows[i].episode_return);
        CHECK(parsed[i].reset == rows[i].reset);
    }
    CHECK(metrics_csv(parsed) == text);

    std::string foreign = text;
    foreign.replace(0, 17, "# apb-metrics-v9\n");
    CHECK_THROWS_AS(parse_metrics_csv(foreign), ValidationError);
}

TEST_CASE("metrics csv rejects non-monotone env steps") {
    auto rows = fake_rows(3, 0.0);
    rows[2].env_steps = 50;
    CHECK_THROWS_AS(parse_metrics_csv(metrics_csv(rows)), ValidationError);
}

TEST_CASE("config defaults carry the documented adaptation table") {
    const ExperimentConfig cfg = ExperimentConfig::defaults();
    const AdaptConfig vel = cfg.adapt_config(TaskFamily::VelLine,
                                             ExploreProtocol::ParamNoise);
    CHECK(vel.reset_every == 15);
    CHECK(vel.explore.sigma == 0.005);
    CHECK(vel.init_scale == 0.001);
    CHECK(vel.updates_per_cycle == 2000);
    CHECK(vel.batch_size == 512);
    CHECK(vel.buffer_capacity == 200000);
    CHECK(vel.actor_lr == 1e-4);
    CHECK(vel.critic_lr == 0.05);

    const AdaptConfig goal = cfg.adapt_config(TaskFamily::GoalPlane,
                                              ExploreProtocol::ParamNoise);
    CHECK(goal.reset_every == 25);
    CHECK(goal.explore.sigma == 0.006);

    const AdaptConfig dir = cfg.adapt_config(TaskFamily::DirPlane,
                                             ExploreProtocol::ParamNoise);
    CHECK(dir.updates_per_cycle == 1000);
    CHECK(dir.init_scale == 0.07);

    CHECK(cfg.meta_train_config().n_tasks == 30);
    CHECK(cfg.bc_config(TaskFamily::DynRand).lr == 1e-4);
    CHECK(cfg.bc_config(TaskFamily::VelLine).batch_size == 2048);
}

TEST_CASE("config rejects unknown keys, listing them") {
    try {
        ExperimentConfig::from_json_text(R"({"adapt": {"unknown_knob": 3}})");
        FAIL("expected rejection");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("adapt.unknown_knob") != std::string::npos);
    }
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"), ValidationError);
}

TEST_CASE("config overrides: defaults are a no-op, unknown keys refuse") {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    const std::string before = cfg.resolved_text();
    cfg.apply_override("adapt.actor_lr=1e-4");
    cfg.apply_override("adapt.critic_lr=0.05");
    CHECK(cfg.resolved_text() == before);

    cfg.apply_override("adapt.critic_lr=0.001");
    CHECK(cfg.adapt_config(TaskFamily::VelLine, ExploreProtocol::ActionNoise).critic_lr ==
          0.001);
    CHECK_THROWS_AS(cfg.apply_override("adapt.not_a_key=1"), ValidationError);
    CHECK_THROWS_AS(cfg.apply_override("nonsense"), ValidationError);
}

TEST_CASE("resolved config re-parses to an identical document") {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    cfg.apply_override("meta_train.max_cycles=12");
    const ExperimentConfig reparsed =
        ExperimentConfig::from_json_text(cfg.resolved_text());
    CHECK(reparsed.resolved_text() == cfg.resolved_text());
    CHECK(reparsed.hash() == cfg.hash());
}

TEST_CASE("run directories never collide or overwrite") {
    const auto root = std::filesystem::temp_directory_path() / "apb_runs_test";
    std::filesystem::remove_all(root);
    const auto a = make_run_dir(root, "adapt-vel-line");
    write_text_file(a / "marker.txt", "a");
    const auto b = make_run_dir(root, "adapt-vel-line");
    CHECK(a != b);
    CHECK(std::filesystem::exists(a / "marker.txt"));
    std::filesystem::remove_all(root);
}

TEST_CASE("records and runs round-trip through the filesystem") {
    const auto root = std::filesystem::temp_directory_path() / "apb_record_test";
    std::filesystem::remove_all(root);
    const auto dir = make_run_dir(root, "adapt-test");

    ExperimentRecord record;
    record.run_id = dir.filename().string();
    record.command = "adapt";
    record.method = "apb";
    record.family = "vel-line";
    record.config_hash = "deadbeef";
    record.revision = source_revision();
    record.seeds = {0, 1};
    record.outcomes = {"completed", "completed"};
    record.final_returns = {-10.0, -12.0};
    write_record(dir, record);

    for (std::uint64_t seed : record.seeds) {
        const auto seed_dir = dir / ("seed_" + std::to_string(seed));
        std::filesystem::create_directories(seed_dir);
        write_text_file(seed_dir / "metrics.csv", metrics_csv(fake_rows(5, -30.0)));
    }

    const LoadedRun run = load_run(dir);
    CHECK(run.record.method == "apb");
    CHECK(run.per_seed_rows.size() == 2);

    CHECK_THROWS_AS(load_run(root / "missing"), ValidationError);
    std::filesystem::remove_all(root);
}

TEST_CASE("report: single run summarizes itself; mixed families refuse") {
    LoadedRun run;
    run.record.run_id = "r0";
    run.record.method = "apb";
    run.record.family = "vel-line";
    run.record.seeds = {0, 1};
    run.record.final_returns = {-5.0, -7.0};
    run.per_seed_rows = {fake_rows(6, -40.0), fake_rows(6, -42.0)};

    const std::string report = report_comparison({run}, 10);
    CHECK(report.find("family: vel-line") != std::string::npos);
    CHECK(report.find("final_return_mean=-6") != std::string::npos);

    LoadedRun other = run;
    other.record.family = "goal-plane";
    CHECK_THROWS_AS(report_comparison({run, other}, 10), ValidationError);
    CHECK_THROWS_AS(report_comparison({}, 10), ValidationError);
}

TEST_CASE("report: paired runs get a verdict line") {
    LoadedRun apb;
    apb.record.run_id = "r1";
    apb.record.method = "apb";
    apb.record.family = "vel-line";
    apb.record.seeds = {0};
    apb.record.final_returns = {-5.0};
    apb.per_seed_rows = {fake_rows(6, -40.0)};

    LoadedRun baseline = apb;
    baseline.record.run_id = "r2";
    baseline.record.method = "baseline";
    baseline.record.final_returns = {-9.0};

    const std::string report = report_comparison({apb, baseline}, 5);
    CHECK(report.find("verdict vel-line:") != std::string::npos);
    CHECK(report.find("-> apb") != std::string::npos);
}

TEST_CASE("output root honors the environment variable") {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    ::setenv("APB_OUT_ROOT", "/tmp/apb_env_root", 1);
    CHECK(cfg.output_root() == "/tmp/apb_env_root");
    ::unsetenv("APB_OUT_ROOT");
    CHECK(cfg.output_root() == "runs");
}
