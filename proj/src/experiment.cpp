#include "apb/experiment.hpp"

#include "apb/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef APB_REVISION
#define APB_REVISION "unknown"
#endif

namespace apb {

namespace {

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out;
    out += "# ";
    out += kMetricsVersion;
    out += "\nepisode,env_steps,grad_steps,return,actor_loss,critic_loss,reset\n";
    for (const MetricRow& r : rows) {
        out += std::to_string(r.episode);
        out += ',';
        out += std::to_string(r.env_steps);
        out += ',';
        out += std::to_string(r.grad_steps);
        out += ',';
        out += fmt_double(r.episode_return);
        out += ',';
        out += fmt_double(r.actor_loss);
        out += ',';
        out += fmt_double(r.critic_loss);
        out += ',';
        out += std::to_string(r.reset);
        out += '\n';
    }
    return out;
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != std::string("# ") + kMetricsVersion)
        throw ValidationError("metrics csv: unknown or missing version tag");
    if (!std::getline(in, line) ||
        line != "episode,env_steps,grad_steps,return,actor_loss,critic_loss,reset")
        throw ValidationError("metrics csv: unexpected header row");
    std::vector<MetricRow> rows;
    long prev_env_steps = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricRow r;
        char* end = nullptr;
        const char* p = line.c_str();
        auto next_field = [&](bool last = false) {
            const double v = std::strtod(p, &end);
            if (end == p || (!last && *end != ',') || (last && *end != '\0'))
                throw ValidationError("metrics csv: malformed row: " + line);
            p = last ? end : end + 1;
            return v;
        };
        r.episode = static_cast<int>(next_field());
        r.env_steps = static_cast<long>(next_field());
        r.grad_steps = static_cast<long>(next_field());
        r.episode_return = next_field();
        r.actor_loss = next_field();
        r.critic_loss = next_field();
        r.reset = static_cast<int>(next_field(true));
        if (r.env_steps < prev_env_steps)
            throw ValidationError("metrics csv: env_steps not monotone");
        prev_env_steps = r.env_steps;
        rows.push_back(r);
    }
    return rows;
}

// --- configuration -------------------------------------------------------------

namespace {

OrderedJson default_family_adapt(double parameter_noise, double action_noise,
                                 double init_scale, int reset_every,
                                 int updates_per_cycle) {
    return OrderedJson{{"parameter_noise", parameter_noise},
                       {"action_noise", action_noise},
                       {"init_scale", init_scale},
                       {"reset_every", reset_every},
                       {"updates_per_cycle", updates_per_cycle}};
}

OrderedJson default_config_json() {
    OrderedJson j;
    j["env"] = {{"mass", 0.2},          {"damping", 0.5},
                {"dt", 0.05},           {"horizon", 100},
                {"action_bound", 1.0},  {"control_cost", 0.01},
                {"init_pos_range", 0.25}, {"init_vel_range", 0.25}};
    j["actor"] = {{"backbone_dims", {64, 64, 64, 64}},
                  {"activation", "relu"},
                  {"backbone_init_scale", 1.0}};
    j["td3"] = {{"gamma", 0.99},          {"tau", 0.005},
                {"policy_delay", 2},      {"smoothing_sigma", 0.2},
                {"smoothing_clip", 0.5},  {"critic_hidden", {64, 64}}};
    j["meta_train"] = {{"n_tasks", 30},
                       {"actor_lr", 1e-4},
                       {"critic_lr", 0.05},
                       {"episodes_per_task_per_cycle", 10},
                       {"updates_per_task_per_cycle", 2000},
                       {"batch_size", 512},
                       {"buffer_capacity", 200000},
                       {"warmup_steps", 1000},
                       {"explore_protocol", "action-noise"},
                       {"explore_sigma", 0.1},
                       {"plateau_tol", 0.01},
                       {"plateau_window", 20},
                       {"max_cycles", 60}};
    j["adapt"] = {{"actor_lr", 1e-4},
                  {"critic_lr", 0.05},
                  {"batch_size", 512},
                  {"buffer_capacity", 200000},
                  {"episodes_per_cycle", 10},
                  {"total_episodes", 100},
                  {"warmup_steps", 1000},
                  {"eval_rollouts", 5},
                  {"families",
                   {{"vel-line", default_family_adapt(0.005, 0.1, 0.001, 15, 2000)},
                    {"vel-to-dir", default_family_adapt(0.00008, 0.1, 0.001, 10, 1000)},
                    {"goal-plane", default_family_adapt(0.006, 0.1, 0.001, 25, 2000)},
                    {"dir-plane", default_family_adapt(0.00075, 0.1, 0.07, 10, 1000)},
                    {"dyn-rand", default_family_adapt(0.007, 0.1, 0.1, 10, 2000)}}}};
    j["bc"] = {{"n_pairs", 100000},
               {"batch_size", 2048},
               {"epochs", 8},
               {"h_demo", 100},
               {"h_eval", 300},
               {"families",
                {{"vel-line", {{"lr", 1e-3}}},
                 {"vel-to-dir", {{"lr", 1e-3}}},
                 {"goal-plane", {{"lr", 1e-3}}},
                 {"dir-plane", {{"lr", 1e-3}}},
                 {"dyn-rand", {{"lr", 1e-4}}}}}};
    j["theory"] = {{"seed", 0},
                   {"decomposition_instances", 100},
                   {"transport_pairs", 50},
                   {"bound_trials", 100}};
    j["seeds"] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    j["output_root"] = "runs";
    return j;
}

void check_keys(const OrderedJson& value, const OrderedJson& schema,
                const std::string& prefix, std::vector<std::string>& offending) {
    if (!value.is_object() || !schema.is_object()) return;
    for (const auto& [key, sub] : value.items()) {
        if (!schema.contains(key)) {
            offending.push_back(prefix.empty() ? key : prefix + "." + key);
        } else {
            check_keys(sub, schema.at(key), prefix.empty() ? key : prefix + "." + key,
                       offending);
        }
    }
}

void merge_into(OrderedJson& base, const OrderedJson& update) {
    for (const auto& [key, sub] : update.items()) {
        if (base.contains(key) && base.at(key).is_object() && sub.is_object())
            merge_into(base.at(key), sub);
        else
            base[key] = sub;
    }
}

} // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig cfg;
    cfg.root_ = default_config_json();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    OrderedJson user;
    try {
        user = OrderedJson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: bad JSON: ") + e.what());
    }
    ExperimentConfig cfg = defaults();
    std::vector<std::string> offending;
    check_keys(user, cfg.root_, "", offending);
    if (!offending.empty()) {
        std::string msg = "config: unknown keys:";
        for (const std::string& k : offending) msg += " " + k;
        throw ValidationError(msg);
    }
    merge_into(cfg.root_, user);
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

void ExperimentConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ValidationError("override must look like section.key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    OrderedJson value;
    try {
        value = OrderedJson::parse(value_text);
    } catch (const nlohmann::json::exception&) {
        value = value_text; // plain string
    }

    std::vector<std::string> parts;
    std::istringstream ps(path);
    std::string part;
    while (std::getline(ps, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ValidationError("override: empty key path");

    OrderedJson* node = &root_;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i]))
            throw ValidationError("override: unknown key " + path);
        node = &node->at(parts[i]);
    }
    if (!node->contains(parts.back()))
        throw ValidationError("override: unknown key " + path);
    (*node)[parts.back()] = value;
    validate();
}

void ExperimentConfig::validate() const {
    std::vector<std::string> offending;
    check_keys(root_, default_config_json(), "", offending);
    if (!offending.empty()) {
        std::string msg = "config: unknown keys:";
        for (const std::string& k : offending) msg += " " + k;
        throw ValidationError(msg);
    }
}

std::string ExperimentConfig::resolved_text() const { return root_.dump(2) + "\n"; }

std::string ExperimentConfig::hash() const {
    const std::string text = resolved_text();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PointMassConfig ExperimentConfig::env_config() const {
    const auto& e = root_.at("env");
    PointMassConfig cfg;
    cfg.mass = e.at("mass").get<double>();
    cfg.damping = e.at("damping").get<double>();
    cfg.dt = e.at("dt").get<double>();
    cfg.horizon = e.at("horizon").get<int>();
    cfg.action_bound = e.at("action_bound").get<double>();
    cfg.control_cost = e.at("control_cost").get<double>();
    cfg.init_pos_range = e.at("init_pos_range").get<double>();
    cfg.init_vel_range = e.at("init_vel_range").get<double>();
    return cfg;
}

ActorConfig ExperimentConfig::actor_config() const {
    const auto& a = root_.at("actor");
    ActorConfig cfg;
    cfg.state_dim = 4;
    cfg.action_dim = 2;
    cfg.backbone_dims = a.at("backbone_dims").get<std::vector<int>>();
    const std::string act = a.at("activation").get<std::string>();
    if (act == "relu")
        cfg.backbone_activation = Activation::Relu;
    else if (act == "tanh")
        cfg.backbone_activation = Activation::Tanh;
    else
        throw ValidationError("actor.activation must be relu or tanh");
    cfg.backbone_init_scale = a.at("backbone_init_scale").get<double>();
    cfg.action_bound = root_.at("env").at("action_bound").get<double>();
    return cfg;
}

Td3Config ExperimentConfig::td3_config() const {
    const auto& t = root_.at("td3");
    Td3Config cfg;
    cfg.gamma = t.at("gamma").get<double>();
    cfg.tau = t.at("tau").get<double>();
    cfg.policy_delay = t.at("policy_delay").get<int>();
    cfg.smoothing_sigma = t.at("smoothing_sigma").get<double>();
    cfg.smoothing_clip = t.at("smoothing_clip").get<double>();
    cfg.critic_hidden = t.at("critic_hidden").get<std::vector<int>>();
    return cfg;
}

MetaTrainConfig ExperimentConfig::meta_train_config() const {
    const auto& m = root_.at("meta_train");
    MetaTrainConfig cfg;
    cfg.n_tasks = m.at("n_tasks").get<int>();
    cfg.actor_lr = m.at("actor_lr").get<double>();
    cfg.critic_lr = m.at("critic_lr").get<double>();
    cfg.episodes_per_task_per_cycle = m.at("episodes_per_task_per_cycle").get<int>();
    cfg.updates_per_task_per_cycle = m.at("updates_per_task_per_cycle").get<int>();
    cfg.batch_size = m.at("batch_size").get<int>();
    cfg.buffer_capacity = m.at("buffer_capacity").get<int>();
    cfg.warmup_steps = m.at("warmup_steps").get<int>();
    const std::string proto = m.at("explore_protocol").get<std::string>();
    if (proto == "action-noise")
        cfg.explore.protocol = ExploreProtocol::ActionNoise;
    else if (proto == "param-noise")
        cfg.explore.protocol = ExploreProtocol::ParamNoise;
    else
        throw ValidationError("meta_train.explore_protocol must be action-noise or "
                              "param-noise");
    cfg.explore.sigma = m.at("explore_sigma").get<double>();
    cfg.plateau_tol = m.at("plateau_tol").get<double>();
    cfg.plateau_window = m.at("plateau_window").get<int>();
    cfg.max_cycles = m.at("max_cycles").get<int>();
    return cfg;
}

double ExperimentConfig::explore_sigma(TaskFamily family,
                                       ExploreProtocol protocol) const {
    const auto& fam = root_.at("adapt").at("families").at(family_name(family));
    return protocol == ExploreProtocol::ParamNoise
               ? fam.at("parameter_noise").get<double>()
               : fam.at("action_noise").get<double>();
}

AdaptConfig ExperimentConfig::adapt_config(TaskFamily family,
                                           ExploreProtocol protocol) const {
    const auto& a = root_.at("adapt");
    const auto& fam = a.at("families").at(family_name(family));
    AdaptConfig cfg;
    cfg.explore.protocol = protocol;
    cfg.explore.sigma = explore_sigma(family, protocol);
    cfg.reset_every = fam.at("reset_every").get<int>();
    cfg.init_scale = fam.at("init_scale").get<double>();
    cfg.updates_per_cycle = fam.at("updates_per_cycle").get<int>();
    cfg.episodes_per_cycle = a.at("episodes_per_cycle").get<int>();
    cfg.total_episodes = a.at("total_episodes").get<int>();
    cfg.batch_size = a.at("batch_size").get<int>();
    cfg.buffer_capacity = a.at("buffer_capacity").get<int>();
    cfg.actor_lr = a.at("actor_lr").get<double>();
    cfg.critic_lr = a.at("critic_lr").get<double>();
    cfg.warmup_steps = a.at("warmup_steps").get<int>();
    cfg.eval_rollouts = a.at("eval_rollouts").get<int>();
    return cfg;
}

BcConfig ExperimentConfig::bc_config(TaskFamily family) const {
    const auto& b = root_.at("bc");
    BcConfig cfg;
    cfg.lr = b.at("families").at(family_name(family)).at("lr").get<double>();
    cfg.batch_size = b.at("batch_size").get<int>();
    cfg.epochs = b.at("epochs").get<int>();
    return cfg;
}

TheorySuiteOptions ExperimentConfig::theory_options() const {
    const auto& t = root_.at("theory");
    TheorySuiteOptions opts;
    opts.seed = t.at("seed").get<std::uint64_t>();
    opts.decomposition_instances = t.at("decomposition_instances").get<int>();
    opts.transport_pairs = t.at("transport_pairs").get<int>();
    opts.bound_trials = t.at("bound_trials").get<int>();
    return opts;
}

std::vector<std::uint64_t> ExperimentConfig::seeds() const {
    return root_.at("seeds").get<std::vector<std::uint64_t>>();
}

std::string ExperimentConfig::output_root() const {
    if (const char* env = std::getenv("APB_OUT_ROOT"); env && *env) return env;
    return root_.at("output_root").get<std::string>();
}

// --- run directories ------------------------------------------------------------

std::filesystem::path make_run_dir(const std::filesystem::path& root,
                                   const std::string& prefix) {
    std::filesystem::create_directories(root);
    for (int k = 0;; ++k) {
        std::filesystem::path candidate = root / (prefix + "-" + std::to_string(k));
        if (!std::filesystem::exists(candidate)) {
            std::filesystem::create_directories(candidate);
            return candidate;
        }
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path.string());
    out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string source_revision() { return APB_REVISION; }

OrderedJson ExperimentRecord::to_json() const {
    OrderedJson j;
    j["run_id"] = run_id;
    j["command"] = command;
    j["method"] = method;
    j["family"] = family;
    j["config_hash"] = config_hash;
    j["revision"] = revision;
    j["seeds"] = seeds;
    j["outcomes"] = outcomes;
    j["final_returns"] = final_returns;
    j["extra"] = extra;
    return j;
}

ExperimentRecord ExperimentRecord::from_json(const OrderedJson& j) {
    ExperimentRecord r;
    r.run_id = j.value("run_id", "");
    r.command = j.value("command", "");
    r.method = j.value("method", "");
    r.family = j.value("family", "");
    r.config_hash = j.value("config_hash", "");
    r.revision = j.value("revision", "");
    r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    r.outcomes = j.value("outcomes", std::vector<std::string>{});
    r.final_returns = j.value("final_returns", std::vector<double>{});
    if (j.contains("extra")) r.extra = j.at("extra");
    return r;
}

void write_record(const std::filesystem::path& run_dir, const ExperimentRecord& record) {
    write_text_file(run_dir / "run.json", record.to_json().dump(2) + "\n");
}

ExperimentRecord read_record(const std::filesystem::path& run_dir) {
    const std::string text = read_text_file(run_dir / "run.json");
    try {
        return ExperimentRecord::from_json(OrderedJson::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("run.json: bad JSON: " + std::string(e.what()));
    }
}

LoadedRun load_run(const std::filesystem::path& run_dir) {
    LoadedRun run;
    run.dir = run_dir;
    if (!std::filesystem::exists(run_dir / "run.json"))
        throw ValidationError("not a run directory (missing run.json): " +
                              run_dir.string());
    run.record = read_record(run_dir);
    for (std::uint64_t seed : run.record.seeds) {
        const auto csv = run_dir / ("seed_" + std::to_string(seed)) / "metrics.csv";
        if (std::filesystem::exists(csv))
            run.per_seed_rows.push_back(parse_metrics_csv(read_text_file(csv)));
    }
    return run;
}

namespace {

double interpolate_return(const std::vector<MetricRow>& rows, double env_step) {
    if (rows.empty()) return 0.0;
    if (env_step <= rows.front().env_steps) return rows.front().episode_return;
    if (env_step >= rows.back().env_steps) return rows.back().episode_return;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].env_steps >= env_step) {
            const double x0 = static_cast<double>(rows[i - 1].env_steps);
            const double x1 = static_cast<double>(rows[i].env_steps);
            const double t = x1 > x0 ? (env_step - x0) / (x1 - x0) : 1.0;
            return rows[i - 1].episode_return +
                   t * (rows[i].episode_return - rows[i - 1].episode_return);
        }
    }
    return rows.back().episode_return;
}

} // namespace

std::string report_comparison(const std::vector<LoadedRun>& runs, int grid_points) {
    if (runs.empty()) throw ValidationError("report: no runs given");
    const std::string family = runs.front().record.family;
    for (const LoadedRun& run : runs)
        if (run.record.family != family)
            throw ValidationError("report: runs mix families " + family + " and " +
                                  run.record.family);

    std::ostringstream out;
    out << "family: " << family << "\n";

    long max_steps = 1;
    for (const LoadedRun& run : runs)
        for (const auto& rows : run.per_seed_rows)
            if (!rows.empty()) max_steps = std::max(max_steps, rows.back().env_steps);

    for (const LoadedRun& run : runs) {
        const EvalSummary final_summary = summarize(run.record.final_returns);
        out << "run " << run.record.run_id << " method=" << run.record.method
            << " seeds=" << run.record.seeds.size() << " final_return_mean="
            << fmt_double(final_summary.mean) << " std=" << fmt_double(final_summary.stddev)
            << " ci95=" << fmt_double(final_summary.ci95) << "\n";
    }

    // Mean learning curves on the common env-step grid.
    out << "env_steps";
    for (const LoadedRun& run : runs) out << "," << run.record.method << "_mean_return";
    out << "\n";
    for (int g = 1; g <= grid_points; ++g) {
        const double step = max_steps * static_cast<double>(g) / grid_points;
        out << static_cast<long>(step);
        for (const LoadedRun& run : runs) {
            double total = 0.0;
            int count = 0;
            for (const auto& rows : run.per_seed_rows) {
                if (rows.empty()) continue;
                total += interpolate_return(rows, step);
                count += 1;
            }
            out << "," << fmt_double(count ? total / count : 0.0);
        }
        out << "\n";
    }

    // Pairwise verdicts on mean final return.
    for (std::size_t i = 0; i < runs.size(); ++i) {
        for (std::size_t j = i + 1; j < runs.size(); ++j) {
            const double mi = summarize(runs[i].record.final_returns).mean;
            const double mj = summarize(runs[j].record.final_returns).mean;
            const LoadedRun& better = mi >= mj ? runs[i] : runs[j];
            out << "verdict " << family << ": " << runs[i].record.method << " ("
                << fmt_double(mi) << ") vs " << runs[j].record.method << " ("
                << fmt_double(mj) << ") -> " << better.record.method << "\n";
        }
    }
    return out.str();
}

} // namespace apb
