#include "apb/runner.hpp"

#include "apb/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace apb {

namespace {

PolicyFn deterministic_policy(const ApbActor& actor) {
    return [&actor](const Vector& state) { return act(actor, state); };
}

PolicyFn uniform_random_policy(const PointMassConfig& env_config, Rng& rng) {
    return [&env_config, &rng](const Vector&) {
        Vector a(2);
        a(0) = rng.uniform(-env_config.action_bound, env_config.action_bound);
        a(1) = rng.uniform(-env_config.action_bound, env_config.action_bound);
        return a;
    };
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

} // namespace

double evaluate_actor(const ApbActor& actor, const TaskSpec& task,
                      const PointMassConfig& env_config, int n_rollouts,
                      std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (int i = 0; i < n_rollouts; ++i) {
        PointMassEnv env(env_config, task);
        Rng episode_rng = rng.fork(i);
        total += rollout(env, deterministic_policy(actor), episode_rng).total_return;
    }
    return total / n_rollouts;
}

double zero_policy_return(const TaskSpec& task, const PointMassConfig& env_config,
                          int n_rollouts, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    const PolicyFn zero = [](const Vector&) { return Vector::Zero(2); };
    for (int i = 0; i < n_rollouts; ++i) {
        PointMassEnv env(env_config, task);
        Rng episode_rng = rng.fork(i);
        total += rollout(env, zero, episode_rng).total_return;
    }
    return total / n_rollouts;
}

// --- meta-training -----------------------------------------------------------

MetaTrainer::MetaTrainer(TaskFamily family, const MetaTrainConfig& config,
                         const ActorConfig& actor_config,
                         const PointMassConfig& env_config, const Td3Config& td3_config)
    : config_(config), env_config_(env_config) {
    if (config.n_tasks < 1) throw StructuralError("meta_train: n_tasks must be >= 1");
    tasks_ = sample_train_tasks({family, mix_seed(config.seed, 100)}, config.n_tasks);

    Rng master(config.seed);
    Rng trunk_rng = master.fork(1);
    ApbActor template_actor = ApbActor::init(actor_config, trunk_rng);
    template_actor.freeze_backbone = true; // per-task steps never touch the trunk
    backbone_ = template_actor.backbone;

    Td3Config td3 = td3_config;
    td3.actor_lr = config.actor_lr;
    td3.critic_lr = config.critic_lr;

    for (int i = 0; i < config.n_tasks; ++i) {
        Rng task_rng = master.fork(1000 + i);
        ApbActor actor = reset_task_parameters(template_actor, task_rng.seed());
        Rng agent_rng = task_rng.fork(1);
        agents_.push_back(Td3Agent::init(std::move(actor), td3, agent_rng));
        buffers_.emplace_back(config.buffer_capacity);
        envs_.emplace_back(env_config, tasks_[i]);
        task_rngs_.push_back(task_rng.fork(2));
    }
    opt_backbone_ = AdamState::init(parameter_count(backbone_), config.actor_lr);
    last_task_returns_.assign(config.n_tasks, 0.0);
    env_steps_per_task_.assign(config.n_tasks, 0);
}

Batch MetaTrainer::sample_task_batch(int task) {
    return assemble_batch(buffers_[task],
                          buffers_[task].sample_indices(config_.batch_size,
                                                        task_rngs_[task]));
}

Vector MetaTrainer::backbone_gradient(int task, const Batch& batch) const {
    return actor_loss(agents_[task], batch).grads.backbone;
}

void MetaTrainer::apply_backbone_step(const std::vector<Vector>& per_task_gradients) {
    if (per_task_gradients.empty())
        throw StructuralError("apply_backbone_step: no gradients");
    Vector mean = Vector::Zero(per_task_gradients[0].size());
    for (const Vector& g : per_task_gradients) mean += g;
    mean /= static_cast<double>(per_task_gradients.size());
    unflatten(backbone_, adam_step(opt_backbone_, flatten(backbone_), mean));
    sync_backbone();
}

void MetaTrainer::sync_backbone() {
    for (Td3Agent& agent : agents_) {
        agent.actor.backbone = backbone_;
        agent.actor_target.backbone = backbone_;
    }
}

double MetaTrainer::run_cycle() {
    std::vector<double> cycle_returns(n_tasks(), 0.0);
    for (int i = 0; i < n_tasks(); ++i) {
        Td3Agent& agent = agents_[i];
        double task_return = 0.0;
        for (int ep = 0; ep < config_.episodes_per_task_per_cycle; ++ep) {
            Rng& rng = task_rngs_[i];
            const bool warming =
                env_steps_per_task_[i] < static_cast<long>(config_.warmup_steps);
            RolloutResult result;
            if (warming) {
                PolicyFn policy = uniform_random_policy(env_config_, rng);
                result = rollout(envs_[i], policy, rng);
            } else {
                Explorer explorer(agent.actor, config_.explore.protocol,
                                  config_.explore.sigma, rng);
                PolicyFn policy = [&explorer, &rng](const Vector& s) {
                    return explorer.select(s, rng);
                };
                result = rollout(envs_[i], policy, rng);
            }
            for (std::size_t t = 0; t < result.actions.size(); ++t) {
                Transition tr;
                tr.state = result.states[t];
                tr.action = result.actions[t];
                tr.reward = result.rewards[t];
                tr.next_state = result.states[t + 1];
                tr.done = false; // horizon truncation bootstraps through
                buffers_[i].push(std::move(tr));
            }
            const long steps = static_cast<long>(result.actions.size());
            env_steps_ += steps;
            env_steps_per_task_[i] += steps;
            task_return += result.total_return;
        }
        task_return /= config_.episodes_per_task_per_cycle;
        cycle_returns[i] = task_return;

        if (buffers_[i].size() >= config_.batch_size) {
            const UpdateMetrics metrics =
                update_cycle(agent, buffers_[i], config_.updates_per_task_per_cycle,
                             config_.batch_size, task_rngs_[i]);
            grad_steps_ += metrics.critic_updates + metrics.actor_updates;
        }
    }

    // Shared-trunk step on fresh batches, after the per-task updates.
    bool all_ready = true;
    for (int i = 0; i < n_tasks(); ++i)
        all_ready &= buffers_[i].size() >= config_.batch_size;
    if (all_ready) {
        std::vector<Vector> grads;
        grads.reserve(n_tasks());
        for (int i = 0; i < n_tasks(); ++i)
            grads.push_back(backbone_gradient(i, sample_task_batch(i)));
        apply_backbone_step(grads);
        grad_steps_ += 1;
    }

    last_task_returns_ = cycle_returns;
    return mean_of(cycle_returns);
}

MetaTrainResult meta_train(TaskFamily family, const MetaTrainConfig& config,
                           const ActorConfig& actor_config,
                           const PointMassConfig& env_config,
                           const Td3Config& td3_config) {
    MetaTrainResult result;
    try {
        MetaTrainer trainer(family, config, actor_config, env_config, td3_config);
        result.tasks = trainer.tasks();
        std::vector<double> cycle_returns;
        for (int cycle = 0; cycle < config.max_cycles; ++cycle) {
            const double mean_return = trainer.run_cycle();
            cycle_returns.push_back(mean_return);
            MetricRow row;
            row.episode = cycle + 1;
            row.env_steps = trainer.env_steps();
            row.grad_steps = trainer.grad_steps();
            row.episode_return = mean_return;
            result.rows.push_back(row);
            result.cycles = cycle + 1;

            const int w = config.plateau_window;
            if (static_cast<int>(cycle_returns.size()) >= 2 * w) {
                const auto recent_begin = cycle_returns.end() - w;
                const auto prev_begin = cycle_returns.end() - 2 * w;
                const double recent =
                    mean_of(std::vector<double>(recent_begin, cycle_returns.end()));
                const double previous =
                    mean_of(std::vector<double>(prev_begin, recent_begin));
                const double improvement =
                    (recent - previous) / std::max(std::abs(previous), 1e-12);
                if (improvement < config.plateau_tol) break;
            }
        }
        result.final_task_returns = trainer.last_task_returns();
        result.env_steps = trainer.env_steps();
        result.grad_steps = trainer.grad_steps();
        result.checkpoint = actor_checkpoint(trainer.agent(0).actor);
        result.checkpoint.seed = config.seed;
        result.checkpoint.step = result.cycles;
    } catch (const NumericError& e) {
        result.outcome = std::string("diverged: ") + e.what();
        return result;
    }
    return result;
}

// --- adaptation / baseline ---------------------------------------------------

AdaptResult run_adaptation(const std::optional<Checkpoint>& backbone,
                           const TaskSpec& task, const AdaptConfig& config,
                           const ActorConfig& actor_config,
                           const PointMassConfig& env_config,
                           const Td3Config& td3_config) {
    Rng master(config.seed);

    ActorConfig cfg = actor_config;
    cfg.head_init_scale = config.init_scale;
    cfg.tail_init_scale = config.init_scale;

    Rng actor_rng = master.fork(1);
    ApbActor actor = ApbActor::init(cfg, actor_rng);
    if (config.freeze_backbone) {
        if (config.random_init_backbone) {
            // keep the fresh seeded trunk, frozen
        } else if (backbone.has_value()) {
            load_backbone(actor, *backbone);
        } else {
            throw StructuralError("run_adaptation: frozen run needs a checkpoint with "
                                  "a backbone group (or random_init_backbone)");
        }
        actor.freeze_backbone = true;
    } else {
        actor.freeze_backbone = false;
    }

    Td3Config td3 = td3_config;
    td3.actor_lr = config.actor_lr;
    td3.critic_lr = config.critic_lr;
    Rng agent_rng = master.fork(2);
    Td3Agent agent = Td3Agent::init(std::move(actor), td3, agent_rng);

    AdaptResult result;
    result.backbone_checksum_before = backbone_checksum(agent.actor);

    ReplayBuffer buffer(config.buffer_capacity);
    PointMassEnv env(env_config, task);
    Rng run_rng = master.fork(3);
    Rng eval_rng = master.fork(4);

    long env_steps = 0, grad_steps = 0;
    int episode = 0;
    try {
        while (episode < config.total_episodes) {
            const int cycle_episodes = std::min(config.episodes_per_cycle,
                                                config.total_episodes - episode);
            double last_actor_loss = 0.0, last_critic_loss = 0.0;
            std::vector<MetricRow*> cycle_rows;
            for (int ep = 0; ep < cycle_episodes; ++ep) {
                const bool warming = env_steps < static_cast<long>(config.warmup_steps);
                RolloutResult rolled;
                if (warming) {
                    PolicyFn policy = uniform_random_policy(env_config, run_rng);
                    rolled = rollout(env, policy, run_rng);
                } else {
                    Explorer explorer(agent.actor, config.explore.protocol,
                                      config.explore.sigma, run_rng);
                    PolicyFn policy = [&explorer, &run_rng](const Vector& s) {
                        return explorer.select(s, run_rng);
                    };
                    rolled = rollout(env, policy, run_rng);
                }
                for (std::size_t t = 0; t < rolled.actions.size(); ++t) {
                    Transition tr;
                    tr.state = rolled.states[t];
                    tr.action = rolled.actions[t];
                    tr.reward = rolled.rewards[t];
                    tr.next_state = rolled.states[t + 1];
                    tr.done = false;
                    buffer.push(std::move(tr));
                }
                env_steps += static_cast<long>(rolled.actions.size());
                episode += 1;

                MetricRow row;
                row.episode = episode;
                row.env_steps = env_steps;
                row.grad_steps = grad_steps;
                row.episode_return = rolled.total_return;
                row.reset = 0;
                result.rows.push_back(row);

                // Head/tail reset on the schedule; never after the last episode.
                if (config.reset_every > 0 && episode % config.reset_every == 0 &&
                    episode < config.total_episodes) {
                    agent.reset_task_parameters(mix_seed(config.seed, 50000 + episode));
                    result.rows.back().reset = 1;
                }
            }

            if (buffer.size() >= config.batch_size && config.updates_per_cycle > 0) {
                const UpdateMetrics metrics = update_cycle(
                    agent, buffer, config.updates_per_cycle, config.batch_size, run_rng);
                grad_steps += metrics.critic_updates + metrics.actor_updates;
                last_actor_loss = metrics.mean_actor_loss;
                last_critic_loss = metrics.mean_critic_loss;
                result.rows.back().grad_steps = grad_steps;
                result.rows.back().actor_loss = last_actor_loss;
                result.rows.back().critic_loss = last_critic_loss;
            }

            const double eval_return =
                evaluate_actor(agent.actor, task, env_config, config.eval_rollouts,
                               eval_rng.fork(episode).seed());
            result.cycle_eval_returns.push_back(eval_return);
            if (config.snapshot_best &&
                (!result.best_actor || eval_return > result.best_eval_return)) {
                result.best_eval_return = eval_return;
                result.best_actor = actor_checkpoint(agent.actor);
            }
        }
    } catch (const NumericError& e) {
        result.outcome = std::string("diverged: ") + e.what();
    }

    result.env_steps = env_steps;
    result.grad_steps = grad_steps;
    result.backbone_checksum_after = backbone_checksum(agent.actor);
    result.final_actor = actor_checkpoint(agent.actor);
    result.final_actor.seed = config.seed;
    if (!result.cycle_eval_returns.empty())
        result.final_eval_return = result.cycle_eval_returns.back();
    if (!result.best_actor) {
        result.best_eval_return = result.final_eval_return;
    }
    return result;
}

// --- behavior cloning ---------------------------------------------------------

BcDataset collect_demonstrations(const ApbActor& expert, const TaskSpec& task,
                                 const PointMassConfig& env_config, int n_pairs,
                                 std::uint64_t seed) {
    if (n_pairs < 1) throw StructuralError("collect_demonstrations: n_pairs must be >= 1");
    BcDataset dataset;
    dataset.task = task;
    dataset.demo_horizon = env_config.horizon;
    dataset.states = Matrix(PointMassEnv::state_dim(), n_pairs);
    dataset.actions = Matrix(PointMassEnv::action_dim(), n_pairs);
    Rng rng(seed);
    int filled = 0;
    int episode = 0;
    while (filled < n_pairs) {
        PointMassEnv env(env_config, task);
        Rng episode_rng = rng.fork(episode++);
        const RolloutResult rolled =
            rollout(env, deterministic_policy(expert), episode_rng);
        for (std::size_t t = 0; t < rolled.actions.size() && filled < n_pairs; ++t) {
            dataset.states.col(filled) = rolled.states[t];
            dataset.actions.col(filled) = rolled.actions[t];
            filled += 1;
        }
    }
    return dataset;
}

void save_bc_dataset(const std::string& path, const BcDataset& dataset) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("save_bc_dataset: cannot open " + path);
    const char magic[4] = {'A', 'P', 'B', 'D'};
    out.write(magic, 4);
    const std::uint32_t version = 1;
    const std::uint64_t n = static_cast<std::uint64_t>(dataset.size());
    const std::uint32_t sd = static_cast<std::uint32_t>(dataset.states.rows());
    const std::uint32_t ad = static_cast<std::uint32_t>(dataset.actions.rows());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&sd), sizeof(sd));
    out.write(reinterpret_cast<const char*>(&ad), sizeof(ad));
    out.write(reinterpret_cast<const char*>(dataset.states.data()),
              static_cast<std::streamsize>(sizeof(double) * dataset.states.size()));
    out.write(reinterpret_cast<const char*>(dataset.actions.data()),
              static_cast<std::streamsize>(sizeof(double) * dataset.actions.size()));

    nlohmann::json side;
    side["family"] = family_name(dataset.task.family);
    side["is_ood"] = dataset.task.is_ood;
    side["param"] = {dataset.task.param(0), dataset.task.param(1)};
    side["objective"] = static_cast<int>(dataset.task.objective);
    side["demo_horizon"] = dataset.demo_horizon;
    side["pairs"] = dataset.size();
    std::ofstream sidecar(path + ".json");
    sidecar << side.dump(2) << '\n';
}

BcDataset load_bc_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("load_bc_dataset: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "APBD", 4) != 0)
        throw ValidationError("load_bc_dataset: bad magic");
    std::uint32_t version = 0, sd = 0, ad = 0;
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&sd), sizeof(sd));
    in.read(reinterpret_cast<char*>(&ad), sizeof(ad));
    if (!in || version != 1) throw ValidationError("load_bc_dataset: bad header");
    BcDataset dataset;
    dataset.states = Matrix(sd, n);
    dataset.actions = Matrix(ad, n);
    in.read(reinterpret_cast<char*>(dataset.states.data()),
            static_cast<std::streamsize>(sizeof(double) * dataset.states.size()));
    in.read(reinterpret_cast<char*>(dataset.actions.data()),
            static_cast<std::streamsize>(sizeof(double) * dataset.actions.size()));
    if (!in) throw ValidationError("load_bc_dataset: truncated payload");

    std::ifstream sidecar(path + ".json");
    if (sidecar) {
        nlohmann::json side;
        sidecar >> side;
        dataset.task.family = parse_family(side.value("family", "vel-line"));
        dataset.task.is_ood = side.value("is_ood", false);
        dataset.task.objective =
            static_cast<TaskObjective>(side.value("objective", 0));
        const auto param = side.value("param", std::vector<double>{0.0, 0.0});
        dataset.task.param = {param[0], param[1]};
        dataset.demo_horizon = side.value("demo_horizon", 0);
    }
    return dataset;
}

BcResult bc_train(const BcDataset& dataset, BcMode mode,
                  const std::optional<Checkpoint>& backbone,
                  const ActorConfig& actor_config, const BcConfig& config) {
    if (dataset.size() == 0) throw StructuralError("bc_train: empty dataset");
    Rng master(config.seed);
    Rng init_rng = master.fork(mode == BcMode::ApbFrozen ? 1 : 2);
    ApbActor actor = ApbActor::init(actor_config, init_rng);
    if (mode == BcMode::ApbFrozen) {
        if (!backbone.has_value())
            throw StructuralError("bc_train: frozen mode needs a backbone checkpoint");
        load_backbone(actor, *backbone);
        actor.freeze_backbone = true;
    }

    BcResult result;
    result.backbone_checksum_before = backbone_checksum(actor);

    AdamState opt_head = AdamState::init(parameter_count(actor.pre), config.lr);
    AdamState opt_tail = AdamState::init(parameter_count(actor.post), config.lr);
    AdamState opt_trunk = AdamState::init(parameter_count(actor.backbone), config.lr);

    // Batch order comes from a mode-independent stream, so both modes consume
    // identical data given the seed.
    Rng batch_rng = master.fork(7);
    const int n = dataset.size();
    const int batches_per_epoch = std::max(1, n / config.batch_size);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            Matrix states(dataset.states.rows(), config.batch_size);
            Matrix targets(dataset.actions.rows(), config.batch_size);
            for (int i = 0; i < config.batch_size; ++i) {
                const int idx = static_cast<int>(batch_rng.integer(n));
                states.col(i) = dataset.states.col(idx);
                targets.col(i) = dataset.actions.col(idx);
            }
            ActorTape tape;
            const Matrix out = actor_forward(actor, states, &tape);
            const Matrix diff = out - targets;
            const double loss = diff.squaredNorm() / config.batch_size;
            epoch_loss += loss;
            ActorGrads grads;
            actor_backward(actor, tape, (2.0 / config.batch_size) * diff, grads);
            unflatten(actor.pre, adam_step(opt_head, flatten(actor.pre), grads.head));
            unflatten(actor.post, adam_step(opt_tail, flatten(actor.post), grads.tail));
            if (!actor.freeze_backbone)
                unflatten(actor.backbone,
                          adam_step(opt_trunk, flatten(actor.backbone), grads.backbone));
        }
        result.loss_curve.push_back(epoch_loss / batches_per_epoch);
    }
    result.final_loss = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
    result.backbone_checksum_after = backbone_checksum(actor);
    result.actor = std::move(actor);
    return result;
}

EvalSummary summarize(const std::vector<double>& returns) {
    EvalSummary s;
    s.returns = returns;
    if (returns.empty()) return s;
    s.mean = mean_of(returns);
    double var = 0.0;
    for (double r : returns) var += (r - s.mean) * (r - s.mean);
    var /= std::max<std::size_t>(1, returns.size() - 1);
    s.stddev = std::sqrt(var);
    s.ci95 = 1.96 * s.stddev / std::sqrt(static_cast<double>(returns.size()));
    return s;
}

EvalSummary bc_eval(const ApbActor& policy, const TaskSpec& task,
                    const PointMassConfig& env_config, int h_eval, int h_demo,
                    int n_seeds, std::uint64_t seed) {
    if (h_eval <= h_demo)
        throw StructuralError("bc_eval: evaluation horizon must exceed the "
                              "demonstration horizon");
    PointMassConfig cfg = env_config;
    cfg.horizon = h_eval;
    std::vector<double> returns;
    Rng rng(seed);
    for (int i = 0; i < n_seeds; ++i) {
        PointMassEnv env(cfg, task);
        Rng episode_rng = rng.fork(i);
        returns.push_back(
            rollout(env, deterministic_policy(policy), episode_rng).total_return);
    }
    return summarize(returns);
}

} // namespace apb
