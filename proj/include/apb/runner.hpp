#pragma once

#include "apb/envs.hpp"
#include "apb/td3.hpp"

#include <optional>
#include <string>
#include <vector>

namespace apb {

struct ExploreConfig {
    ExploreProtocol protocol = ExploreProtocol::ParamNoise;
    double sigma = 0.005;
};

/// One per-episode metrics row. The CSV schema is fixed:
/// episode,env_steps,grad_steps,return,actor_loss,critic_loss,reset
struct MetricRow {
    int episode = 0;
    long env_steps = 0;
    long grad_steps = 0;
    double episode_return = 0.0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    int reset = 0;
};

// ---------------------------------------------------------------------------
// Meta-training: per-task heads/tails and critics train on their own task;
// the shared trunk moves once per cycle on the average of the per-task actor
// gradients, recomputed on fresh batches after the per-task updates.

struct MetaTrainConfig {
    int n_tasks = 30;
    std::uint64_t seed = 0;
    double actor_lr = 1e-4;
    double critic_lr = 0.05;
    int episodes_per_task_per_cycle = 10; // trajectories collected per cycle
    int updates_per_task_per_cycle = 2000;
    int batch_size = 512;
    int buffer_capacity = 200000;
    int warmup_steps = 1000; // per task; uniform-random actions until reached
    ExploreConfig explore{ExploreProtocol::ActionNoise, 0.1};
    double plateau_tol = 0.01; // stop when windowed mean return improves < 1%
    int plateau_window = 20;
    int max_cycles = 60;
};

struct MetaTrainResult {
    Checkpoint checkpoint; // trained shared trunk (plus task-0 head/tail)
    std::vector<MetricRow> rows; // one per cycle; episode = cycle index
    std::vector<TaskSpec> tasks;
    std::vector<double> final_task_returns; // per-task mean over the last cycle
    int cycles = 0;
    long env_steps = 0;
    long grad_steps = 0;
    std::string outcome = "completed";
};

class MetaTrainer {
  public:
    MetaTrainer(TaskFamily family, const MetaTrainConfig& config,
                const ActorConfig& actor_config, const PointMassConfig& env_config,
                const Td3Config& td3_config);

    /// Collect episodes, run per-task update cycles, then one shared-trunk
    /// step on the averaged gradient. Returns the cycle's mean return.
    double run_cycle();

    int n_tasks() const { return static_cast<int>(agents_.size()); }
    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    const Td3Agent& agent(int task) const { return agents_[task]; }
    Vector backbone_parameters() const { return flatten(agents_[0].actor.backbone); }
    const std::vector<double>& last_task_returns() const { return last_task_returns_; }
    long env_steps() const { return env_steps_; }
    long grad_steps() const { return grad_steps_; }

    /// Shared-trunk gradient of one task's actor loss on a fresh batch.
    Vector backbone_gradient(int task, const Batch& batch) const;
    /// Adam step on the mean of the given per-task gradients, propagated to
    /// every task's actor and target.
    void apply_backbone_step(const std::vector<Vector>& per_task_gradients);
    Batch sample_task_batch(int task);

  private:
    void sync_backbone();

    MetaTrainConfig config_;
    PointMassConfig env_config_;
    std::vector<TaskSpec> tasks_;
    std::vector<Td3Agent> agents_;
    std::vector<ReplayBuffer> buffers_;
    std::vector<PointMassEnv> envs_;
    std::vector<Rng> task_rngs_;
    AdamState opt_backbone_;
    Mlp backbone_; // master copy of the shared trunk
    std::vector<double> last_task_returns_;
    std::vector<long> env_steps_per_task_;
    long env_steps_ = 0;
    long grad_steps_ = 0;
};

MetaTrainResult meta_train(TaskFamily family, const MetaTrainConfig& config,
                           const ActorConfig& actor_config,
                           const PointMassConfig& env_config,
                           const Td3Config& td3_config);

// ---------------------------------------------------------------------------
// Adaptation / baseline: one task, frozen or free trunk, periodic head/tail
// resets, identical budgets either way.

struct AdaptConfig {
    std::uint64_t seed = 0;
    ExploreConfig explore{ExploreProtocol::ParamNoise, 0.005};
    int reset_every = 10;    // episodes; resets skip the final episode
    double init_scale = 1e-3; // head/tail init scale
    int updates_per_cycle = 2000;
    int episodes_per_cycle = 10;
    int total_episodes = 100;
    int batch_size = 512;
    int buffer_capacity = 200000;
    double actor_lr = 1e-4;
    double critic_lr = 0.05;
    int warmup_steps = 1000;
    bool random_init_backbone = false;
    bool freeze_backbone = true; // false = full-parameter baseline
    int eval_rollouts = 5;
    bool snapshot_best = false; // keep the best per-cycle evaluation actor
};

struct AdaptResult {
    std::vector<MetricRow> rows; // one per training episode
    Checkpoint final_actor;
    double final_eval_return = 0.0;
    std::vector<double> cycle_eval_returns;
    double best_eval_return = 0.0;
    std::optional<Checkpoint> best_actor;
    long env_steps = 0;
    long grad_steps = 0;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
    std::string outcome = "completed";
};

/// Frozen-trunk adaptation when `config.freeze_backbone`, full-parameter TD3
/// otherwise. A frozen run needs `backbone` (group "backbone") unless
/// `random_init_backbone` draws a fresh frozen trunk from the seed.
AdaptResult run_adaptation(const std::optional<Checkpoint>& backbone,
                           const TaskSpec& task, const AdaptConfig& config,
                           const ActorConfig& actor_config,
                           const PointMassConfig& env_config,
                           const Td3Config& td3_config);

/// Mean deterministic-rollout return of an actor on a task.
double evaluate_actor(const ApbActor& actor, const TaskSpec& task,
                      const PointMassConfig& env_config, int n_rollouts,
                      std::uint64_t seed);

/// Mean return of the zero-action policy; the floor any learner must beat.
double zero_policy_return(const TaskSpec& task, const PointMassConfig& env_config,
                          int n_rollouts, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Behavior cloning on narrow expert demonstrations, evaluated beyond the
// demonstration horizon.

struct BcDataset {
    Matrix states;  // state_dim x N
    Matrix actions; // action_dim x N
    int demo_horizon = 0;
    TaskSpec task;
    int size() const { return static_cast<int>(states.cols()); }
};

/// Contiguous expert rollouts until n_pairs (state, action) pairs exist.
BcDataset collect_demonstrations(const ApbActor& expert, const TaskSpec& task,
                                 const PointMassConfig& env_config, int n_pairs,
                                 std::uint64_t seed);

/// Binary container (magic, dims, float64 payload) plus a JSON sidecar
/// describing the task, horizon and provenance.
void save_bc_dataset(const std::string& path, const BcDataset& dataset);
BcDataset load_bc_dataset(const std::string& path);

enum class BcMode { ApbFrozen, FullScratch };

struct BcConfig {
    double lr = 1e-3;
    int batch_size = 2048;
    int epochs = 8;
    std::uint64_t seed = 0;
};

struct BcResult {
    ApbActor actor;
    std::vector<double> loss_curve; // mean batch loss per epoch
    double final_loss = 0.0;
    std::uint64_t backbone_checksum_before = 0;
    std::uint64_t backbone_checksum_after = 0;
};

/// Batched MSE regression onto expert actions. ApbFrozen loads the given
/// trunk and trains head/tail only; FullScratch trains everything from a
/// fresh init. Batch order depends only on the seed, not the mode.
BcResult bc_train(const BcDataset& dataset, BcMode mode,
                  const std::optional<Checkpoint>& backbone,
                  const ActorConfig& actor_config, const BcConfig& config);

struct EvalSummary {
    double mean = 0.0;
    double stddev = 0.0;
    double ci95 = 0.0;
    std::vector<double> returns;
};

/// Deterministic rollouts at horizon `h_eval`, which must exceed the
/// demonstration horizon (the whole point is extrapolation stress).
EvalSummary bc_eval(const ApbActor& policy, const TaskSpec& task,
                    const PointMassConfig& env_config, int h_eval, int h_demo,
                    int n_seeds, std::uint64_t seed);

EvalSummary summarize(const std::vector<double>& returns);

} // namespace apb
