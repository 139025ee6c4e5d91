#pragma once

#include "apb/policy.hpp"

#include <optional>
#include <vector>

namespace apb {

struct Transition {
    Vector state;
    Vector action;
    double reward = 0.0;
    Vector next_state;
    bool done = false;
};

/// Fixed-capacity ring buffer with uniform sampling over current contents.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(int capacity);

    void push(Transition t);
    int size() const { return size_; }
    int capacity() const { return capacity_; }
    const Transition& at(int index) const { return storage_[index]; }

    /// Uniform with replacement; throws StructuralError on an empty buffer.
    std::vector<int> sample_indices(int batch_size, Rng& rng) const;

  private:
    int capacity_;
    int size_ = 0;
    int head_ = 0; // next slot to overwrite
    std::vector<Transition> storage_;
};

struct Batch {
    Matrix states;      // state_dim x B
    Matrix actions;     // action_dim x B
    Vector rewards;     // B
    Matrix next_states; // state_dim x B
    Vector dones;       // B, 0/1
    int size() const { return static_cast<int>(rewards.size()); }
};

Batch assemble_batch(const ReplayBuffer& buffer, const std::vector<int>& indices);

struct Td3Config {
    double gamma = 0.99;
    double tau = 0.005;
    int policy_delay = 2;
    double smoothing_sigma = 0.2;
    double smoothing_clip = 0.5;
    double actor_lr = 1e-4;
    double critic_lr = 0.05;
    std::vector<int> critic_hidden = {64, 64};
    double critic_init_scale = 1.0;
};

/// Twin critics with target copies, plus the actor and its target. The
/// actor's freeze flag decides which groups the actor update touches.
struct Td3Agent {
    ApbActor actor;
    ApbActor actor_target;
    Mlp q1, q2, q1_target, q2_target;
    AdamState opt_head, opt_backbone, opt_tail, opt_q1, opt_q2;
    Td3Config config;
    long critic_steps = 0; // drives the delayed actor update

    static Td3Agent init(ApbActor actor, const Td3Config& config, Rng& rng);

    /// Reinitializes head/tail (and their optimizer state) from `seed`.
    void reset_task_parameters(std::uint64_t seed);
};

struct CriticLossResult {
    double loss = 0.0; // summed MSE of both critics
    MlpGrads q1_grads, q2_grads;
    Vector targets;
};

/// TD targets use the target actor with clipped Gaussian smoothing noise and
/// the min of both target critics; terminal transitions bootstrap nothing.
CriticLossResult critic_loss(const Td3Agent& agent, const Batch& batch, Rng& rng);

struct ActorLossResult {
    double loss = 0.0; // -mean q1(s, actor(s))
    ActorGrads grads;  // all groups populated; freeze only gates application
};

ActorLossResult actor_loss(const Td3Agent& agent, const Batch& batch);

/// Applies one critic Adam step from precomputed gradients.
void apply_critic_step(Td3Agent& agent, const CriticLossResult& result);

/// Applies one actor Adam step to the unfrozen groups only, then refreshes
/// every target as tau * online + (1 - tau) * target (frozen backbone targets
/// are copied exactly instead).
void apply_actor_step(Td3Agent& agent, const ActorLossResult& result);
void polyak_update(Td3Agent& agent);

struct UpdateMetrics {
    double mean_critic_loss = 0.0;
    double mean_actor_loss = 0.0;
    int critic_updates = 0;
    int actor_updates = 0;
    double actor_param_delta = 0.0;  // L2 over head+tail (+backbone when trained)
    double critic_param_delta = 0.0; // L2 over both critics
};

/// n critic updates with the delayed actor/target schedule.
UpdateMetrics update_cycle(Td3Agent& agent, const ReplayBuffer& buffer, int n_updates,
                           int batch_size, Rng& rng);

enum class ExploreProtocol { ActionNoise, ParamNoise };

/// Episode-scoped exploration: action-noise draws fresh Gaussian noise per
/// step; parameter-noise perturbs a copy of the actor once per episode and
/// plays it deterministically.
class Explorer {
  public:
    Explorer(const ApbActor& actor, ExploreProtocol protocol, double sigma, Rng& rng);

    Vector select(const Vector& state, Rng& rng) const;
    ExploreProtocol protocol() const { return protocol_; }

  private:
    const ApbActor* base_;
    std::optional<ApbActor> perturbed_;
    ExploreProtocol protocol_;
    double sigma_;
};

} // namespace apb
