#pragma once

#include "apb/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace apb {

/// Deterministic actor: task-specific affine layers around a shared
/// nonlinear trunk, with a final tanh squash to the action bounds.
/// Parameter groups are named head (pre-trunk), backbone, tail (post-trunk);
/// adaptation freezes the backbone and trains only head and tail.
struct ActorConfig {
    int state_dim = 4;
    int action_dim = 2;
    std::vector<int> backbone_dims = {64, 64, 64, 64}; // in, hidden..., out
    Activation backbone_activation = Activation::Relu;
    double backbone_init_scale = 1.0;
    double head_init_scale = 1e-3;
    double tail_init_scale = 1e-3;
    double action_bound = 1.0;
    bool squash = true;
};

struct ApbActor {
    DenseLayer pre;  // group "head"
    Mlp backbone;    // group "backbone"
    DenseLayer post; // group "tail"
    double action_bound = 1.0;
    bool squash = true;
    bool freeze_backbone = false;
    double head_init_scale = 1e-3;
    double tail_init_scale = 1e-3;

    static ApbActor init(const ActorConfig& config, Rng& rng);

    int state_dim() const { return pre.in_dim(); }
    int action_dim() const { return post.out_dim(); }
    int trainable_parameter_count() const;
};

struct ActorTape {
    Matrix states;
    Matrix pre_out;
    MlpTape backbone_tape;
    Matrix backbone_out;
    Matrix pre_squash;
};

/// Flat per-group gradients, ordered like flatten() of each group.
struct ActorGrads {
    Vector head;
    Vector backbone;
    Vector tail;
};

/// Batched forward (columns are samples). Squash is applied when enabled.
Matrix actor_forward(const ApbActor& actor, const Matrix& states,
                     ActorTape* tape = nullptr);

/// Single-state action.
Vector act(const ApbActor& actor, const Vector& state);

/// Pre-squash output, used by the linear-absorption identity checks.
Matrix actor_forward_presquash(const ApbActor& actor, const Matrix& states);

/// Backpropagates d(loss)/d(action) through squash, tail, backbone and head.
/// Gradients are produced for every group regardless of freeze flags (the
/// optimizer decides what to apply); returns d(loss)/d(states).
Matrix actor_backward(const ApbActor& actor, const ActorTape& tape,
                      const Matrix& action_grad, ActorGrads& grads);

/// Folds outer linear maps into the task-specific layers:
/// pre <- pre o outer_pre and post <- outer_post o post. Pre-squash outputs
/// of the result on s equal outer_post applied to the original actor's
/// pre-squash output on outer_pre * s.
ApbActor absorb_linear(const Matrix& outer_pre, const ApbActor& actor,
                       const Matrix& outer_post);

/// Fresh head/tail at their recorded init scales; backbone bytes untouched.
ApbActor reset_task_parameters(const ApbActor& actor, std::uint64_t seed);

/// Copy with independent Gaussian noise of the given stddev added to every
/// trainable parameter (head/tail always; backbone only when not frozen).
ApbActor perturb_parameters(const ApbActor& actor, double sigma, Rng& rng);

// Checkpoint group plumbing. Adaptation loads the backbone group only and
// fails loudly when it is missing.
Checkpoint actor_checkpoint(const ApbActor& actor);
void load_actor(ApbActor& actor, const Checkpoint& ckpt);
void load_backbone(ApbActor& actor, const Checkpoint& ckpt);

/// Order-independent digest of the backbone bytes; used by the freeze
/// contract checks.
std::uint64_t backbone_checksum(const ApbActor& actor);

} // namespace apb
