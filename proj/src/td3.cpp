#include "apb/td3.hpp"

#include "apb/errors.hpp"

#include <algorithm>
#include <cmath>

namespace apb {

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity <= 0) throw StructuralError("ReplayBuffer: capacity must be positive");
    storage_.reserve(std::min(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
    if (!std::isfinite(t.reward) || !t.state.allFinite() || !t.action.allFinite() ||
        !t.next_state.allFinite())
        throw NumericError("ReplayBuffer::push: non-finite transition");
    if (size_ < capacity_) {
        storage_.push_back(std::move(t));
        size_ += 1;
    } else {
        storage_[head_] = std::move(t); // oldest slot
    }
    head_ = (head_ + 1) % capacity_;
}

std::vector<int> ReplayBuffer::sample_indices(int batch_size, Rng& rng) const {
    if (size_ == 0) throw StructuralError("ReplayBuffer: cannot sample from empty buffer");
    std::vector<int> indices(batch_size);
    for (int i = 0; i < batch_size; ++i)
        indices[i] = static_cast<int>(rng.integer(static_cast<std::uint64_t>(size_)));
    return indices;
}

Batch assemble_batch(const ReplayBuffer& buffer, const std::vector<int>& indices) {
    if (indices.empty()) throw StructuralError("assemble_batch: empty batch");
    const Transition& first = buffer.at(indices[0]);
    const int sd = static_cast<int>(first.state.size());
    const int ad = static_cast<int>(first.action.size());
    const int b = static_cast<int>(indices.size());
    Batch batch;
    batch.states = Matrix(sd, b);
    batch.actions = Matrix(ad, b);
    batch.rewards = Vector(b);
    batch.next_states = Matrix(sd, b);
    batch.dones = Vector(b);
    for (int i = 0; i < b; ++i) {
        const Transition& t = buffer.at(indices[i]);
        batch.states.col(i) = t.state;
        batch.actions.col(i) = t.action;
        batch.rewards(i) = t.reward;
        batch.next_states.col(i) = t.next_state;
        batch.dones(i) = t.done ? 1.0 : 0.0;
    }
    return batch;
}

Td3Agent Td3Agent::init(ApbActor actor, const Td3Config& config, Rng& rng) {
    Td3Agent agent;
    agent.config = config;
    agent.actor = std::move(actor);
    agent.actor_target = agent.actor;

    std::vector<int> dims;
    dims.push_back(agent.actor.state_dim() + agent.actor.action_dim());
    dims.insert(dims.end(), config.critic_hidden.begin(), config.critic_hidden.end());
    dims.push_back(1);
    Rng q1_rng = rng.spawn(), q2_rng = rng.spawn();
    agent.q1 = Mlp::init(dims, Activation::Relu, config.critic_init_scale, q1_rng);
    agent.q2 = Mlp::init(dims, Activation::Relu, config.critic_init_scale, q2_rng);
    agent.q1_target = agent.q1;
    agent.q2_target = agent.q2;

    agent.opt_head = AdamState::init(parameter_count(agent.actor.pre), config.actor_lr);
    agent.opt_backbone =
        AdamState::init(parameter_count(agent.actor.backbone), config.actor_lr);
    agent.opt_tail = AdamState::init(parameter_count(agent.actor.post), config.actor_lr);
    agent.opt_q1 = AdamState::init(parameter_count(agent.q1), config.critic_lr);
    agent.opt_q2 = AdamState::init(parameter_count(agent.q2), config.critic_lr);
    return agent;
}

void Td3Agent::reset_task_parameters(std::uint64_t seed) {
    actor = apb::reset_task_parameters(actor, seed);
    actor_target.pre = actor.pre;
    actor_target.post = actor.post;
    opt_head.reset();
    opt_tail.reset();
}

namespace {

Matrix critic_input(const Matrix& states, const Matrix& actions) {
    Matrix input(states.rows() + actions.rows(), states.cols());
    input.topRows(states.rows()) = states;
    input.bottomRows(actions.rows()) = actions;
    return input;
}

} // namespace

CriticLossResult critic_loss(const Td3Agent& agent, const Batch& batch, Rng& rng) {
    if (batch.size() == 0) throw StructuralError("critic_loss: empty batch");
    const int b = batch.size();
    const double bound = agent.actor.action_bound;

    // Smoothed target action: clip(pi'(s') + clip(eps, +-c), action bounds).
    Matrix next_actions = actor_forward(agent.actor_target, batch.next_states);
    for (int c = 0; c < next_actions.cols(); ++c) {
        for (int r = 0; r < next_actions.rows(); ++r) {
            const double noise =
                std::clamp(rng.normal(0.0, agent.config.smoothing_sigma),
                           -agent.config.smoothing_clip, agent.config.smoothing_clip);
            next_actions(r, c) =
                std::clamp(next_actions(r, c) + noise, -bound, bound);
        }
    }

    const Matrix next_input = critic_input(batch.next_states, next_actions);
    const Vector q1_next = mlp_forward(agent.q1_target, next_input).row(0).transpose();
    const Vector q2_next = mlp_forward(agent.q2_target, next_input).row(0).transpose();

    Vector targets(b);
    for (int i = 0; i < b; ++i)
        targets(i) = batch.rewards(i) + agent.config.gamma * (1.0 - batch.dones(i)) *
                                            std::min(q1_next(i), q2_next(i));

    CriticLossResult result;
    result.targets = targets;

    const Matrix input = critic_input(batch.states, batch.actions);
    for (int which = 0; which < 2; ++which) {
        const Mlp& critic = which == 0 ? agent.q1 : agent.q2;
        MlpGrads& grads = which == 0 ? result.q1_grads : result.q2_grads;
        MlpTape tape;
        const Vector q = mlp_forward(critic, input, &tape).row(0).transpose();
        const Vector err = q - targets;
        result.loss += err.squaredNorm() / b;
        Matrix d_out(1, b);
        d_out.row(0) = (2.0 / b) * err.transpose();
        mlp_backward(critic, tape, d_out, grads);
    }
    if (!std::isfinite(result.loss)) throw NumericError("critic_loss: non-finite loss");
    return result;
}

ActorLossResult actor_loss(const Td3Agent& agent, const Batch& batch) {
    if (batch.size() == 0) throw StructuralError("actor_loss: empty batch");
    const int b = batch.size();

    ActorTape tape;
    const Matrix actions = actor_forward(agent.actor, batch.states, &tape);
    const Matrix input = critic_input(batch.states, actions);
    MlpTape q_tape;
    const Vector q = mlp_forward(agent.q1, input, &q_tape).row(0).transpose();

    ActorLossResult result;
    result.loss = -q.mean();

    // d(-mean q)/d(input), then keep the action rows.
    MlpGrads unused;
    Matrix d_out = Matrix::Constant(1, b, -1.0 / b);
    const Matrix d_input = mlp_backward(agent.q1, q_tape, d_out, unused);
    const Matrix d_actions = d_input.bottomRows(agent.actor.action_dim());
    actor_backward(agent.actor, tape, d_actions, result.grads);
    if (!std::isfinite(result.loss)) throw NumericError("actor_loss: non-finite loss");
    return result;
}

void apply_critic_step(Td3Agent& agent, const CriticLossResult& result) {
    unflatten(agent.q1, adam_step(agent.opt_q1, flatten(agent.q1),
                                  flatten_grads(agent.q1, result.q1_grads)));
    unflatten(agent.q2, adam_step(agent.opt_q2, flatten(agent.q2),
                                  flatten_grads(agent.q2, result.q2_grads)));
}

void apply_actor_step(Td3Agent& agent, const ActorLossResult& result) {
    unflatten(agent.actor.pre,
              adam_step(agent.opt_head, flatten(agent.actor.pre), result.grads.head));
    unflatten(agent.actor.post,
              adam_step(agent.opt_tail, flatten(agent.actor.post), result.grads.tail));
    if (!agent.actor.freeze_backbone)
        unflatten(agent.actor.backbone,
                  adam_step(agent.opt_backbone, flatten(agent.actor.backbone),
                            result.grads.backbone));
}

namespace {

Vector polyak(const Vector& online, const Vector& target, double tau) {
    return tau * online + (1.0 - tau) * target;
}

} // namespace

void polyak_update(Td3Agent& agent) {
    const double tau = agent.config.tau;
    unflatten(agent.actor_target.pre,
              polyak(flatten(agent.actor.pre), flatten(agent.actor_target.pre), tau));
    unflatten(agent.actor_target.post,
              polyak(flatten(agent.actor.post), flatten(agent.actor_target.post), tau));
    if (agent.actor.freeze_backbone) {
        // Frozen online backbone never moves; keep the target byte-identical.
        agent.actor_target.backbone = agent.actor.backbone;
    } else {
        unflatten(agent.actor_target.backbone,
                  polyak(flatten(agent.actor.backbone),
                         flatten(agent.actor_target.backbone), tau));
    }
    unflatten(agent.q1_target, polyak(flatten(agent.q1), flatten(agent.q1_target), tau));
    unflatten(agent.q2_target, polyak(flatten(agent.q2), flatten(agent.q2_target), tau));
}

UpdateMetrics update_cycle(Td3Agent& agent, const ReplayBuffer& buffer, int n_updates,
                           int batch_size, Rng& rng) {
    if (n_updates > 0 && buffer.size() < batch_size)
        throw StructuralError("update_cycle: buffer smaller than batch size");
    UpdateMetrics metrics;
    Vector head_before = flatten(agent.actor.pre);
    Vector tail_before = flatten(agent.actor.post);
    Vector trunk_before = flatten(agent.actor.backbone);
    Vector q_before = flatten(agent.q1);

    for (int u = 0; u < n_updates; ++u) {
        const Batch batch = assemble_batch(buffer, buffer.sample_indices(batch_size, rng));
        const CriticLossResult closs = critic_loss(agent, batch, rng);
        apply_critic_step(agent, closs);
        metrics.mean_critic_loss += closs.loss;
        metrics.critic_updates += 1;
        agent.critic_steps += 1;

        if (agent.critic_steps % agent.config.policy_delay == 0) {
            const ActorLossResult aloss = actor_loss(agent, batch);
            apply_actor_step(agent, aloss);
            polyak_update(agent);
            metrics.mean_actor_loss += aloss.loss;
            metrics.actor_updates += 1;
        }
    }
    if (metrics.critic_updates > 0) metrics.mean_critic_loss /= metrics.critic_updates;
    if (metrics.actor_updates > 0) metrics.mean_actor_loss /= metrics.actor_updates;

    double actor_delta2 = (flatten(agent.actor.pre) - head_before).squaredNorm() +
                          (flatten(agent.actor.post) - tail_before).squaredNorm();
    if (!agent.actor.freeze_backbone)
        actor_delta2 += (flatten(agent.actor.backbone) - trunk_before).squaredNorm();
    metrics.actor_param_delta = std::sqrt(actor_delta2);
    metrics.critic_param_delta = (flatten(agent.q1) - q_before).norm();
    return metrics;
}

Explorer::Explorer(const ApbActor& actor, ExploreProtocol protocol, double sigma,
                   Rng& rng)
    : base_(&actor), protocol_(protocol), sigma_(sigma) {
    if (sigma < 0.0) throw StructuralError("Explorer: sigma must be nonnegative");
    if (protocol == ExploreProtocol::ParamNoise)
        perturbed_ = perturb_parameters(actor, sigma, rng);
}

Vector Explorer::select(const Vector& state, Rng& rng) const {
    if (protocol_ == ExploreProtocol::ParamNoise) return act(*perturbed_, state);
    Vector action = act(*base_, state);
    const double bound = base_->action_bound;
    for (int i = 0; i < action.size(); ++i)
        action(i) = std::clamp(action(i) + rng.normal(0.0, sigma_), -bound, bound);
    return action;
}

} // namespace apb
