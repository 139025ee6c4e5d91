#include "apb/policy.hpp"

#include "apb/errors.hpp"

#include <cmath>
#include <cstring>

namespace apb {

ApbActor ApbActor::init(const ActorConfig& config, Rng& rng) {
    if (config.backbone_dims.size() < 2)
        throw StructuralError("ApbActor::init: backbone needs in and out dims");
    ApbActor actor;
    Rng head_rng = rng.spawn(), trunk_rng = rng.spawn(), tail_rng = rng.spawn();
    actor.pre = DenseLayer::init(config.state_dim, config.backbone_dims.front(),
                                 config.head_init_scale, head_rng);
    actor.backbone = Mlp::init(config.backbone_dims, config.backbone_activation,
                               config.backbone_init_scale, trunk_rng);
    actor.post = DenseLayer::init(config.backbone_dims.back(), config.action_dim,
                                  config.tail_init_scale, tail_rng);
    actor.action_bound = config.action_bound;
    actor.squash = config.squash;
    actor.head_init_scale = config.head_init_scale;
    actor.tail_init_scale = config.tail_init_scale;
    return actor;
}

int ApbActor::trainable_parameter_count() const {
    int count = parameter_count(pre) + parameter_count(post);
    if (!freeze_backbone) count += parameter_count(backbone);
    return count;
}

Matrix actor_forward(const ApbActor& actor, const Matrix& states, ActorTape* tape) {
    if (states.rows() != actor.state_dim())
        throw StructuralError("actor_forward: state dimension mismatch");
    Matrix pre_out = (actor.pre.weights * states).colwise() + actor.pre.bias;
    MlpTape trunk_tape;
    Matrix trunk_out =
        mlp_forward(actor.backbone, pre_out, tape ? &trunk_tape : nullptr);
    Matrix pre_squash = (actor.post.weights * trunk_out).colwise() + actor.post.bias;
    if (tape) {
        tape->states = states;
        tape->pre_out = std::move(pre_out);
        tape->backbone_tape = std::move(trunk_tape);
        tape->backbone_out = trunk_out;
        tape->pre_squash = pre_squash;
    }
    if (!actor.squash) return pre_squash;
    return actor.action_bound * pre_squash.array().tanh().matrix();
}

Vector act(const ApbActor& actor, const Vector& state) {
    return actor_forward(actor, Matrix(state)).col(0);
}

Matrix actor_forward_presquash(const ApbActor& actor, const Matrix& states) {
    ApbActor raw = actor;
    raw.squash = false;
    return actor_forward(raw, states);
}

Matrix actor_backward(const ApbActor& actor, const ActorTape& tape,
                      const Matrix& action_grad, ActorGrads& grads) {
    if (action_grad.rows() != actor.action_dim() ||
        action_grad.cols() != tape.states.cols())
        throw StructuralError("actor_backward: action_grad shape mismatch");

    Matrix d_pre_squash;
    if (actor.squash) {
        const Matrix t = tape.pre_squash.array().tanh().matrix();
        d_pre_squash = action_grad.cwiseProduct(
            (actor.action_bound * (1.0 - t.array().square())).matrix());
    } else {
        d_pre_squash = action_grad;
    }

    // tail
    const Matrix d_w_post = d_pre_squash * tape.backbone_out.transpose();
    const Vector d_b_post = d_pre_squash.rowwise().sum();
    Matrix d_trunk_out = actor.post.weights.transpose() * d_pre_squash;

    // backbone
    MlpGrads trunk_grads;
    Matrix d_pre_out =
        mlp_backward(actor.backbone, tape.backbone_tape, d_trunk_out, trunk_grads);

    // head
    const Matrix d_w_pre = d_pre_out * tape.states.transpose();
    const Vector d_b_pre = d_pre_out.rowwise().sum();
    Matrix d_states = actor.pre.weights.transpose() * d_pre_out;

    grads.head = Vector(parameter_count(actor.pre));
    grads.head.head(d_w_pre.size()) =
        Eigen::Map<const Vector>(d_w_pre.data(), d_w_pre.size());
    grads.head.tail(d_b_pre.size()) = d_b_pre;

    grads.backbone = flatten_grads(actor.backbone, trunk_grads);

    grads.tail = Vector(parameter_count(actor.post));
    grads.tail.head(d_w_post.size()) =
        Eigen::Map<const Vector>(d_w_post.data(), d_w_post.size());
    grads.tail.tail(d_b_post.size()) = d_b_post;

    return d_states;
}

ApbActor absorb_linear(const Matrix& outer_pre, const ApbActor& actor,
                       const Matrix& outer_post) {
    if (outer_pre.rows() != actor.state_dim())
        throw StructuralError("absorb_linear: outer_pre must map into the state dim");
    if (outer_post.cols() != actor.action_dim())
        throw StructuralError("absorb_linear: outer_post must consume the action dim");
    ApbActor out = actor;
    out.pre.weights = actor.pre.weights * outer_pre;
    out.post.weights = outer_post * actor.post.weights;
    out.post.bias = outer_post * actor.post.bias;
    return out;
}

ApbActor reset_task_parameters(const ApbActor& actor, std::uint64_t seed) {
    ApbActor out = actor;
    Rng rng(seed);
    Rng head_rng = rng.fork(1), tail_rng = rng.fork(3);
    out.pre = DenseLayer::init(actor.pre.in_dim(), actor.pre.out_dim(),
                               actor.head_init_scale, head_rng);
    out.post = DenseLayer::init(actor.post.in_dim(), actor.post.out_dim(),
                                actor.tail_init_scale, tail_rng);
    return out;
}

ApbActor perturb_parameters(const ApbActor& actor, double sigma, Rng& rng) {
    if (sigma < 0.0)
        throw StructuralError("perturb_parameters: sigma must be nonnegative");
    ApbActor out = actor;
    auto jitter = [&](Vector flat) {
        for (int i = 0; i < flat.size(); ++i) flat(i) += rng.normal(0.0, sigma);
        return flat;
    };
    unflatten(out.pre, jitter(flatten(actor.pre)));
    unflatten(out.post, jitter(flatten(actor.post)));
    if (!actor.freeze_backbone)
        unflatten(out.backbone, jitter(flatten(actor.backbone)));
    return out;
}

Checkpoint actor_checkpoint(const ApbActor& actor) {
    Checkpoint ckpt;
    ckpt.groups["head"] = tensors_of(actor.pre);
    ckpt.groups["backbone"] = tensors_of(actor.backbone);
    ckpt.groups["tail"] = tensors_of(actor.post);
    return ckpt;
}

void load_actor(ApbActor& actor, const Checkpoint& ckpt) {
    for (const char* group : {"head", "backbone", "tail"})
        if (!ckpt.has_group(group))
            throw ValidationError(std::string("checkpoint: missing group ") + group);
    load_into(actor.pre, ckpt.groups.at("head"));
    load_into(actor.backbone, ckpt.groups.at("backbone"));
    load_into(actor.post, ckpt.groups.at("tail"));
}

void load_backbone(ApbActor& actor, const Checkpoint& ckpt) {
    if (!ckpt.has_group("backbone"))
        throw StructuralError("checkpoint: missing group backbone");
    load_into(actor.backbone, ckpt.groups.at("backbone"));
}

std::uint64_t backbone_checksum(const ApbActor& actor) {
    // FNV-1a over the raw bytes of every backbone tensor.
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&hash](const double* data, long count) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (long i = 0; i < count * static_cast<long>(sizeof(double)); ++i) {
            hash ^= bytes[i];
            hash *= 1099511628211ULL;
        }
    };
    for (const DenseLayer& layer : actor.backbone.layers) {
        mix(layer.weights.data(), layer.weights.size());
        mix(layer.bias.data(), layer.bias.size());
    }
    return hash;
}

} // namespace apb
