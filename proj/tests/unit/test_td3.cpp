#include <doctest.h>

#include "apb/errors.hpp"
#include "apb/td3.hpp"

#include <cmath>

using namespace apb;

namespace {

ActorConfig tiny_actor_config() {
    ActorConfig cfg;
    cfg.state_dim = 2;
    cfg.action_dim = 1;
    cfg.backbone_dims = {6, 6};
    cfg.head_init_scale = 0.5;
    cfg.tail_init_scale = 0.5;
    return cfg;
}

Td3Config tiny_td3_config() {
    Td3Config cfg;
    cfg.critic_hidden = {8};
    cfg.critic_lr = 1e-3;
    cfg.actor_lr = 1e-3;
    return cfg;
}

Td3Agent make_agent(std::uint64_t seed, bool freeze = false) {
    Rng rng(seed);
    Rng actor_rng = rng.fork(1);
    ApbActor actor = ApbActor::init(tiny_actor_config(), actor_rng);
    actor.freeze_backbone = freeze;
    Rng agent_rng = rng.fork(2);
    return Td3Agent::init(std::move(actor), tiny_td3_config(), agent_rng);
}

Transition make_transition(Rng& rng, double reward, bool done = false) {
    Transition t;
    t.state = Vector(2);
    t.state << rng.uniform(-1, 1), rng.uniform(-1, 1);
    t.action = Vector(1);
    t.action << rng.uniform(-1, 1);
    t.reward = reward;
    t.next_state = Vector(2);
    t.next_state << rng.uniform(-1, 1), rng.uniform(-1, 1);
    t.done = done;
    return t;
}

ReplayBuffer filled_buffer(std::uint64_t seed, int n) {
    ReplayBuffer buffer(std::max(n, 4));
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const double reward = rng.uniform(-1, 1); // sequenced before the call
        buffer.push(make_transition(rng, reward));
    }
    return buffer;
}

/// Rigs every critic (online and target) to output the constant `value`.
void rig_constant_critics(Td3Agent& agent, double value) {
    for (Mlp* critic : {&agent.q1, &agent.q2, &agent.q1_target, &agent.q2_target}) {
        DenseLayer& last = critic->layers.back();
        last.weights.setZero();
        last.bias.setConstant(value);
    }
}

} // namespace

TEST_CASE("replay buffer evicts oldest and samples uniformly") {
    ReplayBuffer buffer(3);
    Rng rng(1);
    for (int i = 0; i < 5; ++i) {
        Transition t = make_transition(rng, static_cast<double>(i));
        buffer.push(std::move(t));
    }
    CHECK(buffer.size() == 3);
    // Slots now hold rewards {2, 3, 4}: 0 and 1 were evicted first.
    double min_reward = 10, max_reward = -10;
    for (int i = 0; i < 3; ++i) {
        min_reward = std::min(min_reward, buffer.at(i).reward);
        max_reward = std::max(max_reward, buffer.at(i).reward);
    }
    CHECK(min_reward == 2.0);
    CHECK(max_reward == 4.0);

    // Frequency within 3 sigma of the uniform expectation.
    ReplayBuffer big(100);
    Rng rng2(2);
    for (int i = 0; i < 100; ++i) big.push(make_transition(rng2, 0.0));
    std::vector<int> counts(100, 0);
    Rng sample_rng(3);
    const int draws = 100000;
    for (int idx : big.sample_indices(draws, sample_rng)) counts[idx] += 1;
    const double expectation = draws / 100.0;
    const double sigma = std::sqrt(draws * 0.01 * 0.99);
    for (int c : counts) CHECK(std::abs(c - expectation) <= 3.0 * sigma);
}

TEST_CASE("replay buffer rejects empty sampling and bad transitions") {
    ReplayBuffer buffer(4);
    Rng rng(1);
    CHECK_THROWS_AS(buffer.sample_indices(2, rng), StructuralError);
    Transition bad = make_transition(rng, std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(buffer.push(std::move(bad)), NumericError);
}

TEST_CASE("critic target arithmetic") {
    Td3Agent agent = make_agent(10);
    agent.config.smoothing_sigma = 0.0; // deterministic target action
    rig_constant_critics(agent, 2.0);

    Batch batch;
    batch.states = Matrix::Zero(2, 1);
    batch.actions = Matrix::Zero(1, 1);
    batch.rewards = Vector::Constant(1, 1.0);
    batch.next_states = Matrix::Zero(2, 1);
    batch.dones = Vector::Zero(1);

    Rng rng(4);
    CriticLossResult result = critic_loss(agent, batch, rng);
    CHECK(result.targets(0) == doctest::Approx(1.0 + 0.99 * 2.0)); // 2.98

    batch.dones(0) = 1.0; // terminal transitions ignore the target critics
    rig_constant_critics(agent, 1e9);
    result = critic_loss(agent, batch, rng);
    CHECK(result.targets(0) == doctest::Approx(1.0));
}

TEST_CASE("critic loss matches a hand computation on rigged affine nets") {
    Td3Agent agent = make_agent(11);
    agent.config.smoothing_sigma = 0.0;
    agent.config.gamma = 0.9;

    // Critics become pure affine maps q = w . [s; a] + b.
    auto rig_affine = [](Mlp& critic, double w0, double w1, double w2, double b) {
        critic.layers.resize(1);
        critic.layers[0].weights = Matrix(1, 3);
        critic.layers[0].weights << w0, w1, w2;
        critic.layers[0].bias = Vector::Constant(1, b);
    };
    rig_affine(agent.q1, 0.5, -0.25, 1.0, 0.1);
    rig_affine(agent.q2, -0.3, 0.4, 0.2, -0.2);
    rig_affine(agent.q1_target, 0.1, 0.2, 0.3, 0.0);
    rig_affine(agent.q2_target, 0.2, 0.1, -0.3, 0.05);

    // Target actor becomes the constant map a = 0.5 (squash disabled).
    agent.actor_target.squash = false;
    agent.actor_target.pre.weights.setZero();
    agent.actor_target.pre.bias.setZero();
    for (DenseLayer& l : agent.actor_target.backbone.layers) {
        l.weights.setZero();
        l.bias.setZero();
    }
    agent.actor_target.post.weights.setZero();
    agent.actor_target.post.bias.setConstant(0.5);

    Batch batch;
    batch.states = Matrix(2, 2);
    batch.states << 0.2, -0.4, 0.3, 0.1;
    batch.actions = Matrix(1, 2);
    batch.actions << 0.6, -0.2;
    batch.rewards = Vector(2);
    batch.rewards << 1.0, -0.5;
    batch.next_states = Matrix(2, 2);
    batch.next_states << 0.1, 0.0, -0.2, 0.5;
    batch.dones = Vector::Zero(2);

    Rng rng(5);
    const CriticLossResult result = critic_loss(agent, batch, rng);

    double expected_loss = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double s0 = batch.next_states(0, i), s1 = batch.next_states(1, i);
        const double a = 0.5;
        const double q1t = 0.1 * s0 + 0.2 * s1 + 0.3 * a + 0.0;
        const double q2t = 0.2 * s0 + 0.1 * s1 - 0.3 * a + 0.05;
        const double y = batch.rewards(i) + 0.9 * std::min(q1t, q2t);
        CHECK(result.targets(i) == doctest::Approx(y).epsilon(1e-12));
        const double c0 = batch.states(0, i), c1 = batch.states(1, i);
        const double act_i = batch.actions(0, i);
        const double q1 = 0.5 * c0 - 0.25 * c1 + 1.0 * act_i + 0.1;
        const double q2 = -0.3 * c0 + 0.4 * c1 + 0.2 * act_i - 0.2;
        expected_loss += (q1 - y) * (q1 - y) / 2.0 + (q2 - y) * (q2 - y) / 2.0;
    }
    CHECK(result.loss == doctest::Approx(expected_loss).epsilon(1e-12));
}

TEST_CASE("actor loss: constant critic means zero gradients") {
    Td3Agent agent = make_agent(12);
    rig_constant_critics(agent, 3.0);
    Batch batch;
    batch.states = Matrix::Random(2, 5);
    batch.actions = Matrix::Zero(1, 5);
    batch.rewards = Vector::Zero(5);
    batch.next_states = Matrix::Zero(2, 5);
    batch.dones = Vector::Zero(5);
    const ActorLossResult result = actor_loss(agent, batch);
    CHECK(result.loss == doctest::Approx(-3.0));
    CHECK(result.grads.head.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(result.grads.backbone.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(result.grads.tail.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("frozen backbone: gradients reported but never applied") {
    Td3Agent agent = make_agent(13, /*freeze=*/true);
    ReplayBuffer buffer = filled_buffer(6, 64);
    Rng rng(7);
    const Batch batch = assemble_batch(buffer, buffer.sample_indices(16, rng));
    const ActorLossResult result = actor_loss(agent, batch);
    CHECK(result.grads.backbone.lpNorm<Eigen::Infinity>() > 0.0);

    const Vector trunk_before = flatten(agent.actor.backbone);
    const Vector head_before = flatten(agent.actor.pre);
    apply_actor_step(agent, result);
    CHECK(flatten(agent.actor.backbone) == trunk_before);
    CHECK(flatten(agent.actor.pre) != head_before);
}

TEST_CASE("repeated updates pull the policy toward the critic peak") {
    // Quadratic landscape Q(s,a) = -(a - a*)^2 handled analytically: feed
    // dQ/da through the actor backward pass and apply Adam steps.
    const double a_star = 0.6;
    Rng rng(21);
    ApbActor actor = ApbActor::init(tiny_actor_config(), rng);
    AdamState opt_head = AdamState::init(parameter_count(actor.pre), 1e-2);
    AdamState opt_tail = AdamState::init(parameter_count(actor.post), 1e-2);

    Matrix states(2, 4);
    states << 0.1, -0.4, 0.8, 0.0, 0.3, 0.2, -0.5, 0.9;
    double initial_gap = 0.0, final_gap = 0.0;
    for (int step = 0; step < 200; ++step) {
        ActorTape tape;
        const Matrix actions = actor_forward(actor, states, &tape);
        const double gap = (actions.array() - a_star).abs().maxCoeff();
        if (step == 0) initial_gap = gap;
        final_gap = gap;
        const Matrix d_actions =
            (2.0 / states.cols()) * (actions.array() - a_star).matrix();
        ActorGrads grads;
        actor_backward(actor, tape, d_actions, grads);
        unflatten(actor.pre, adam_step(opt_head, flatten(actor.pre), grads.head));
        unflatten(actor.post, adam_step(opt_tail, flatten(actor.post), grads.tail));
    }
    CHECK(final_gap < 0.05);
    CHECK(final_gap < initial_gap);
}

TEST_CASE("update cycle: zero updates change nothing, delay counts actor steps") {
    Td3Agent agent = make_agent(14);
    ReplayBuffer buffer = filled_buffer(8, 64);
    Rng rng(9);

    const Vector before = flatten(agent.q1);
    UpdateMetrics metrics = update_cycle(agent, buffer, 0, 16, rng);
    CHECK(metrics.critic_updates == 0);
    CHECK(flatten(agent.q1) == before);

    metrics = update_cycle(agent, buffer, 10, 16, rng);
    CHECK(metrics.critic_updates == 10);
    CHECK(metrics.actor_updates == 5); // policy_delay = 2

    ReplayBuffer small = filled_buffer(8, 4);
    CHECK_THROWS_AS(update_cycle(agent, small, 1, 16, rng), StructuralError);
}

TEST_CASE("target networks track as an exact convex combination") {
    Td3Agent agent = make_agent(15);
    // Desynchronize online and target critics first.
    ReplayBuffer buffer = filled_buffer(10, 64);
    Rng rng(11);
    update_cycle(agent, buffer, 4, 16, rng);

    const double tau = agent.config.tau;
    const Vector online = flatten(agent.q1);
    const Vector target_old = flatten(agent.q1_target);
    polyak_update(agent);
    const Vector expected = tau * online + (1.0 - tau) * target_old;
    CHECK(flatten(agent.q1_target) == expected);
}

TEST_CASE("frozen backbone survives a full update cycle byte-for-byte") {
    Td3Agent agent = make_agent(16, /*freeze=*/true);
    const std::uint64_t before = backbone_checksum(agent.actor);
    const std::uint64_t target_before = backbone_checksum(agent.actor_target);
    ReplayBuffer buffer = filled_buffer(12, 128);
    Rng rng(13);
    const Vector head_before = flatten(agent.actor.pre);
    update_cycle(agent, buffer, 30, 32, rng);
    CHECK(backbone_checksum(agent.actor) == before);
    CHECK(backbone_checksum(agent.actor_target) == target_before);
    CHECK(flatten(agent.actor.pre) != head_before); // adapters did move
}

TEST_CASE("exploration: zero sigma is deterministic under both protocols") {
    Td3Agent agent = make_agent(17);
    Vector state(2);
    state << 0.3, -0.7;
    const Vector reference = act(agent.actor, state);
    for (ExploreProtocol protocol :
         {ExploreProtocol::ActionNoise, ExploreProtocol::ParamNoise}) {
        Rng rng(5);
        Explorer explorer(agent.actor, protocol, 0.0, rng);
        CHECK(explorer.select(state, rng) == reference);
    }
}

TEST_CASE("action noise clips to the bounds") {
    Rng rng(18);
    ApbActor actor = ApbActor::init(tiny_actor_config(), rng);
    // Rig the actor to output exactly 0.99 (no squash, constant bias).
    actor.squash = false;
    actor.pre.weights.setZero();
    actor.pre.bias.setZero();
    for (DenseLayer& l : actor.backbone.layers) {
        l.weights.setZero();
        l.bias.setZero();
    }
    actor.post.weights.setZero();
    actor.post.bias.setConstant(0.99);

    Rng noise_rng(19);
    Explorer explorer(actor, ExploreProtocol::ActionNoise, 10.0, noise_rng);
    Vector state(2);
    state << 0.0, 0.0;
    double hi = -2.0, lo = 2.0;
    for (int i = 0; i < 200; ++i) {
        const Vector a = explorer.select(state, noise_rng);
        hi = std::max(hi, a(0));
        lo = std::min(lo, a(0));
        CHECK(std::abs(a(0)) <= 1.0);
    }
    CHECK(hi == 1.0);
    CHECK(lo == -1.0);
}

TEST_CASE("parameter noise is fixed within an episode and redrawn across") {
    Td3Agent agent = make_agent(20);
    Vector s1(2), s2(2);
    s1 << 0.2, 0.4;
    s2 << -0.5, 0.1;

    Rng rng(31);
    Explorer episode1(agent.actor, ExploreProtocol::ParamNoise, 0.1, rng);
    const Vector a1_first = episode1.select(s1, rng);
    const Vector a1_again = episode1.select(s1, rng);
    CHECK(a1_first == a1_again); // same perturbed parameters all episode
    episode1.select(s2, rng);

    Explorer episode2(agent.actor, ExploreProtocol::ParamNoise, 0.1, rng);
    CHECK(episode2.select(s1, rng) != a1_first); // fresh draw
}

TEST_CASE("golden: seeded update cycle reproduces its recorded loss trace") {
    Td3Agent agent = make_agent(42);
    ReplayBuffer buffer = filled_buffer(42, 256);
    Rng rng(42);
    const UpdateMetrics m = update_cycle(agent, buffer, 200, 32, rng);
    // Frozen at first build; guards numeric drift in the whole update path.
    CHECK(m.mean_critic_loss ==
          doctest::Approx(0.64677893306859502).epsilon(1e-12));
    CHECK(m.mean_actor_loss ==
          doctest::Approx(0.018419239060178661).epsilon(1e-12));
}
