#include "apb/envs.hpp"

#include "apb/errors.hpp"

#include <cmath>
#include <cstdio>

namespace apb {

TaskFamily parse_family(const std::string& name) {
    if (name == "vel-line") return TaskFamily::VelLine;
    if (name == "vel-to-dir") return TaskFamily::VelToDir;
    if (name == "goal-plane") return TaskFamily::GoalPlane;
    if (name == "dir-plane") return TaskFamily::DirPlane;
    if (name == "dyn-rand") return TaskFamily::DynRand;
    throw ValidationError("unknown task family: " + name);
}

std::string family_name(TaskFamily family) {
    switch (family) {
        case TaskFamily::VelLine: return "vel-line";
        case TaskFamily::VelToDir: return "vel-to-dir";
        case TaskFamily::GoalPlane: return "goal-plane";
        case TaskFamily::DirPlane: return "dir-plane";
        case TaskFamily::DynRand: return "dyn-rand";
    }
    throw StructuralError("bad family enum");
}

std::vector<TaskSpec> sample_train_tasks(const TaskDistribution& dist, int n) {
    if (n < 1) throw StructuralError("sample_train_tasks: n must be >= 1");
    Rng rng(dist.seed);
    std::vector<TaskSpec> tasks;
    tasks.reserve(n);
    for (int i = 0; i < n; ++i) {
        TaskSpec task;
        task.family = dist.family;
        task.is_ood = false;
        switch (dist.family) {
            case TaskFamily::VelLine:
            case TaskFamily::VelToDir:
                task.objective = TaskObjective::TrackVelocityX;
                task.param = {rng.uniform(0.0, 3.0), 0.0};
                break;
            case TaskFamily::GoalPlane: {
                const double theta = rng.uniform(0.0, M_PI);
                task.objective = TaskObjective::ReachGoal;
                task.param = {3.0 * std::cos(theta), 3.0 * std::sin(theta)};
                break;
            }
            case TaskFamily::DirPlane: {
                const double theta = rng.uniform(0.0, M_PI);
                task.objective = TaskObjective::FollowDirection;
                task.param = {std::cos(theta), std::sin(theta)};
                break;
            }
            case TaskFamily::DynRand:
                task.objective = TaskObjective::Forward;
                task.param = {rng.uniform(-3.0, 2.1), 0.0};
                break;
        }
        tasks.push_back(task);
    }
    return tasks;
}

TaskSpec ood_task(TaskFamily family) {
    TaskSpec task;
    task.family = family;
    task.is_ood = true;
    switch (family) {
        case TaskFamily::VelLine:
            task.objective = TaskObjective::TrackVelocityX;
            task.param = {-2.0, 0.0};
            break;
        case TaskFamily::VelToDir:
            task.objective = TaskObjective::FollowDirection;
            task.param = {-1.0, 0.0}; // backward
            break;
        case TaskFamily::GoalPlane: {
            const double theta = 1.5 * M_PI;
            task.objective = TaskObjective::ReachGoal;
            task.param = {3.0 * std::cos(theta), 3.0 * std::sin(theta)};
            break;
        }
        case TaskFamily::DirPlane: {
            const double theta = 1.5 * M_PI;
            task.objective = TaskObjective::FollowDirection;
            task.param = {std::cos(theta), std::sin(theta)};
            break;
        }
        case TaskFamily::DynRand:
            task.objective = TaskObjective::Forward;
            task.param = {2.4, 0.0};
            break;
    }
    return task;
}

bool in_train_support(TaskFamily family, const TaskSpec& task) {
    switch (family) {
        case TaskFamily::VelLine:
        case TaskFamily::VelToDir: {
            if (task.objective != TaskObjective::TrackVelocityX) return false;
            const double v = task.param(0);
            return v >= 0.0 && v <= 3.0;
        }
        case TaskFamily::GoalPlane: {
            if (task.objective != TaskObjective::ReachGoal) return false;
            const double theta = std::atan2(task.param(1), task.param(0));
            return std::abs(task.param.norm() - 3.0) < 1e-9 && theta >= 0.0;
        }
        case TaskFamily::DirPlane: {
            if (task.objective != TaskObjective::FollowDirection) return false;
            const double theta = std::atan2(task.param(1), task.param(0));
            return std::abs(task.param.norm() - 1.0) < 1e-9 && theta >= 0.0;
        }
        case TaskFamily::DynRand: {
            if (task.objective != TaskObjective::Forward) return false;
            const double alpha = task.param(0);
            return alpha >= -3.0 && alpha <= 2.1;
        }
    }
    return false;
}

double task_reward(const TaskSpec& task, const PointMassConfig& config,
                   const Vector& state, const Vector& action) {
    const double cost = config.control_cost * action.squaredNorm();
    switch (task.objective) {
        case TaskObjective::TrackVelocityX:
            return -std::abs(state(2) - task.param(0)) - cost;
        case TaskObjective::ReachGoal: {
            const double dx = state(0) - task.param(0);
            const double dy = state(1) - task.param(1);
            return -std::sqrt(dx * dx + dy * dy) - cost;
        }
        case TaskObjective::FollowDirection:
            return state(2) * task.param(0) + state(3) * task.param(1) - cost;
        case TaskObjective::Forward:
            return state(2) - cost;
    }
    throw StructuralError("bad objective enum");
}

PointMassEnv::PointMassEnv(const PointMassConfig& config, const TaskSpec& task)
    : config_(config), task_(task), mass_(config.mass), damping_(config.damping) {
    if (task.family == TaskFamily::DynRand) {
        const double alpha = task.param(0);
        mass_ *= std::pow(1.5, alpha);
        damping_ *= std::pow(1.3, alpha);
    }
    state_ = Vector::Zero(4);
}

Vector PointMassEnv::reset(Rng& rng) {
    state_ = Vector::Zero(4);
    state_(0) = rng.uniform(-config_.init_pos_range, config_.init_pos_range);
    state_(1) = rng.uniform(-config_.init_pos_range, config_.init_pos_range);
    state_(2) = rng.uniform(-config_.init_vel_range, config_.init_vel_range);
    state_(3) = rng.uniform(-config_.init_vel_range, config_.init_vel_range);
    t_ = 0;
    return state_;
}

PointMassEnv::StepResult PointMassEnv::step(const Vector& action) {
    if (action.size() != 2) throw StructuralError("PointMassEnv::step: action must be 2d");
    Vector a = action;
    for (int i = 0; i < 2; ++i)
        a(i) = std::clamp(a(i), -config_.action_bound, config_.action_bound);

    const double decay = 1.0 - damping_ * config_.dt;
    state_(2) = decay * state_(2) + (config_.dt / mass_) * a(0);
    state_(3) = decay * state_(3) + (config_.dt / mass_) * a(1);
    state_(0) += config_.dt * state_(2);
    state_(1) += config_.dt * state_(3);
    t_ += 1;

    if (!state_.allFinite())
        throw NumericError("PointMassEnv::step: non-finite state at t=" +
                           std::to_string(t_));

    StepResult result;
    result.state = state_;
    result.reward = task_reward(task_, config_, state_, a);
    result.truncated = t_ >= config_.horizon;
    return result;
}

RolloutResult rollout(PointMassEnv& env, const PolicyFn& policy, Rng& rng) {
    RolloutResult result;
    Vector state = env.reset(rng);
    result.states.push_back(state);
    while (true) {
        Vector action = policy(state);
        const PointMassEnv::StepResult sr = env.step(action);
        result.actions.push_back(std::move(action));
        result.rewards.push_back(sr.reward);
        result.total_return += sr.reward;
        result.states.push_back(sr.state);
        state = sr.state;
        if (sr.truncated) break;
    }
    return result;
}

std::string trajectory_csv(const RolloutResult& result) {
    std::string out = "t,p_x,p_y,v_x,v_y,a_x,a_y,r\n";
    char line[256];
    for (std::size_t t = 0; t < result.actions.size(); ++t) {
        const Vector& s = result.states[t];
        const Vector& a = result.actions[t];
        std::snprintf(line, sizeof(line),
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, s(0), s(1),
                      s(2), s(3), a(0), a(1), result.rewards[t]);
        out += line;
    }
    return out;
}

} // namespace apb
