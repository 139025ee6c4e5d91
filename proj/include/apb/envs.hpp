#pragma once

#include "apb/rng.hpp"
#include "apb/tabular.hpp" // Matrix/Vector aliases

#include <functional>
#include <string>
#include <vector>

namespace apb {

/// Task families on the planar point mass. The first four vary the reward;
/// dyn-rand varies the dynamics and always rewards forward progress.
enum class TaskFamily { VelLine, VelToDir, GoalPlane, DirPlane, DynRand };

/// What the reward measures for one concrete task.
enum class TaskObjective { TrackVelocityX, FollowDirection, ReachGoal, Forward };

struct TaskSpec {
    TaskFamily family = TaskFamily::VelLine;
    TaskObjective objective = TaskObjective::TrackVelocityX;
    /// TrackVelocityX: (target, 0). FollowDirection: unit direction.
    /// ReachGoal: goal point. Forward: (alpha, 0) dynamics exponent.
    Eigen::Vector2d param = Eigen::Vector2d::Zero();
    bool is_ood = false;
};

struct TaskDistribution {
    TaskFamily family = TaskFamily::VelLine;
    std::uint64_t seed = 0;
};

TaskFamily parse_family(const std::string& name);
std::string family_name(TaskFamily family);

/// n i.i.d. draws from the family's training support:
///   vel-line, vel-to-dir: velocity targets U(0, 3)
///   goal-plane: goals 3*(cos t, sin t), t ~ U(0, pi)
///   dir-plane: unit directions at angle t ~ U(0, pi)
///   dyn-rand: alpha ~ U(-3.0, 2.1)
std::vector<TaskSpec> sample_train_tasks(const TaskDistribution& dist, int n);

/// The fixed out-of-distribution evaluation task of each family:
/// velocity -2.0; backward direction; goal/direction angle 1.5*pi; alpha 2.4.
TaskSpec ood_task(TaskFamily family);

/// True when the task parameter lies inside the family's training support.
bool in_train_support(TaskFamily family, const TaskSpec& task);

/// Point-mass integration constants. dyn-rand scales mass by 1.5^alpha and
/// damping by 1.3^alpha.
struct PointMassConfig {
    double mass = 0.2;
    double damping = 0.5;
    double dt = 0.05;
    int horizon = 100;
    double action_bound = 1.0;
    double control_cost = 0.01;
    double init_pos_range = 0.25; // reset draws uniform in +-range per axis
    double init_vel_range = 0.25;
};

/// Reward at a (state, action) pair; states are (px, py, vx, vy).
/// Velocity and goal families peak at 0 (target met, zero action).
double task_reward(const TaskSpec& task, const PointMassConfig& config,
                   const Vector& state, const Vector& action);

/// Forward-Euler point mass: v <- (1 - damping*dt) v + (dt/mass) a.
class PointMassEnv {
  public:
    PointMassEnv(const PointMassConfig& config, const TaskSpec& task);

    Vector reset(Rng& rng);
    struct StepResult {
        Vector state;
        double reward;
        bool truncated; // horizon reached; never a value-terminal
    };
    /// Rewards are evaluated at the post-step state, so tracking tasks see
    /// the action's effect immediately.
    StepResult step(const Vector& action);

    static constexpr int state_dim() { return 4; }
    static constexpr int action_dim() { return 2; }
    const TaskSpec& task() const { return task_; }
    double effective_mass() const { return mass_; }
    double effective_damping() const { return damping_; }

  private:
    PointMassConfig config_;
    TaskSpec task_;
    double mass_;
    double damping_;
    Vector state_;
    int t_ = 0;
};

using PolicyFn = std::function<Vector(const Vector&)>;

struct RolloutResult {
    std::vector<Vector> states;  // length horizon + 1
    std::vector<Vector> actions; // length horizon
    std::vector<double> rewards; // length horizon
    double total_return = 0.0;
};

/// Deterministic given the rng stream and the policy. Throws NumericError if
/// the dynamics blow up (non-finite state).
RolloutResult rollout(PointMassEnv& env, const PolicyFn& policy, Rng& rng);

/// CSV export with columns t,p_x,p_y,v_x,v_y,a_x,a_y,r.
std::string trajectory_csv(const RolloutResult& result);

} // namespace apb
