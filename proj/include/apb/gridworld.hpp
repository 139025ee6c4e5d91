#pragma once

#include "apb/tabular.hpp"

#include <optional>
#include <vector>

namespace apb {

/// W x H deterministic gridworld. Actions are {up, down, left, right};
/// moving into a wall leaves the state unchanged. The goal cell pays
/// `goal_reward` (for every action) and all other cells pay `step_reward`,
/// so the walk kernel is identical across goal placements and the optimal
/// policy parks on the goal by bumping a wall.
///
/// State index: s = y * width + x, with y growing downward.
struct GridworldTask {
    int width = 3;
    int height = 3;
    int goal_x = 0;
    int goal_y = 0;
    double step_reward = -1.0;
    double goal_reward = 0.0;
    double discount = 0.9;

    /// When set, maps this task's state s to the reference task's state
    /// permutation[s]; the tasks are then the same world up to relabeling.
    std::optional<std::vector<int>> permutation;

    int n_states() const { return width * height; }
    int state_index(int x, int y) const { return y * width + x; }
    int goal_state() const { return state_index(goal_x, goal_y); }
};

inline constexpr int kGridActions = 4; // up, down, left, right

/// Builds the tabular MDP for a task. Tasks over the same grid share the
/// transition kernel exactly; only the reward vector moves with the goal.
TabularMdp gridworld_mdp(const GridworldTask& task);

/// Deterministic successor of (state, action) under the wall-stay kernel.
int gridworld_next_state(const GridworldTask& task, int state, int action);

/// The 8 square symmetries: 0 identity, 1-3 rotations by 90/180/270,
/// 4 horizontal flip, 5 vertical flip, 6 main-diagonal, 7 anti-diagonal.
/// Rotations and diagonal flips require width == height.
GridworldTask symmetric_task(const GridworldTask& reference, int symmetry);

/// How the symmetry relabels actions (e.g. a 90-degree rotation turns "up"
/// steps into "right" steps). relabel[a] is the action in the transformed
/// task matching action a in the reference.
std::vector<int> symmetry_action_relabel(const GridworldTask& reference, int symmetry);

/// 0/1 matrix A with A(i, perm[i]) = 1, so A v picks v[perm[i]] into slot i.
Matrix permutation_matrix(const std::vector<int>& perm);

/// Verifies that `other.permutation` really identifies `other` with
/// `reference`: rewards map exactly, and some action relabeling makes the
/// kernels correspond. Throws ValidationError with the first mismatch.
void check_task_isomorphism(const GridworldTask& reference, const GridworldTask& other);

} // namespace apb
