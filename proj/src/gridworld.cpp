#include "apb/gridworld.hpp"

#include "apb/errors.hpp"

#include <array>
#include <cmath>

namespace apb {

namespace {

// dx, dy per action: up, down, left, right (y grows downward)
constexpr int kDx[kGridActions] = {0, 0, -1, 1};
constexpr int kDy[kGridActions] = {-1, 1, 0, 0};

struct Cell {
    int x, y;
};

Cell apply_symmetry(int symmetry, Cell c, int w, int h) {
    switch (symmetry) {
        case 0: return c;
        case 1: return {h - 1 - c.y, c.x};         // rot 90
        case 2: return {w - 1 - c.x, h - 1 - c.y}; // rot 180
        case 3: return {c.y, w - 1 - c.x};         // rot 270
        case 4: return {w - 1 - c.x, c.y};         // flip x
        case 5: return {c.x, h - 1 - c.y};         // flip y
        case 6: return {c.y, c.x};                 // main diagonal
        case 7: return {h - 1 - c.y, w - 1 - c.x}; // anti diagonal
        default: throw StructuralError("symmetry id must be in [0,8)");
    }
}

bool needs_square(int symmetry) {
    return symmetry == 1 || symmetry == 3 || symmetry == 6 || symmetry == 7;
}

} // namespace

int gridworld_next_state(const GridworldTask& task, int state, int action) {
    if (action < 0 || action >= kGridActions)
        throw StructuralError("gridworld_next_state: bad action");
    const int x = state % task.width;
    const int y = state / task.width;
    const int nx = x + kDx[action];
    const int ny = y + kDy[action];
    if (nx < 0 || nx >= task.width || ny < 0 || ny >= task.height) return state;
    return task.state_index(nx, ny);
}

TabularMdp gridworld_mdp(const GridworldTask& task) {
    const int n = task.n_states();
    Matrix transition = Matrix::Zero(n * kGridActions, n);
    Vector reward(n * kGridActions);
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < kGridActions; ++a) {
            const int k = s * kGridActions + a;
            transition(k, gridworld_next_state(task, s, a)) = 1.0;
            reward(k) = (s == task.goal_state()) ? task.goal_reward : task.step_reward;
        }
    }
    return TabularMdp::create(n, kGridActions, std::move(transition), std::move(reward),
                              task.discount);
}

GridworldTask symmetric_task(const GridworldTask& reference, int symmetry) {
    if (needs_square(symmetry) && reference.width != reference.height)
        throw StructuralError("symmetric_task: rotation/diagonal needs a square grid");
    GridworldTask out = reference;
    const Cell goal =
        apply_symmetry(symmetry, {reference.goal_x, reference.goal_y}, reference.width,
                       reference.height);
    out.goal_x = goal.x;
    out.goal_y = goal.y;
    // permutation[s_new] = reference state occupying the cell that maps to s_new
    std::vector<int> perm(reference.n_states());
    for (int y = 0; y < reference.height; ++y) {
        for (int x = 0; x < reference.width; ++x) {
            const Cell image = apply_symmetry(symmetry, {x, y}, reference.width,
                                              reference.height);
            perm[out.state_index(image.x, image.y)] = reference.state_index(x, y);
        }
    }
    out.permutation = std::move(perm);
    return out;
}

std::vector<int> symmetry_action_relabel(const GridworldTask& reference, int symmetry) {
    // A symmetry is affine on cells, so it maps the step direction of action a
    // to a step direction of a unique action.
    const int w = reference.width, h = reference.height;
    std::vector<int> relabel(kGridActions, -1);
    for (int a = 0; a < kGridActions; ++a) {
        // Evaluate the direction image at a cell whose step stays in bounds.
        const Cell from = {kDx[a] < 0 ? 1 : 0, kDy[a] < 0 ? 1 : 0};
        const Cell to = {from.x + kDx[a], from.y + kDy[a]};
        const Cell fi = apply_symmetry(symmetry, from, w, h);
        const Cell ti = apply_symmetry(symmetry, to, w, h);
        const int dx = ti.x - fi.x, dy = ti.y - fi.y;
        for (int b = 0; b < kGridActions; ++b)
            if (kDx[b] == dx && kDy[b] == dy) relabel[a] = b;
        if (relabel[a] < 0)
            throw NumericError("symmetry_action_relabel: no matching direction");
    }
    return relabel;
}

Matrix permutation_matrix(const std::vector<int>& perm) {
    const int n = static_cast<int>(perm.size());
    Matrix a = Matrix::Zero(n, n);
    std::vector<bool> seen(n, false);
    for (int i = 0; i < n; ++i) {
        if (perm[i] < 0 || perm[i] >= n || seen[perm[i]])
            throw StructuralError("permutation_matrix: not a permutation");
        seen[perm[i]] = true;
        a(i, perm[i]) = 1.0;
    }
    return a;
}

void check_task_isomorphism(const GridworldTask& reference, const GridworldTask& other) {
    if (!other.permutation)
        throw ValidationError("check_task_isomorphism: permutation missing");
    const auto& perm = *other.permutation;
    if (static_cast<int>(perm.size()) != reference.n_states() ||
        other.n_states() != reference.n_states())
        throw ValidationError("check_task_isomorphism: size mismatch");
    const TabularMdp ref_mdp = gridworld_mdp(reference);
    const TabularMdp other_mdp = gridworld_mdp(other);

    // Rewards are action-independent, so the state permutation alone must
    // reproduce them exactly.
    for (int s = 0; s < other.n_states(); ++s)
        for (int a = 0; a < kGridActions; ++a)
            if (other_mdp.reward(s * kGridActions + a) !=
                ref_mdp.reward(perm[s] * kGridActions + a))
                throw ValidationError("check_task_isomorphism: reward mismatch at state " +
                                      std::to_string(s));

    // Kernels must correspond under the permutation with some action
    // relabeling: next_other(s, rho(a)) == perm^{-1}(next_ref(perm(s), a)).
    std::vector<int> inverse(perm.size());
    for (int i = 0; i < static_cast<int>(perm.size()); ++i) inverse[perm[i]] = i;
    for (int a = 0; a < kGridActions; ++a) {
        bool matched = false;
        for (int b = 0; b < kGridActions && !matched; ++b) {
            bool ok = true;
            for (int s = 0; s < other.n_states() && ok; ++s) {
                const int expected = inverse[gridworld_next_state(reference, perm[s], a)];
                if (gridworld_next_state(other, s, b) != expected) ok = false;
            }
            matched = ok;
        }
        if (!matched)
            throw ValidationError(
                "check_task_isomorphism: no action relabeling matches the kernels");
    }
}

} // namespace apb
