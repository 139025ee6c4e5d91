#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>

namespace apb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Finite MDP with flat state-action indexing k = s * n_actions + a.
///
/// `transition` is (|S||A|) x |S|: row k holds P(. | s, a). `reward` is the
/// length-|S||A| state-action reward vector. Construction validates row
/// stochasticity (sum within 1e-12 of 1, nonnegative entries), reward bounds,
/// and discount in (0,1).
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    Matrix transition;
    Vector reward;
    double discount = 0.0;
    double reward_min = 0.0;
    double reward_max = 0.0;

    /// Validating constructor. Reward bounds default to the observed range.
    static TabularMdp create(int n_states, int n_actions, Matrix transition,
                             Vector reward, double discount);
    static TabularMdp create(int n_states, int n_actions, Matrix transition,
                             Vector reward, double discount, double reward_min,
                             double reward_max);

    int flat_index(int state, int action) const { return state * n_actions + action; }
};

/// Policy as a row-block matrix: |S| x (|S||A|), row s carries pi(.|s) in
/// column block [s|A|, (s+1)|A|) and zeros elsewhere.
struct PolicyMatrix {
    int n_states = 0;
    int n_actions = 0;
    Matrix data;

    /// The |A| entries of row `state` inside its own block.
    Vector distribution(int state) const;

    /// Per-state distribution table, |S| x |A|. Exact block copy, so
    /// policy_matrix() followed by table() round-trips bit-for-bit.
    Matrix table() const;
};

/// Rank-one / null split of a policy matrix against the pivot q = gamma*P*V + r:
///   Pi = V q^T / |q|^2 + N,   N q = 0.
struct PolicyDecomposition {
    Matrix rank_one;
    Matrix null_part;
    Vector pivot;
};

/// Builds the row-block policy matrix from an |S| x |A| distribution table.
/// Each row must be a distribution (nonnegative, sums to 1 within 1e-12).
PolicyMatrix policy_matrix(const TabularMdp& mdp, const Matrix& table);

/// Induced |S| x |S| state transition matrix Pi * P.
Matrix induced_transition(const TabularMdp& mdp, const PolicyMatrix& pi);

/// Induced per-state expected reward Pi * r.
Vector induced_reward(const TabularMdp& mdp, const PolicyMatrix& pi);

/// Policy values by partial-pivot linear solve of (I - gamma*Pi*P) V = Pi*r.
/// Throws NumericError when the solve residual exceeds 1e-8.
Vector state_values(const TabularMdp& mdp, const PolicyMatrix& pi);

/// The pivot vector gamma*P*V + r of length |S||A|.
Vector pivot_vector(const TabularMdp& mdp, const Vector& values);

/// Splits Pi into the rank-one term V q^T / |q|^2 and the residual N with
/// rows orthogonal to q. Throws DegenerateInputError when |q| <= 1e-12.
PolicyDecomposition decompose_policy(const TabularMdp& mdp, const PolicyMatrix& pi);

/// Greedy optimal policy via value iteration (sup-norm residual below `tol`),
/// ties broken toward the lowest action index, followed by an exact policy
/// evaluation solve for the returned values.
std::pair<PolicyMatrix, Vector> solve_optimal_policy(const TabularMdp& mdp,
                                                     double tol = 1e-12,
                                                     int max_iterations = 1000000);

/// Greedy action under `values` at `state`, lowest index on ties.
int greedy_action(const TabularMdp& mdp, const Vector& values, int state);

// Scenario file format: header line "|S| |A| gamma", then |S||A| transition
// rows of |S| numbers each, then the |S||A| reward entries. Values are
// written with 12 significant digits, which round-trips decimal inputs of up
// to 12 significant digits bit-stably.
void save_scenario(const std::string& path, const TabularMdp& mdp);
TabularMdp load_scenario(const std::string& path);
std::string format_scenario(const TabularMdp& mdp);
TabularMdp parse_scenario(const std::string& text);

} // namespace apb
