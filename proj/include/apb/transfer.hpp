#pragma once

#include "apb/gridworld.hpp"
#include "apb/tabular.hpp"

#include <functional>
#include <string>
#include <vector>

namespace apb {

/// A task together with a policy and its exact values; the unit the
/// transport construction operates on.
struct SolvedTask {
    TabularMdp mdp;
    PolicyMatrix pi;
    Vector values;
};

/// Solve a task to optimality and bundle the pieces.
SolvedTask solve_task(const TabularMdp& mdp, double tol = 1e-13);

/// Cross-task transport (A, B): A carries values (A V1 = V2) and B carries
/// the pivot direction, B = q1 q2^T / |q2|^2 with q_i = gamma*P*V_i + r_i.
/// By construction B q2 = q1, so (A Pi1 B) q2 = A Pi1 q1 = A V1 = V2.
struct TransportPair {
    Matrix state_map;  // A, |S| x |S|
    Matrix action_map; // B, |S||A| x |S||A|
};

/// Builds the transport pair for two tasks over the same transition kernel.
/// Preconditions: kernels identical, |A V1 - V2|_inf <= 1e-9, |q2| > 1e-12.
/// Postcondition (checked): |(A Pi1 B) q2 - V2|_inf <= 1e-8.
TransportPair build_transport_pair(const SolvedTask& task1, const SolvedTask& task2,
                                   const Matrix& state_map);

enum class StateMapMode {
    PermutationSearch, // 0/1 matrix matching equal values; fails on mismatched multisets
    RankOne,           // v2 v1^T / |v1|^2
    LeastSquares,      // closest-to-identity solution: I + (v2 - v1) v1^T / |v1|^2
};

/// Finds A with |A v1 - v2|_inf <= 1e-9 in the requested mode.
Matrix build_state_map(const Vector& v1, const Vector& v2, StateMapMode mode);

/// Result of reading a per-state action distribution out of a row image.
struct ExtractedPolicy {
    int state = 0;
    Vector distribution;
};

/// The extraction operator: locates the single state block carrying the
/// vector's support (entries outside it must be <= 1e-9 in magnitude) and
/// returns that block renormalized to sum 1. Throws ExtractionError when the
/// support spans several blocks or the block mass is not positive.
ExtractedPolicy extract_policy(const Vector& row_image, int n_actions);

/// Per-state outcome of transporting an optimal gridworld policy through a
/// state permutation.
struct TransportedStateCheck {
    int state = 0;
    int transported_action = 0;
    bool action_optimal = false;   // transported action attains the optimal Q
    double linear_image_deviation = 0.0;
    double off_block_mass = 0.0;   // diagnostic: |row| mass outside block s
};

struct IsomorphicTransportReport {
    std::vector<TransportedStateCheck> states;
    double max_linear_image_deviation = 0.0;
    double value_consistency_deviation = 0.0;
    bool all_actions_optimal = false;
    bool greedy_rollouts_reach_goal = false;
    bool row_block_stochastic = false; // diagnostic only, not asserted
};

/// Verifies policy transport between a reference gridworld and a permuted
/// copy: builds A from the permutation, B from the pivot formula, and checks
/// that for every state the transported row restricted to its block equals a
/// per-state linear image of the source policy, that reading the row out
/// recovers a task-2 optimal action, and that greedy rollouts reach the goal.
IsomorphicTransportReport verify_isomorphic_transport(const GridworldTask& reference,
                                                      const GridworldTask& permuted);

/// Adaptation-error bound evaluation for a pair of functions that agree on a
/// support set. `bound_value` is exactly 2*L*|h|_op*|OOD|*eps_max.
struct BoundReport {
    double lipschitz_constant = 0.0;
    double head_operator_norm = 0.0;
    int ood_count = 0;
    double eps_max = 0.0;
    double bound_value = 0.0;
    double empirical_error = 0.0;
    bool bound_holds = false;
};

using VectorFn = std::function<Vector(const Vector&)>;

/// Computes the empirical adapted-output discrepancy sum over `test_inputs`
/// and the bound. Points within 1e-9 of the support set count as in-support.
/// Preconditions: the two functions agree within 1e-9 on every support point;
/// `lipschitz_constant` dominates both functions' constants.
BoundReport evaluate_adaptation_bound(const VectorFn& f_meta, const VectorFn& f_star,
                                      const Matrix& head,
                                      const std::vector<Vector>& test_inputs,
                                      const std::vector<Vector>& support,
                                      double lipschitz_constant);

} // namespace apb
