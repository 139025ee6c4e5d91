#include "apb/transfer.hpp"

#include "apb/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace apb {

SolvedTask solve_task(const TabularMdp& mdp, double tol) {
    auto [pi, values] = solve_optimal_policy(mdp, tol);
    return SolvedTask{mdp, std::move(pi), std::move(values)};
}

TransportPair build_transport_pair(const SolvedTask& task1, const SolvedTask& task2,
                                   const Matrix& state_map) {
    const TabularMdp& m1 = task1.mdp;
    const TabularMdp& m2 = task2.mdp;
    if (m1.n_states != m2.n_states || m1.n_actions != m2.n_actions)
        throw StructuralError("build_transport_pair: task dimensions differ");
    if ((m1.transition - m2.transition).lpNorm<Eigen::Infinity>() > 1e-12 ||
        m1.discount != m2.discount)
        throw StructuralError("build_transport_pair: tasks must share the transition "
                              "kernel and discount; only rewards may differ");
    if (state_map.rows() != m1.n_states || state_map.cols() != m1.n_states)
        throw StructuralError("build_transport_pair: state map must be |S| x |S|");

    const double map_err =
        (state_map * task1.values - task2.values).lpNorm<Eigen::Infinity>();
    if (map_err > 1e-9)
        throw StructuralError("build_transport_pair: state map violates A V1 = V2 "
                              "(deviation " + std::to_string(map_err) + ")");

    const Vector q1 = pivot_vector(m1, task1.values);
    const Vector q2 = pivot_vector(m2, task2.values);
    const double q2_norm2 = q2.squaredNorm();
    if (std::sqrt(q2_norm2) <= 1e-12)
        throw DegenerateInputError("build_transport_pair: zero pivot for task 2");

    TransportPair pair;
    pair.state_map = state_map;
    pair.action_map = (q1 * q2.transpose()) / q2_norm2;

    const Vector carried =
        pair.state_map * (task1.pi.data * (pair.action_map * q2));
    const double consistency = (carried - task2.values).lpNorm<Eigen::Infinity>();
    if (consistency > 1e-8)
        throw NumericError("build_transport_pair: transported values deviate by " +
                           std::to_string(consistency));
    return pair;
}

Matrix build_state_map(const Vector& v1, const Vector& v2, StateMapMode mode) {
    if (v1.size() != v2.size())
        throw StructuralError("build_state_map: value vectors must have equal length");
    const int n = static_cast<int>(v1.size());

    Matrix a;
    switch (mode) {
        case StateMapMode::PermutationSearch: {
            std::vector<int> i1(n), i2(n);
            std::iota(i1.begin(), i1.end(), 0);
            std::iota(i2.begin(), i2.end(), 0);
            std::sort(i1.begin(), i1.end(), [&](int x, int y) { return v1(x) < v1(y); });
            std::sort(i2.begin(), i2.end(), [&](int x, int y) { return v2(x) < v2(y); });
            for (int r = 0; r < n; ++r)
                if (std::abs(v1(i1[r]) - v2(i2[r])) > 1e-9)
                    throw NoSolutionError("build_state_map: sorted value multisets do "
                                          "not match; no permutation exists");
            std::vector<int> perm(n);
            for (int r = 0; r < n; ++r) perm[i2[r]] = i1[r];
            a = permutation_matrix(perm);
            break;
        }
        case StateMapMode::RankOne: {
            const double norm2 = v1.squaredNorm();
            if (norm2 <= 1e-24) {
                if (v2.lpNorm<Eigen::Infinity>() > 1e-9)
                    throw NoSolutionError("build_state_map: v1 is zero but v2 is not");
                a = Matrix::Identity(n, n);
            } else {
                a = (v2 * v1.transpose()) / norm2;
            }
            break;
        }
        case StateMapMode::LeastSquares: {
            // Minimal Frobenius-norm correction of the identity subject to
            // A v1 = v2.
            const double norm2 = v1.squaredNorm();
            if (norm2 <= 1e-24) {
                if (v2.lpNorm<Eigen::Infinity>() > 1e-9)
                    throw NoSolutionError("build_state_map: v1 is zero but v2 is not");
                a = Matrix::Identity(n, n);
            } else {
                a = Matrix::Identity(n, n) + ((v2 - v1) * v1.transpose()) / norm2;
            }
            break;
        }
        default:
            throw StructuralError("build_state_map: unknown mode");
    }

    const double err = (a * v1 - v2).lpNorm<Eigen::Infinity>();
    if (err > 1e-9)
        throw NumericError("build_state_map: residual " + std::to_string(err));
    return a;
}

ExtractedPolicy extract_policy(const Vector& row_image, int n_actions) {
    if (n_actions <= 0 || row_image.size() % n_actions != 0)
        throw StructuralError("extract_policy: length must be a multiple of |A|");
    const int n_states = static_cast<int>(row_image.size()) / n_actions;
    constexpr double kSupportTol = 1e-9;

    int block = -1;
    for (int s = 0; s < n_states; ++s) {
        const double mass =
            row_image.segment(s * n_actions, n_actions).lpNorm<Eigen::Infinity>();
        if (mass > kSupportTol) {
            if (block >= 0)
                throw ExtractionError("extract_policy: support spans blocks " +
                                      std::to_string(block) + " and " + std::to_string(s));
            block = s;
        }
    }
    if (block < 0) throw ExtractionError("extract_policy: vector has no support");

    Vector dist = row_image.segment(block * n_actions, n_actions);
    const double total = dist.sum();
    if (total <= kSupportTol)
        throw ExtractionError("extract_policy: nonpositive block mass");
    ExtractedPolicy out;
    out.state = block;
    out.distribution = dist / total;
    return out;
}

IsomorphicTransportReport verify_isomorphic_transport(const GridworldTask& reference,
                                                      const GridworldTask& permuted) {
    if (!permuted.permutation)
        throw StructuralError("verify_isomorphic_transport: permutation missing");
    check_task_isomorphism(reference, permuted);

    const SolvedTask t1 = solve_task(gridworld_mdp(reference));
    const SolvedTask t2 = solve_task(gridworld_mdp(permuted));
    const Matrix a = permutation_matrix(*permuted.permutation);
    const TransportPair pair = build_transport_pair(t1, t2, a);

    const int n_states = t1.mdp.n_states;
    const int n_actions = t1.mdp.n_actions;
    const Matrix transported = a * t1.pi.data * pair.action_map;
    const Vector q2 = pivot_vector(t2.mdp, t2.values);

    IsomorphicTransportReport report;
    report.value_consistency_deviation =
        (transported * q2 - t2.values).lpNorm<Eigen::Infinity>();

    const auto& perm = *permuted.permutation;
    report.all_actions_optimal = true;
    report.row_block_stochastic = true;
    std::vector<int> transported_actions(n_states);

    // Action readout: the transported matrix is values2 * q2^T / |q2|^2, so
    // projecting it against the carried values A*V1 recovers a strictly
    // positive multiple of the action-score vector q2. This stays oriented
    // and well defined at states whose value is zero.
    const Vector carried_values = a * t1.values;
    if (carried_values.norm() <= 1e-12)
        throw DegenerateInputError("verify_isomorphic_transport: carried values are "
                                   "zero; no readout direction");
    const Vector score = transported.transpose() * carried_values;

    for (int s = 0; s < n_states; ++s) {
        TransportedStateCheck check;
        check.state = s;
        const Vector row = transported.row(s).transpose();
        const Vector block = row.segment(s * n_actions, n_actions);

        // The per-state linear head realized by the transport is the
        // (source-block, target-block) submatrix of B applied to the source
        // distribution.
        const int src = perm[s];
        const Vector src_dist = t1.pi.distribution(src);
        const Matrix head = pair.action_map.block(src * n_actions, s * n_actions,
                                                  n_actions, n_actions);
        check.linear_image_deviation =
            (block - head.transpose() * src_dist).lpNorm<Eigen::Infinity>();

        int best = 0;
        for (int aidx = 1; aidx < n_actions; ++aidx)
            if (score(s * n_actions + aidx) > score(s * n_actions + best)) best = aidx;
        check.transported_action = best;
        transported_actions[s] = best;

        // Optimality against the independently solved task 2.
        double best_q = -std::numeric_limits<double>::infinity();
        Vector qs(n_actions);
        for (int aidx = 0; aidx < n_actions; ++aidx) {
            qs(aidx) = q2(t2.mdp.flat_index(s, aidx));
            best_q = std::max(best_q, qs(aidx));
        }
        check.action_optimal = qs(best) >= best_q - 1e-9;

        double off_block = 0.0;
        for (int b = 0; b < n_states; ++b)
            if (b != s)
                off_block += row.segment(b * n_actions, n_actions).lpNorm<1>();
        check.off_block_mass = off_block;
        if (off_block > 1e-9 || std::abs(row.sum() - 1.0) > 1e-9)
            report.row_block_stochastic = false;

        report.max_linear_image_deviation =
            std::max(report.max_linear_image_deviation, check.linear_image_deviation);
        report.all_actions_optimal &= check.action_optimal;
        report.states.push_back(std::move(check));
    }

    // Greedy rollouts with the transported actions must reach the goal from
    // every start within n_states steps (deterministic kernel, so any longer
    // path would have to cycle).
    report.greedy_rollouts_reach_goal = true;
    const int goal = permuted.goal_state();
    for (int start = 0; start < n_states; ++start) {
        int s = start;
        bool reached = (s == goal);
        for (int step = 0; step < n_states && !reached; ++step) {
            s = gridworld_next_state(permuted, s, transported_actions[s]);
            reached = (s == goal);
        }
        if (!reached) report.greedy_rollouts_reach_goal = false;
    }
    return report;
}

BoundReport evaluate_adaptation_bound(const VectorFn& f_meta, const VectorFn& f_star,
                                      const Matrix& head,
                                      const std::vector<Vector>& test_inputs,
                                      const std::vector<Vector>& support,
                                      double lipschitz_constant) {
    constexpr double kSnapTol = 1e-9;
    for (const Vector& z : support) {
        const double gap = (f_meta(z) - f_star(z)).lpNorm<Eigen::Infinity>();
        if (gap > kSnapTol)
            throw StructuralError("evaluate_adaptation_bound: functions disagree on a "
                                  "support point by " + std::to_string(gap));
    }

    BoundReport report;
    report.lipschitz_constant = lipschitz_constant;
    Eigen::JacobiSVD<Matrix> svd(head);
    report.head_operator_norm =
        svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;

    for (const Vector& x : test_inputs) {
        report.empirical_error += (head * (f_star(x) - f_meta(x))).norm();
        double nearest = std::numeric_limits<double>::infinity();
        for (const Vector& z : support) nearest = std::min(nearest, (x - z).norm());
        if (nearest > kSnapTol) {
            report.ood_count += 1;
            report.eps_max = std::max(report.eps_max, nearest);
        }
    }

    report.bound_value = 2.0 * report.lipschitz_constant * report.head_operator_norm *
                         static_cast<double>(report.ood_count) * report.eps_max;
    // Tiny slack covers the 1e-9 agreement tolerance on in-support points.
    report.bound_holds =
        report.empirical_error <=
        report.bound_value + 1e-8 * (1.0 + static_cast<double>(test_inputs.size()));
    return report;
}

} // namespace apb
