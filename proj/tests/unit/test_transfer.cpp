#include <doctest.h>

#include "apb/errors.hpp"
#include "apb/theory_suite.hpp"
#include "apb/transfer.hpp"

#include <cmath>

using namespace apb;

namespace {

GridworldTask grid3(int gx, int gy) {
    GridworldTask t;
    t.width = t.height = 3;
    t.goal_x = gx;
    t.goal_y = gy;
    return t;
}

} // namespace

TEST_CASE("state map: equal distinct vectors admit the identity in all modes") {
    Vector v(3);
    v << 1.0, 2.5, -0.5;
    for (StateMapMode mode : {StateMapMode::PermutationSearch, StateMapMode::RankOne,
                              StateMapMode::LeastSquares}) {
        Matrix a = build_state_map(v, v, mode);
        CHECK((a * v - v).lpNorm<Eigen::Infinity>() < 1e-12);
    }
    CHECK(build_state_map(v, v, StateMapMode::PermutationSearch)
              .isApprox(Matrix::Identity(3, 3)));
}

TEST_CASE("state map: swapped pair forces the swap matrix") {
    Vector v1(2), v2(2);
    v1 << 1.0, 2.0;
    v2 << 2.0, 1.0;
    Matrix a = build_state_map(v1, v2, StateMapMode::PermutationSearch);
    Matrix swap(2, 2);
    swap << 0, 1, 1, 0;
    CHECK(a == swap);
}

TEST_CASE("state map: mismatched multisets have no permutation") {
    Vector v1(2), v2(2);
    v1 << 1.0, 2.0;
    v2 << 1.0, 3.0;
    CHECK_THROWS_AS(build_state_map(v1, v2, StateMapMode::PermutationSearch),
                    NoSolutionError);
}

TEST_CASE("state map: rank-one and least-squares are exact on random pairs") {
    Rng rng(21);
    for (int i = 0; i < 20; ++i) {
        const int n = 2 + static_cast<int>(rng.integer(5));
        Vector v1(n), v2(n);
        for (int k = 0; k < n; ++k) {
            v1(k) = rng.uniform(-3.0, 3.0);
            v2(k) = rng.uniform(-3.0, 3.0);
        }
        if (v1.norm() < 0.1) continue;
        for (StateMapMode mode : {StateMapMode::RankOne, StateMapMode::LeastSquares}) {
            Matrix a = build_state_map(v1, v2, mode);
            CHECK((a * v1 - v2).lpNorm<Eigen::Infinity>() < 1e-9);
        }
    }
}

TEST_CASE("state map: line-grid reflection is recovered exactly") {
    // Distances 0..4 from the goal make all values distinct, so the matching
    // is forced and must equal the generating reflection.
    GridworldTask line;
    line.width = 5;
    line.height = 1;
    line.goal_x = 0;
    line.goal_y = 0;
    const GridworldTask reflected = symmetric_task(line, 4); // flip x
    const SolvedTask t1 = solve_task(gridworld_mdp(line));
    const SolvedTask t2 = solve_task(gridworld_mdp(reflected));
    const Matrix a = build_state_map(t1.values, t2.values,
                                     StateMapMode::PermutationSearch);
    CHECK(a == permutation_matrix(*reflected.permutation));
}

TEST_CASE("extraction reads a single-block vector") {
    Vector row(4);
    row << 0.3, 0.7, 0.0, 0.0;
    ExtractedPolicy e = extract_policy(row, 2);
    CHECK(e.state == 0);
    CHECK(e.distribution(0) == doctest::Approx(0.3));
    CHECK(e.distribution(1) == doctest::Approx(0.7));

    Vector onehot(4);
    onehot << 0, 0, 1, 0;
    ExtractedPolicy o = extract_policy(onehot, 2);
    CHECK(o.state == 1);
    CHECK(o.distribution(0) == 1.0);
    CHECK(o.distribution(1) == 0.0);
}

TEST_CASE("extraction rejects cross-block support and nonpositive mass") {
    Vector spread(4);
    spread << 0.2, 0.2, 0.1, 0.0;
    CHECK_THROWS_AS(extract_policy(spread, 2), ExtractionError);
    Vector negative(4);
    negative << -0.4, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(extract_policy(negative, 2), ExtractionError);
    Vector empty = Vector::Zero(4);
    CHECK_THROWS_AS(extract_policy(empty, 2), ExtractionError);
}

TEST_CASE("extraction is the left inverse of the extended form") {
    Rng rng(4);
    TabularMdp mdp = random_mdp(rng, 4, 3);
    Matrix table = random_policy_table(rng, 4, 3);
    PolicyMatrix pi = policy_matrix(mdp, table);
    for (int s = 0; s < 4; ++s) {
        Vector row = pi.data.row(s).transpose(); // = one-hot(s) * Pi
        ExtractedPolicy e = extract_policy(row, 3);
        CHECK(e.state == s);
        CHECK((e.distribution - table.row(s).transpose()).lpNorm<Eigen::Infinity>() <
              1e-12);
    }
}

TEST_CASE("identity transport reproduces the rank-one part exactly") {
    Rng rng(31);
    TabularMdp mdp = random_mdp(rng, 4, 2);
    const SolvedTask t = solve_task(mdp);
    const Matrix identity = Matrix::Identity(4, 4);
    const TransportPair pair = build_transport_pair(t, t, identity);

    const Vector q = pivot_vector(mdp, t.values);
    CHECK((t.pi.data * pair.action_map * q - t.values).lpNorm<Eigen::Infinity>() < 1e-10);

    const PolicyDecomposition d = decompose_policy(mdp, t.pi);
    const Matrix transported = identity * t.pi.data * pair.action_map;
    CHECK((transported - d.rank_one).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("transport between opposite-corner gridworlds is value-consistent") {
    const GridworldTask ref = grid3(0, 0);
    const GridworldTask moved = symmetric_task(ref, 2); // 180 rotation: corner (2,2)
    CHECK(moved.goal_x == 2);
    CHECK(moved.goal_y == 2);
    const SolvedTask t1 = solve_task(gridworld_mdp(ref));
    const SolvedTask t2 = solve_task(gridworld_mdp(moved));
    const Matrix a = permutation_matrix(*moved.permutation);
    const TransportPair pair = build_transport_pair(t1, t2, a);
    const Vector q2 = pivot_vector(t2.mdp, t2.values);
    CHECK((a * t1.pi.data * pair.action_map * q2 - t2.values).lpNorm<Eigen::Infinity>() <
          1e-8);
}

TEST_CASE("transport on a seeded random reward pair with least-squares map") {
    Rng rng(55);
    TabularMdp base = random_mdp(rng, 4, 2);
    Vector r2(8);
    for (int k = 0; k < 8; ++k) r2(k) = rng.uniform(-1.0, 1.0);
    TabularMdp other = TabularMdp::create(4, 2, base.transition, r2, base.discount);
    const SolvedTask t1 = solve_task(base);
    const SolvedTask t2 = solve_task(other);
    const Matrix a = build_state_map(t1.values, t2.values, StateMapMode::LeastSquares);
    const TransportPair pair = build_transport_pair(t1, t2, a);
    const Vector q2 = pivot_vector(t2.mdp, t2.values);
    CHECK((a * t1.pi.data * pair.action_map * q2 - t2.values).lpNorm<Eigen::Infinity>() <
          1e-8);
}

TEST_CASE("transport preconditions: shared kernel and a valid state map") {
    Rng rng(66);
    TabularMdp m1 = random_mdp(rng, 3, 2);
    TabularMdp m2 = random_mdp(rng, 3, 2); // different kernel
    const SolvedTask t1 = solve_task(m1);
    const SolvedTask t2 = solve_task(m2);
    CHECK_THROWS_AS(build_transport_pair(t1, t2, Matrix::Identity(3, 3)),
                    StructuralError);

    // A constant reward shift moves every optimal value by c/(1-gamma).
    Vector r2 = m1.reward;
    r2.array() += 1.0;
    TabularMdp shared =
        TabularMdp::create(3, 2, m1.transition, r2, m1.discount);
    const SolvedTask t3 = solve_task(shared);
    CHECK_THROWS_AS(build_transport_pair(t1, t3, Matrix::Identity(3, 3)),
                    StructuralError);
}

TEST_CASE("isomorphic transport: identity permutation is exact") {
    const GridworldTask ref = grid3(1, 0);
    const GridworldTask same = symmetric_task(ref, 0);
    const IsomorphicTransportReport rep = verify_isomorphic_transport(ref, same);
    CHECK(rep.max_linear_image_deviation < 1e-12);
    CHECK(rep.value_consistency_deviation < 1e-10);
    CHECK(rep.all_actions_optimal);
    CHECK(rep.greedy_rollouts_reach_goal);
}

TEST_CASE("isomorphic transport: quarter rotation agrees on every state") {
    const GridworldTask ref = grid3(2, 0);
    const GridworldTask rotated = symmetric_task(ref, 1);
    const IsomorphicTransportReport rep = verify_isomorphic_transport(ref, rotated);
    CHECK(rep.states.size() == 9);
    for (const TransportedStateCheck& c : rep.states) CHECK(c.action_optimal);
    CHECK(rep.greedy_rollouts_reach_goal);
    CHECK(rep.max_linear_image_deviation < 1e-8);
}

TEST_CASE("isomorphic transport: four corner goals all reach their goal") {
    const GridworldTask ref = grid3(0, 0);
    for (int symmetry : {0, 4, 5, 2}) {
        const GridworldTask moved = symmetric_task(ref, symmetry);
        const IsomorphicTransportReport rep = verify_isomorphic_transport(ref, moved);
        CHECK(rep.greedy_rollouts_reach_goal);
        CHECK(rep.all_actions_optimal);
        CHECK(rep.value_consistency_deviation < 1e-8);
    }
}

TEST_CASE("adaptation bound: in-support inputs give a zero bound") {
    auto f = [](const Vector& x) { return x; };
    Matrix head = Matrix::Identity(1, 1);
    std::vector<Vector> support;
    for (double x : {0.0, 1.0, 2.0}) {
        Vector z(1);
        z(0) = x;
        support.push_back(z);
    }
    const BoundReport rep = evaluate_adaptation_bound(f, f, head, support, support, 1.0);
    CHECK(rep.ood_count == 0);
    CHECK(rep.bound_value == 0.0);
    CHECK(rep.empirical_error <= 1e-8);
    CHECK(rep.bound_holds);
}

TEST_CASE("adaptation bound: clamp versus identity with one OOD point") {
    // Both 1-Lipschitz; they agree on [0,1] support and differ by eps beyond.
    auto f_star = [](const Vector& x) { return x; };
    auto f_meta = [](const Vector& x) {
        Vector out(1);
        out(0) = std::clamp(x(0), 0.0, 1.0);
        return out;
    };
    Matrix head = Matrix::Identity(1, 1);
    std::vector<Vector> support;
    for (double x : {0.0, 0.5, 1.0}) {
        Vector z(1);
        z(0) = x;
        support.push_back(z);
    }
    const double eps = 0.75;
    std::vector<Vector> inputs = support;
    Vector ood(1);
    ood(0) = 1.0 + eps;
    inputs.push_back(ood);

    const BoundReport rep =
        evaluate_adaptation_bound(f_meta, f_star, head, inputs, support, 1.0);
    CHECK(rep.ood_count == 1);
    CHECK(rep.eps_max == doctest::Approx(eps));
    CHECK(rep.empirical_error == doctest::Approx(eps));
    CHECK(rep.bound_value == doctest::Approx(2.0 * eps));
    CHECK(rep.bound_holds);
    // Exact product structure of the bound.
    CHECK(rep.bound_value ==
          2.0 * rep.lipschitz_constant * rep.head_operator_norm * rep.ood_count *
              rep.eps_max);
}

TEST_CASE("adaptation bound: premise violation is rejected") {
    auto f_star = [](const Vector& x) { return x; };
    auto f_meta = [](const Vector& x) { return Vector(x.array() + 0.1); };
    Matrix head = Matrix::Identity(1, 1);
    std::vector<Vector> support(1, Vector::Zero(1));
    CHECK_THROWS_AS(
        evaluate_adaptation_bound(f_meta, f_star, head, support, support, 1.0),
        StructuralError);
}

TEST_CASE("adaptation bound: head operator norm is the spectral norm") {
    Matrix head(2, 2);
    head << 3, 0, 0, 4;
    auto f = [](const Vector& x) { return x; };
    std::vector<Vector> support(1, Vector::Zero(2));
    const BoundReport rep = evaluate_adaptation_bound(f, f, head, support, support, 1.0);
    CHECK(rep.head_operator_norm == doctest::Approx(4.0));
}
