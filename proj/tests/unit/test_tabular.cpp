#include <doctest.h>

#include "apb/errors.hpp"
#include "apb/gridworld.hpp"
#include "apb/tabular.hpp"
#include "apb/theory_suite.hpp"

#include <cmath>
#include <filesystem>

using namespace apb;

namespace {

TabularMdp single_state_mdp(double reward, double gamma) {
    Matrix p(1, 1);
    p(0, 0) = 1.0;
    Vector r(1);
    r(0) = reward;
    return TabularMdp::create(1, 1, p, r, gamma);
}

// Plain iterative Bellman evaluation, independent of the linear-solve path.
Vector iterative_policy_values(const TabularMdp& mdp, const PolicyMatrix& pi,
                               double tol = 1e-14) {
    const Matrix p_pi = pi.data * mdp.transition;
    const Vector r_pi = pi.data * mdp.reward;
    Vector v = Vector::Zero(mdp.n_states);
    for (int it = 0; it < 2000000; ++it) {
        Vector next = r_pi + mdp.discount * (p_pi * v);
        const double delta = (next - v).lpNorm<Eigen::Infinity>();
        v = next;
        if (delta < tol) break;
    }
    return v;
}

// Componentwise max over every deterministic policy; exact optimal values.
Vector brute_force_optimal_values(const TabularMdp& mdp) {
    const int s = mdp.n_states, a = mdp.n_actions;
    long n_policies = 1;
    for (int i = 0; i < s; ++i) n_policies *= a;
    Vector best = Vector::Constant(s, -std::numeric_limits<double>::infinity());
    for (long code = 0; code < n_policies; ++code) {
        Matrix table = Matrix::Zero(s, a);
        long rest = code;
        for (int i = 0; i < s; ++i) {
            table(i, rest % a) = 1.0;
            rest /= a;
        }
        const Vector v = iterative_policy_values(mdp, policy_matrix(mdp, table));
        best = best.cwiseMax(v);
    }
    return best;
}

} // namespace

TEST_CASE("policy matrix block structure") {
    Rng rng(1);
    TabularMdp mdp = random_mdp(rng, 2, 2);

    Matrix det(2, 2);
    det << 1, 0, 0, 1; // a1 in s1, a2 in s2
    PolicyMatrix pi = policy_matrix(mdp, det);
    CHECK(pi.data.row(0).isApprox(Eigen::RowVector4d(1, 0, 0, 0)));
    CHECK(pi.data.row(1).isApprox(Eigen::RowVector4d(0, 0, 0, 1)));

    Matrix uniform = Matrix::Constant(2, 2, 0.5);
    PolicyMatrix pu = policy_matrix(mdp, uniform);
    CHECK(pu.data.row(0).isApprox(Eigen::RowVector4d(0.5, 0.5, 0, 0)));
    CHECK(pu.data.row(1).isApprox(Eigen::RowVector4d(0, 0, 0.5, 0.5)));

    // One-hot row times the matrix is the extended per-state form.
    Eigen::RowVector2d s1(1, 0);
    Eigen::RowVector4d extended = s1 * pu.data;
    CHECK(extended.isApprox(Eigen::RowVector4d(0.5, 0.5, 0, 0)));
}

TEST_CASE("policy matrix induces P^pi and R^pi") {
    Rng rng(7);
    TabularMdp mdp = random_mdp(rng, 4, 3);
    Matrix table = random_policy_table(rng, 4, 3);
    PolicyMatrix pi = policy_matrix(mdp, table);

    Matrix p_pi = induced_transition(mdp, pi);
    Vector r_pi = induced_reward(mdp, pi);
    for (int s = 0; s < 4; ++s) {
        Vector expected_row = Vector::Zero(4);
        double expected_r = 0.0;
        for (int a = 0; a < 3; ++a) {
            expected_row +=
                table(s, a) * mdp.transition.row(mdp.flat_index(s, a)).transpose();
            expected_r += table(s, a) * mdp.reward(mdp.flat_index(s, a));
        }
        CHECK((p_pi.row(s).transpose() - expected_row).lpNorm<Eigen::Infinity>() < 1e-14);
        CHECK(r_pi(s) == doctest::Approx(expected_r).epsilon(1e-14));
    }
}

TEST_CASE("policy matrix rejects bad tables") {
    Rng rng(2);
    TabularMdp mdp = random_mdp(rng, 3, 2);
    Matrix wrong_shape = Matrix::Constant(2, 2, 0.5);
    CHECK_THROWS_AS(policy_matrix(mdp, wrong_shape), StructuralError);
    Matrix bad_sum = Matrix::Constant(3, 2, 0.4);
    CHECK_THROWS_AS(policy_matrix(mdp, bad_sum), StructuralError);
}

TEST_CASE("table extraction round-trips exactly") {
    Rng rng(3);
    TabularMdp mdp = random_mdp(rng, 5, 3);
    Matrix table = random_policy_table(rng, 5, 3);
    PolicyMatrix pi = policy_matrix(mdp, table);
    CHECK(pi.table() == table); // bit-exact block copy
    for (int s = 0; s < 5; ++s) CHECK(pi.distribution(s) == table.row(s).transpose());
}

TEST_CASE("state values: closed forms") {
    TabularMdp geo = single_state_mdp(1.0, 0.5);
    Matrix one = Matrix::Constant(1, 1, 1.0);
    Vector v = state_values(geo, policy_matrix(geo, one));
    CHECK(v(0) == doctest::Approx(2.0).epsilon(1e-12));

    TabularMdp zero = single_state_mdp(0.0, 0.73);
    CHECK(state_values(zero, policy_matrix(zero, one))(0) == doctest::Approx(0.0));
}

TEST_CASE("state values match iterative evaluation on a seeded MDP") {
    Rng rng(42);
    TabularMdp mdp = random_mdp(rng, 5, 3);
    PolicyMatrix pi = policy_matrix(mdp, random_policy_table(rng, 5, 3));
    const Vector direct = state_values(mdp, pi);
    const Vector iterated = iterative_policy_values(mdp, pi);
    CHECK((direct - iterated).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("fixed point identity holds on seeded instances") {
    Rng rng(11);
    for (int i = 0; i < 25; ++i) {
        const int ns = 2 + static_cast<int>(rng.integer(5));
        const int na = 2 + static_cast<int>(rng.integer(3));
        TabularMdp mdp = random_mdp(rng, ns, na);
        PolicyMatrix pi = policy_matrix(mdp, random_policy_table(rng, ns, na));
        const Vector v = state_values(mdp, pi);
        const Vector pivot = pivot_vector(mdp, v);
        CHECK((v - pi.data * pivot).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("decomposition: one-dimensional case forces zero null part") {
    TabularMdp mdp = single_state_mdp(1.0, 0.5);
    Matrix one = Matrix::Constant(1, 1, 1.0);
    PolicyDecomposition d = decompose_policy(mdp, policy_matrix(mdp, one));
    CHECK(d.pivot(0) == doctest::Approx(2.0));
    CHECK(d.rank_one(0, 0) == doctest::Approx(1.0));
    CHECK(std::abs(d.null_part(0, 0)) < 1e-14);
}

TEST_CASE("decomposition: rank-one term carries the values") {
    Rng rng(5);
    TabularMdp mdp = random_mdp(rng, 4, 2);
    PolicyMatrix pi = policy_matrix(mdp, random_policy_table(rng, 4, 2));
    PolicyDecomposition d = decompose_policy(mdp, pi);
    const Vector v = state_values(mdp, pi);
    CHECK((d.rank_one * d.pivot - v).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("decomposition reconstructs the policy and kills the pivot") {
    Rng rng(1234);
    TabularMdp mdp = random_mdp(rng, 4, 2);
    Matrix uniform = Matrix::Constant(4, 2, 0.5);
    PolicyMatrix pi = policy_matrix(mdp, uniform);
    PolicyDecomposition d = decompose_policy(mdp, pi);
    CHECK((pi.data - (d.rank_one + d.null_part)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((d.null_part * d.pivot).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("decomposition rejects a zero pivot") {
    // All-zero rewards make gamma*P*V + r vanish identically.
    Matrix p(2, 2);
    p << 1, 0, 0, 1;
    Vector r = Vector::Zero(2);
    TabularMdp mdp = TabularMdp::create(2, 1, p, r, 0.9);
    Matrix one = Matrix::Constant(2, 1, 1.0);
    CHECK_THROWS_AS(decompose_policy(mdp, policy_matrix(mdp, one)), DegenerateInputError);
}

TEST_CASE("optimal policy: dominant action wins") {
    Matrix p(2, 1);
    p << 1, 1;
    Vector r(2);
    r << 0.0, 1.0;
    TabularMdp mdp = TabularMdp::create(1, 2, p, r, 0.9);
    auto [pi, v] = solve_optimal_policy(mdp);
    CHECK(pi.distribution(0)(1) == 1.0);
    CHECK(v(0) == doctest::Approx(10.0).epsilon(1e-9));
}

TEST_CASE("optimal policy on the 3x3 grid: shortest-path geometric sums") {
    GridworldTask task;
    task.width = task.height = 3;
    task.goal_x = 0;
    task.goal_y = 0;
    TabularMdp mdp = gridworld_mdp(task);
    auto [pi, v] = solve_optimal_policy(mdp);

    auto expected = [&](int distance) {
        return -(1.0 - std::pow(task.discount, distance)) / (1.0 - task.discount);
    };
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            CHECK(v(task.state_index(x, y)) ==
                  doctest::Approx(expected(x + y)).epsilon(1e-10));

    // Greedy moves shrink the Manhattan distance to the goal every step.
    for (int s = 0; s < 9; ++s) {
        if (s == task.goal_state()) continue;
        const int a = greedy_action(mdp, v, s);
        const int next = gridworld_next_state(task, s, a);
        const int dist_s = s % 3 + s / 3;
        const int dist_next = next % 3 + next / 3;
        CHECK(dist_next == dist_s - 1);
    }
}

TEST_CASE("optimal policy equals deterministic brute force") {
    Rng rng(77);
    for (int i = 0; i < 12; ++i) {
        const int ns = 2 + static_cast<int>(rng.integer(2)); // 2..3
        TabularMdp mdp = random_mdp(rng, ns, 2);
        auto [pi, v] = solve_optimal_policy(mdp, 1e-13);
        const Vector best = brute_force_optimal_values(mdp);
        CHECK((v - best).lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("two-state chain matches exhaustive policy search") {
    // Deterministic chain: action 0 stays, action 1 swaps states.
    Matrix p = Matrix::Zero(4, 2);
    p(0, 0) = 1; // s0,a0 -> s0
    p(1, 1) = 1; // s0,a1 -> s1
    p(2, 1) = 1; // s1,a0 -> s1
    p(3, 0) = 1; // s1,a1 -> s0
    Vector r(4);
    r << 0.2, 0.0, 1.0, 0.3;
    TabularMdp mdp = TabularMdp::create(2, 2, p, r, 0.8);
    auto [pi, v] = solve_optimal_policy(mdp);
    CHECK((v - brute_force_optimal_values(mdp)).lpNorm<Eigen::Infinity>() < 1e-9);
    // Best plan: move to s1 and stay there collecting 1.0.
    CHECK(pi.distribution(0)(1) == 1.0);
    CHECK(pi.distribution(1)(0) == 1.0);
}

TEST_CASE("value iteration tie-break picks the lowest action index") {
    Matrix p(2, 1);
    p << 1, 1;
    Vector r(2);
    r << 0.5, 0.5; // both actions identical
    TabularMdp mdp = TabularMdp::create(1, 2, p, r, 0.9);
    auto [pi, v] = solve_optimal_policy(mdp);
    CHECK(pi.distribution(0)(0) == 1.0);
}

TEST_CASE("scenario file round-trip is bit-stable") {
    Rng rng(9);
    TabularMdp mdp = random_mdp(rng, 3, 2);
    const std::string text = format_scenario(mdp);
    TabularMdp back = parse_scenario(text);
    CHECK(format_scenario(back) == text); // second pass reproduces the bytes
    CHECK(back.discount == doctest::Approx(mdp.discount).epsilon(1e-12));

    const auto path = std::filesystem::temp_directory_path() / "apb_scenario_test.txt";
    save_scenario(path.string(), back);
    TabularMdp loaded = load_scenario(path.string());
    CHECK(format_scenario(loaded) == format_scenario(back));
    CHECK(loaded.transition == back.transition); // exact after one snap
    std::filesystem::remove(path);
}

TEST_CASE("scenario validation names the offending row") {
    const std::string bad =
        "2 1 0.9\n"
        "0.5 0.4\n" // sums to 0.9
        "0 1\n"
        "1 1\n";
    try {
        parse_scenario(bad);
        FAIL("expected validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("row 0") != std::string::npos);
    }
}

TEST_CASE("mdp validation rejects bad inputs") {
    Matrix p(1, 1);
    p << 1.0;
    Vector r(1);
    r << 0.0;
    CHECK_THROWS_AS(TabularMdp::create(1, 1, p, r, 1.0), StructuralError);
    CHECK_THROWS_AS(TabularMdp::create(1, 1, p, r, 0.0), StructuralError);
    Matrix bad = Matrix::Constant(1, 1, 0.5);
    CHECK_THROWS_AS(TabularMdp::create(1, 1, bad, r, 0.9), ValidationError);
    CHECK_THROWS_AS(TabularMdp::create(1, 1, p, r, 0.9, 1.0, 2.0), ValidationError);
}
