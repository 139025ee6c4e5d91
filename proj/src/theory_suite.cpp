#include "apb/theory_suite.hpp"

#include "apb/errors.hpp"
#include "apb/gridworld.hpp"
#include "apb/transfer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace apb {

TabularMdp random_mdp(Rng& rng, int n_states, int n_actions) {
    const int sa = n_states * n_actions;
    Matrix transition(sa, n_states);
    for (int k = 0; k < sa; ++k) {
        double sum = 0.0;
        for (int j = 0; j < n_states; ++j) {
            transition(k, j) = rng.uniform(0.05, 1.0);
            sum += transition(k, j);
        }
        transition.row(k) /= sum;
    }
    Vector reward(sa);
    for (int k = 0; k < sa; ++k) reward(k) = rng.uniform(-1.0, 1.0);
    const double discount = rng.uniform(0.4, 0.95);
    return TabularMdp::create(n_states, n_actions, std::move(transition),
                              std::move(reward), discount);
}

Matrix random_policy_table(Rng& rng, int n_states, int n_actions) {
    Matrix table(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < n_actions; ++a) {
            table(s, a) = rng.uniform(0.05, 1.0);
            sum += table(s, a);
        }
        table.row(s) /= sum;
    }
    return table;
}

namespace {

TheoryCheck make_check(std::string name, double deviation, double tolerance,
                       std::string detail = {}) {
    TheoryCheck c;
    c.name = std::move(name);
    c.max_deviation = deviation;
    c.tolerance = tolerance;
    c.pass = deviation <= tolerance;
    c.detail = std::move(detail);
    return c;
}

// 1-Lipschitz piecewise-linear function on shared knots.
struct PiecewiseLinear {
    std::vector<double> xs; // strictly increasing
    std::vector<double> ys; // |dy| <= |dx| between neighbors
    double slope_left = 0.0, slope_right = 0.0;

    double operator()(double x) const {
        if (x <= xs.front()) return ys.front() + slope_left * (x - xs.front());
        if (x >= xs.back()) return ys.back() + slope_right * (x - xs.back());
        auto it = std::upper_bound(xs.begin(), xs.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - xs.begin()) - 1;
        const double t = (x - xs[i]) / (xs[i + 1] - xs[i]);
        return ys[i] + t * (ys[i + 1] - ys[i]);
    }
};

// Two 1-Lipschitz functions agreeing exactly on `anchors` and wandering
// independently (within the Lipschitz cone) in between and outside.
struct AgreeingPair {
    PiecewiseLinear meta, star;
    std::vector<double> anchors;
};

AgreeingPair make_agreeing_pair(Rng& rng, int n_anchors) {
    AgreeingPair pair;
    double x = rng.uniform(-2.0, 0.0);
    std::vector<double> ax(n_anchors), ay(n_anchors);
    double y = rng.uniform(-1.0, 1.0);
    for (int i = 0; i < n_anchors; ++i) {
        ax[i] = x;
        ay[i] = y;
        const double gap = rng.uniform(0.5, 2.0);
        x += gap;
        y += rng.uniform(-1.0, 1.0) * gap; // keeps |dy| <= dx
    }
    pair.anchors = ax;

    auto build = [&](PiecewiseLinear& f) {
        f.xs.clear();
        f.ys.clear();
        for (int i = 0; i < n_anchors; ++i) {
            f.xs.push_back(ax[i]);
            f.ys.push_back(ay[i]);
            if (i + 1 < n_anchors) {
                // Midpoint knot anywhere in the feasible Lipschitz interval.
                const double m = 0.5 * (ax[i] + ax[i + 1]);
                const double dl = m - ax[i], dr = ax[i + 1] - m;
                const double lo = std::max(ay[i] - dl, ay[i + 1] - dr);
                const double hi = std::min(ay[i] + dl, ay[i + 1] + dr);
                f.xs.push_back(m);
                f.ys.push_back(rng.uniform(lo, hi));
            }
        }
        f.slope_left = rng.uniform(-1.0, 1.0);
        f.slope_right = rng.uniform(-1.0, 1.0);
    };
    build(pair.meta);
    build(pair.star);
    return pair;
}

VectorFn wrap_scalar(const PiecewiseLinear& f) {
    return [f](const Vector& x) {
        Vector out(1);
        out(0) = f(x(0));
        return out;
    };
}

} // namespace

std::vector<TheoryCheck> run_theory_suite(const TheorySuiteOptions& options) {
    std::vector<TheoryCheck> checks;
    Rng master(options.seed);

    // --- Rank-one policy split on random MDPs -------------------------------
    {
        Rng rng = master.fork(1);
        double worst_recon = 0.0, worst_null = 0.0, worst_fixed = 0.0;
        for (int i = 0; i < options.decomposition_instances; ++i) {
            const int ns = 2 + static_cast<int>(rng.integer(5));  // 2..6
            const int na = 2 + static_cast<int>(rng.integer(3));  // 2..4
            const TabularMdp mdp = random_mdp(rng, ns, na);
            const PolicyMatrix pi = policy_matrix(mdp, random_policy_table(rng, ns, na));
            const Vector values = state_values(mdp, pi);
            const Vector pivot = pivot_vector(mdp, values);
            const PolicyDecomposition d = decompose_policy(mdp, pi);
            worst_recon = std::max(worst_recon,
                                   (pi.data - (d.rank_one + d.null_part))
                                       .cwiseAbs()
                                       .maxCoeff());
            worst_null = std::max(worst_null,
                                  (d.null_part * d.pivot).lpNorm<Eigen::Infinity>());
            worst_fixed = std::max(worst_fixed,
                                   (values - pi.data * pivot).lpNorm<Eigen::Infinity>());
        }
        const std::string n = std::to_string(options.decomposition_instances);
        checks.push_back(make_check("policy_split_reconstruction", worst_recon, 1e-9,
                                    n + " random MDPs"));
        checks.push_back(make_check("policy_split_null_orthogonality", worst_null, 1e-9,
                                    n + " random MDPs"));
        checks.push_back(make_check("value_fixed_point", worst_fixed, 1e-10,
                                    n + " random MDPs"));
    }

    // --- User-provided scenarios through the same split checks --------------
    for (const std::string& path : options.scenario_paths) {
        const TabularMdp mdp = load_scenario(path);
        const Matrix uniform =
            Matrix::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
        double worst_recon = 0.0, worst_fixed = 0.0;
        for (const PolicyMatrix& pi :
             {policy_matrix(mdp, uniform), solve_optimal_policy(mdp).first}) {
            const Vector values = state_values(mdp, pi);
            const PolicyDecomposition d = decompose_policy(mdp, pi);
            worst_recon = std::max(worst_recon,
                                   (pi.data - (d.rank_one + d.null_part))
                                       .cwiseAbs()
                                       .maxCoeff());
            worst_fixed = std::max(
                worst_fixed,
                (values - pi.data * pivot_vector(mdp, values)).lpNorm<Eigen::Infinity>());
        }
        checks.push_back(make_check("scenario_policy_split", worst_recon, 1e-9, path));
        checks.push_back(make_check("scenario_fixed_point", worst_fixed, 1e-10, path));
    }

    // --- Transport on random reward pairs over shared dynamics --------------
    {
        Rng rng = master.fork(2);
        double worst = 0.0;
        for (int i = 0; i < options.transport_pairs; ++i) {
            const int ns = 2 + static_cast<int>(rng.integer(5));
            const int na = 2 + static_cast<int>(rng.integer(3));
            const TabularMdp base = random_mdp(rng, ns, na);
            Vector r2(ns * na);
            for (int k = 0; k < ns * na; ++k) r2(k) = rng.uniform(-1.0, 1.0);
            const TabularMdp other = TabularMdp::create(ns, na, base.transition, r2,
                                                        base.discount);
            const SolvedTask t1 = solve_task(base);
            const SolvedTask t2 = solve_task(other);
            const Matrix a =
                build_state_map(t1.values, t2.values, StateMapMode::LeastSquares);
            const TransportPair pair = build_transport_pair(t1, t2, a);
            const Vector q2 = pivot_vector(t2.mdp, t2.values);
            worst = std::max(worst, (a * t1.pi.data * pair.action_map * q2 - t2.values)
                                        .lpNorm<Eigen::Infinity>());
        }
        checks.push_back(make_check("transport_value_consistency_random", worst, 1e-8,
                                    std::to_string(options.transport_pairs) +
                                        " reward pairs"));
    }

    // --- Transport between goal placements on the 3x3 grid ------------------
    {
        GridworldTask reference;
        reference.width = reference.height = 3;
        reference.goal_x = 0;
        reference.goal_y = 0;
        double worst = 0.0;
        bool all_reached = true;
        for (int symmetry : {0, 4, 5, 2}) { // goals at the four corners
            const GridworldTask moved = symmetric_task(reference, symmetry);
            const IsomorphicTransportReport rep =
                verify_isomorphic_transport(reference, moved);
            worst = std::max(worst, rep.value_consistency_deviation);
            all_reached &= rep.greedy_rollouts_reach_goal && rep.all_actions_optimal;
        }
        TheoryCheck c = make_check("transport_value_consistency_four_goals", worst, 1e-8,
                                   "3x3 grid, goals at the four corners");
        c.pass = c.pass && all_reached;
        if (!all_reached) c.detail += "; greedy transport failed to reach a goal";
        checks.push_back(c);
    }

    // --- Full symmetry sweep: policy-level transport agreement --------------
    {
        double worst_image = 0.0;
        int failures = 0, total = 0;
        bool all_reached = true;
        for (int size : {3, 4}) {
            GridworldTask reference;
            reference.width = reference.height = size;
            for (int gy = 0; gy < size; ++gy) {
                for (int gx = 0; gx < size; ++gx) {
                    reference.goal_x = gx;
                    reference.goal_y = gy;
                    for (int symmetry = 0; symmetry < 8; ++symmetry) {
                        const GridworldTask moved = symmetric_task(reference, symmetry);
                        const IsomorphicTransportReport rep =
                            verify_isomorphic_transport(reference, moved);
                        worst_image =
                            std::max(worst_image, rep.max_linear_image_deviation);
                        for (const auto& sc : rep.states)
                            if (!sc.action_optimal) ++failures;
                        all_reached &= rep.greedy_rollouts_reach_goal;
                        ++total;
                    }
                }
            }
        }
        TheoryCheck c = make_check("isomorphic_transport_action_agreement",
                                   static_cast<double>(failures), 0.0,
                                   std::to_string(total) + " grid pairs; worst linear "
                                   "image deviation " + std::to_string(worst_image));
        c.pass = c.pass && all_reached && worst_image <= 1e-8;
        if (!all_reached) c.detail += "; a greedy rollout missed its goal";
        checks.push_back(c);
    }

    // --- Adaptation-error bound on seeded function pairs --------------------
    {
        Rng rng = master.fork(3);
        int violations = 0;
        int monotonicity_breaks = 0;
        double worst_gap = 0.0; // most negative bound - empirical margin
        for (int trial = 0; trial < options.bound_trials; ++trial) {
            const int n_anchors = 4 + static_cast<int>(rng.integer(5));
            const AgreeingPair pair = make_agreeing_pair(rng, n_anchors);

            std::vector<Vector> support_small, support_full;
            for (std::size_t i = 0; i < pair.anchors.size(); ++i) {
                Vector z(1);
                z(0) = pair.anchors[i];
                support_full.push_back(z);
                if (i < pair.anchors.size() / 2 + 1) support_small.push_back(z);
            }

            std::vector<Vector> inputs = support_small;
            const int n_ood = 3 + static_cast<int>(rng.integer(5));
            for (int i = 0; i < n_ood; ++i) {
                Vector x(1);
                x(0) = rng.uniform(pair.anchors.front() - 4.0,
                                   pair.anchors.back() + 4.0);
                inputs.push_back(x);
            }

            Matrix head(2, 1);
            head(0, 0) = rng.uniform(-2.0, 2.0);
            head(1, 0) = rng.uniform(-2.0, 2.0);

            const BoundReport small = evaluate_adaptation_bound(
                wrap_scalar(pair.meta), wrap_scalar(pair.star), head, inputs,
                support_small, 1.0);
            const BoundReport full = evaluate_adaptation_bound(
                wrap_scalar(pair.meta), wrap_scalar(pair.star), head, inputs,
                support_full, 1.0);
            if (!small.bound_holds || !full.bound_holds) ++violations;
            if (full.bound_value > small.bound_value + 1e-12) ++monotonicity_breaks;
            worst_gap = std::max(worst_gap, small.empirical_error - small.bound_value);
        }
        checks.push_back(make_check(
            "adaptation_bound_holds", static_cast<double>(violations), 0.0,
            std::to_string(options.bound_trials) + " trials; worst empirical-bound gap " +
                std::to_string(worst_gap)));
        checks.push_back(make_check("adaptation_bound_support_monotone",
                                    static_cast<double>(monotonicity_breaks), 0.0,
                                    "bound never grows when the support set grows"));
    }

    return checks;
}

std::string theory_report_jsonl(const std::vector<TheoryCheck>& checks) {
    std::string out;
    for (const TheoryCheck& c : checks) {
        nlohmann::json j;
        j["check"] = c.name;
        j["max_deviation"] = c.max_deviation;
        j["tolerance"] = c.tolerance;
        j["verdict"] = c.pass ? "pass" : "fail";
        if (!c.detail.empty()) j["detail"] = c.detail;
        out += j.dump();
        out += '\n';
    }
    return out;
}

bool all_pass(const std::vector<TheoryCheck>& checks) {
    for (const TheoryCheck& c : checks)
        if (!c.pass) return false;
    return !checks.empty();
}

} // namespace apb
