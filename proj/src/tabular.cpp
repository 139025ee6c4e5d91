#include "apb/tabular.hpp"

#include "apb/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace apb {

namespace {

constexpr double kRowSumTol = 1e-12;

void validate(const TabularMdp& mdp) {
    if (mdp.n_states <= 0 || mdp.n_actions <= 0)
        throw StructuralError("TabularMdp: state and action counts must be positive");
    const int sa = mdp.n_states * mdp.n_actions;
    if (mdp.transition.rows() != sa || mdp.transition.cols() != mdp.n_states)
        throw StructuralError("TabularMdp: transition must be (|S||A|) x |S|");
    if (mdp.reward.size() != sa)
        throw StructuralError("TabularMdp: reward must have length |S||A|");
    if (!(mdp.discount > 0.0 && mdp.discount < 1.0))
        throw StructuralError("TabularMdp: discount must lie in (0,1)");
    for (int k = 0; k < sa; ++k) {
        if (mdp.transition.row(k).minCoeff() < -kRowSumTol)
            throw ValidationError("TabularMdp: negative transition probability in row " +
                                  std::to_string(k));
        const double sum = mdp.transition.row(k).sum();
        if (std::abs(sum - 1.0) > kRowSumTol)
            throw ValidationError("TabularMdp: transition row " + std::to_string(k) +
                                  " sums to " + std::to_string(sum) + ", expected 1");
    }
    for (int k = 0; k < sa; ++k) {
        const double r = mdp.reward(k);
        if (!std::isfinite(r) || r < mdp.reward_min - kRowSumTol || r > mdp.reward_max + kRowSumTol)
            throw ValidationError("TabularMdp: reward entry " + std::to_string(k) +
                                  " outside declared bounds");
    }
}

} // namespace

TabularMdp TabularMdp::create(int n_states, int n_actions, Matrix transition,
                              Vector reward, double discount) {
    const double lo = reward.size() > 0 ? reward.minCoeff() : 0.0;
    const double hi = reward.size() > 0 ? reward.maxCoeff() : 0.0;
    return create(n_states, n_actions, std::move(transition), std::move(reward), discount,
                  lo, hi);
}

TabularMdp TabularMdp::create(int n_states, int n_actions, Matrix transition,
                              Vector reward, double discount, double reward_min,
                              double reward_max) {
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.transition = std::move(transition);
    mdp.reward = std::move(reward);
    mdp.discount = discount;
    mdp.reward_min = reward_min;
    mdp.reward_max = reward_max;
    validate(mdp);
    return mdp;
}

Vector PolicyMatrix::distribution(int state) const {
    if (state < 0 || state >= n_states)
        throw StructuralError("PolicyMatrix::distribution: state out of range");
    return data.row(state).segment(state * n_actions, n_actions).transpose();
}

Matrix PolicyMatrix::table() const {
    Matrix t(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
        t.row(s) = data.row(s).segment(s * n_actions, n_actions);
    return t;
}

PolicyMatrix policy_matrix(const TabularMdp& mdp, const Matrix& table) {
    if (table.rows() != mdp.n_states || table.cols() != mdp.n_actions)
        throw StructuralError("policy_matrix: table must be |S| x |A|");
    for (int s = 0; s < mdp.n_states; ++s) {
        if (table.row(s).minCoeff() < 0.0)
            throw StructuralError("policy_matrix: negative probability at state " +
                                  std::to_string(s));
        if (std::abs(table.row(s).sum() - 1.0) > kRowSumTol)
            throw StructuralError("policy_matrix: row " + std::to_string(s) +
                                  " does not sum to 1");
    }
    PolicyMatrix pi;
    pi.n_states = mdp.n_states;
    pi.n_actions = mdp.n_actions;
    pi.data = Matrix::Zero(mdp.n_states, mdp.n_states * mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        pi.data.row(s).segment(s * mdp.n_actions, mdp.n_actions) = table.row(s);
    return pi;
}

Matrix induced_transition(const TabularMdp& mdp, const PolicyMatrix& pi) {
    return pi.data * mdp.transition;
}

Vector induced_reward(const TabularMdp& mdp, const PolicyMatrix& pi) {
    return pi.data * mdp.reward;
}

Vector state_values(const TabularMdp& mdp, const PolicyMatrix& pi) {
    if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
        throw StructuralError("state_values: policy and MDP dimensions differ");
    const Matrix p_pi = induced_transition(mdp, pi);
    const Vector r_pi = induced_reward(mdp, pi);
    const Matrix system =
        Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.discount * p_pi;
    Eigen::PartialPivLU<Matrix> lu(system);
    const Vector values = lu.solve(r_pi);
    const double residual = (system * values - r_pi).lpNorm<Eigen::Infinity>();
    if (!values.allFinite() || residual > 1e-8)
        throw NumericError("state_values: solve residual " + std::to_string(residual));
    return values;
}

Vector pivot_vector(const TabularMdp& mdp, const Vector& values) {
    if (values.size() != mdp.n_states)
        throw StructuralError("pivot_vector: values must have length |S|");
    return mdp.discount * (mdp.transition * values) + mdp.reward;
}

PolicyDecomposition decompose_policy(const TabularMdp& mdp, const PolicyMatrix& pi) {
    const Vector values = state_values(mdp, pi);
    const Vector pivot = pivot_vector(mdp, values);
    const double norm2 = pivot.squaredNorm();
    if (std::sqrt(norm2) <= 1e-12)
        throw DegenerateInputError("decompose_policy: pivot vector is zero; the "
                                   "rank-one normalization is undefined");
    PolicyDecomposition d;
    d.pivot = pivot;
    d.rank_one = (values * pivot.transpose()) / norm2;
    d.null_part = pi.data - d.rank_one;
    return d;
}

int greedy_action(const TabularMdp& mdp, const Vector& values, int state) {
    int best = 0;
    double best_q = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < mdp.n_actions; ++a) {
        const int k = mdp.flat_index(state, a);
        const double q = mdp.reward(k) + mdp.discount * mdp.transition.row(k).dot(values);
        if (q > best_q) { // strict: lowest index wins ties
            best_q = q;
            best = a;
        }
    }
    return best;
}

std::pair<PolicyMatrix, Vector> solve_optimal_policy(const TabularMdp& mdp, double tol,
                                                     int max_iterations) {
    if (tol <= 0.0) throw StructuralError("solve_optimal_policy: tol must be positive");
    Vector values = Vector::Zero(mdp.n_states);
    Vector next(mdp.n_states);
    bool converged = false;
    for (int it = 0; it < max_iterations; ++it) {
        for (int s = 0; s < mdp.n_states; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < mdp.n_actions; ++a) {
                const int k = mdp.flat_index(s, a);
                const double q =
                    mdp.reward(k) + mdp.discount * mdp.transition.row(k).dot(values);
                best = std::max(best, q);
            }
            next(s) = best;
        }
        const double residual = (next - values).lpNorm<Eigen::Infinity>();
        values = next;
        if (residual < tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NumericError("solve_optimal_policy: no convergence within iteration cap");

    Matrix table = Matrix::Zero(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        table(s, greedy_action(mdp, values, s)) = 1.0;
    PolicyMatrix pi = policy_matrix(mdp, table);
    // Exact evaluation of the greedy policy; tighter than the iterates.
    return {pi, state_values(mdp, pi)};
}

namespace {

std::string format_number(double x) {
    // 17 significant digits are lossless for doubles, so parse(format(x))
    // is the identity and decimal inputs survive any number of round trips.
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

std::string format_scenario(const TabularMdp& mdp) {
    std::ostringstream out;
    out << mdp.n_states << ' ' << mdp.n_actions << ' ' << format_number(mdp.discount)
        << '\n';
    const int sa = mdp.n_states * mdp.n_actions;
    for (int k = 0; k < sa; ++k) {
        for (int j = 0; j < mdp.n_states; ++j) {
            if (j) out << ' ';
            out << format_number(mdp.transition(k, j));
        }
        out << '\n';
    }
    for (int k = 0; k < sa; ++k) {
        if (k) out << ' ';
        out << format_number(mdp.reward(k));
    }
    out << '\n';
    return out.str();
}

TabularMdp parse_scenario(const std::string& text) {
    std::istringstream in(text);
    int n_states = 0, n_actions = 0;
    double discount = 0.0;
    if (!(in >> n_states >> n_actions >> discount))
        throw ValidationError("scenario: malformed header, expected '|S| |A| gamma'");
    if (n_states <= 0 || n_actions <= 0)
        throw ValidationError("scenario: nonpositive state or action count");
    const int sa = n_states * n_actions;
    Matrix transition(sa, n_states);
    for (int k = 0; k < sa; ++k)
        for (int j = 0; j < n_states; ++j)
            if (!(in >> transition(k, j)))
                throw ValidationError("scenario: truncated transition row " +
                                      std::to_string(k));
    Vector reward(sa);
    for (int k = 0; k < sa; ++k)
        if (!(in >> reward(k)))
            throw ValidationError("scenario: truncated reward vector");
    return TabularMdp::create(n_states, n_actions, std::move(transition),
                              std::move(reward), discount);
}

void save_scenario(const std::string& path, const TabularMdp& mdp) {
    std::ofstream out(path);
    if (!out) throw ValidationError("save_scenario: cannot open " + path);
    out << format_scenario(mdp);
}

TabularMdp load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("load_scenario: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str());
}

} // namespace apb
