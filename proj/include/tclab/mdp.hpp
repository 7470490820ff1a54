#pragma once

#include "tclab/core.hpp"

#include <istream>
#include <iomanip>
#include <ostream>
#include <queue>

namespace tclab {

/// Finite MDP with dense state/action indices.
///
/// transition(a)(x, x') holds p(x'|x,a); reward()(x, a) holds r(x,a).
/// Rows are validated at construction (tolerance 1e-9) and then renormalized
/// exactly, so downstream solves see stochastic rows to machine precision.
class TabularMdp {
  public:
    TabularMdp(std::vector<Matrix> transitions, Matrix reward, double discount, Vector start_dist)
        : m_transitions(std::move(transitions)), m_reward(std::move(reward)), m_discount(discount) {
        detail::require(!m_transitions.empty(), "TabularMdp: need at least one action");
        const Index n = m_transitions.front().rows();
        detail::require(n > 0, "TabularMdp: need at least one state");
        for (std::size_t a = 0; a < m_transitions.size(); ++a) {
            auto& t = m_transitions[a];
            detail::require(t.rows() == n && t.cols() == n, "TabularMdp: transition slice ", a,
                            " is ", t.rows(), "x", t.cols(), ", expected ", n, "x", n);
            t = normalized_rows(t, detail::concat("TabularMdp transition a=", a));
        }
        detail::require(m_reward.rows() == n && m_reward.cols() == n_actions(),
                        "TabularMdp: reward table is ", m_reward.rows(), "x", m_reward.cols(),
                        ", expected ", n, "x", n_actions());
        detail::require(m_reward.allFinite(), "TabularMdp: reward table has non-finite entries");
        detail::require(m_discount >= 0.0 && m_discount <= 1.0, "TabularMdp: discount ", m_discount,
                        " outside [0, 1]");
        detail::require(start_dist.size() == n, "TabularMdp: start distribution has size ",
                        start_dist.size(), ", expected ", n);
        m_start = normalized_distribution(start_dist, "TabularMdp start distribution");
    }

    Index n_states() const { return m_transitions.front().rows(); }
    Index n_actions() const { return static_cast<Index>(m_transitions.size()); }

    const Matrix& transition(Index a) const {
        detail::require_index(a, n_actions(), "action");
        return m_transitions[static_cast<std::size_t>(a)];
    }
    double transition(Index x, Index a, Index next) const { return transition(a)(x, next); }

    const Matrix& reward() const { return m_reward; }
    double reward(Index x, Index a) const { return m_reward(x, a); }
    double r_max() const { return m_reward.cwiseAbs().maxCoeff(); }

    double discount() const { return m_discount; }
    const Vector& start_dist() const { return m_start; }

    TabularMdp with_discount(double gamma) const {
        return TabularMdp(m_transitions, m_reward, gamma, m_start);
    }

  private:
    std::vector<Matrix> m_transitions;
    Matrix m_reward;
    double m_discount;
    Vector m_start;
};

/// pi(a|x) as an n_states x n_actions row-stochastic table.
class PolicyTable {
  public:
    explicit PolicyTable(const Matrix& probs) : m_probs(normalized_rows(probs, "PolicyTable")) {}

    static PolicyTable uniform(Index n_states, Index n_actions) {
        return PolicyTable(Matrix::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
    }

    static PolicyTable deterministic(const std::vector<Index>& actions, Index n_actions) {
        Matrix m = Matrix::Zero(static_cast<Index>(actions.size()), n_actions);
        for (std::size_t x = 0; x < actions.size(); ++x) {
            detail::require_index(actions[x], n_actions, "PolicyTable::deterministic action");
            m(static_cast<Index>(x), actions[x]) = 1.0;
        }
        return PolicyTable(m);
    }

    /// Softmax of per-state action logits.
    static PolicyTable softmax(const Matrix& logits) {
        Matrix m(logits.rows(), logits.cols());
        for (Index x = 0; x < logits.rows(); ++x) {
            const double mx = logits.row(x).maxCoeff();
            m.row(x) = (logits.row(x).array() - mx).exp();
            m.row(x) /= m.row(x).sum();
        }
        return PolicyTable(m);
    }

    Index n_states() const { return m_probs.rows(); }
    Index n_actions() const { return m_probs.cols(); }
    const Matrix& probs() const { return m_probs; }
    double operator()(Index x, Index a) const { return m_probs(x, a); }

  private:
    Matrix m_probs;
};

/// Row-stochastic p^pi(x'|x).
class ChainMatrix {
  public:
    explicit ChainMatrix(const Matrix& probs) : m_probs(normalized_rows(probs, "ChainMatrix")) {
        detail::require_square(m_probs, "ChainMatrix");
    }

    Index n_states() const { return m_probs.rows(); }
    const Matrix& probs() const { return m_probs; }
    double operator()(Index x, Index next) const { return m_probs(x, next); }

  private:
    Matrix m_probs;
};

namespace detail {

inline void require_compatible(const TabularMdp& mdp, const PolicyTable& policy) {
    require(policy.n_states() == mdp.n_states() && policy.n_actions() == mdp.n_actions(),
            "policy is ", policy.n_states(), "x", policy.n_actions(), " but MDP has ", mdp.n_states(),
            " states and ", mdp.n_actions(), " actions");
}

}  // namespace detail

/// p^pi(x'|x) = sum_a pi(a|x) p(x'|x,a).
inline ChainMatrix induced_chain(const TabularMdp& mdp, const PolicyTable& policy) {
    detail::require_compatible(mdp, policy);
    Matrix p = Matrix::Zero(mdp.n_states(), mdp.n_states());
    for (Index a = 0; a < mdp.n_actions(); ++a) {
        p += policy.probs().col(a).asDiagonal() * mdp.transition(a);
    }
    return ChainMatrix(p);
}

/// r^pi(x) = sum_a pi(a|x) r(x,a).
inline Vector induced_reward(const TabularMdp& mdp, const PolicyTable& policy) {
    detail::require_compatible(mdp, policy);
    return policy.probs().cwiseProduct(mdp.reward()).rowwise().sum();
}

/// Largest absolute Bellman residual of q under (mdp, policy).
inline double bellman_residual(const TabularMdp& mdp, const PolicyTable& policy, const Matrix& q) {
    detail::require_compatible(mdp, policy);
    const Vector v = policy.probs().cwiseProduct(q).rowwise().sum();
    double worst = 0.0;
    for (Index a = 0; a < mdp.n_actions(); ++a) {
        const Vector target = mdp.reward().col(a) + mdp.discount() * mdp.transition(a) * v;
        worst = std::max(worst, (q.col(a) - target).cwiseAbs().maxCoeff());
    }
    return worst;
}

/// Dense solves are used below this many states; above it, evaluation iterates.
inline constexpr Index kDenseEvaluationLimit = 2000;

namespace detail {

// States that are absorbing with zero reward; with gamma = 1 these act as
// terminal states of value 0.
inline std::vector<bool> zero_reward_absorbing(const ChainMatrix& chain, const Vector& reward) {
    std::vector<bool> terminal(static_cast<std::size_t>(chain.n_states()), false);
    for (Index x = 0; x < chain.n_states(); ++x) {
        terminal[static_cast<std::size_t>(x)] = chain(x, x) >= 1.0 - 1e-12 && reward[x] == 0.0;
    }
    return terminal;
}

// Backward BFS over the support graph of `edges` from the `targets` set.
inline std::vector<bool> can_reach(const Matrix& edges, const std::vector<bool>& targets) {
    const Index n = edges.rows();
    std::vector<bool> reach = targets;
    std::queue<Index> frontier;
    for (Index x = 0; x < n; ++x) {
        if (reach[static_cast<std::size_t>(x)]) frontier.push(x);
    }
    while (!frontier.empty()) {
        const Index y = frontier.front();
        frontier.pop();
        for (Index x = 0; x < n; ++x) {
            if (!reach[static_cast<std::size_t>(x)] && edges(x, y) > 0.0) {
                reach[static_cast<std::size_t>(x)] = true;
                frontier.push(x);
            }
        }
    }
    return reach;
}

inline Vector iterate_evaluation(const Matrix& p, const Vector& r, double gamma) {
    Vector v = Vector::Zero(r.size());
    for (int it = 0; it < 1'000'000; ++it) {
        Vector next = r + gamma * p * v;
        const double delta = (next - v).cwiseAbs().maxCoeff();
        v.swap(next);
        if (delta * gamma <= 1e-13 * std::max(1.0, v.cwiseAbs().maxCoeff()) * (1.0 - gamma)) return v;
    }
    throw ConvergenceError("iterative policy evaluation did not converge");
}

}  // namespace detail

/// State values v^pi, solved exactly (dense) or iteratively for large chains.
/// With gamma = 1 the chain must be proper: every state must reach a
/// zero-reward absorbing state, which is assigned value 0.
inline Vector evaluate_v(const TabularMdp& mdp, const PolicyTable& policy) {
    const ChainMatrix chain = induced_chain(mdp, policy);
    const Vector r = induced_reward(mdp, policy);
    const double gamma = mdp.discount();
    const Index n = mdp.n_states();

    if (gamma < 1.0) {
        if (n < kDenseEvaluationLimit) {
            const Matrix a = Matrix::Identity(n, n) - gamma * chain.probs();
            return a.partialPivLu().solve(r);
        }
        return detail::iterate_evaluation(chain.probs(), r, gamma);
    }

    const auto terminal = detail::zero_reward_absorbing(chain, r);
    const auto proper = detail::can_reach(chain.probs(), terminal);
    for (Index x = 0; x < n; ++x) {
        if (!proper[static_cast<std::size_t>(x)]) {
            throw ConvergenceError(detail::concat("undiscounted evaluation: state ", x,
                                                  " never reaches a zero-reward absorbing state"));
        }
    }
    std::vector<Index> live;
    for (Index x = 0; x < n; ++x) {
        if (!terminal[static_cast<std::size_t>(x)]) live.push_back(x);
    }
    Vector v = Vector::Zero(n);
    if (live.empty()) return v;
    const auto m = static_cast<Index>(live.size());
    Matrix a = Matrix::Identity(m, m);
    Vector b(m);
    for (Index i = 0; i < m; ++i) {
        b[i] = r[live[static_cast<std::size_t>(i)]];
        for (Index j = 0; j < m; ++j) {
            a(i, j) -= chain(live[static_cast<std::size_t>(i)], live[static_cast<std::size_t>(j)]);
        }
    }
    const Vector sol = a.partialPivLu().solve(b);
    for (Index i = 0; i < m; ++i) v[live[static_cast<std::size_t>(i)]] = sol[i];
    return v;
}

/// q^pi(x,a) = r(x,a) + gamma sum_x' p(x'|x,a) v^pi(x').
inline Matrix evaluate_q(const TabularMdp& mdp, const PolicyTable& policy) {
    const Vector v = evaluate_v(mdp, policy);
    Matrix q(mdp.n_states(), mdp.n_actions());
    for (Index a = 0; a < mdp.n_actions(); ++a) {
        q.col(a) = mdp.reward().col(a) + mdp.discount() * mdp.transition(a) * v;
    }
    const double residual = bellman_residual(mdp, policy, q);
    if (!(residual <= 1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff()))) {
        throw ConvergenceError(detail::concat("policy evaluation residual ", residual, " too large"));
    }
    return q;
}

// Plain-text MDP format ------------------------------------------------------
//
//   tclab-mdp 1
//   n_states <N>
//   n_actions <A>
//   discount <gamma>
//   start <N probabilities>
//   p <a> <x> <N probabilities>      one line per (a, x), p(.|x,a)
//   r <x> <A rewards>                one line per x
//
// Lines starting with '#' are comments. Values are written with 17
// significant digits so a write/read cycle is exact.

inline void write_mdp(std::ostream& os, const TabularMdp& mdp) {
    const auto old_precision = os.precision(17);
    os << "tclab-mdp 1\n";
    os << "n_states " << mdp.n_states() << "\n";
    os << "n_actions " << mdp.n_actions() << "\n";
    os << "discount " << mdp.discount() << "\n";
    os << "start";
    for (Index x = 0; x < mdp.n_states(); ++x) os << ' ' << mdp.start_dist()[x];
    os << "\n";
    for (Index a = 0; a < mdp.n_actions(); ++a) {
        for (Index x = 0; x < mdp.n_states(); ++x) {
            os << "p " << a << ' ' << x;
            for (Index y = 0; y < mdp.n_states(); ++y) os << ' ' << mdp.transition(a)(x, y);
            os << "\n";
        }
    }
    for (Index x = 0; x < mdp.n_states(); ++x) {
        os << "r " << x;
        for (Index a = 0; a < mdp.n_actions(); ++a) os << ' ' << mdp.reward(x, a);
        os << "\n";
    }
    os.precision(old_precision);
}

inline TabularMdp read_mdp(std::istream& is) {
    std::string line;
    auto next_line = [&]() -> std::istringstream {
        while (std::getline(is, line)) {
            if (!line.empty() && line[0] != '#') return std::istringstream(line);
        }
        throw ValidationError("read_mdp: unexpected end of input");
    };
    auto expect_key = [](std::istringstream& ss, const char* key) {
        std::string k;
        ss >> k;
        detail::require(k == key, "read_mdp: expected '", key, "', got '", k, "'");
    };
    auto read_values = [](std::istringstream& ss, Index n, const char* what) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) {
            detail::require(static_cast<bool>(ss >> v[i]), "read_mdp: short ", what, " row");
        }
        return v;
    };

    {
        auto ss = next_line();
        expect_key(ss, "tclab-mdp");
        int version = 0;
        ss >> version;
        detail::require(version == 1, "read_mdp: unsupported version ", version);
    }
    Index n = 0, na = 0;
    double gamma = 0.0;
    {
        auto ss = next_line();
        expect_key(ss, "n_states");
        ss >> n;
    }
    {
        auto ss = next_line();
        expect_key(ss, "n_actions");
        ss >> na;
    }
    {
        auto ss = next_line();
        expect_key(ss, "discount");
        ss >> gamma;
    }
    detail::require(n > 0 && na > 0, "read_mdp: bad header sizes ", n, "x", na);
    Vector start;
    {
        auto ss = next_line();
        expect_key(ss, "start");
        start = read_values(ss, n, "start");
    }
    std::vector<Matrix> transitions(static_cast<std::size_t>(na), Matrix::Zero(n, n));
    std::vector<std::vector<bool>> seen(static_cast<std::size_t>(na), std::vector<bool>(static_cast<std::size_t>(n)));
    for (Index k = 0; k < n * na; ++k) {
        auto ss = next_line();
        expect_key(ss, "p");
        Index a = -1, x = -1;
        ss >> a >> x;
        detail::require_index(a, na, "read_mdp: action");
        detail::require_index(x, n, "read_mdp: state");
        detail::require(!seen[static_cast<std::size_t>(a)][static_cast<std::size_t>(x)],
                        "read_mdp: duplicate row for a=", a, " x=", x);
        seen[static_cast<std::size_t>(a)][static_cast<std::size_t>(x)] = true;
        transitions[static_cast<std::size_t>(a)].row(x) = read_values(ss, n, "transition").transpose();
    }
    Matrix reward(n, na);
    std::vector<bool> seen_reward(static_cast<std::size_t>(n));
    for (Index k = 0; k < n; ++k) {
        auto ss = next_line();
        expect_key(ss, "r");
        Index x = -1;
        ss >> x;
        detail::require_index(x, n, "read_mdp: reward state");
        detail::require(!seen_reward[static_cast<std::size_t>(x)], "read_mdp: duplicate reward row for x=", x);
        seen_reward[static_cast<std::size_t>(x)] = true;
        reward.row(x) = read_values(ss, na, "reward").transpose();
    }
    return TabularMdp(std::move(transitions), std::move(reward), gamma, std::move(start));
}

}  // namespace tclab
