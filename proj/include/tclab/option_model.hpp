#pragma once

#include "tclab/mdp.hpp"

#include <span>

namespace tclab {

/// Default clamp for termination probabilities: beta lies in [eps, 1 - eps].
inline constexpr double kDefaultBetaEpsilon = 1e-4;

/// An option with initiation set = all states, an internal policy and a
/// termination condition stored as logits. beta is always read through a
/// clamped sigmoid, so 0 < beta < 1 holds everywhere.
class OptionDef {
  public:
    OptionDef(PolicyTable policy, Vector termination_logits, double epsilon = kDefaultBetaEpsilon)
        : m_policy(std::move(policy)), m_logits(std::move(termination_logits)), m_epsilon(epsilon) {
        detail::require(m_logits.size() == m_policy.n_states(), "OptionDef: ", m_logits.size(),
                        " termination logits for ", m_policy.n_states(), " states");
        detail::require(epsilon > 0.0 && epsilon < 0.5, "OptionDef: epsilon ", epsilon,
                        " outside (0, 0.5)");
        for (Index x = 0; x < m_logits.size(); ++x) {
            detail::require(!std::isnan(m_logits[x]), "OptionDef: NaN termination logit at ", x);
        }
    }

    /// Builds the logits from termination probabilities (clamped first).
    static OptionDef from_beta(PolicyTable policy, const Vector& beta, double epsilon = kDefaultBetaEpsilon) {
        Vector logits(beta.size());
        for (Index x = 0; x < beta.size(); ++x) {
            detail::require(beta[x] >= 0.0 && beta[x] <= 1.0, "OptionDef::from_beta: beta(", x,
                            ") = ", beta[x], " outside [0, 1]");
            logits[x] = logit(std::clamp(beta[x], epsilon, 1.0 - epsilon));
        }
        return OptionDef(std::move(policy), std::move(logits), epsilon);
    }

    Index n_states() const { return m_policy.n_states(); }
    Index n_actions() const { return m_policy.n_actions(); }
    const PolicyTable& policy() const { return m_policy; }
    const Vector& termination_logits() const { return m_logits; }
    double epsilon() const { return m_epsilon; }

    double beta(Index x) const { return std::clamp(sigmoid(m_logits[x]), m_epsilon, 1.0 - m_epsilon); }

    Vector beta() const {
        Vector b(n_states());
        for (Index x = 0; x < n_states(); ++x) b[x] = beta(x);
        return b;
    }

    /// Copy with a different termination parameterization.
    OptionDef with_logits(Vector logits) const { return OptionDef(m_policy, std::move(logits), m_epsilon); }

    /// Copy with one logit shifted by delta.
    OptionDef with_logit_shift(Index x, double delta) const {
        Vector l = m_logits;
        l[x] += delta;
        return with_logits(std::move(l));
    }

  private:
    PolicyTable m_policy;
    Vector m_logits;
    double m_epsilon;
};

/// P^o(x_f|x_s): rows indexed by start state, columns by final state.
class OptionTransitionModel {
  public:
    explicit OptionTransitionModel(Matrix probs, double tol = 1e-8) : m_probs(std::move(probs)) {
        detail::require_square(m_probs, "OptionTransitionModel");
        detail::require((m_probs.array() >= -tol).all(), "OptionTransitionModel: negative entry");
        const double err = max_row_sum_error(m_probs);
        detail::require(err <= tol, "OptionTransitionModel: rows deviate from 1 by ", err);
    }

    /// Model with every row uniform; the usual starting point for TD estimates.
    static OptionTransitionModel uniform(Index n) {
        return OptionTransitionModel(Matrix::Constant(n, n, 1.0 / static_cast<double>(n)));
    }

    Index n_states() const { return m_probs.rows(); }
    const Matrix& probs() const { return m_probs; }
    double operator()(Index start, Index final) const { return m_probs(start, final); }
    Vector row(Index start) const { return m_probs.row(start).transpose(); }

  private:
    Matrix m_probs;
};

/// Classical discounted option models: sub-stochastic P^o_gamma and R^o.
struct DiscountedOptionModel {
    Matrix probs;
    Vector reward;
};

/// Marginal final-state distribution under a start distribution d_mu.
struct MarginalTermination {
    Vector probs;
    Vector start_dist;
};

namespace detail {

inline void require_compatible(const ChainMatrix& chain, const OptionDef& option) {
    require(chain.n_states() == option.n_states(), "chain has ", chain.n_states(),
            " states but option has ", option.n_states());
}

inline void require_compatible(const OptionTransitionModel& model, const OptionDef& option) {
    require(model.n_states() == option.n_states(), "model has ", model.n_states(),
            " states but option has ", option.n_states());
}

}  // namespace detail

/// States from which no terminating state is reachable under pi^o.
///
/// A state counts as terminating when beta(x) lies above the clamp floor
/// eps (with a relative slack for rounding); the floor stands in for beta = 0. Reachability is computed on
/// the support graph of diag(1 - beta) p^pi.
inline std::vector<Index> nonterminating_states(const ChainMatrix& chain, const OptionDef& option) {
    detail::require_compatible(chain, option);
    const Vector beta = option.beta();
    std::vector<bool> terminating(static_cast<std::size_t>(chain.n_states()));
    for (Index x = 0; x < chain.n_states(); ++x) {
        terminating[static_cast<std::size_t>(x)] = beta[x] > option.epsilon() * (1.0 + 1e-6);
    }
    const Matrix edges = (Vector::Ones(beta.size()) - beta).asDiagonal() * chain.probs();
    const auto reach = detail::can_reach(edges, terminating);
    std::vector<Index> bad;
    for (Index x = 0; x < chain.n_states(); ++x) {
        if (!reach[static_cast<std::size_t>(x)]) bad.push_back(x);
    }
    return bad;
}

inline bool options_eventually_terminate(const ChainMatrix& chain, const OptionDef& option) {
    return nonterminating_states(chain, option).empty();
}

inline void require_eventual_termination(const ChainMatrix& chain, const OptionDef& option) {
    const auto bad = nonterminating_states(chain, option);
    if (!bad.empty()) {
        throw TerminationReachabilityError(detail::concat(
            "option cannot terminate from ", bad.size(), " state(s), first is ", bad.front()));
    }
}

/// One-step option transition process diag(1 - beta) p^pi.
inline Matrix continuation_matrix(const ChainMatrix& chain, const OptionDef& option) {
    detail::require_compatible(chain, option);
    return (Vector::Ones(option.n_states()) - option.beta()).asDiagonal() * chain.probs();
}

/// Undiscounted, backward-shifted option model: the unique solution of
/// P = diag(beta) + diag(1 - beta) p^pi P.
inline OptionTransitionModel exact_option_model(const ChainMatrix& chain, const OptionDef& option) {
    require_eventual_termination(chain, option);
    const Index n = option.n_states();
    const Matrix a = Matrix::Identity(n, n) - continuation_matrix(chain, option);
    const Matrix rhs = option.beta().asDiagonal().toDenseMatrix();
    Eigen::PartialPivLU<Matrix> lu(a);
    Matrix p = lu.solve(rhs);
    const double residual = (a * p - rhs).cwiseAbs().maxCoeff();
    if (!p.allFinite() || residual > 1e-8 || max_row_sum_error(p) > 1e-8) {
        throw TerminationReachabilityError(
            detail::concat("option model solve is ill-conditioned (residual ", residual, ")"));
    }
    // Solves leave ~1e-17 negatives on unreachable entries.
    p = p.cwiseMax(0.0);
    return OptionTransitionModel(std::move(p));
}

/// Discounted option models:
///   P_gamma = gamma p^pi diag(beta) + gamma p^pi diag(1 - beta) P_gamma
///   R       = r^pi + gamma p^pi diag(1 - beta) R
inline DiscountedOptionModel discounted_option_model(const TabularMdp& mdp, const OptionDef& option,
                                                     double gamma) {
    detail::require(gamma >= 0.0 && gamma < 1.0, "discounted_option_model: gamma ", gamma,
                    " must lie in [0, 1)");
    const ChainMatrix chain = induced_chain(mdp, option.policy());
    const Vector r = induced_reward(mdp, option.policy());
    const Index n = option.n_states();
    const Vector beta = option.beta();
    const Matrix cont = gamma * chain.probs() * (Vector::Ones(n) - beta).asDiagonal();
    Eigen::PartialPivLU<Matrix> lu(Matrix::Identity(n, n) - cont);
    DiscountedOptionModel out;
    out.probs = lu.solve(gamma * chain.probs() * beta.asDiagonal());
    out.reward = lu.solve(r);
    return out;
}

/// p~^(k): probability of being at x_f after k steps without terminating.
inline Matrix k_step_process(const ChainMatrix& chain, const OptionDef& option, int k) {
    detail::require(k >= 0, "k_step_process: k must be nonnegative, got ", k);
    const Matrix step = continuation_matrix(chain, option);
    Matrix out = Matrix::Identity(option.n_states(), option.n_states());
    for (int i = 0; i < k; ++i) out = step * out;
    return out;
}

/// Truncation of P^o = (sum_{k=0..K} p~^(k)) diag(beta), with beta indexed
/// by the final state.
inline Matrix truncated_sum_model(const ChainMatrix& chain, const OptionDef& option, int max_k) {
    detail::require(max_k >= 0, "truncated_sum_model: K must be nonnegative");
    const Index n = option.n_states();
    const Matrix step = continuation_matrix(chain, option);
    Matrix term = Matrix::Identity(n, n);
    Matrix sum = term;
    for (int k = 1; k <= max_k; ++k) {
        term = step * term;
        sum += term;
    }
    return sum * option.beta().asDiagonal();
}

/// Sampled one-step TD update of an option model estimate.
///
/// `states` is x_0..x_T. For i < T the row of x_i moves toward the row of
/// x_{i+1}; when `terminated` the final row moves toward the indicator of
/// x_T. Rows are processed from the end so bootstrapped rows are fresh.
/// A cap-truncated trajectory leaves the row of its last state untouched.
inline OptionTransitionModel td_update_option_model(const OptionTransitionModel& estimate,
                                                    std::span<const Index> states, bool terminated,
                                                    double step_size) {
    detail::require_step_size(step_size, "td_update_option_model: step size");
    detail::require(!states.empty(), "td_update_option_model: empty trajectory");
    const Index n = estimate.n_states();
    for (Index x : states) detail::require_index(x, n, "td_update_option_model: state");
    Matrix p = estimate.probs();
    if (step_size == 0.0) return OptionTransitionModel(std::move(p));
    const std::size_t last = states.size() - 1;
    if (terminated) {
        const Index xf = states[last];
        p.row(xf) *= 1.0 - step_size;
        p(xf, xf) += step_size;
    }
    for (std::size_t i = last; i-- > 0;) {
        const Index x = states[i];
        const Vector target = p.row(states[i + 1]).transpose();
        p.row(x) += step_size * (target.transpose() - p.row(x));
    }
    return OptionTransitionModel(std::move(p));
}

/// P-bar(x_f) = sum_{y_s} d_mu(y_s) P^o(x_f|y_s).
inline MarginalTermination marginal_termination(const OptionTransitionModel& model, const Vector& start_dist) {
    detail::require(start_dist.size() == model.n_states(), "marginal_termination: start distribution has size ",
                    start_dist.size(), ", expected ", model.n_states());
    MarginalTermination m;
    m.start_dist = normalized_distribution(start_dist, "marginal_termination start distribution");
    m.probs = model.probs().transpose() * m.start_dist;
    return m;
}

/// MSE step of a marginal tracker toward an observed row P^o(.|x_s).
inline MarginalTermination track_marginal(const MarginalTermination& tracker, const Vector& observed_row,
                                          double step_size) {
    detail::require_step_size(step_size, "track_marginal: step size");
    detail::require(observed_row.size() == tracker.probs.size(), "track_marginal: row has size ",
                    observed_row.size(), ", expected ", tracker.probs.size());
    MarginalTermination out = tracker;
    out.probs += step_size * (observed_row - tracker.probs);
    return out;
}

/// MSE step of the empirical start distribution toward the indicator of x_s.
inline MarginalTermination track_start(const MarginalTermination& tracker, Index start, double step_size) {
    detail::require_step_size(step_size, "track_start: step size");
    detail::require_index(start, tracker.start_dist.size(), "track_start: state");
    MarginalTermination out = tracker;
    out.start_dist *= 1.0 - step_size;
    out.start_dist[start] += step_size;
    return out;
}

/// Monte Carlo rollout of the option from `start` under the backward-shifted
/// convention: termination is drawn at the current state before moving.
/// Returns the final state, or -1 if `max_steps` transitions pass first.
inline Index sample_final_state(const ChainMatrix& chain, const OptionDef& option, Index start, Rng& rng,
                                long max_steps = 1'000'000) {
    Index x = start;
    for (long t = 0; t <= max_steps; ++t) {
        if (bernoulli(rng, option.beta(x))) return x;
        x = sample_categorical(chain.probs().row(x), rng);
    }
    return -1;
}

// CSV export -----------------------------------------------------------------

/// Writes a square matrix as CSV with a header row of column state indices
/// and a leading column holding the row state index.
inline void write_matrix_csv(std::ostream& os, const Matrix& m, const char* corner = "x_s") {
    const auto old_precision = os.precision(17);
    os << corner;
    for (Index c = 0; c < m.cols(); ++c) os << ',' << c;
    os << '\n';
    for (Index r = 0; r < m.rows(); ++r) {
        os << r;
        for (Index c = 0; c < m.cols(); ++c) os << ',' << m(r, c);
        os << '\n';
    }
    os.precision(old_precision);
}

inline void write_model_csv(std::ostream& os, const OptionTransitionModel& model) {
    write_matrix_csv(os, model.probs());
}

}  // namespace tclab
