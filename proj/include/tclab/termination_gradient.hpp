#pragma once

#include "tclab/option_model.hpp"

namespace tclab {

/// (1{x_f = x} - P(x_f|x)) / (1 - beta(x)).
inline double pseudo_reward(const OptionTransitionModel& model, const OptionDef& option, Index x, Index x_final) {
    detail::require_compatible(model, option);
    detail::require_index(x, model.n_states(), "pseudo_reward: state");
    detail::require_index(x_final, model.n_states(), "pseudo_reward: final state");
    const double indicator = x == x_final ? 1.0 : 0.0;
    return (indicator - model(x, x_final)) / (1.0 - option.beta(x));
}

/// dP(x_f|x_s)/d logit(x), one n x n slice per differentiated state x.
class ModelGradient {
  public:
    explicit ModelGradient(std::vector<Matrix> slices) : m_slices(std::move(slices)) {
        detail::require(!m_slices.empty(), "ModelGradient: no slices");
        for (const auto& s : m_slices) {
            detail::require(s.rows() == n_states() && s.cols() == n_states(), "ModelGradient: slice shape");
        }
    }

    Index n_states() const { return static_cast<Index>(m_slices.size()); }

    /// Matrix over (x_s, x_f) for the logit of state x.
    const Matrix& wrt(Index x) const { return m_slices[static_cast<std::size_t>(x)]; }

    double operator()(Index start, Index final, Index x) const { return wrt(x)(start, final); }

    double max_abs() const {
        double m = 0.0;
        for (const auto& s : m_slices) m = std::max(m, s.cwiseAbs().maxCoeff());
        return m;
    }

    /// Largest |sum over x_f| across all (x_s, x); zero up to rounding.
    double max_row_sum() const {
        double m = 0.0;
        for (const auto& s : m_slices) m = std::max(m, s.rowwise().sum().cwiseAbs().maxCoeff());
        return m;
    }

  private:
    std::vector<Matrix> m_slices;
};

namespace detail {

/// d beta / d logit is zero where the clamp is active.
inline bool clamp_active(const OptionDef& option, Index x) {
    const double s = sigmoid(option.termination_logits()[x]);
    return s < option.epsilon() || s > 1.0 - option.epsilon();
}

}  // namespace detail

/// dP(x_f|x_s)/d logit(x) = P(x|x_s) (1{x_f = x} - P(x_f|x)).
inline ModelGradient exact_model_gradient(const OptionTransitionModel& model, const ChainMatrix& chain,
                                          const OptionDef& option) {
    detail::require_compatible(model, option);
    detail::require_compatible(chain, option);
    const Index n = model.n_states();
    std::vector<Matrix> slices;
    slices.reserve(static_cast<std::size_t>(n));
    for (Index x = 0; x < n; ++x) {
        if (detail::clamp_active(option, x)) {
            slices.push_back(Matrix::Zero(n, n));
            continue;
        }
        Vector shift = -model.row(x);
        shift[x] += 1.0;
        slices.push_back(model.probs().col(x) * shift.transpose());
    }
    return ModelGradient(std::move(slices));
}

/// Central differences of the exact model solve under logit(x) +- h.
inline ModelGradient finite_difference_model_gradient(const ChainMatrix& chain, const OptionDef& option, double h) {
    detail::require(h > 0.0, "finite_difference_model_gradient: h must be positive, got ", h);
    const Index n = option.n_states();
    std::vector<Matrix> slices;
    slices.reserve(static_cast<std::size_t>(n));
    for (Index x = 0; x < n; ++x) {
        const Matrix plus = exact_option_model(chain, option.with_logit_shift(x, h)).probs();
        const Matrix minus = exact_option_model(chain, option.with_logit_shift(x, -h)).probs();
        slices.push_back((plus - minus) / (2.0 * h));
    }
    return ModelGradient(std::move(slices));
}

/// max |a - b| / max |b|, the norm-relative error used by gradient checks.
inline double relative_error(const ModelGradient& a, const ModelGradient& b) {
    detail::require(a.n_states() == b.n_states(), "relative_error: size mismatch");
    double diff = 0.0;
    for (Index x = 0; x < a.n_states(); ++x) diff = std::max(diff, (a.wrt(x) - b.wrt(x)).cwiseAbs().maxCoeff());
    return diff / std::max(b.max_abs(), 1e-300);
}

inline double relative_error(const Vector& a, const Vector& b) {
    detail::require(a.size() == b.size(), "relative_error: size mismatch");
    if (a.size() == 0) return 0.0;
    return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

}  // namespace tclab
