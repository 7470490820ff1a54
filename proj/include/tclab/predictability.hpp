#pragma once

#include "tclab/termination_gradient.hpp"

#include <span>
#include <string_view>

namespace tclab {

/// Floor applied to marginal entries before logs and ratios.
inline constexpr double kLogEpsilon = 1e-12;

/// Trajectory-advantage terms with P(x|x_s) below this are skipped.
inline constexpr double kDefaultOccupancyGuard = 1e-9;

struct ObjectiveValue {
    double value = 0.0;
};

struct AdvantageSample {
    Index state = 0;
    Index final_state = 0;
    Index start_state = 0;
    double reachability_advantage = 0.0;
    double trajectory_advantage = 0.0;
    double importance = 0.0;  // beta(x)
    bool guarded = false;     // trajectory term skipped for low occupancy
};

enum class UpdateVariant { full, naive_reachability, reachability_only, trajectory_only };

inline std::string_view to_string(UpdateVariant v) {
    switch (v) {
        case UpdateVariant::full: return "full";
        case UpdateVariant::naive_reachability: return "naive";
        case UpdateVariant::reachability_only: return "reachability_only";
        case UpdateVariant::trajectory_only: return "trajectory_only";
    }
    return "?";
}

inline UpdateVariant parse_variant(std::string_view s) {
    if (s == "full") return UpdateVariant::full;
    if (s == "naive" || s == "naive_reachability") return UpdateVariant::naive_reachability;
    if (s == "reachability_only" || s == "reach") return UpdateVariant::reachability_only;
    if (s == "trajectory_only" || s == "traj") return UpdateVariant::trajectory_only;
    throw ValidationError(detail::concat("unknown update variant '", s, "'"));
}

namespace detail {

inline Vector clamped_log(const Vector& p) {
    Vector out(p.size());
    for (Index i = 0; i < p.size(); ++i) out[i] = std::log(std::max(p[i], kLogEpsilon));
    return out;
}

inline void require_marginal(const OptionTransitionModel& model, const Vector& marginal) {
    require(marginal.size() == model.n_states(), "marginal has size ", marginal.size(), ", expected ",
            model.n_states());
}

}  // namespace detail

/// J = -sum_{x_s} d(x_s) sum_{x_f} P(x_f|x_s) log P-bar(x_f), the cross-entropy
/// form; equals the entropy of the marginal P-bar = d^T P.
inline ObjectiveValue objective_entropy(const OptionTransitionModel& model, const Vector& start_dist) {
    const MarginalTermination m = marginal_termination(model, start_dist);
    const Index n = model.n_states();
    double j = 0.0;
    for (Index xs = 0; xs < n; ++xs) {
        if (m.start_dist[xs] == 0.0) continue;
        double inner = 0.0;
        for (Index xf = 0; xf < n; ++xf) {
            const double p = model(xs, xf);
            if (p > 0.0) inner += p * std::log(m.probs[xf]);
        }
        j -= m.start_dist[xs] * inner;
    }
    return {std::max(j, 0.0)};
}

/// A_P(x) = log P-bar(x) - sum_{x_f} P(x_f|x) log P-bar(x_f).
inline double reachability_advantage(const OptionTransitionModel& model, const Vector& marginal, Index x) {
    detail::require_marginal(model, marginal);
    detail::require_index(x, model.n_states(), "reachability_advantage: state");
    const Vector logm = detail::clamped_log(marginal);
    return logm[x] - model.probs().row(x).dot(logm.transpose());
}

/// A_tau(x|x_s) = 1 - sum_{x_f} P(x_f|x) P(x_f|x_s) P-bar(x) / (P-bar(x_f) P(x|x_s)).
inline double trajectory_advantage(const OptionTransitionModel& model, const Vector& marginal, Index x, Index start,
                                   double guard = kDefaultOccupancyGuard) {
    detail::require_marginal(model, marginal);
    detail::require_index(x, model.n_states(), "trajectory_advantage: state");
    detail::require_index(start, model.n_states(), "trajectory_advantage: start");
    const double occ = model(start, x);
    detail::require<ZeroOccupancyError>(occ >= guard && occ > 0.0, "trajectory_advantage: P(", x, "|", start,
                                        ") = ", occ, " is below the occupancy guard");
    const double mx = std::max(marginal[x], kLogEpsilon);
    double s = 0.0;
    for (Index xf = 0; xf < model.n_states(); ++xf) {
        s += model(x, xf) * model(start, xf) / std::max(marginal[xf], kLogEpsilon);
    }
    return 1.0 - s * mx / occ;
}

inline double sampled_reachability_advantage(const Vector& marginal, Index x, Index x_final) {
    return std::log(std::max(marginal[x], kLogEpsilon)) - std::log(std::max(marginal[x_final], kLogEpsilon));
}

inline double sampled_trajectory_advantage(const OptionTransitionModel& model, const Vector& marginal, Index x,
                                           Index x_final, Index start) {
    if (x == x_final) return 0.0;
    const double ratio = model(start, x_final) * std::max(marginal[x], kLogEpsilon) /
                         (std::max(marginal[x_final], kLogEpsilon) * model(start, x));
    return 1.0 - ratio;
}

/// dJ/d logit(x) = -sum_{x_s} d(x_s) P(x|x_s) (A_P(x) + A_tau(x|x_s)).
///
/// The P(x|x_s) A_tau product is formed without dividing by the occupancy,
/// so unreachable (x_s, x) pairs contribute exactly zero.
inline Vector exact_objective_gradient(const OptionTransitionModel& model, const ChainMatrix& chain,
                                       const OptionDef& option, const Vector& start_dist) {
    detail::require_compatible(model, option);
    detail::require_compatible(chain, option);
    const MarginalTermination m = marginal_termination(model, start_dist);
    const Index n = model.n_states();
    const Vector logm = detail::clamped_log(m.probs);
    const Vector inv_m = m.probs.cwiseMax(kLogEpsilon).cwiseInverse();
    const Matrix& p = model.probs();
    Vector grad = Vector::Zero(n);
    for (Index x = 0; x < n; ++x) {
        if (detail::clamp_active(option, x)) continue;
        const double a_p = logm[x] - p.row(x).dot(logm.transpose());
        const double mx = std::max(m.probs[x], kLogEpsilon);
        double g = 0.0;
        for (Index xs = 0; xs < n; ++xs) {
            if (m.start_dist[xs] == 0.0) continue;
            const double occ = p(xs, x);
            double cross = 0.0;
            for (Index xf = 0; xf < n; ++xf) cross += p(x, xf) * p(xs, xf) * inv_m[xf];
            const double occ_times_a_tau = occ - cross * mx;
            g += m.start_dist[xs] * (occ * a_p + occ_times_a_tau);
        }
        grad[x] = -g;
    }
    return grad;
}

/// Central differences of objective_entropy(exact model) with d fixed.
inline Vector finite_difference_objective_gradient(const ChainMatrix& chain, const OptionDef& option,
                                                   const Vector& start_dist, double h) {
    detail::require(h > 0.0, "finite_difference_objective_gradient: h must be positive");
    Vector grad(option.n_states());
    for (Index x = 0; x < option.n_states(); ++x) {
        const double plus = objective_entropy(exact_option_model(chain, option.with_logit_shift(x, h)), start_dist).value;
        const double minus = objective_entropy(exact_option_model(chain, option.with_logit_shift(x, -h)), start_dist).value;
        grad[x] = (plus - minus) / (2.0 * h);
    }
    return grad;
}

/// Knobs for the sampled update. `trajectory_floor` bounds the sampled
/// trajectory advantage from below; the ratio in it is unbounded when the
/// model estimate underweights x relative to the marginal.
struct SampledUpdateOptions {
    UpdateVariant variant = UpdateVariant::full;
    double baseline = 0.0;
    double occupancy_guard = kDefaultOccupancyGuard;
    double trajectory_floor = -std::numeric_limits<double>::infinity();
};

/// Per-logit estimate of dJ/d logit from one terminated trajectory.
struct TerminationUpdate {
    Vector gradient;          // descend: logit -= step * gradient
    double mean_bracket = 0;  // mean of the bracket before the baseline, over visits
    Index guarded = 0;        // visits whose trajectory term was skipped
    std::vector<AdvantageSample> samples;
};

/// Sampled advantages at every visit of x_s..x_f.
inline std::vector<AdvantageSample> advantage_samples(std::span<const Index> states, const OptionDef& option,
                                                      const OptionTransitionModel& model, const Vector& marginal,
                                                      double guard = kDefaultOccupancyGuard) {
    detail::require(!states.empty(), "advantage_samples: empty trajectory");
    detail::require_marginal(model, marginal);
    const Index xs = states.front();
    const Index xf = states.back();
    std::vector<AdvantageSample> out;
    out.reserve(states.size());
    for (Index x : states) {
        detail::require_index(x, model.n_states(), "advantage_samples: state");
        AdvantageSample s;
        s.state = x;
        s.final_state = xf;
        s.start_state = xs;
        s.importance = option.beta(x);
        if (x != xf) {
            s.reachability_advantage = sampled_reachability_advantage(marginal, x, xf);
            if (model(xs, x) >= guard && model(xs, x) > 0.0) {
                s.trajectory_advantage = sampled_trajectory_advantage(model, marginal, x, xf, xs);
            } else {
                s.guarded = true;
            }
        }
        out.push_back(s);
    }
    return out;
}

/// One-trajectory gradient estimate for the chosen variant:
///   full               -beta(x) (A_P + A_tau - B)
///   reachability_only  -beta(x) (A_P - B)
///   trajectory_only    -beta(x) (A_tau - B)
///   naive_reachability -beta(x) P-bar(x)     (no baseline)
/// summed over visits. The final state enters with its zero advantages, so
/// only the baseline moves it.
inline TerminationUpdate sampled_termination_update(std::span<const Index> states, bool terminated,
                                                    const OptionDef& option, const OptionTransitionModel& model,
                                                    const Vector& marginal, const SampledUpdateOptions& opts = {}) {
    detail::require_compatible(model, option);
    detail::require<UnterminatedTrajectoryError>(terminated,
                                                 "sampled_termination_update: trajectory did not terminate");
    TerminationUpdate u;
    u.samples = advantage_samples(states, option, model, marginal, opts.occupancy_guard);
    u.gradient = Vector::Zero(model.n_states());
    double bracket_sum = 0.0;
    for (const auto& s : u.samples) {
        const double a_tau = std::max(s.trajectory_advantage, opts.trajectory_floor);
        double bracket = 0.0;
        double baseline = opts.baseline;
        switch (opts.variant) {
            case UpdateVariant::full: bracket = s.reachability_advantage + a_tau; break;
            case UpdateVariant::reachability_only: bracket = s.reachability_advantage; break;
            case UpdateVariant::trajectory_only: bracket = a_tau; break;
            case UpdateVariant::naive_reachability:
                bracket = std::max(marginal[s.state], 0.0);
                baseline = 0.0;
                break;
        }
        if (s.guarded) ++u.guarded;
        bracket_sum += bracket;
        u.gradient[s.state] -= s.importance * (bracket - baseline);
    }
    u.mean_bracket = bracket_sum / static_cast<double>(u.samples.size());
    return u;
}

/// Variant-explicit alias of sampled_termination_update.
inline TerminationUpdate ablation_update(UpdateVariant variant, std::span<const Index> states, bool terminated,
                                         const OptionDef& option, const OptionTransitionModel& model,
                                         const Vector& marginal, SampledUpdateOptions opts = {}) {
    opts.variant = variant;
    return sampled_termination_update(states, terminated, option, model, marginal, opts);
}

/// Expected change of each logit's gradient when a constant baseline B is
/// subtracted inside the bracket: +B P-bar(x), since a trajectory from x_s
/// visits x on average P(x|x_s) / beta(x) times.
inline Vector baseline_shift(const OptionTransitionModel& model, const Vector& start_dist, double baseline) {
    return baseline * marginal_termination(model, start_dist).probs;
}

}  // namespace tclab
