#pragma once

#include "tclab/environments.hpp"
#include "tclab/predictability.hpp"

#include <functional>

namespace tclab {

// Numerical identity checks behind `tclab verify`. Each check reports its
// worst error against a fixed threshold.

struct CheckResult {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool passed = false;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
    }
};

/// `fault` deliberately breaks one formula so that the suite can be shown to
/// catch it; "none" in normal use.
enum class VerifyFault { none, flip_pseudo_reward };

inline VerifyFault parse_verify_fault(std::string_view s) {
    if (s == "none") return VerifyFault::none;
    if (s == "flip_pseudo_reward") return VerifyFault::flip_pseudo_reward;
    throw ConfigError(detail::concat("unknown fault '", s, "'"));
}

struct VerifyConfig {
    std::uint64_t seed = 0;
    int instances = 20;
    int min_states = 4;
    int max_states = 6;
    double fd_step = 1e-5;
    double gradient_tolerance = 1e-6;
    int identity_instances = 100;
    long mc_rollouts = 100000;
    double attractor_p = 0.5;
    double enumeration_cutoff = 1e-11;
    VerifyFault fault = VerifyFault::none;

    void validate() const {
        detail::require<ConfigError>(instances >= 1 && identity_instances >= 1, "verify: instance counts must be >= 1");
        detail::require<ConfigError>(min_states >= 2 && max_states >= min_states, "verify: bad state-count range");
        detail::require<ConfigError>(fd_step > 0.0 && gradient_tolerance > 0.0, "verify: fd_step and tolerance must be > 0");
        detail::require<ConfigError>(mc_rollouts >= 1, "verify: mc_rollouts must be >= 1");
        detail::require<ConfigError>(attractor_p > 0.0 && attractor_p <= 1.0, "verify: attractor_p outside (0, 1]");
        detail::require<ConfigError>(enumeration_cutoff > 0.0, "verify: enumeration_cutoff must be > 0");
    }
};

struct RandomInstance {
    ChainMatrix chain;
    OptionDef option;
    Vector start;
};

/// Dense chain with entries in [.05, 1.05) (row-normalized), logits in [-2, 2],
/// start weights in [.05, 1.05) (normalized).
inline RandomInstance random_instance(Index n, Rng& rng) {
    Matrix p(n, n);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c < n; ++c) p(r, c) = 0.05 + uniform01(rng);
        p.row(r) /= p.row(r).sum();
    }
    Vector logits(n), d(n);
    for (Index x = 0; x < n; ++x) logits[x] = -2.0 + 4.0 * uniform01(rng);
    for (Index x = 0; x < n; ++x) d[x] = 0.05 + uniform01(rng);
    return {ChainMatrix(p), OptionDef(PolicyTable::uniform(n, 1), logits), d / d.sum()};
}

/// dP/dlogit(x) assembled as occupancy(x|x_s) * dbeta/dlogit(x) * r_{x_f}(x).
inline ModelGradient pseudo_reward_model_gradient(const ChainMatrix& chain, const OptionDef& option,
                                                  VerifyFault fault = VerifyFault::none) {
    const Index n = option.n_states();
    const Matrix occupancy = (Matrix::Identity(n, n) - continuation_matrix(chain, option)).inverse();
    const OptionTransitionModel model = exact_option_model(chain, option);
    const double sign = fault == VerifyFault::flip_pseudo_reward ? -1.0 : 1.0;
    std::vector<Matrix> slices;
    for (Index x = 0; x < n; ++x) {
        Matrix s = Matrix::Zero(n, n);
        if (!detail::clamp_active(option, x)) {
            const double b = option.beta(x);
            for (Index xs = 0; xs < n; ++xs) {
                for (Index xf = 0; xf < n; ++xf) {
                    s(xs, xf) = occupancy(xs, x) * b * (1.0 - b) * sign * pseudo_reward(model, option, x, xf);
                }
            }
        }
        slices.push_back(std::move(s));
    }
    return ModelGradient(std::move(slices));
}

/// Expected full-variant sampled update, summed over every trajectory with
/// probability >= cutoff. Returns (expectation, dropped probability mass).
inline std::pair<Vector, double> enumerated_expected_update(const ChainMatrix& chain, const OptionDef& option,
                                                            const Vector& start, double cutoff) {
    const Index n = chain.n_states();
    const OptionTransitionModel model = exact_option_model(chain, option);
    const Vector marginal = marginal_termination(model, start).probs;
    Vector total = Vector::Zero(n);
    double dropped = 0.0;
    std::vector<Index> path;
    std::function<void(double)> walk = [&](double mass) {
        const Index x = path.back();
        const double b = option.beta(x);
        total += mass * b * sampled_termination_update(path, true, option, model, marginal).gradient;
        for (Index y = 0; y < n; ++y) {
            const double q = mass * (1.0 - b) * chain(x, y);
            if (q == 0.0) continue;
            if (q < cutoff) {
                dropped += q;
                continue;
            }
            path.push_back(y);
            walk(q);
            path.pop_back();
        }
    };
    for (Index xs = 0; xs < n; ++xs) {
        if (start[xs] == 0.0) continue;
        path = {xs};
        walk(start[xs]);
    }
    return {total, dropped};
}

/// The attractor option used by the sampling checks.
inline OptionDef verification_attractor_option() {
    Vector beta(3);
    beta << 0.8, 0.6, 0.5;
    return OptionDef::from_beta(PolicyTable::uniform(3, 1), beta);
}

inline VerifyReport run_verification(const VerifyConfig& cfg) {
    cfg.validate();
    VerifyReport report;
    auto add = [&](std::string name, double value, double threshold) {
        report.checks.push_back({std::move(name), value, threshold, value < threshold});
    };
    Rng rng(cfg.seed);

    double model_fd = 0.0, pseudo_fd = 0.0, row_sum = 0.0, objective_fd = 0.0;
    for (int t = 0; t < cfg.instances; ++t) {
        const Index n = cfg.min_states + static_cast<Index>(t % (cfg.max_states - cfg.min_states + 1));
        const RandomInstance inst = random_instance(n, rng);
        const OptionTransitionModel model = exact_option_model(inst.chain, inst.option);
        const ModelGradient fd = finite_difference_model_gradient(inst.chain, inst.option, cfg.fd_step);
        const ModelGradient exact = exact_model_gradient(model, inst.chain, inst.option);
        model_fd = std::max(model_fd, relative_error(exact, fd));
        pseudo_fd = std::max(pseudo_fd, relative_error(pseudo_reward_model_gradient(inst.chain, inst.option, cfg.fault), fd));
        row_sum = std::max(row_sum, exact.max_row_sum());
        const Vector g = exact_objective_gradient(model, inst.chain, inst.option, inst.start);
        const Vector gfd = finite_difference_objective_gradient(inst.chain, inst.option, inst.start, cfg.fd_step);
        objective_fd = std::max(objective_fd, relative_error(g, gfd));
    }
    add("model_gradient_vs_finite_differences", model_fd, cfg.gradient_tolerance);
    add("pseudo_reward_form_vs_finite_differences", pseudo_fd, cfg.gradient_tolerance);
    add("model_gradient_row_sums", row_sum, 1e-10);
    add("objective_gradient_vs_finite_differences", objective_fd, cfg.gradient_tolerance);

    double identity = 0.0, sum_form = 0.0;
    for (int t = 0; t < cfg.identity_instances; ++t) {
        const Index n = cfg.min_states + static_cast<Index>(t % (cfg.max_states - cfg.min_states + 1));
        const RandomInstance inst = random_instance(n, rng);
        const OptionTransitionModel model = exact_option_model(inst.chain, inst.option);
        const double cross = objective_entropy(model, inst.start).value;
        identity = std::max(identity, std::abs(cross - entropy(marginal_termination(model, inst.start).probs)));
        sum_form = std::max(sum_form, (truncated_sum_model(inst.chain, inst.option, 2000) - model.probs())
                                          .cwiseAbs()
                                          .maxCoeff());
    }
    add("cross_entropy_equals_marginal_entropy", identity, 1e-12);
    add("linear_solve_equals_sum_form", sum_form, 1e-8);

    const TabularMdp attractor = make_attractor(cfg.attractor_p);
    const ChainMatrix chain = induced_chain(attractor, PolicyTable::uniform(3, 1));
    const OptionDef option = verification_attractor_option();
    const OptionTransitionModel model = exact_option_model(chain, option);
    double tv = 0.0;
    for (Index xs = 0; xs < 3; ++xs) {
        Vector freq = Vector::Zero(3);
        for (long i = 0; i < cfg.mc_rollouts; ++i) {
            const Index xf = sample_final_state(chain, option, xs, rng);
            detail::require(xf >= 0, "verify: rollout did not terminate");
            freq[xf] += 1.0;
        }
        tv = std::max(tv, total_variation(freq / static_cast<double>(cfg.mc_rollouts), model.row(xs)));
    }
    add("monte_carlo_final_states_tv", tv, 0.01);

    const auto [expected, dropped] = enumerated_expected_update(chain, option, attractor.start_dist(), cfg.enumeration_cutoff);
    const Vector exact = exact_objective_gradient(model, chain, option, attractor.start_dist());
    add("enumeration_dropped_mass", dropped, 1e-6);
    add("expected_sampled_update_vs_gradient", (expected - exact).cwiseAbs().maxCoeff(), 1e-5);
    return report;
}

}  // namespace tclab
