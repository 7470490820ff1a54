#pragma once

#include "tclab/io.hpp"
#include "tclab/parallel.hpp"

#include <numeric>

namespace tclab {

// Option sets ----------------------------------------------------------------------------

enum class OptionSetKind { hallways, centers, random_goals, random_options, learned };

inline OptionSetKind parse_option_set_kind(std::string_view s) {
    if (s == "hallways") return OptionSetKind::hallways;
    if (s == "centers") return OptionSetKind::centers;
    if (s == "random_goals") return OptionSetKind::random_goals;
    if (s == "random_options") return OptionSetKind::random_options;
    if (s == "learned") return OptionSetKind::learned;
    throw ConfigError(detail::concat("unknown option set kind '", s, "'"));
}

inline std::string_view to_string(OptionSetKind k) {
    switch (k) {
        case OptionSetKind::hallways: return "hallways";
        case OptionSetKind::centers: return "centers";
        case OptionSetKind::random_goals: return "random_goals";
        case OptionSetKind::random_options: return "random_options";
        case OptionSetKind::learned: return "learned";
    }
    return "?";
}

struct OptionSetSpec {
    std::string name;
    OptionSetKind kind = OptionSetKind::hallways;
    int n = 4;                   // random kinds only
    double concentration = 4.0;  // goal-directed kinds only
    std::uint64_t seed = 0;
    std::string checkpoint;      // learned only
    double beta_epsilon = kDefaultBetaEpsilon;

    bool goal_directed() const {
        return kind == OptionSetKind::hallways || kind == OptionSetKind::centers ||
               kind == OptionSetKind::random_goals;
    }

    void validate() const {
        detail::require<ConfigError>(!name.empty(), "option set needs a name");
        detail::require<ConfigError>(n >= 1, "option set '", name, "': n must be >= 1");
        if (goal_directed()) {
            detail::require<ConfigError>(concentration > 0.0, "option set '", name, "': concentration must be > 0");
        }
        if (kind == OptionSetKind::learned) {
            detail::require<ConfigError>(!checkpoint.empty(), "option set '", name, "': learned needs a checkpoint");
        }
    }
};

struct OptionSet {
    OptionSetSpec spec;
    std::vector<OptionDef> options;
    std::vector<Index> goals;  // goal-directed kinds
};

/// Greedy shortest-path policy toward `goal` (first action in up, down,
/// left, right order among those minimizing BFS distance of the landing
/// cell) with beta(goal) = sigmoid(c) and sigmoid(-c) elsewhere.
inline OptionDef goal_directed_option(const GridWorld& world, Index goal, double concentration,
                                      double epsilon = kDefaultBetaEpsilon) {
    detail::require_index(goal, world.n_states(), "goal_directed_option: goal");
    detail::require(concentration > 0.0, "goal_directed_option: concentration must be > 0");
    const auto dist = world.distances_to(goal);
    std::vector<Index> actions(static_cast<std::size_t>(world.n_states()));
    for (Index x = 0; x < world.n_states(); ++x) {
        detail::require(dist[static_cast<std::size_t>(x)] >= 0, "goal_directed_option: goal unreachable from cell ", x);
        Index best = 0;
        for (Index a = 1; a < 4; ++a) {
            if (dist[static_cast<std::size_t>(world.move(x, a))] < dist[static_cast<std::size_t>(world.move(x, best))]) {
                best = a;
            }
        }
        actions[static_cast<std::size_t>(x)] = best;
    }
    Vector logits = Vector::Constant(world.n_states(), -concentration);
    logits[goal] = concentration;
    return OptionDef(PolicyTable::deterministic(actions, 4), std::move(logits), epsilon);
}

inline OptionSet build_option_set(const OptionSetSpec& spec, const GridWorld& world) {
    spec.validate();
    OptionSet set{spec, {}, {}};
    Rng rng(spec.seed);
    const Index n = world.n_states();
    switch (spec.kind) {
        case OptionSetKind::hallways: set.goals = world.hallways(); break;
        case OptionSetKind::centers: set.goals = world.room_centers(); break;
        case OptionSetKind::random_goals: {
            detail::require<ConfigError>(spec.n <= n, "option set '", spec.name, "': more goals than cells");
            const auto perm = random_permutation(n, rng);
            set.goals.assign(perm.begin(), perm.begin() + spec.n);
            break;
        }
        case OptionSetKind::random_options:
            for (int o = 0; o < spec.n; ++o) {
                Matrix pi(n, 4);
                Vector beta(n);
                for (Index x = 0; x < n; ++x) {
                    // Flat Dirichlet draw: normalized unit exponentials.
                    for (Index a = 0; a < 4; ++a) pi(x, a) = -std::log1p(-uniform01(rng));
                    pi.row(x) /= pi.row(x).sum();
                    beta[x] = std::clamp(uniform01(rng), spec.beta_epsilon, 1.0 - spec.beta_epsilon);
                }
                set.options.push_back(OptionDef::from_beta(PolicyTable(pi), beta, spec.beta_epsilon));
            }
            return set;
        case OptionSetKind::learned: {
            const Checkpoint cp = load_checkpoint(spec.checkpoint);
            detail::require<ConfigError>(cp.agent.n_states == n && cp.agent.n_actions == 4, "checkpoint '",
                                         spec.checkpoint, "' has ", cp.agent.n_states, " states and ",
                                         cp.agent.n_actions, " actions; the grid has ", n, " cells and 4 actions");
            for (Index o = 0; o < cp.agent.n_options(); ++o) set.options.push_back(cp.agent.option(o, cp.beta_epsilon));
            return set;
        }
    }
    for (Index g : set.goals) {
        set.options.push_back(goal_directed_option(world, g, spec.concentration, spec.beta_epsilon));
    }
    return set;
}

/// -mean_o J(P^o) under the undiscounted model with uniform starts.
inline double option_set_predictability(const GridWorld& world, const std::vector<OptionDef>& options) {
    detail::require(!options.empty(), "option_set_predictability: empty set");
    const Vector d = Vector::Constant(world.n_states(), 1.0 / static_cast<double>(world.n_states()));
    double total = 0.0;
    for (const auto& o : options) {
        const ChainMatrix chain = induced_chain(world.mdp(), o.policy());
        total += objective_entropy(exact_option_model(chain, o), d).value;
    }
    return -total / static_cast<double>(options.size());
}

/// P-bar under uniform starts, one vector per option.
inline std::vector<Vector> option_set_marginals(const GridWorld& world, const std::vector<OptionDef>& options) {
    const Vector d = Vector::Constant(world.n_states(), 1.0 / static_cast<double>(world.n_states()));
    std::vector<Vector> out;
    for (const auto& o : options) {
        out.push_back(marginal_termination(exact_option_model(induced_chain(world.mdp(), o.policy()), o), d).probs);
    }
    return out;
}

// SMDP value iteration -------------------------------------------------------------------

/// A control for SMDP backups: discounted transition kernel and reward.
struct Control {
    Matrix probs;
    Vector reward;
};

/// Navigation to `goal`: reward 1 (in expectation under slip) for entering
/// it, and the goal absorbs with zero reward.
inline TabularMdp goal_task_mdp(const GridWorld& world, Index goal, double gamma) {
    detail::require_index(goal, world.n_states(), "goal_task_mdp: goal");
    const TabularMdp& base = world.mdp();
    std::vector<Matrix> t;
    Matrix r = Matrix::Zero(base.n_states(), base.n_actions());
    for (Index a = 0; a < base.n_actions(); ++a) {
        Matrix m = base.transition(a);
        r.col(a) = m.col(goal);
        m.row(goal).setZero();
        m(goal, goal) = 1.0;
        r(goal, a) = 0.0;
        t.push_back(std::move(m));
    }
    return TabularMdp(std::move(t), std::move(r), gamma, base.start_dist());
}

inline std::vector<Control> primitive_controls(const TabularMdp& task, double gamma) {
    std::vector<Control> out;
    for (Index a = 0; a < task.n_actions(); ++a) out.push_back({gamma * task.transition(a), task.reward().col(a)});
    return out;
}

inline Control option_control(const TabularMdp& task, const OptionDef& option, double gamma) {
    const DiscountedOptionModel m = discounted_option_model(task, option, gamma);
    return {m.probs, m.reward};
}

struct ValueIterationTrace {
    std::vector<double> averages;  // mean V_k over all states, k = 1..iterations
    Vector values;                 // V_iterations
};

/// V_{k+1}(x) = max_c R_c(x) + sum_x' P_c(x'|x) V_k(x'), V_0 = 0.
inline ValueIterationTrace smdp_value_iteration(const std::vector<Control>& controls, int iterations) {
    detail::require(!controls.empty(), "smdp_value_iteration: empty control set");
    detail::require(iterations >= 0, "smdp_value_iteration: negative iteration count");
    const Index n = controls.front().reward.size();
    ValueIterationTrace out;
    out.values = Vector::Zero(n);
    for (int k = 0; k < iterations; ++k) {
        Vector next = Vector::Constant(n, -std::numeric_limits<double>::infinity());
        for (const auto& c : controls) next = next.cwiseMax(c.reward + c.probs * out.values);
        out.values = std::move(next);
        out.averages.push_back(out.values.mean());
    }
    return out;
}

/// Value iteration until the sup-norm change is below `tol`.
inline Vector converged_values(const std::vector<Control>& controls, double tol = 1e-14, int max_iterations = 100000) {
    detail::require(!controls.empty(), "converged_values: empty control set");
    Vector v = Vector::Zero(controls.front().reward.size());
    for (int k = 0; k < max_iterations; ++k) {
        Vector next = Vector::Constant(v.size(), -std::numeric_limits<double>::infinity());
        for (const auto& c : controls) next = next.cwiseMax(c.reward + c.probs * v);
        const double change = (next - v).cwiseAbs().maxCoeff();
        v = std::move(next);
        if (change < tol) return v;
    }
    throw ConvergenceError(detail::concat("converged_values: no convergence after ", max_iterations, " iterations"));
}

// Scores ---------------------------------------------------------------------------------

struct PlanningConfig {
    double gamma = 0.99;
    int iterations = 10;
    std::vector<Index> goals;  // empty = every open cell
    int threads = 1;
};

struct PlanningScore {
    std::string name;
    std::string kind;
    double concentration = std::numeric_limits<double>::quiet_NaN();
    double predictability = std::numeric_limits<double>::quiet_NaN();
    double score = 0.0;                              // mean over tasks and iterations
    std::vector<double> per_iteration;               // mean over tasks
    std::vector<std::vector<double>> per_task;       // [task][iteration]
    std::vector<Index> goals;                        // task order
};

namespace detail {

inline std::vector<Index> planning_goals(const GridWorld& world, const PlanningConfig& cfg) {
    if (!cfg.goals.empty()) {
        for (Index g : cfg.goals) require_index(g, world.n_states(), "planning goal");
        return cfg.goals;
    }
    std::vector<Index> all(static_cast<std::size_t>(world.n_states()));
    for (Index x = 0; x < world.n_states(); ++x) all[static_cast<std::size_t>(x)] = x;
    return all;
}

inline void summarize(PlanningScore& s, int iterations) {
    s.per_iteration.assign(static_cast<std::size_t>(iterations), 0.0);
    for (const auto& t : s.per_task) {
        for (std::size_t k = 0; k < t.size(); ++k) s.per_iteration[k] += t[k];
    }
    double total = 0.0;
    for (double& v : s.per_iteration) {
        v /= static_cast<double>(s.per_task.size());
        total += v;
    }
    s.score = iterations > 0 ? total / iterations : 0.0;
}

}  // namespace detail

/// Per-iteration averages over all goal tasks with primitives plus `options`
/// (primitives alone when `options` is empty).
inline PlanningScore planning_score(const GridWorld& world, const std::vector<OptionDef>& options,
                                    const PlanningConfig& cfg) {
    detail::require(cfg.gamma > 0.0 && cfg.gamma < 1.0, "planning_score: gamma must lie in (0, 1)");
    detail::require(cfg.iterations >= 1, "planning_score: need at least one iteration");
    PlanningScore s;
    s.goals = detail::planning_goals(world, cfg);
    s.per_task.resize(s.goals.size());
    parallel_for(s.goals.size(), cfg.threads, [&](std::size_t i) {
        const TabularMdp task = goal_task_mdp(world, s.goals[i], cfg.gamma);
        auto controls = primitive_controls(task, cfg.gamma);
        for (const auto& o : options) controls.push_back(option_control(task, o, cfg.gamma));
        s.per_task[i] = smdp_value_iteration(controls, cfg.iterations).averages;
    });
    detail::summarize(s, cfg.iterations);
    return s;
}

inline PlanningScore planning_score(const GridWorld& world, const OptionSet& set, const PlanningConfig& cfg) {
    PlanningScore s = planning_score(world, set.options, cfg);
    s.name = set.spec.name;
    s.kind = std::string(to_string(set.spec.kind));
    if (set.spec.goal_directed()) s.concentration = set.spec.concentration;
    s.predictability = option_set_predictability(world, set.options);
    return s;
}

inline PlanningScore primitive_baseline(const GridWorld& world, const PlanningConfig& cfg) {
    PlanningScore s = planning_score(world, std::vector<OptionDef>{}, cfg);
    s.name = "primitives";
    s.kind = "primitives";
    return s;
}

/// Largest |V*_options+primitives - V*_primitives| over the goal tasks.
inline double max_fixed_point_gap(const GridWorld& world, const std::vector<OptionDef>& options,
                                  const PlanningConfig& cfg) {
    const auto goals = detail::planning_goals(world, cfg);
    std::vector<double> gap(goals.size(), 0.0);
    parallel_for(goals.size(), cfg.threads, [&](std::size_t i) {
        const TabularMdp task = goal_task_mdp(world, goals[i], cfg.gamma);
        auto controls = primitive_controls(task, cfg.gamma);
        const Vector base = converged_values(controls);
        for (const auto& o : options) controls.push_back(option_control(task, o, cfg.gamma));
        gap[i] = (converged_values(controls) - base).cwiseAbs().maxCoeff();
    });
    return gap.empty() ? 0.0 : *std::max_element(gap.begin(), gap.end());
}

// Correlation ----------------------------------------------------------------------------

/// Ranks starting at 1; ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Pearson correlation of average ranks; empty when either side is constant.
inline std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    detail::require(a.size() == b.size(), "spearman: length mismatch");
    detail::require(a.size() >= 2, "spearman: need at least two points");
    for (std::size_t i = 0; i < a.size(); ++i) detail::require(!std::isnan(a[i]) && !std::isnan(b[i]), "spearman: NaN input");
    const auto ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

struct CorrelationReport {
    std::vector<PlanningScore> sets;
    PlanningScore baseline;
    std::optional<double> spearman;  // predictability vs planning score
};

inline CorrelationReport correlation_report(std::vector<PlanningScore> scores, PlanningScore baseline) {
    detail::require(scores.size() >= 3, "correlation_report: need at least 3 option sets, got ", scores.size());
    std::vector<double> pred, plan;
    for (const auto& s : scores) {
        pred.push_back(s.predictability);
        plan.push_back(s.score);
    }
    CorrelationReport r;
    r.spearman = spearman(pred, plan);
    r.sets = std::move(scores);
    r.baseline = std::move(baseline);
    return r;
}

inline void write_correlation_csv(std::ostream& os, const CorrelationReport& report) {
    std::vector<std::string> header{"set_name", "kind", "concentration", "predictability", "planning_score"};
    const std::size_t iters = report.baseline.per_iteration.size();
    for (std::size_t k = 1; k <= iters; ++k) header.push_back("v" + std::to_string(k));
    CsvWriter csv(os, header);
    auto emit = [&](const PlanningScore& s) {
        detail::require(s.per_iteration.size() == iters, "write_correlation_csv: iteration count mismatch");
        csv.row(s.name, s.kind, s.concentration, s.predictability, s.score, s.per_iteration);
    };
    for (const auto& s : report.sets) emit(s);
    emit(report.baseline);
}

}  // namespace tclab
