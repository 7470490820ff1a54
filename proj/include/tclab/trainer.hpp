#pragma once

#include "tclab/environments.hpp"
#include "tclab/predictability.hpp"

#include <memory>
#include <optional>

namespace tclab {

/// Which estimate of P-bar the termination update reads.
///   start_weighted  d-hat^T P-hat, with d-hat the tracked empirical start
///                   distribution (always consistent with the model estimate)
///   tracked         a separate vector moved toward P-hat(.|x_s) per trajectory
enum class MarginalMode { start_weighted, tracked };

inline MarginalMode parse_marginal_mode(std::string_view s) {
    if (s == "start_weighted") return MarginalMode::start_weighted;
    if (s == "tracked") return MarginalMode::tracked;
    throw ValidationError(detail::concat("unknown marginal mode '", s, "'"));
}

inline std::string_view to_string(MarginalMode m) {
    return m == MarginalMode::start_weighted ? "start_weighted" : "tracked";
}

struct TrainerConfig {
    double alpha_beta = 0.05;
    double alpha_model = 0.1;
    double alpha_marginal = 0.01;
    double alpha_baseline = 0.01;
    double alpha_policy = 0.1;
    double alpha_q = 0.1;
    int trajectory_cap = 100;
    double epsilon_mu = 0.1;
    double gamma = 0.99;
    double init_beta = 0.5;
    double beta_epsilon = kDefaultBetaEpsilon;
    UpdateVariant variant = UpdateVariant::full;
    MarginalMode marginal_mode = MarginalMode::start_weighted;
    double occupancy_guard = kDefaultOccupancyGuard;
    double trajectory_floor = -std::numeric_limits<double>::infinity();
    int n_options = 4;
    long max_episode_steps = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        for (auto [v, name] : {std::pair{alpha_beta, "alpha_beta"}, {alpha_model, "alpha_model"},
                               {alpha_marginal, "alpha_marginal"}, {alpha_baseline, "alpha_baseline"},
                               {alpha_policy, "alpha_policy"}, {alpha_q, "alpha_q"}, {epsilon_mu, "epsilon_mu"}}) {
            detail::require<ConfigError>(v >= 0.0 && v <= 1.0, "TrainerConfig: ", name, " = ", v, " outside [0, 1]");
        }
        detail::require<ConfigError>(trajectory_cap >= 1, "TrainerConfig: trajectory_cap must be >= 1");
        detail::require<ConfigError>(gamma >= 0.0 && gamma <= 1.0, "TrainerConfig: gamma outside [0, 1]");
        detail::require<ConfigError>(init_beta > 0.0 && init_beta < 1.0, "TrainerConfig: init_beta outside (0, 1)");
        detail::require<ConfigError>(beta_epsilon > 0.0 && beta_epsilon < 0.5, "TrainerConfig: bad beta_epsilon");
        detail::require<ConfigError>(occupancy_guard >= 0.0, "TrainerConfig: negative occupancy_guard");
        detail::require<ConfigError>(n_options >= 1, "TrainerConfig: n_options must be >= 1");
        detail::require<ConfigError>(max_episode_steps >= 1, "TrainerConfig: max_episode_steps must be >= 1");
    }
};

// Termination critic ------------------------------------------------------------------

/// Everything the termination update of one option owns.
struct TerminationCritic {
    Vector logits;
    OptionTransitionModel model;
    MarginalTermination tracker;  // start_dist = d-hat; probs used in tracked mode
    double baseline = 0.0;

    static TerminationCritic uniform(Index n, const Vector& logits) {
        const Vector flat = Vector::Constant(n, 1.0 / static_cast<double>(n));
        return {logits, OptionTransitionModel::uniform(n), {flat, flat}, 0.0};
    }

    Vector marginal(MarginalMode mode) const {
        if (mode == MarginalMode::tracked) return tracker.probs;
        return model.probs().transpose() * tracker.start_dist;
    }
};

inline double logit_limit(double epsilon) { return logit(1.0 - epsilon); }

/// One critic step on x_s..x_f: start tracking, termination gradient (only
/// when the trajectory terminated), baseline, model TD, marginal tracking.
/// Returns the termination update when one was applied.
inline std::optional<TerminationUpdate> update_termination_critic(TerminationCritic& critic,
                                                                  const PolicyTable& policy,
                                                                  std::span<const Index> states, bool terminated,
                                                                  const TrainerConfig& cfg) {
    const Index xs = states.front();
    critic.tracker = track_start(critic.tracker, xs, cfg.alpha_marginal);
    std::optional<TerminationUpdate> applied;
    if (terminated) {
        const OptionDef option(policy, critic.logits, cfg.beta_epsilon);
        SampledUpdateOptions opts;
        opts.variant = cfg.variant;
        opts.baseline = critic.baseline;
        opts.occupancy_guard = cfg.occupancy_guard;
        opts.trajectory_floor = cfg.trajectory_floor;
        TerminationUpdate u =
            sampled_termination_update(states, true, option, critic.model, critic.marginal(cfg.marginal_mode), opts);
        const double limit = logit_limit(cfg.beta_epsilon);
        critic.logits -= cfg.alpha_beta * u.gradient;
        critic.logits = critic.logits.cwiseMax(-limit).cwiseMin(limit);
        critic.baseline += cfg.alpha_baseline * (u.mean_bracket - critic.baseline);
        applied = std::move(u);
    }
    critic.model = td_update_option_model(critic.model, states, terminated, cfg.alpha_model);
    if (cfg.marginal_mode == MarginalMode::tracked) {
        critic.tracker = track_marginal(critic.tracker, critic.model.row(xs), cfg.alpha_marginal);
    }
    return applied;
}

// Environments seen by the trainer ---------------------------------------------------------

struct StepResult {
    Index next = 0;
    double reward = 0.0;
    bool episode_end = false;
};

/// Step interface; `context` is task information visible to Q only.
class Environment {
  public:
    virtual ~Environment() = default;
    virtual Index n_states() const = 0;
    virtual Index n_actions() const = 0;
    virtual Index n_contexts() const { return 1; }
    virtual StepResult step(Index x, Index a, Index context, Rng& rng) const = 0;
    virtual Index sample_start(Index context, Rng& rng) const = 0;
};

/// Plain MDP: rewards from the table, episodes never end on their own.
class MdpEnvironment : public Environment {
  public:
    explicit MdpEnvironment(TabularMdp mdp) : m_mdp(std::move(mdp)) {}
    Index n_states() const override { return m_mdp.n_states(); }
    Index n_actions() const override { return m_mdp.n_actions(); }
    StepResult step(Index x, Index a, Index, Rng& rng) const override {
        return {sample_categorical(m_mdp.transition(a).row(x), rng), m_mdp.reward(x, a), false};
    }
    Index sample_start(Index, Rng& rng) const override { return sample_categorical(m_mdp.start_dist(), rng); }
    const TabularMdp& mdp() const { return m_mdp; }

  private:
    TabularMdp m_mdp;
};

/// Grid navigation: context = slot in the goal set, reward 1 on entering the
/// goal, which ends the episode. Starts are uniform over non-goal cells.
class GoalTaskEnvironment : public Environment {
  public:
    GoalTaskEnvironment(GridWorld world, std::vector<Index> goals)
        : m_world(std::move(world)), m_goals(std::move(goals)) {
        detail::require(!m_goals.empty(), "GoalTaskEnvironment: empty goal set");
        detail::require(m_world.n_states() >= 2, "GoalTaskEnvironment: need at least two cells");
        for (Index g : m_goals) detail::require_index(g, m_world.n_states(), "GoalTaskEnvironment: goal");
    }
    Index n_states() const override { return m_world.n_states(); }
    Index n_actions() const override { return 4; }
    Index n_contexts() const override { return static_cast<Index>(m_goals.size()); }
    StepResult step(Index x, Index a, Index context, Rng& rng) const override {
        Index next = m_world.move(x, a);
        if (m_world.slip() > 0.0 && bernoulli(rng, m_world.slip())) next = m_world.move(x, uniform_index(rng, 4));
        const bool at_goal = next == goal(context);
        return {next, at_goal ? 1.0 : 0.0, at_goal};
    }
    Index sample_start(Index context, Rng& rng) const override {
        const Index x = uniform_index(rng, n_states() - 1);
        return x >= goal(context) ? x + 1 : x;
    }
    Index goal(Index context) const { return m_goals[static_cast<std::size_t>(context)]; }
    const GridWorld& world() const { return m_world; }
    const std::vector<Index>& goals() const { return m_goals; }

  private:
    GridWorld m_world;
    std::vector<Index> m_goals;
};

// Agent ----------------------------------------------------------------------------------

struct OptionAgent {
    std::vector<Matrix> policy_logits;  // per option, n_states x n_actions
    std::vector<TerminationCritic> critics;
    Matrix q;  // row = context * n_states + x, column = option
    Index n_states = 0;
    Index n_actions = 0;
    Index n_contexts = 1;

    Index n_options() const { return static_cast<Index>(critics.size()); }

    PolicyTable policy(Index o) const { return PolicyTable::softmax(policy_logits[static_cast<std::size_t>(o)]); }

    OptionDef option(Index o, double epsilon = kDefaultBetaEpsilon) const {
        return OptionDef(policy(o), critics[static_cast<std::size_t>(o)].logits, epsilon);
    }

    double& q_at(Index context, Index x, Index o) { return q(context * n_states + x, o); }
    double q_at(Index context, Index x, Index o) const { return q(context * n_states + x, o); }

    double value(Index context, Index x) const { return q.row(context * n_states + x).maxCoeff(); }
};

inline OptionAgent make_agent(Index n_states, Index n_actions, Index n_contexts, const TrainerConfig& cfg) {
    cfg.validate();
    OptionAgent agent;
    agent.n_states = n_states;
    agent.n_actions = n_actions;
    agent.n_contexts = n_contexts;
    const Vector logits = Vector::Constant(n_states, logit(cfg.init_beta));
    for (int o = 0; o < cfg.n_options; ++o) {
        agent.policy_logits.push_back(Matrix::Zero(n_states, n_actions));
        agent.critics.push_back(TerminationCritic::uniform(n_states, logits));
    }
    agent.q = Matrix::Zero(n_states * n_contexts, cfg.n_options);
    return agent;
}

struct TrajectoryRecord {
    Index option = 0;
    Index context = 0;
    std::vector<Index> states;   // x_s .. x_f
    std::vector<Index> actions;  // one per transition
    std::vector<double> rewards; // one per transition
    bool terminated = false;     // beta fired at the last state
    bool episode_end = false;    // the environment ended the episode
};

/// Runs option o from `start`: before each transition the option may stop
/// at the current state with probability beta(x). Stops without the flag
/// after `cap` transitions or when the environment ends the episode.
inline TrajectoryRecord collect_trajectory(const Environment& env, const OptionAgent& agent, Index o, Index start,
                                           Index context, int cap, Rng& rng,
                                           double epsilon = kDefaultBetaEpsilon) {
    detail::require_index(o, agent.n_options(), "collect_trajectory: option");
    detail::require_index(start, env.n_states(), "collect_trajectory: start");
    detail::require(cap >= 1, "collect_trajectory: cap must be >= 1");
    const OptionDef option = agent.option(o, epsilon);
    TrajectoryRecord rec;
    rec.option = o;
    rec.context = context;
    rec.states.push_back(start);
    Index x = start;
    for (int t = 0; t < cap; ++t) {
        if (bernoulli(rng, option.beta(x))) {
            rec.terminated = true;
            return rec;
        }
        const Index a = sample_categorical(option.policy().probs().row(x), rng);
        const StepResult s = env.step(x, a, context, rng);
        rec.actions.push_back(a);
        rec.rewards.push_back(s.reward);
        rec.states.push_back(s.next);
        x = s.next;
        if (s.episode_end) {
            rec.episode_end = true;
            return rec;
        }
    }
    return rec;
}

namespace detail {

inline double trajectory_bootstrap(const OptionAgent& agent, const TrajectoryRecord& rec) {
    if (rec.episode_end) return 0.0;
    const Index last = rec.states.back();
    if (rec.terminated) return agent.value(rec.context, last);
    return agent.q_at(rec.context, last, rec.option);
}

}  // namespace detail

/// Softmax policy gradient with A_i = G_i - Q(x_i, o), where G_i is the
/// discounted remaining return of the trajectory plus a bootstrap at its end.
inline void policy_gradient_update(OptionAgent& agent, const TrajectoryRecord& rec, double alpha, double gamma) {
    detail::require_step_size(alpha, "policy_gradient_update: step size");
    if (alpha == 0.0 || rec.actions.empty()) return;
    Matrix& logits = agent.policy_logits[static_cast<std::size_t>(rec.option)];
    double g = detail::trajectory_bootstrap(agent, rec);
    std::vector<double> returns(rec.actions.size());
    for (std::size_t i = rec.actions.size(); i-- > 0;) {
        g = rec.rewards[i] + gamma * g;
        returns[i] = g;
    }
    for (std::size_t i = 0; i < rec.actions.size(); ++i) {
        const Index x = rec.states[i];
        const double adv = returns[i] - agent.q_at(rec.context, x, rec.option);
        Vector pi = logits.row(x).transpose();
        pi = (pi.array() - pi.maxCoeff()).exp();
        pi /= pi.sum();
        Vector grad = -pi;
        grad[rec.actions[i]] += 1.0;
        logits.row(x) += alpha * adv * grad.transpose();
    }
}

/// Intra-option TD: Q(x_i,o) <- r_i + gamma [(1 - beta(x')) Q(x',o) + beta(x') max Q(x',.)].
inline void q_update(OptionAgent& agent, const TrajectoryRecord& rec, double alpha, double gamma,
                     double epsilon = kDefaultBetaEpsilon) {
    detail::require_step_size(alpha, "q_update: step size");
    if (alpha == 0.0) return;
    const OptionDef option = agent.option(rec.option, epsilon);
    for (std::size_t i = 0; i < rec.actions.size(); ++i) {
        const Index x = rec.states[i];
        const Index next = rec.states[i + 1];
        double target = rec.rewards[i];
        const bool last = i + 1 == rec.actions.size();
        if (!(last && rec.episode_end)) {
            const double b = option.beta(next);
            target += gamma * ((1.0 - b) * agent.q_at(rec.context, next, rec.option) + b * agent.value(rec.context, next));
        }
        double& q = agent.q_at(rec.context, x, rec.option);
        q += alpha * (target - q);
    }
}

/// One trainer step on a collected trajectory: critic, option policy, Q.
/// The critic reads states from `critic_offset` on (see collect_execution).
inline std::optional<TerminationUpdate> actc_step(OptionAgent& agent, const TrajectoryRecord& rec,
                                                  const TrainerConfig& cfg, std::size_t critic_offset = 0) {
    auto& critic = agent.critics[static_cast<std::size_t>(rec.option)];
    const PolicyTable policy = agent.policy(rec.option);
    std::optional<TerminationUpdate> applied;
    if (critic_offset < rec.states.size()) {
        const std::span<const Index> states(rec.states.data() + critic_offset, rec.states.size() - critic_offset);
        applied = update_termination_critic(critic, policy, states, rec.terminated, cfg);
    }
    policy_gradient_update(agent, rec, cfg.alpha_policy, cfg.gamma);
    q_update(agent, rec, cfg.alpha_q, cfg.gamma, cfg.beta_epsilon);
    return applied;
}

/// Call-and-return execution: the first action is taken unconditionally,
/// then the option runs from the next state with termination sampled before
/// each transition. States from index 1 on form a backward-shifted sample
/// for the critic. Episode end on the first step leaves no critic sample.
inline TrajectoryRecord collect_execution(const Environment& env, const OptionAgent& agent, Index o, Index start,
                                          Index context, int cap, Rng& rng, double epsilon = kDefaultBetaEpsilon) {
    detail::require(cap >= 1, "collect_execution: cap must be >= 1");
    const Index a = sample_categorical(agent.policy(o).probs().row(start), rng);
    const StepResult first = env.step(start, a, context, rng);
    TrajectoryRecord rec;
    if (first.episode_end || cap == 1) {
        rec.option = o;
        rec.context = context;
        rec.states = {start, first.next};
        rec.episode_end = first.episode_end;
    } else {
        rec = collect_trajectory(env, agent, o, first.next, context, cap - 1, rng, epsilon);
        rec.states.insert(rec.states.begin(), start);
    }
    rec.actions.insert(rec.actions.begin(), a);
    rec.rewards.insert(rec.rewards.begin(), first.reward);
    return rec;
}

/// epsilon-greedy over Q(context, x, .), ties broken uniformly.
inline Index select_option(const OptionAgent& agent, Index context, Index x, double epsilon, Rng& rng) {
    if (bernoulli(rng, epsilon)) return uniform_index(rng, agent.n_options());
    const auto row = agent.q.row(context * agent.n_states + x);
    const double best = row.maxCoeff();
    std::vector<Index> ties;
    for (Index o = 0; o < agent.n_options(); ++o) {
        if (row[o] >= best - 1e-12) ties.push_back(o);
    }
    return ties[static_cast<std::size_t>(uniform_index(rng, static_cast<Index>(ties.size())))];
}

// Episodic training ----------------------------------------------------------------------

struct EpisodeLog {
    long episode = 0;
    Index goal = 0;
    double episode_return = 0.0;
    long steps = 0;
    long decisions = 0;
    bool reached_goal = false;
};

/// Runs one episode under mu, updating the agent after each option
/// execution (collect_execution), until the goal or max_episode_steps.
inline EpisodeLog run_episode(OptionAgent& agent, const Environment& env, Index context, const TrainerConfig& cfg,
                              Rng& rng) {
    EpisodeLog log;
    Index x = env.sample_start(context, rng);
    double discount = 1.0;
    while (log.steps < cfg.max_episode_steps) {
        const Index o = select_option(agent, context, x, cfg.epsilon_mu, rng);
        const int cap = static_cast<int>(std::min<long>(cfg.trajectory_cap, cfg.max_episode_steps - log.steps));
        const TrajectoryRecord rec = collect_execution(env, agent, o, x, context, cap, rng, cfg.beta_epsilon);
        actc_step(agent, rec, cfg, rec.episode_end && rec.states.size() == 2 ? rec.states.size() : 1);
        ++log.decisions;
        for (double r : rec.rewards) {
            log.episode_return += discount * r;
            discount *= cfg.gamma;
        }
        log.steps += static_cast<long>(rec.actions.size());
        x = rec.states.back();
        if (rec.episode_end) {
            log.reached_goal = true;
            break;
        }
    }
    return log;
}

/// Mean over states of the Bernoulli entropy of beta, averaged over options.
inline double mean_termination_entropy(const OptionAgent& agent, double epsilon = kDefaultBetaEpsilon) {
    double h = 0.0;
    for (Index o = 0; o < agent.n_options(); ++o) {
        const Vector beta = agent.option(o, epsilon).beta();
        for (Index x = 0; x < beta.size(); ++x) h += bernoulli_entropy(beta[x]);
    }
    return h / static_cast<double>(agent.n_options() * agent.n_states);
}

/// Entropy of beta normalized into a distribution over states, per option.
inline Vector normalized_beta_entropy(const OptionAgent& agent, double epsilon = kDefaultBetaEpsilon) {
    Vector out(agent.n_options());
    for (Index o = 0; o < agent.n_options(); ++o) {
        const Vector beta = agent.option(o, epsilon).beta();
        out[o] = entropy(beta / beta.sum());
    }
    return out;
}

// Attractor dynamics ---------------------------------------------------------------------

struct DynamicsTraceRow {
    long step = 0;
    std::array<double, 3> beta{};
    double objective = 0.0;  // J of the model estimate under d-hat
    double baseline = 0.0;
};

struct DynamicsRun {
    std::vector<DynamicsTraceRow> trace;
    Vector final_beta;
};

/// Termination-critic learning on the attractor chain with one option
/// whose internal policy is the chain itself. beta(blue) = beta(red) = 0.5
/// initially; beta(green) = init_green.
inline DynamicsRun run_attractor_dynamics(const TabularMdp& chain_mdp, double init_green, long n_trajectories,
                                          const TrainerConfig& cfg, std::uint64_t seed, long trace_every = 100) {
    cfg.validate();
    detail::require<ConfigError>(init_green > 0.0 && init_green < 1.0, "init beta(green) outside (0, 1)");
    detail::require<ConfigError>(n_trajectories >= 1 && trace_every >= 1, "bad dynamics lengths");
    const MdpEnvironment env(chain_mdp);
    OptionAgent agent = make_agent(3, 1, 1, [&] {
        TrainerConfig c = cfg;
        c.n_options = 1;
        return c;
    }());
    Vector logits(3);
    logits << logit(init_green), 0.0, 0.0;
    agent.critics[0].logits = logits;
    const PolicyTable policy = agent.policy(0);
    Rng rng(seed);
    DynamicsRun run;
    auto record = [&](long step) {
        const Vector beta = agent.option(0, cfg.beta_epsilon).beta();
        DynamicsTraceRow row;
        row.step = step;
        for (int i = 0; i < 3; ++i) row.beta[static_cast<std::size_t>(i)] = beta[i];
        const auto& c = agent.critics[0];
        row.objective = objective_entropy(c.model, c.tracker.start_dist).value;
        row.baseline = c.baseline;
        run.trace.push_back(row);
    };
    record(0);
    for (long k = 1; k <= n_trajectories; ++k) {
        const Index xs = env.sample_start(0, rng);
        const TrajectoryRecord rec = collect_trajectory(env, agent, 0, xs, 0, cfg.trajectory_cap, rng, cfg.beta_epsilon);
        update_termination_critic(agent.critics[0], policy, rec.states, rec.terminated, cfg);
        if (k % trace_every == 0 || k == n_trajectories) record(k);
    }
    run.final_beta = agent.option(0, cfg.beta_epsilon).beta();
    return run;
}

}  // namespace tclab
