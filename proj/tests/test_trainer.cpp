#include "support.hpp"

#include <gtest/gtest.h>

using namespace tclab;
using namespace tclab::testing;

namespace {

TrainerConfig quiet_config() {
    TrainerConfig cfg;
    cfg.n_options = 1;
    return cfg;
}

OptionAgent single_option_agent(const Environment& env, const Vector& logits, const TrainerConfig& cfg) {
    OptionAgent agent = make_agent(env.n_states(), env.n_actions(), env.n_contexts(), cfg);
    agent.critics[0].logits = logits;
    return agent;
}

TrainerConfig dynamics_config() {
    TrainerConfig cfg;
    cfg.alpha_beta = 0.01;
    cfg.occupancy_guard = 1e-2;
    return cfg;
}

}  // namespace

TEST(Config, RejectsBadValues) {
    TrainerConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.alpha_beta = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = TrainerConfig{};
    cfg.trajectory_cap = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = TrainerConfig{};
    cfg.init_beta = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_EQ(parse_marginal_mode("tracked"), MarginalMode::tracked);
    EXPECT_THROW(parse_marginal_mode("bogus"), ValidationError);
}

TEST(Collect, ImmediateTerminationGivesSingleState) {
    const MdpEnvironment env(make_attractor(0.5));
    const auto cfg = quiet_config();
    const auto agent = single_option_agent(env, Vector::Constant(3, 40.0), cfg);
    Rng rng(1);
    // Clamped at 1 - 1e-12: a transition would need a 1e-12 event.
    const auto rec = collect_trajectory(env, agent, 0, attractor::blue, 0, 10, rng, 1e-12);
    EXPECT_EQ(rec.states, std::vector<Index>{attractor::blue});
    EXPECT_TRUE(rec.terminated);
    EXPECT_TRUE(rec.actions.empty());
}

TEST(Collect, CapTruncatesWithoutFlag) {
    const MdpEnvironment env(make_attractor(0.5));
    const auto agent = single_option_agent(env, Vector::Constant(3, -40.0), quiet_config());
    Rng rng(2);
    const auto rec = collect_trajectory(env, agent, 0, attractor::red, 0, 5, rng, 1e-12);
    EXPECT_EQ(rec.states.size(), 6u);
    EXPECT_EQ(rec.actions.size(), 5u);
    EXPECT_FALSE(rec.terminated);
    EXPECT_FALSE(rec.episode_end);
}

TEST(Collect, ExecutionTakesOneStepFirst) {
    const MdpEnvironment env(make_attractor(1.0));
    const auto agent = single_option_agent(env, Vector::Constant(3, 40.0), quiet_config());
    Rng rng(3);
    const auto rec = collect_execution(env, agent, 0, attractor::blue, 0, 10, rng, 1e-12);
    EXPECT_EQ(rec.states, (std::vector<Index>{attractor::blue, attractor::green}));
    EXPECT_EQ(rec.actions.size(), 1u);
    EXPECT_TRUE(rec.terminated);
}

TEST(Collect, FinalStateFrequenciesMatchModel) {
    const auto mdp = make_attractor(0.7);
    const MdpEnvironment env(mdp);
    Vector logits(3);
    logits << logit(0.6), logit(0.2), logit(0.3);
    const auto agent = single_option_agent(env, logits, quiet_config());
    const auto model = exact_option_model(induced_chain(mdp, agent.policy(0)), agent.option(0));
    Rng rng(4);
    for (Index xs = 0; xs < 3; ++xs) {
        Vector freq = Vector::Zero(3);
        const int n = 40000;
        for (int i = 0; i < n; ++i) {
            const auto rec = collect_trajectory(env, agent, 0, xs, 0, 10000, rng);
            ASSERT_TRUE(rec.terminated);
            freq[rec.states.back()] += 1.0 / n;
        }
        EXPECT_LT(total_variation(freq, model.row(xs)), 0.02);
    }
}

TEST(Critic, TruncatedTrajectoryLeavesBetaUnchanged) {
    auto cfg = quiet_config();
    cfg.alpha_beta = 0.5;
    Vector logits(3);
    logits << 0.3, -0.2, 0.1;
    auto critic = TerminationCritic::uniform(3, logits);
    const std::vector<Index> states{1, 0, 2, 1};
    const auto u = update_termination_critic(critic, PolicyTable::uniform(3, 1), states, false, cfg);
    EXPECT_FALSE(u.has_value());
    EXPECT_EQ(critic.logits, logits);
    EXPECT_EQ(critic.baseline, 0.0);
    EXPECT_FALSE(critic.tracker.start_dist.isApprox(Vector::Ones(3) / 3));
}

TEST(Critic, TerminatedTrajectoryMovesLogitsAndBaseline) {
    auto cfg = quiet_config();
    auto critic = TerminationCritic::uniform(3, Vector::Zero(3));
    const std::vector<Index> states{1, 0, 2};
    const auto u = update_termination_critic(critic, PolicyTable::uniform(3, 1), states, true, cfg);
    ASSERT_TRUE(u.has_value());
    EXPECT_TRUE(critic.logits.isApprox(-cfg.alpha_beta * u->gradient));
    EXPECT_DOUBLE_EQ(critic.baseline, cfg.alpha_baseline * u->mean_bracket);
}

TEST(Critic, LogitsStayInsideClampRange) {
    auto cfg = quiet_config();
    cfg.alpha_beta = 1.0;
    auto critic = TerminationCritic::uniform(2, Vector::Constant(2, 20.0));
    const std::vector<Index> states{0};
    for (int i = 0; i < 50; ++i) update_termination_critic(critic, PolicyTable::uniform(2, 1), states, true, cfg);
    EXPECT_LE(critic.logits.cwiseAbs().maxCoeff(), logit_limit(cfg.beta_epsilon) + 1e-12);
}

TEST(PolicyGradient, BanditConcentratesOnRewardingAction) {
    Matrix stay(1, 1);
    stay << 1.0;
    Matrix reward(1, 2);
    reward << 1.0, 0.0;
    const MdpEnvironment env(TabularMdp({stay, stay}, reward, 0.0, Vector::Ones(1)));
    auto cfg = quiet_config();
    cfg.gamma = 0.0;
    auto agent = make_agent(1, 2, 1, cfg);
    Rng rng(5);
    for (int i = 0; i < 3000; ++i) {
        const auto rec = collect_execution(env, agent, 0, 0, 0, 1, rng);
        policy_gradient_update(agent, rec, 0.1, 0.0);
        q_update(agent, rec, 0.1, 0.0);
        const auto probs = agent.policy(0).probs();
        ASSERT_NEAR(probs.row(0).sum(), 1.0, 1e-12);
    }
    EXPECT_GT(agent.policy(0)(0, 0), 0.95);
}

TEST(QUpdate, ZeroStepLeavesTable) {
    const MdpEnvironment env(make_attractor(0.5));
    auto agent = single_option_agent(env, Vector::Zero(3), quiet_config());
    agent.q.setConstant(0.7);
    Rng rng(6);
    const auto rec = collect_execution(env, agent, 0, 0, 0, 20, rng);
    q_update(agent, rec, 0.0, 0.9);
    EXPECT_TRUE(agent.q.isApproxToConstant(0.7));
}

TEST(QUpdate, AbsorbingZeroRewardGoesToZero) {
    Rng rng(7);
    const auto world_mdp = make_attractor(0.5);  // zero rewards everywhere
    const MdpEnvironment env(world_mdp);
    auto cfg = quiet_config();
    cfg.n_options = 2;
    auto agent = make_agent(3, 1, 1, cfg);
    agent.q.setConstant(5.0);
    for (int i = 0; i < 4000; ++i) {
        const auto rec = collect_execution(env, agent, uniform_index(rng, 2), uniform_index(rng, 3), 0, 50, rng);
        q_update(agent, rec, 0.2, 0.9);
    }
    EXPECT_LT(agent.q.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(QUpdate, ConvergesToSmdpFixedPoint) {
    // 5-state chain, left/right moves, reward 1 for stepping into the absorbing end.
    const Index n = 5;
    const double gamma = 0.9;
    Matrix left = Matrix::Zero(n, n), right = Matrix::Zero(n, n), reward = Matrix::Zero(n, 2);
    for (Index x = 0; x < n; ++x) {
        left(x, x == n - 1 ? x : std::max<Index>(x - 1, 0)) = 1.0;
        right(x, std::min<Index>(x + 1, n - 1)) = 1.0;
    }
    reward(n - 2, 1) = 1.0;
    const TabularMdp mdp({left, right}, reward, gamma, Vector::Ones(n) / static_cast<double>(n));
    const MdpEnvironment env(mdp);
    auto cfg = quiet_config();
    cfg.n_options = 2;
    auto agent = make_agent(n, 2, 1, cfg);
    agent.policy_logits[0].col(0).setConstant(40.0);
    agent.policy_logits[1].col(1).setConstant(40.0);
    agent.critics[0].logits << 0.0, 1.0, -1.0, 0.5, 0.0;
    agent.critics[1].logits << -2.0, 0.0, 2.0, -0.5, 0.0;
    // Oracle: Q_o = R_o + P_o V with the classical discounted models solved directly.
    std::vector<Matrix> p_gamma;
    std::vector<Vector> r_option;
    for (int o = 0; o < 2; ++o) {
        const Matrix& p = o == 0 ? left : right;
        const Vector r = reward.col(o);
        Vector b(n);
        for (Index x = 0; x < n; ++x) b[x] = agent.option(o).beta(x);
        const Matrix a = Matrix::Identity(n, n) - gamma * p * (Vector::Ones(n) - b).asDiagonal();
        p_gamma.push_back(a.lu().solve(Matrix(gamma * p * b.asDiagonal())));
        r_option.push_back(a.lu().solve(r));
    }
    Matrix q_star = Matrix::Zero(n, 2);
    for (int it = 0; it < 2000; ++it) {
        const Vector v = q_star.rowwise().maxCoeff();
        for (std::size_t o = 0; o < 2; ++o) q_star.col(static_cast<Index>(o)) = r_option[o] + p_gamma[o] * v;
    }
    Rng rng(8);
    for (long k = 0; k < 100000; ++k) {
        const double alpha = 1.0 / (1.0 + static_cast<double>(k) / 100.0);
        const auto rec = collect_execution(env, agent, static_cast<Index>(k % 2), uniform_index(rng, n), 0, 200, rng);
        q_update(agent, rec, alpha, gamma);
    }
    EXPECT_LT((agent.q - q_star).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(q_star(0, 1), std::pow(gamma, 3), 1e-12);
}

TEST(Episode, ReachesGoalInCorridor) {
    const auto world = parse_map("#####\n#...#\n#####\n");
    const GoalTaskEnvironment env(world, {world.state_of({1, 3})});
    auto cfg = quiet_config();
    cfg.max_episode_steps = 5000;
    auto agent = make_agent(env.n_states(), 4, 1, cfg);
    Rng rng(9);
    for (int e = 0; e < 20; ++e) {
        const auto log = run_episode(agent, env, 0, cfg, rng);
        EXPECT_TRUE(log.reached_goal);
        EXPECT_LE(log.decisions, log.steps);
        EXPECT_GT(log.episode_return, 0.0);
    }
}

TEST(Episode, StepBudgetIsRespected) {
    const auto world = make_four_rooms();
    const GoalTaskEnvironment env(world, world.goal_set());
    auto cfg = quiet_config();
    cfg.max_episode_steps = 7;
    auto agent = make_agent(env.n_states(), 4, env.n_contexts(), cfg);
    Rng rng(10);
    for (int e = 0; e < 30; ++e) EXPECT_LE(run_episode(agent, env, e % 8, cfg, rng).steps, 7);
}

TEST(Episode, FrozenTerminationsStayAtInit) {
    const auto world = make_four_rooms();
    const GoalTaskEnvironment env(world, world.goal_set());
    TrainerConfig cfg;
    cfg.alpha_beta = 0.0;
    auto agent = make_agent(env.n_states(), 4, env.n_contexts(), cfg);
    Rng rng(11);
    for (int e = 0; e < 20; ++e) run_episode(agent, env, e % 8, cfg, rng);
    for (const auto& c : agent.critics) EXPECT_TRUE(c.logits.isApproxToConstant(logit(cfg.init_beta)));
}

TEST(Entropy, InitialValueIsBernoulliOfInit) {
    TrainerConfig cfg;
    cfg.init_beta = 0.3;
    const auto agent = make_agent(10, 4, 1, cfg);
    EXPECT_NEAR(mean_termination_entropy(agent), bernoulli_entropy(0.3), 1e-12);
    EXPECT_NEAR(normalized_beta_entropy(agent)[0], std::log(10.0), 1e-12);
}

TEST(Dynamics, FullVariantConcentratesOnGreen) {
    for (double init : {0.5, 0.8}) {
        const auto run = run_attractor_dynamics(make_attractor(0.9), init, 20000, dynamics_config(), 0, 1000);
        EXPECT_GT(run.final_beta[attractor::green], 0.9) << init;
        EXPECT_LT(run.final_beta[attractor::blue], 0.1) << init;
        EXPECT_LT(run.final_beta[attractor::red], 0.1) << init;
        EXPECT_EQ(run.trace.front().step, 0);
        EXPECT_EQ(run.trace.back().step, 20000);
    }
}

TEST(Dynamics, NaiveVariantSaturatesSeveralStates) {
    auto cfg = dynamics_config();
    cfg.variant = UpdateVariant::naive_reachability;
    const auto run = run_attractor_dynamics(make_attractor(0.9), 0.8, 20000, cfg, 0, 1000);
    EXPECT_GE((run.final_beta.array() > 0.9).count(), 2);
}

TEST(Dynamics, FinalGreenMonotoneInAttractionAndInit) {
    const std::vector<double> ps{0.3, 0.6, 0.9};
    const std::vector<double> inits{0.5, 0.8};
    Matrix green(3, 2);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = 0; j < inits.size(); ++j) {
            green(static_cast<Index>(i), static_cast<Index>(j)) =
                run_attractor_dynamics(make_attractor(ps[i]), inits[j], 20000, dynamics_config(), 0, 20000)
                    .final_beta[attractor::green];
        }
    }
    for (Index i = 0; i < 3; ++i) {
        EXPECT_GE(green(i, 1), green(i, 0) - 1e-9);
        EXPECT_GT(green.row(i).maxCoeff(), 0.9);  // no collapse to the all-epsilon option
    }
    for (Index i = 1; i < 3; ++i) EXPECT_GE(green.row(i).minCoeff(), green.row(i - 1).minCoeff() - 1e-9);
}

TEST(Dynamics, SeedReproducible) {
    const auto a = run_attractor_dynamics(make_attractor(0.6), 0.5, 2000, dynamics_config(), 3, 100);
    const auto b = run_attractor_dynamics(make_attractor(0.6), 0.5, 2000, dynamics_config(), 3, 100);
    EXPECT_EQ(a.final_beta, b.final_beta);
    EXPECT_THROW(run_attractor_dynamics(make_attractor(0.6), 1.0, 10, dynamics_config(), 0), ConfigError);
}
