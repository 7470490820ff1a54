#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace tclab;

namespace {

const GridWorld& four_rooms() {
    static const GridWorld world = make_four_rooms();
    return world;
}

GridWorld corridor() { return parse_map("#######\n#.....#\n#######\n"); }

Index follow(const GridWorld& world, const OptionDef& option, Index x) {
    Index a = 0;
    for (Index b = 1; b < 4; ++b) {
        if (option.policy().probs()(x, b) > option.policy().probs()(x, a)) a = b;
    }
    return world.move(x, a);
}

std::vector<Index> every_nth_cell(const GridWorld& world, Index step) {
    std::vector<Index> out;
    for (Index x = 0; x < world.n_states(); x += step) out.push_back(x);
    return out;
}

}  // namespace

TEST(GoalDirected, GreedyPolicyWalksShortestPath) {
    const auto& world = four_rooms();
    for (Index goal : world.goal_set()) {
        const OptionDef o = goal_directed_option(world, goal, 4.0);
        const auto dist = world.distances_to(goal);
        for (Index x = 0; x < world.n_states(); ++x) {
            Index y = x;
            int steps = 0;
            while (y != goal && steps <= 200) {
                y = follow(world, o, y);
                ++steps;
            }
            ASSERT_EQ(steps, dist[static_cast<std::size_t>(x)]) << "from " << x << " to " << goal;
        }
    }
}

TEST(GoalDirected, LogitsAreMinusCExceptGoal) {
    const auto& world = four_rooms();
    const Index goal = world.hallways().front();
    const OptionDef o = goal_directed_option(world, goal, 3.0);
    for (Index x = 0; x < world.n_states(); ++x) {
        EXPECT_DOUBLE_EQ(o.termination_logits()[x], x == goal ? 3.0 : -3.0);
    }
}

TEST(GoalDirected, SharpOptionIsNearlyPerfectlyPredictable) {
    const auto& world = four_rooms();
    const Vector d = Vector::Constant(world.n_states(), 1.0 / static_cast<double>(world.n_states()));
    for (Index goal : world.hallways()) {
        const OptionDef o = goal_directed_option(world, goal, 40.0, 1e-300);
        const auto model = exact_option_model(induced_chain(world.mdp(), o.policy()), o);
        EXPECT_LT(objective_entropy(model, d).value, 1e-12);
        EXPECT_NEAR(model.probs().col(goal).minCoeff(), 1.0, 1e-12);
    }
}

TEST(GoalDirected, PredictabilityRisesWithConcentration) {
    const auto& world = four_rooms();
    OptionSetSpec spec{"g", OptionSetKind::hallways};
    double prev = -std::numeric_limits<double>::infinity();
    for (double c : {0.25, 1.0, 4.0, 8.0}) {
        spec.concentration = c;
        const double pred = option_set_predictability(world, build_option_set(spec, world).options);
        EXPECT_GT(pred, prev) << c;
        EXPECT_LE(pred, 0.0);
        prev = pred;
    }
}

TEST(OptionSets, HallwaysAndCentersOfFourRooms) {
    const auto& world = four_rooms();
    auto cells = [&](const std::vector<Index>& xs) {
        std::set<std::pair<int, int>> out;
        for (Index x : xs) out.insert({world.cell(x).row, world.cell(x).col});
        return out;
    };
    OptionSetSpec spec{"h", OptionSetKind::hallways};
    EXPECT_EQ(cells(build_option_set(spec, world).goals),
              (std::set<std::pair<int, int>>{{3, 6}, {6, 2}, {7, 9}, {10, 6}}));
    spec.kind = OptionSetKind::centers;
    const OptionSet centers = build_option_set(spec, world);
    EXPECT_EQ(centers.options.size(), 4u);
    const auto rooms = world.rooms();
    ASSERT_EQ(rooms.size(), 4u);
    for (std::size_t r = 0; r < rooms.size(); ++r) {
        EXPECT_TRUE(std::count(rooms[r].begin(), rooms[r].end(), centers.goals[r])) << r;
    }
}

TEST(OptionSets, RandomGoalsAreSeededAndDistinct) {
    const auto& world = four_rooms();
    OptionSetSpec spec{"r", OptionSetKind::random_goals, 6, 2.0, 7};
    const auto a = build_option_set(spec, world).goals;
    const auto b = build_option_set(spec, world).goals;
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::set<Index>(a.begin(), a.end()).size(), 6u);
    spec.seed = 8;
    EXPECT_NE(build_option_set(spec, world).goals, a);
    spec.n = 1000;
    EXPECT_THROW(build_option_set(spec, world), ConfigError);
}

TEST(OptionSets, RandomOptionsAreValidAndSeeded) {
    const auto& world = four_rooms();
    const OptionSetSpec spec{"ro", OptionSetKind::random_options, 3, 4.0, 11};
    const OptionSet a = build_option_set(spec, world), b = build_option_set(spec, world);
    ASSERT_EQ(a.options.size(), 3u);
    for (std::size_t o = 0; o < 3; ++o) {
        EXPECT_EQ(a.options[o].termination_logits(), b.options[o].termination_logits());
        EXPECT_EQ(a.options[o].policy().probs(), b.options[o].policy().probs());
        EXPECT_LT(max_row_sum_error(a.options[o].policy().probs()), 1e-14);
        EXPECT_GT(a.options[o].beta().minCoeff(), 0.0);
        EXPECT_LT(a.options[o].beta().maxCoeff(), 1.0);
    }
}

TEST(OptionSets, EveryBuiltOptionTerminates) {
    const auto& world = four_rooms();
    std::vector<OptionSetSpec> specs{{"h", OptionSetKind::hallways, 4, 8.0},
                                     {"c", OptionSetKind::centers, 4, 0.25},
                                     {"g", OptionSetKind::random_goals, 4, 1.0, 3},
                                     {"r", OptionSetKind::random_options, 4, 4.0, 3}};
    for (const auto& spec : specs) {
        for (const auto& o : build_option_set(spec, world).options) {
            const ChainMatrix chain = induced_chain(world.mdp(), o.policy());
            EXPECT_TRUE(options_eventually_terminate(chain, o)) << spec.name;
            EXPECT_LT(max_row_sum_error(exact_option_model(chain, o).probs()), 1e-10) << spec.name;
        }
    }
}

TEST(OptionSets, BadSpecsAreConfigErrors) {
    EXPECT_THROW(parse_option_set_kind("rooms"), ConfigError);
    EXPECT_THROW((OptionSetSpec{"", OptionSetKind::hallways}.validate()), ConfigError);
    EXPECT_THROW((OptionSetSpec{"x", OptionSetKind::hallways, 4, 0.0}.validate()), ConfigError);
    EXPECT_THROW((OptionSetSpec{"x", OptionSetKind::learned}.validate()), ConfigError);
    EXPECT_THROW((OptionSetSpec{"x", OptionSetKind::random_options, 0}.validate()), ConfigError);
}

TEST(GoalTask, RewardOnEnteringGoalOnly) {
    const GridWorld world = corridor();
    const TabularMdp task = goal_task_mdp(world, 4, 0.9);
    EXPECT_DOUBLE_EQ(task.reward()(3, 3), 1.0);  // right from the neighbour
    EXPECT_DOUBLE_EQ(task.reward()(3, 2), 0.0);
    for (Index a = 0; a < 4; ++a) {
        EXPECT_DOUBLE_EQ(task.reward()(4, a), 0.0);
        EXPECT_DOUBLE_EQ(task.transition(4, a, 4), 1.0);
    }
}

TEST(ValueIteration, CorridorValuesArePowersOfGamma) {
    const GridWorld world = corridor();
    const double gamma = 0.9;
    const TabularMdp task = goal_task_mdp(world, 4, gamma);
    const Vector v = converged_values(primitive_controls(task, gamma));
    for (Index x = 0; x < 4; ++x) EXPECT_NEAR(v[x], std::pow(gamma, 3 - x), 1e-13) << x;
    EXPECT_DOUBLE_EQ(v[4], 0.0);
    const auto trace = smdp_value_iteration(primitive_controls(task, gamma), 2);
    EXPECT_NEAR(trace.values[3], 1.0, 1e-15);
    EXPECT_NEAR(trace.values[2], gamma, 1e-15);
    EXPECT_DOUBLE_EQ(trace.values[1], 0.0);
}

TEST(ValueIteration, OptionJumpsAheadAfterOneBackup) {
    const GridWorld world = corridor();
    const double gamma = 0.9;
    const TabularMdp task = goal_task_mdp(world, 4, gamma);
    auto controls = primitive_controls(task, gamma);
    controls.push_back(option_control(task, goal_directed_option(world, 4, 50.0, 1e-300), gamma));
    const auto trace = smdp_value_iteration(controls, 1);
    for (Index x = 0; x < 4; ++x) EXPECT_NEAR(trace.values[x], std::pow(gamma, 3 - x), 1e-12) << x;
}

TEST(ValueIteration, NonConvergenceThrows) {
    const GridWorld world = corridor();
    const TabularMdp task = goal_task_mdp(world, 4, 0.9);
    EXPECT_THROW(converged_values(primitive_controls(task, 0.9), 1e-14, 2), ConvergenceError);
}

TEST(Planning, OptionsNeverHurtAnyTaskOrIteration) {
    const auto& world = four_rooms();
    const PlanningConfig cfg{0.99, 10, every_nth_cell(world, 5)};
    const PlanningScore base = primitive_baseline(world, cfg);
    for (auto kind : {OptionSetKind::hallways, OptionSetKind::centers, OptionSetKind::random_options}) {
        const PlanningScore s = planning_score(world, build_option_set({"s", kind, 4, 2.0, 5}, world), cfg);
        ASSERT_EQ(s.per_task.size(), base.per_task.size());
        for (std::size_t t = 0; t < s.per_task.size(); ++t) {
            for (std::size_t k = 0; k < s.per_task[t].size(); ++k) {
                EXPECT_GE(s.per_task[t][k], base.per_task[t][k] - 1e-15);
            }
        }
        EXPECT_GE(s.score, base.score);
    }
}

TEST(Planning, AveragesNeverDecrease) {
    const auto& world = four_rooms();
    const PlanningConfig cfg{0.99, 12, every_nth_cell(world, 9)};
    const PlanningScore s = planning_score(world, build_option_set({"h", OptionSetKind::hallways, 4, 1.0}, world), cfg);
    for (std::size_t k = 1; k < s.per_iteration.size(); ++k) EXPECT_GE(s.per_iteration[k], s.per_iteration[k - 1]);
    double mean = 0.0;
    for (double v : s.per_iteration) mean += v;
    EXPECT_NEAR(s.score, mean / static_cast<double>(s.per_iteration.size()), 1e-15);
}

TEST(Planning, ConvergedValuesMatchWithAndWithoutOptions) {
    const auto& world = four_rooms();
    const double gamma = 0.99;
    const OptionSet set = build_option_set({"ro", OptionSetKind::random_options, 4, 1.0, 2}, world);
    const OptionSet halls = build_option_set({"h", OptionSetKind::hallways, 4, 8.0}, world);
    for (Index goal : every_nth_cell(world, 13)) {
        const TabularMdp task = goal_task_mdp(world, goal, gamma);
        const auto prims = primitive_controls(task, gamma);
        const Vector v = converged_values(prims);
        for (const OptionSet* s : {&set, &halls}) {
            auto controls = prims;
            for (const auto& o : s->options) controls.push_back(option_control(task, o, gamma));
            EXPECT_LT((converged_values(controls) - v).cwiseAbs().maxCoeff(), 1e-8) << goal;
        }
    }
}

TEST(Planning, DuplicateOptionLeavesScoreUnchanged) {
    const auto& world = four_rooms();
    const PlanningConfig cfg{0.99, 10, every_nth_cell(world, 7)};
    auto options = build_option_set({"c", OptionSetKind::centers, 4, 2.0}, world).options;
    const double once = planning_score(world, options, cfg).score;
    options.push_back(options.front());
    EXPECT_DOUBLE_EQ(planning_score(world, options, cfg).score, once);
}

TEST(Planning, ThreadCountDoesNotChangeScores) {
    const auto& world = four_rooms();
    PlanningConfig cfg{0.99, 10, every_nth_cell(world, 4), 1};
    const auto set = build_option_set({"h", OptionSetKind::hallways, 4, 2.0}, world);
    const PlanningScore one = planning_score(world, set, cfg);
    cfg.threads = 3;
    const PlanningScore three = planning_score(world, set, cfg);
    EXPECT_EQ(one.per_task, three.per_task);
    EXPECT_EQ(one.score, three.score);
}

TEST(Planning, BaselineFirstIterationCountsGoalNeighbours) {
    const auto& world = four_rooms();
    const PlanningScore base = primitive_baseline(world, {0.99, 1});
    double expected = 0.0;
    for (Index g = 0; g < world.n_states(); ++g) {
        expected += static_cast<double>(world.neighbours(g).size()) / static_cast<double>(world.n_states());
    }
    EXPECT_NEAR(base.per_iteration[0], expected / static_cast<double>(world.n_states()), 1e-14);
}

TEST(Planning, RejectsBadConfig) {
    const auto& world = four_rooms();
    EXPECT_THROW(planning_score(world, std::vector<OptionDef>{}, PlanningConfig{1.0, 10}), ValidationError);
    EXPECT_THROW(planning_score(world, std::vector<OptionDef>{}, PlanningConfig{0.9, 0}), ValidationError);
    EXPECT_THROW(planning_score(world, std::vector<OptionDef>{}, PlanningConfig{0.9, 2, {world.n_states()}}), ValidationError);
}

TEST(Spearman, MonotoneAndReversed) {
    const std::vector<double> a{1, 5, 2, 9}, b{10, 50, 20, 90}, c{-1, -5, -2, -9};
    EXPECT_DOUBLE_EQ(*spearman(a, b), 1.0);
    EXPECT_DOUBLE_EQ(*spearman(a, c), -1.0);
}

TEST(Spearman, TiesUseAverageRanks) {
    EXPECT_EQ(average_ranks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
    EXPECT_NEAR(*spearman({1, 2, 2, 3}, {1, 2, 3, 4}), 4.5 / std::sqrt(22.5), 1e-15);
}

TEST(Spearman, ConstantSideIsUndefined) {
    EXPECT_FALSE(spearman({1, 1, 1}, {1, 2, 3}).has_value());
    EXPECT_FALSE(spearman({1, 2, 3}, {4, 4, 4}).has_value());
    EXPECT_THROW(spearman({1, 2}, {1}), ValidationError);
    EXPECT_THROW(spearman({1, std::nan("")}, {1, 2}), ValidationError);
}

TEST(Correlation, ReportNeedsThreeSetsAndEndsWithBaseline) {
    const auto& world = four_rooms();
    const PlanningConfig cfg{0.99, 3, every_nth_cell(world, 11)};
    std::vector<PlanningScore> scores;
    for (double c : {0.5, 2.0}) {
        scores.push_back(planning_score(world, build_option_set({"g" + format_number(c), OptionSetKind::random_goals, 4, c, 1}, world), cfg));
    }
    const PlanningScore base = primitive_baseline(world, cfg);
    EXPECT_THROW(correlation_report(scores, base), ValidationError);
    scores.push_back(planning_score(world, build_option_set({"ro", OptionSetKind::random_options, 4, 1.0, 1}, world), cfg));
    const CorrelationReport report = correlation_report(scores, base);
    ASSERT_TRUE(report.spearman.has_value());

    std::ostringstream os;
    write_correlation_csv(os, report);
    std::istringstream is(os.str());
    std::vector<std::string> lines;
    for (std::string line; std::getline(is, line);) lines.push_back(line);
    ASSERT_EQ(lines.size(), 5u);
    EXPECT_EQ(lines[0], "set_name,kind,concentration,predictability,planning_score,v1,v2,v3");
    EXPECT_EQ(lines[1].rfind("g0.5,random_goals,0.5,", 0), 0u);
    EXPECT_EQ(lines[4].rfind("primitives,primitives,nan,nan,", 0), 0u);
}
