#include "support.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace tclab;

TEST(Attractor, Boundaries) {
    const auto one = make_attractor(1.0);
    EXPECT_DOUBLE_EQ(one.transition(attractor::blue, 0, attractor::green), 1.0);
    EXPECT_DOUBLE_EQ(one.transition(attractor::red, 0, attractor::green), 1.0);
    const auto zero = make_attractor(0.0);
    const ChainMatrix chain = induced_chain(zero, PolicyTable::uniform(3, 1));
    Vector beta(3);
    beta << 1.0, 0.0, 0.0;
    const auto only_green = OptionDef::from_beta(PolicyTable::uniform(3, 1), beta);
    EXPECT_FALSE(options_eventually_terminate(chain, only_green));
    EXPECT_THROW(make_attractor(1.5), ValidationError);
    EXPECT_THROW(make_attractor(-0.1), ValidationError);
}

TEST(Attractor, RowsSumToOne) {
    for (double p = 0.0; p <= 1.0; p += 0.05) {
        const auto mdp = make_attractor(p);
        EXPECT_LT(max_row_sum_error(mdp.transition(0)), 1e-15);
    }
}

TEST(Attractor, StartModes) {
    EXPECT_TRUE(make_attractor(0.5).start_dist().isApprox(Vector::Ones(3) / 3));
    const Vector br = make_attractor(0.5, AttractorStarts::blue_red).start_dist();
    EXPECT_DOUBLE_EQ(br[attractor::green], 0.0);
    EXPECT_EQ(parse_attractor_starts("blue_red"), AttractorStarts::blue_red);
    EXPECT_THROW(parse_attractor_starts("x"), ValidationError);
}

TEST(Attractor, StationaryDistributionTwoWays) {
    const Matrix p = make_attractor(0.5).transition(0);
    const Vector eig = stationary_distribution(p);
    Vector power = Vector::Ones(3) / 3;
    for (int i = 0; i < 10000; ++i) power = p.transpose() * power;
    EXPECT_LT((eig - power).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FourRooms, Layout) {
    const auto world = make_four_rooms();
    EXPECT_EQ(world.n_states(), 104);
    EXPECT_EQ(world.height(), 13);
    EXPECT_EQ(world.width(), 13);
    EXPECT_TRUE(world.connected());
}

TEST(FourRooms, AllCellsMutuallyReachable) {
    const auto world = make_four_rooms();
    for (Index x = 0; x < world.n_states(); ++x) {
        const auto d = world.distances_to(x);
        for (int v : d) ASSERT_GE(v, 0);
    }
}

TEST(FourRooms, DeterministicMoves) {
    const auto world = make_four_rooms();
    const Index x = world.state_of({1, 1});
    const Index right_of = world.state_of({1, 2});
    EXPECT_DOUBLE_EQ(world.mdp().transition(x, GridAction::right, right_of), 1.0);
    EXPECT_DOUBLE_EQ(world.mdp().transition(x, GridAction::up, x), 1.0);
    EXPECT_DOUBLE_EQ(world.mdp().transition(x, GridAction::left, x), 1.0);
}

TEST(FourRooms, SlipSpreadsMass) {
    const auto world = make_four_rooms(0.2);
    const Index x = world.state_of({2, 2});
    EXPECT_NEAR(world.mdp().transition(x, GridAction::right, world.state_of({2, 3})), 0.85, 1e-12);
    EXPECT_THROW(make_four_rooms(1.0), ValidationError);
}

TEST(FourRooms, HallwaysAreUniqueConnectors) {
    const auto world = make_four_rooms();
    const auto halls = world.hallways();
    ASSERT_EQ(halls.size(), 4u);
    std::set<std::pair<int, int>> cells;
    for (Index h : halls) cells.insert({world.cell(h).row, world.cell(h).col});
    EXPECT_EQ(cells, (std::set<std::pair<int, int>>{{3, 6}, {6, 2}, {7, 9}, {10, 6}}));
    // Each hallway touches exactly two rooms, and no other cell touches two.
    const auto rooms = world.rooms();
    ASSERT_EQ(rooms.size(), 4u);
    std::vector<int> room_of(static_cast<std::size_t>(world.n_states()), -1);
    for (std::size_t r = 0; r < rooms.size(); ++r) {
        for (Index x : rooms[r]) room_of[static_cast<std::size_t>(x)] = static_cast<int>(r);
    }
    std::map<std::pair<int, int>, int> connectors;
    for (Index x = 0; x < world.n_states(); ++x) {
        std::set<int> touched;
        for (Index y : world.neighbours(x)) {
            if (room_of[static_cast<std::size_t>(y)] >= 0) touched.insert(room_of[static_cast<std::size_t>(y)]);
        }
        if (room_of[static_cast<std::size_t>(x)] >= 0) touched.insert(room_of[static_cast<std::size_t>(x)]);
        const bool is_hall = std::find(halls.begin(), halls.end(), x) != halls.end();
        EXPECT_EQ(touched.size(), is_hall ? 2u : 1u);
        if (is_hall) ++connectors[{*touched.begin(), *touched.rbegin()}];
    }
    EXPECT_EQ(connectors.size(), 4u);
    for (const auto& [pair, count] : connectors) EXPECT_EQ(count, 1);
    EXPECT_EQ(world.rooms().size(), 4u);
}

TEST(FourRooms, CentersAndGoalSet) {
    const auto world = make_four_rooms();
    std::set<std::pair<int, int>> centers;
    for (Index c : world.room_centers()) centers.insert({world.cell(c).row, world.cell(c).col});
    EXPECT_EQ(centers, (std::set<std::pair<int, int>>{{3, 3}, {3, 9}, {9, 3}, {9, 9}}));
    const auto goals = world.goal_set();
    EXPECT_EQ(goals.size(), 8u);
    EXPECT_EQ(std::set<Index>(goals.begin(), goals.end()).size(), 8u);
}

TEST(MapFormat, RoundTrip) {
    const auto world = make_four_rooms();
    const std::string text = format_map(world);
    EXPECT_EQ(text, std::string(kFourRoomsMap));
    const auto back = parse_map(text);
    EXPECT_EQ(back.n_states(), world.n_states());
    EXPECT_EQ(back.goal_set(), world.goal_set());
    EXPECT_THROW(parse_map("#?#\n"), ValidationError);
    EXPECT_THROW(parse_map("###\n#.\n"), ValidationError);
}

TEST(MapFormat, UnmarkedMapFallsBackToHallwaysAndCenters) {
    std::string text(kFourRoomsMap);
    std::replace(text.begin(), text.end(), 'G', '.');
    const auto world = parse_map(text);
    EXPECT_TRUE(world.marked_goals().empty());
    auto a = world.goal_set();
    auto b = make_four_rooms().goal_set();
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
}

TEST(GoalSchedule, SwitchesEveryPeriod) {
    const auto world = make_four_rooms();
    const GoalTaskSchedule schedule(world.goal_set(), 20, 5);
    for (long e = 0; e < 20; ++e) EXPECT_EQ(schedule.goal(e), schedule.goal(0));
    EXPECT_NE(schedule.goal(20), schedule.goal(0));
    std::set<Index> seen;
    for (long b = 0; b < 8; ++b) seen.insert(schedule.goal(b * 20));
    EXPECT_EQ(seen.size(), 8u);
    EXPECT_EQ(schedule.goal(160), schedule.goal(0));
}

TEST(GoalSchedule, RewardAtGoalOnly) {
    const auto world = make_four_rooms();
    const GoalTaskSchedule schedule(world.goal_set(), 20, 5);
    const Index g = schedule.goal(3);
    EXPECT_DOUBLE_EQ(schedule.reward(3, g), 1.0);
    EXPECT_DOUBLE_EQ(schedule.reward(3, g == 0 ? 1 : 0), 0.0);
}

TEST(GoalSchedule, SeedReproducible) {
    const auto goals = make_four_rooms().goal_set();
    const GoalTaskSchedule a(goals, 20, 11), b(goals, 20, 11), c(goals, 20, 12);
    bool differs = false;
    for (long e = 0; e < 160; e += 20) {
        EXPECT_EQ(a.goal(e), b.goal(e));
        differs = differs || a.goal(e) != c.goal(e);
    }
    EXPECT_TRUE(differs);
    EXPECT_THROW(GoalTaskSchedule(goals, 0, 1), ValidationError);
}
