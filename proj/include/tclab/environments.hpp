#pragma once

#include "tclab/mdp.hpp"

#include <array>
#include <deque>
#include <string>
#include <string_view>

namespace tclab {

// Attractor chain ---------------------------------------------------------------

namespace attractor {
inline constexpr Index green = 0;
inline constexpr Index blue = 1;
inline constexpr Index red = 2;
inline constexpr std::array<const char*, 3> names = {"green", "blue", "red"};
}  // namespace attractor

enum class AttractorStarts { all_states, blue_red };

inline AttractorStarts parse_attractor_starts(std::string_view s) {
    if (s == "all" || s == "all_states") return AttractorStarts::all_states;
    if (s == "blue_red") return AttractorStarts::blue_red;
    throw ValidationError(detail::concat("unknown attractor start mode '", s, "'"));
}

/// Three states under a fixed behaviour policy (one action). Blue and red
/// move to green with probability p and to each other otherwise; green
/// moves to blue or red uniformly.
inline TabularMdp make_attractor(double p, AttractorStarts starts = AttractorStarts::all_states) {
    detail::require(p >= 0.0 && p <= 1.0, "make_attractor: p = ", p, " outside [0, 1]");
    using namespace attractor;
    Matrix t = Matrix::Zero(3, 3);
    t(green, blue) = 0.5;
    t(green, red) = 0.5;
    t(blue, green) = p;
    t(blue, red) = 1.0 - p;
    t(red, green) = p;
    t(red, blue) = 1.0 - p;
    Vector start = Vector::Constant(3, 1.0 / 3.0);
    if (starts == AttractorStarts::blue_red) start << 0.0, 0.5, 0.5;
    return TabularMdp({t}, Matrix::Zero(3, 1), 1.0, start);
}

/// Stationary distribution by dense eigen decomposition of p^T.
inline Vector stationary_distribution(const Matrix& chain) {
    detail::require_square(chain, "stationary_distribution");
    Eigen::EigenSolver<Matrix> es(chain.transpose());
    Index best = 0;
    for (Index i = 1; i < es.eigenvalues().size(); ++i) {
        if (std::abs(es.eigenvalues()[i] - 1.0) < std::abs(es.eigenvalues()[best] - 1.0)) best = i;
    }
    Vector v = es.eigenvectors().col(best).real();
    return v / v.sum();
}

// Four Rooms --------------------------------------------------------------------

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

enum GridAction : Index { up = 0, down = 1, left = 2, right = 3 };
inline constexpr std::array<std::pair<int, int>, 4> kMoves = {{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
inline constexpr std::array<const char*, 4> kActionNames = {"up", "down", "left", "right"};

/// The usual 13x13 layout. G marks the default goal set: the four hallways
/// and the cell nearest each room's centroid.
inline constexpr std::string_view kFourRoomsMap =
    "#############\n"
    "#.....#.....#\n"
    "#.....#.....#\n"
    "#..G..G..G..#\n"
    "#.....#.....#\n"
    "#.....#.....#\n"
    "##G####.....#\n"
    "#.....###G###\n"
    "#.....#.....#\n"
    "#..G..#..G..#\n"
    "#.....G.....#\n"
    "#.....#.....#\n"
    "#############\n";

/// Occupancy grid with dense state indices over open cells (row-major).
class GridWorld {
  public:
    GridWorld(std::vector<std::string> rows, std::vector<Cell> marked_goals, double slip)
        : m_rows(std::move(rows)), m_marked(std::move(marked_goals)), m_slip(slip) {
        detail::require(!m_rows.empty(), "GridWorld: empty map");
        detail::require(slip >= 0.0 && slip < 1.0, "GridWorld: slip ", slip, " outside [0, 1)");
        const std::size_t width = m_rows.front().size();
        m_index.assign(m_rows.size() * width, -1);
        for (std::size_t r = 0; r < m_rows.size(); ++r) {
            detail::require(m_rows[r].size() == width, "GridWorld: ragged row ", r);
            for (std::size_t c = 0; c < width; ++c) {
                const char ch = m_rows[r][c];
                detail::require(ch == '#' || ch == '.', "GridWorld: bad map character '", ch, "'");
                if (ch == '.') {
                    m_index[r * width + c] = static_cast<Index>(m_cells.size());
                    m_cells.push_back({static_cast<int>(r), static_cast<int>(c)});
                }
            }
        }
        detail::require(!m_cells.empty(), "GridWorld: no open cells");
        for (const Cell& g : m_marked) {
            detail::require(state_of(g) >= 0, "GridWorld: goal (", g.row, ",", g.col, ") is not open");
        }
        build_mdp();
    }

    int height() const { return static_cast<int>(m_rows.size()); }
    int width() const { return static_cast<int>(m_rows.front().size()); }
    Index n_states() const { return static_cast<Index>(m_cells.size()); }
    double slip() const { return m_slip; }
    const std::vector<Cell>& cells() const { return m_cells; }
    const Cell& cell(Index x) const { return m_cells[static_cast<std::size_t>(x)]; }
    const TabularMdp& mdp() const { return m_mdp; }
    const std::vector<Cell>& marked_goals() const { return m_marked; }

    bool is_open(int r, int c) const {
        return r >= 0 && c >= 0 && r < height() && c < width() && m_rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] == '.';
    }

    /// Dense index of a cell, -1 for walls and out-of-range cells.
    Index state_of(Cell c) const {
        if (!is_open(c.row, c.col)) return -1;
        return m_index[static_cast<std::size_t>(c.row) * static_cast<std::size_t>(width()) + static_cast<std::size_t>(c.col)];
    }

    /// Deterministic move; bumping into a wall stays put.
    Index move(Index x, Index a) const {
        const Cell& c = cell(x);
        const auto [dr, dc] = kMoves[static_cast<std::size_t>(a)];
        const Index next = state_of({c.row + dr, c.col + dc});
        return next < 0 ? x : next;
    }

    std::vector<Index> neighbours(Index x) const {
        std::vector<Index> out;
        for (Index a = 0; a < 4; ++a) {
            const Index y = move(x, a);
            if (y != x) out.push_back(y);
        }
        return out;
    }

    /// BFS distances to `target` over open cells (-1 if unreachable).
    std::vector<int> distances_to(Index target, Index blocked = -1) const {
        std::vector<int> dist(static_cast<std::size_t>(n_states()), -1);
        if (target == blocked) return dist;
        std::deque<Index> queue{target};
        dist[static_cast<std::size_t>(target)] = 0;
        while (!queue.empty()) {
            const Index x = queue.front();
            queue.pop_front();
            for (Index y : neighbours(x)) {
                if (y == blocked || dist[static_cast<std::size_t>(y)] >= 0) continue;
                dist[static_cast<std::size_t>(y)] = dist[static_cast<std::size_t>(x)] + 1;
                queue.push_back(y);
            }
        }
        return dist;
    }

    bool connected() const {
        const auto d = distances_to(0);
        return std::all_of(d.begin(), d.end(), [](int v) { return v >= 0; });
    }

    /// Doorway cells: exactly two open neighbours, on opposite sides.
    std::vector<Index> hallways() const {
        std::vector<Index> out;
        for (Index x = 0; x < n_states(); ++x) {
            const Cell& c = cell(x);
            const bool vertical = is_open(c.row - 1, c.col) && is_open(c.row + 1, c.col);
            const bool horizontal = is_open(c.row, c.col - 1) && is_open(c.row, c.col + 1);
            if (neighbours(x).size() == 2 && vertical != horizontal) out.push_back(x);
        }
        return out;
    }

    /// Connected components of the open graph with hallways removed.
    std::vector<std::vector<Index>> rooms() const {
        const auto halls = hallways();
        std::vector<int> label(static_cast<std::size_t>(n_states()), -1);
        for (Index h : halls) label[static_cast<std::size_t>(h)] = -2;
        std::vector<std::vector<Index>> out;
        for (Index s = 0; s < n_states(); ++s) {
            if (label[static_cast<std::size_t>(s)] != -1) continue;
            const int id = static_cast<int>(out.size());
            out.emplace_back();
            std::deque<Index> queue{s};
            label[static_cast<std::size_t>(s)] = id;
            while (!queue.empty()) {
                const Index x = queue.front();
                queue.pop_front();
                out.back().push_back(x);
                for (Index y : neighbours(x)) {
                    if (label[static_cast<std::size_t>(y)] != -1) continue;
                    label[static_cast<std::size_t>(y)] = id;
                    queue.push_back(y);
                }
            }
            std::sort(out.back().begin(), out.back().end());
        }
        return out;
    }

    /// Per room, the open cell nearest the room centroid (row-major ties).
    std::vector<Index> room_centers() const {
        std::vector<Index> out;
        for (const auto& room : rooms()) {
            double cr = 0.0, cc = 0.0;
            for (Index x : room) {
                cr += cell(x).row;
                cc += cell(x).col;
            }
            cr /= static_cast<double>(room.size());
            cc /= static_cast<double>(room.size());
            Index best = room.front();
            double best_d = std::numeric_limits<double>::infinity();
            for (Index x : room) {
                const double d = std::hypot(cell(x).row - cr, cell(x).col - cc);
                if (d < best_d - 1e-12) {
                    best_d = d;
                    best = x;
                }
            }
            out.push_back(best);
        }
        return out;
    }

    /// Marked goals if the map has any, else hallways followed by centers.
    std::vector<Index> goal_set() const {
        std::vector<Index> out;
        if (!m_marked.empty()) {
            for (const Cell& c : m_marked) out.push_back(state_of(c));
            return out;
        }
        out = hallways();
        const auto centers = room_centers();
        out.insert(out.end(), centers.begin(), centers.end());
        return out;
    }

  private:
    void build_mdp() {
        const Index n = n_states();
        std::vector<Matrix> t(4, Matrix::Zero(n, n));
        for (Index x = 0; x < n; ++x) {
            for (Index a = 0; a < 4; ++a) {
                t[static_cast<std::size_t>(a)](x, move(x, a)) += 1.0 - m_slip;
                for (Index b = 0; b < 4; ++b) t[static_cast<std::size_t>(a)](x, move(x, b)) += m_slip / 4.0;
            }
        }
        Vector start = Vector::Constant(n, 1.0 / static_cast<double>(n));
        m_mdp = TabularMdp(std::move(t), Matrix::Zero(n, 4), 0.99, start);
    }

    std::vector<std::string> m_rows;
    std::vector<Cell> m_marked;
    double m_slip;
    std::vector<Index> m_index;
    std::vector<Cell> m_cells;
    TabularMdp m_mdp{{Matrix::Identity(1, 1)}, Matrix::Zero(1, 1), 0.0, Vector::Ones(1)};
};

/// Parses `#` wall, `.` open, `G` open candidate goal. Blank lines are skipped.
inline GridWorld parse_map(std::string_view text, double slip = 0.0) {
    std::vector<std::string> rows;
    std::vector<Cell> goals;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string line(text.substr(start, end - start));
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) {
            for (std::size_t c = 0; c < line.size(); ++c) {
                if (line[c] == 'G') {
                    goals.push_back({static_cast<int>(rows.size()), static_cast<int>(c)});
                    line[c] = '.';
                }
            }
            rows.push_back(std::move(line));
        }
        start = end + 1;
    }
    return GridWorld(std::move(rows), std::move(goals), slip);
}

inline std::string format_map(const GridWorld& world) {
    std::string out;
    for (int r = 0; r < world.height(); ++r) {
        for (int c = 0; c < world.width(); ++c) {
            const bool goal = std::find(world.marked_goals().begin(), world.marked_goals().end(), Cell{r, c}) !=
                              world.marked_goals().end();
            out += goal ? 'G' : (world.is_open(r, c) ? '.' : '#');
        }
        out += '\n';
    }
    return out;
}

inline GridWorld make_four_rooms(double slip = 0.0) { return parse_map(kFourRoomsMap, slip); }

// Goal schedule -------------------------------------------------------------------

/// goal(e) = goal_set[perm[(e / period) mod |goal_set|]].
class GoalTaskSchedule {
  public:
    GoalTaskSchedule(std::vector<Index> goal_set, int switch_period, std::uint64_t seed)
        : m_goals(std::move(goal_set)), m_period(switch_period) {
        detail::require(!m_goals.empty(), "GoalTaskSchedule: empty goal set");
        detail::require(switch_period >= 1, "GoalTaskSchedule: period must be >= 1");
        Rng rng(seed);
        m_order = random_permutation(static_cast<Index>(m_goals.size()), rng);
    }

    const std::vector<Index>& goal_set() const { return m_goals; }
    int period() const { return m_period; }

    /// Position of the episode's goal within goal_set.
    Index goal_slot(long episode) const {
        const long block = episode / m_period;
        return m_order[static_cast<std::size_t>(block % static_cast<long>(m_goals.size()))];
    }

    Index goal(long episode) const { return m_goals[static_cast<std::size_t>(goal_slot(episode))]; }

    /// Reward for entering `next` during `episode`.
    double reward(long episode, Index next) const { return next == goal(episode) ? 1.0 : 0.0; }

  private:
    std::vector<Index> m_goals;
    int m_period;
    std::vector<Index> m_order;
};

}  // namespace tclab
