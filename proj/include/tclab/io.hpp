#pragma once

#include "tclab/trainer.hpp"

#include <charconv>
#include <fstream>
#include <filesystem>

namespace tclab {

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) return "0";  // folds -0
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_cell(const std::string& s) { return s; }
inline std::string format_cell(std::string_view s) { return std::string(s); }
inline std::string format_cell(const char* s) { return s; }
inline std::string format_cell(double v) { return format_number(v); }
template <typename T>
    requires std::is_integral_v<T>
std::string format_cell(T v) {
    return std::to_string(v);
}

/// Comma-separated rows with a fixed header; cells never need quoting here.
class CsvWriter {
  public:
    CsvWriter(std::ostream& os, std::vector<std::string> header) : m_os(os), m_columns(header.size()) {
        detail::require(!header.empty(), "CsvWriter: empty header");
        write_line(header);
    }

    template <typename... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> line;
        line.reserve(sizeof...(cells));
        (append(line, cells), ...);
        write_line(line);
    }

    void row_cells(const std::vector<std::string>& cells) { write_line(cells); }

  private:
    template <typename T>
    static void append(std::vector<std::string>& line, const T& cell) {
        if constexpr (std::is_same_v<T, Vector>) {
            for (Index i = 0; i < cell.size(); ++i) line.push_back(format_number(cell[i]));
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            for (double v : cell) line.push_back(format_number(v));
        } else {
            line.push_back(format_cell(cell));
        }
    }

    void write_line(const std::vector<std::string>& cells) {
        detail::require(cells.size() == m_columns, "CsvWriter: row has ", cells.size(), " cells, header has ",
                        m_columns);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            detail::require(cells[i].find_first_of(",\n\"") == std::string::npos, "CsvWriter: cell '", cells[i],
                            "' needs quoting");
            if (i) m_os << ',';
            m_os << cells[i];
        }
        m_os << '\n';
    }

    std::ostream& m_os;
    std::size_t m_columns;
};

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    detail::require(os.good(), "cannot open '", path.string(), "' for writing");
    return os;
}

// Heatmaps -------------------------------------------------------------------------------
//
// Colour ramp: linear interpolation between five anchors at 0, .25, .5, .75, 1:
//   (68,1,84) (59,82,139) (33,145,140) (94,201,98) (253,231,37)
// Walls are (0,0,0); NaN cells are (255,255,255). Channels are rounded half up.

struct Rgb {
    int r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

inline constexpr std::array<Rgb, 5> kRamp = {
    {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
inline constexpr Rgb kWallColor{0, 0, 0};
inline constexpr Rgb kMissingColor{255, 255, 255};

inline Rgb ramp_color(double t) {
    if (std::isnan(t)) return kMissingColor;
    t = std::clamp(t, 0.0, 1.0);
    const double pos = t * static_cast<double>(kRamp.size() - 1);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(pos), kRamp.size() - 2);
    const double f = pos - static_cast<double>(i);
    auto mix = [f](int a, int b) { return static_cast<int>(std::floor(a + f * (b - a) + 0.5)); };
    return {mix(kRamp[i].r, kRamp[i + 1].r), mix(kRamp[i].g, kRamp[i + 1].g), mix(kRamp[i].b, kRamp[i + 1].b)};
}

struct Image {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;  // row-major
    const Rgb& at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
};

/// One block of `scale` x `scale` pixels per grid cell; values in [lo, hi].
inline Image render_heatmap(const GridWorld& world, const Vector& values, double lo, double hi, int scale = 8) {
    detail::require(values.size() == world.n_states(), "render_heatmap: ", values.size(), " values for ",
                    world.n_states(), " cells");
    detail::require(hi > lo, "render_heatmap: empty value range");
    detail::require(scale >= 1, "render_heatmap: scale must be >= 1");
    Image img;
    img.width = world.width() * scale;
    img.height = world.height() * scale;
    img.pixels.assign(static_cast<std::size_t>(img.width * img.height), kWallColor);
    for (int r = 0; r < world.height(); ++r) {
        for (int c = 0; c < world.width(); ++c) {
            const Index x = world.state_of({r, c});
            if (x < 0) continue;
            const Rgb color = ramp_color((values[x] - lo) / (hi - lo));
            for (int i = 0; i < scale; ++i) {
                for (int j = 0; j < scale; ++j) {
                    img.pixels[static_cast<std::size_t>((r * scale + i) * img.width + c * scale + j)] = color;
                }
            }
        }
    }
    return img;
}

/// Plain (P3) portable pixmap, one pixel per line.
inline void write_ppm(std::ostream& os, const Image& img) {
    os << "P3\n" << img.width << ' ' << img.height << "\n255\n";
    for (const Rgb& p : img.pixels) os << p.r << ' ' << p.g << ' ' << p.b << '\n';
}

inline Image read_ppm(std::istream& is) {
    std::string magic;
    Image img;
    int maxval = 0;
    is >> magic >> img.width >> img.height >> maxval;
    detail::require(is.good() && magic == "P3" && maxval == 255 && img.width > 0 && img.height > 0,
                    "read_ppm: not a plain 8-bit pixmap");
    img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
    for (Rgb& p : img.pixels) {
        is >> p.r >> p.g >> p.b;
        detail::require(!is.fail(), "read_ppm: truncated pixel data");
    }
    return img;
}

// Checkpoints ----------------------------------------------------------------------------
//
//   tclab-checkpoint 1
//   n_states N n_actions A n_contexts C n_options O beta_epsilon E
//   option o baseline B
//   termination_logits <N numbers>
//   policy_logits      <N rows of A numbers>
//   model              <N rows of N numbers>
//   start_dist         <N numbers>
//   marginal           <N numbers>
//   (repeated per option)
//   q <N*C rows of O numbers>

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    OptionAgent agent;
    double beta_epsilon = kDefaultBetaEpsilon;
};

namespace detail {

inline void write_numbers(std::ostream& os, const Eigen::Ref<const Matrix>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << format_number(m(r, c));
        os << '\n';
    }
}

inline void expect_token(std::istream& is, std::string_view want) {
    std::string tok;
    is >> tok;
    require(is.good() && tok == want, "checkpoint: expected '", want, "', found '", tok, "'");
}

inline Matrix read_numbers(std::istream& is, Index rows, Index cols) {
    Matrix m(rows, cols);
    std::string tok;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            is >> tok;
            require(!is.fail(), "checkpoint: truncated table");
            double v = 0.0;
            const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            require(res.ec == std::errc() && res.ptr == tok.data() + tok.size(), "checkpoint: bad number '", tok, "'");
            m(r, c) = v;
        }
    }
    return m;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const OptionAgent& agent, double beta_epsilon) {
    os << "tclab-checkpoint " << kCheckpointVersion << '\n';
    os << "n_states " << agent.n_states << " n_actions " << agent.n_actions << " n_contexts " << agent.n_contexts
       << " n_options " << agent.n_options() << " beta_epsilon " << format_number(beta_epsilon) << '\n';
    for (Index o = 0; o < agent.n_options(); ++o) {
        const auto& c = agent.critics[static_cast<std::size_t>(o)];
        os << "option " << o << " baseline " << format_number(c.baseline) << '\n';
        os << "termination_logits\n";
        detail::write_numbers(os, c.logits.transpose());
        os << "policy_logits\n";
        detail::write_numbers(os, agent.policy_logits[static_cast<std::size_t>(o)]);
        os << "model\n";
        detail::write_numbers(os, c.model.probs());
        os << "start_dist\n";
        detail::write_numbers(os, c.tracker.start_dist.transpose());
        os << "marginal\n";
        detail::write_numbers(os, c.tracker.probs.transpose());
    }
    os << "q\n";
    detail::write_numbers(os, agent.q);
}

inline Checkpoint read_checkpoint(std::istream& is) {
    std::string magic;
    int version = 0;
    is >> magic >> version;
    detail::require(is.good() && magic == "tclab-checkpoint", "checkpoint: missing header");
    detail::require(version == kCheckpointVersion, "checkpoint: unsupported version ", version);
    Checkpoint cp;
    Index n = 0, na = 0, nc = 0, no = 0;
    detail::expect_token(is, "n_states");
    is >> n;
    detail::expect_token(is, "n_actions");
    is >> na;
    detail::expect_token(is, "n_contexts");
    is >> nc;
    detail::expect_token(is, "n_options");
    is >> no;
    detail::expect_token(is, "beta_epsilon");
    cp.beta_epsilon = detail::read_numbers(is, 1, 1)(0, 0);
    detail::require(n > 0 && na > 0 && nc > 0 && no > 0, "checkpoint: bad dimensions");
    OptionAgent& a = cp.agent;
    a.n_states = n;
    a.n_actions = na;
    a.n_contexts = nc;
    for (Index o = 0; o < no; ++o) {
        detail::expect_token(is, "option");
        Index idx = -1;
        is >> idx;
        detail::require(idx == o, "checkpoint: option ", o, " out of order");
        detail::expect_token(is, "baseline");
        const double baseline = detail::read_numbers(is, 1, 1)(0, 0);
        detail::expect_token(is, "termination_logits");
        const Vector logits = detail::read_numbers(is, 1, n).transpose();
        detail::expect_token(is, "policy_logits");
        a.policy_logits.push_back(detail::read_numbers(is, n, na));
        detail::expect_token(is, "model");
        OptionTransitionModel model(detail::read_numbers(is, n, n));
        detail::expect_token(is, "start_dist");
        const Vector start = detail::read_numbers(is, 1, n).transpose();
        detail::expect_token(is, "marginal");
        const Vector marginal = detail::read_numbers(is, 1, n).transpose();
        a.critics.push_back({logits, std::move(model), {marginal, start}, baseline});
    }
    detail::expect_token(is, "q");
    a.q = detail::read_numbers(is, n * nc, no);
    return cp;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    detail::require<ConfigError>(is.good(), "cannot open checkpoint '", path.string(), "'");
    return read_checkpoint(is);
}

}  // namespace tclab
