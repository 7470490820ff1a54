#pragma once

#include "tclab/planning.hpp"
#include "tclab/verification.hpp"

#include "json.hpp"

#include <set>

namespace tclab {

inline constexpr std::string_view kCodeVersion = "tclab 0.3.0";
inline constexpr int kManifestVersion = 1;

using Json = nlohmann::ordered_json;

enum class ExperimentKind { verify, dynamics, train, plan, correlate };

inline ExperimentKind parse_experiment_kind(std::string_view s) {
    if (s == "verify") return ExperimentKind::verify;
    if (s == "dynamics") return ExperimentKind::dynamics;
    if (s == "train") return ExperimentKind::train;
    if (s == "plan") return ExperimentKind::plan;
    if (s == "correlate") return ExperimentKind::correlate;
    throw ConfigError(detail::concat("unknown experiment '", s, "'"));
}

inline std::string_view to_string(ExperimentKind k) {
    constexpr std::array<std::string_view, 5> names{"verify", "dynamics", "train", "plan", "correlate"};
    return names[static_cast<std::size_t>(k)];
}

struct DynamicsSettings {
    std::vector<double> p_grid{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> init_grid{0.5, 0.8};
    std::vector<UpdateVariant> variants{UpdateVariant::full, UpdateVariant::naive_reachability,
                                        UpdateVariant::reachability_only, UpdateVariant::trajectory_only};
    long trajectories = 20000;
    long trace_every = 100;
    AttractorStarts starts = AttractorStarts::all_states;
};

struct TrainSettings {
    long episodes = 2000;
    long snapshot_every = 200;
    int switch_period = 20;
};

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::verify;
    std::optional<std::uint64_t> seed;
    std::string map = "four_rooms";  // or a map file path
    double slip = 0.0;
    TrainerConfig trainer;
    VerifyConfig verify;
    DynamicsSettings dynamics;
    TrainSettings train;
    PlanningConfig planning;
    std::vector<OptionSetSpec> option_sets;
    std::filesystem::path base_dir;  // relative paths resolve against this

    std::uint64_t seed_value() const { return seed.value_or(0); }
};

// Parsing --------------------------------------------------------------------------------

namespace detail {

/// Reads keys from one JSON object and rejects any it was never asked about.
class KeyReader {
  public:
    KeyReader(const Json& j, std::string where) : m_json(j), m_where(std::move(where)) {
        require<ConfigError>(j.is_object(), m_where, ": expected a JSON object");
    }

    bool has(const std::string& key) {
        m_seen.insert(key);
        return m_json.contains(key);
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        if (!has(key)) return fallback;
        try {
            return m_json.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(concat(m_where, ": key '", key, "': ", e.what()));
        }
    }

    const Json& raw(const std::string& key) {
        m_seen.insert(key);
        return m_json.at(key);
    }

    void finish() const {
        for (const auto& item : m_json.items()) {
            require<ConfigError>(m_seen.count(item.key()) > 0, m_where, ": unknown key '", item.key(), "'");
        }
    }

  private:
    const Json& m_json;
    std::string m_where;
    std::set<std::string> m_seen;
};

inline void read_trainer(KeyReader& r, TrainerConfig& t) {
    t.alpha_beta = r.get("alpha_beta", t.alpha_beta);
    t.alpha_model = r.get("alpha_model", t.alpha_model);
    t.alpha_marginal = r.get("alpha_marginal", t.alpha_marginal);
    t.alpha_baseline = r.get("alpha_baseline", t.alpha_baseline);
    t.alpha_policy = r.get("alpha_policy", t.alpha_policy);
    t.alpha_q = r.get("alpha_q", t.alpha_q);
    t.trajectory_cap = r.get("trajectory_cap", t.trajectory_cap);
    t.epsilon_mu = r.get("epsilon_mu", t.epsilon_mu);
    t.gamma = r.get("gamma", t.gamma);
    t.init_beta = r.get("init_beta", t.init_beta);
    t.beta_epsilon = r.get("beta_epsilon", t.beta_epsilon);
    t.variant = parse_variant(r.get<std::string>("variant", std::string(to_string(t.variant))));
    t.marginal_mode = parse_marginal_mode(r.get<std::string>("marginal_mode", std::string(to_string(t.marginal_mode))));
    t.occupancy_guard = r.get("occupancy_guard", t.occupancy_guard);
    if (r.has("trajectory_floor") && !r.raw("trajectory_floor").is_null()) {
        t.trajectory_floor = r.get("trajectory_floor", t.trajectory_floor);
    }
    t.n_options = r.get("n_options", t.n_options);
    t.max_episode_steps = r.get("max_episode_steps", t.max_episode_steps);
    t.validate();
}

inline Json trainer_json(const TrainerConfig& t) {
    Json j;
    j["alpha_beta"] = t.alpha_beta;
    j["alpha_model"] = t.alpha_model;
    j["alpha_marginal"] = t.alpha_marginal;
    j["alpha_baseline"] = t.alpha_baseline;
    j["alpha_policy"] = t.alpha_policy;
    j["alpha_q"] = t.alpha_q;
    j["trajectory_cap"] = t.trajectory_cap;
    j["epsilon_mu"] = t.epsilon_mu;
    j["gamma"] = t.gamma;
    j["init_beta"] = t.init_beta;
    j["beta_epsilon"] = t.beta_epsilon;
    j["variant"] = std::string(to_string(t.variant));
    j["marginal_mode"] = std::string(to_string(t.marginal_mode));
    j["occupancy_guard"] = t.occupancy_guard;
    j["trajectory_floor"] = std::isfinite(t.trajectory_floor) ? Json(t.trajectory_floor) : Json(nullptr);
    j["n_options"] = t.n_options;
    j["max_episode_steps"] = t.max_episode_steps;
    return j;
}

inline bool safe_name(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

inline OptionSetSpec read_option_set(const Json& j, std::size_t index, std::uint64_t default_seed,
                                     const std::filesystem::path& base_dir) {
    KeyReader r(j, concat("option_sets[", index, "]"));
    OptionSetSpec s;
    s.name = r.get<std::string>("name", "");
    require<ConfigError>(safe_name(s.name), "option_sets[", index, "]: name must be nonempty [A-Za-z0-9_.-]");
    s.kind = parse_option_set_kind(r.get<std::string>("kind", ""));
    s.n = r.get("n", s.n);
    s.concentration = r.get("concentration", s.concentration);
    s.seed = r.get("seed", default_seed);
    s.beta_epsilon = r.get("beta_epsilon", s.beta_epsilon);
    if (r.has("checkpoint")) {
        std::filesystem::path p = r.get<std::string>("checkpoint", "");
        if (p.is_relative()) p = base_dir / p;
        s.checkpoint = std::filesystem::absolute(p).lexically_normal().string();
        require<ConfigError>(std::filesystem::exists(s.checkpoint), "option set '", s.name, "': checkpoint '",
                             s.checkpoint, "' does not exist");
    }
    r.finish();
    s.validate();
    return s;
}

inline Json option_set_json(const OptionSetSpec& s) {
    Json j;
    j["name"] = s.name;
    j["kind"] = std::string(to_string(s.kind));
    j["n"] = s.n;
    j["concentration"] = s.concentration;
    j["seed"] = s.seed;
    j["beta_epsilon"] = s.beta_epsilon;
    if (!s.checkpoint.empty()) j["checkpoint"] = s.checkpoint;
    return j;
}

inline std::string resolve_map(const std::string& map, const std::filesystem::path& base_dir) {
    if (map == "four_rooms") return map;
    std::filesystem::path p = map;
    if (p.is_relative()) p = base_dir / p;
    return std::filesystem::absolute(p).lexically_normal().string();
}

}  // namespace detail

inline GridWorld load_world(const ExperimentConfig& cfg) {
    if (cfg.map == "four_rooms") return make_four_rooms(cfg.slip);
    const std::filesystem::path p = detail::resolve_map(cfg.map, cfg.base_dir);
    std::ifstream is(p);
    detail::require<ConfigError>(is.good(), "cannot open map '", p.string(), "'");
    std::stringstream text;
    text << is.rdbuf();
    try {
        return parse_map(text.str(), cfg.slip);
    } catch (const ValidationError& e) {
        throw ConfigError(detail::concat("map '", p.string(), "': ", e.what()));
    }
}

namespace detail {

inline ExperimentConfig parse_experiment_config_impl(const Json& doc, ExperimentKind kind,
                                                     const std::filesystem::path& base_dir) {
    const Json* body = &doc;
    if (doc.is_object() && doc.contains("manifest_version")) {
        detail::require<ConfigError>(doc.contains("config"), "manifest has no config section");
        body = &doc.at("config");
    }
    detail::KeyReader r(*body, "config");
    ExperimentConfig cfg;
    cfg.kind = kind;
    cfg.base_dir = base_dir;
    if (r.has("experiment")) {
        const auto named = parse_experiment_kind(r.get<std::string>("experiment", ""));
        detail::require<ConfigError>(named == kind, "config is for '", to_string(named), "', not '", to_string(kind), "'");
    }
    if (r.has("seed")) cfg.seed = r.get<std::uint64_t>("seed", 0);

    switch (kind) {
        case ExperimentKind::verify: {
            auto& v = cfg.verify;
            v.instances = r.get("instances", v.instances);
            v.min_states = r.get("min_states", v.min_states);
            v.max_states = r.get("max_states", v.max_states);
            v.fd_step = r.get("fd_step", v.fd_step);
            v.gradient_tolerance = r.get("gradient_tolerance", v.gradient_tolerance);
            v.identity_instances = r.get("identity_instances", v.identity_instances);
            v.mc_rollouts = r.get("mc_rollouts", v.mc_rollouts);
            v.attractor_p = r.get("attractor_p", v.attractor_p);
            v.enumeration_cutoff = r.get("enumeration_cutoff", v.enumeration_cutoff);
            v.fault = parse_verify_fault(r.get<std::string>("fault", "none"));
            v.validate();
            break;
        }
        case ExperimentKind::dynamics: {
            detail::read_trainer(r, cfg.trainer);
            auto& d = cfg.dynamics;
            d.p_grid = r.get("p_grid", d.p_grid);
            d.init_grid = r.get("init_grid", d.init_grid);
            if (r.has("variants")) {
                d.variants.clear();
                for (const auto& s : r.get<std::vector<std::string>>("variants", {})) d.variants.push_back(parse_variant(s));
            }
            d.trajectories = r.get("trajectories", d.trajectories);
            d.trace_every = r.get("trace_every", d.trace_every);
            d.starts = parse_attractor_starts(r.get<std::string>("attractor_starts", "all"));
            detail::require<ConfigError>(!d.p_grid.empty() && !d.init_grid.empty() && !d.variants.empty(),
                                         "dynamics: p_grid, init_grid and variants must be nonempty");
            for (double p : d.p_grid) detail::require<ConfigError>(p >= 0.0 && p <= 1.0, "dynamics: p ", p, " outside [0, 1]");
            for (double b : d.init_grid) detail::require<ConfigError>(b > 0.0 && b < 1.0, "dynamics: init ", b, " outside (0, 1)");
            detail::require<ConfigError>(d.trajectories >= 1 && d.trace_every >= 1, "dynamics: bad lengths");
            break;
        }
        case ExperimentKind::train: {
            detail::read_trainer(r, cfg.trainer);
            cfg.map = resolve_map(r.get("map", cfg.map), base_dir);
            cfg.slip = r.get("slip", cfg.slip);
            auto& t = cfg.train;
            t.episodes = r.get("episodes", t.episodes);
            t.snapshot_every = r.get("snapshot_every", t.snapshot_every);
            t.switch_period = r.get("switch_period", t.switch_period);
            detail::require<ConfigError>(t.episodes >= 1 && t.snapshot_every >= 1 && t.switch_period >= 1,
                                         "train: episodes, snapshot_every and switch_period must be >= 1");
            break;
        }
        case ExperimentKind::plan:
        case ExperimentKind::correlate: {
            cfg.map = resolve_map(r.get("map", cfg.map), base_dir);
            cfg.slip = r.get("slip", cfg.slip);
            auto& p = cfg.planning;
            p.gamma = r.get("gamma", p.gamma);
            p.iterations = r.get("iterations", p.iterations);
            if (r.has("goals") && !r.raw("goals").is_string()) p.goals = r.get<std::vector<Index>>("goals", {});
            else if (r.has("goals")) {
                detail::require<ConfigError>(r.get<std::string>("goals", "") == "all", "goals must be \"all\" or a list");
            }
            detail::require<ConfigError>(p.gamma > 0.0 && p.gamma < 1.0, "gamma must lie in (0, 1)");
            detail::require<ConfigError>(p.iterations >= 1, "iterations must be >= 1");
            detail::require<ConfigError>(r.has("option_sets") && r.raw("option_sets").is_array(),
                                         "option_sets must be a list");
            const Json& sets = r.raw("option_sets");
            std::set<std::string> names;
            for (std::size_t i = 0; i < sets.size(); ++i) {
                cfg.option_sets.push_back(detail::read_option_set(sets[i], i, cfg.seed_value(), base_dir));
                detail::require<ConfigError>(names.insert(cfg.option_sets.back().name).second,
                                             "duplicate option set name '", cfg.option_sets.back().name, "'");
            }
            const std::size_t needed = kind == ExperimentKind::correlate ? 3 : 1;
            detail::require<ConfigError>(cfg.option_sets.size() >= needed, to_string(kind), " needs at least ", needed,
                                         " option sets");
            break;
        }
    }
    r.finish();
    if (kind == ExperimentKind::train || kind == ExperimentKind::plan || kind == ExperimentKind::correlate) {
        const GridWorld world = load_world(cfg);
        for (Index g : cfg.planning.goals) {
            detail::require<ConfigError>(g >= 0 && g < world.n_states(), "goal ", g, " is not an open cell index");
        }
    }
    return cfg;
}

}  // namespace detail

/// Builds a config from a JSON document (a config file or a manifest).
/// `kind` is the subcommand; a conflicting "experiment" key is an error.
inline ExperimentConfig parse_experiment_config(const Json& doc, ExperimentKind kind,
                                                const std::filesystem::path& base_dir = {}) {
    try {
        return detail::parse_experiment_config_impl(doc, kind, base_dir);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
}

/// The effective configuration, defaults filled in.
inline Json config_json(const ExperimentConfig& cfg) {
    Json j;
    j["experiment"] = std::string(to_string(cfg.kind));
    if (cfg.seed) j["seed"] = *cfg.seed;
    switch (cfg.kind) {
        case ExperimentKind::verify: {
            const auto& v = cfg.verify;
            j["instances"] = v.instances;
            j["min_states"] = v.min_states;
            j["max_states"] = v.max_states;
            j["fd_step"] = v.fd_step;
            j["gradient_tolerance"] = v.gradient_tolerance;
            j["identity_instances"] = v.identity_instances;
            j["mc_rollouts"] = v.mc_rollouts;
            j["attractor_p"] = v.attractor_p;
            j["enumeration_cutoff"] = v.enumeration_cutoff;
            j["fault"] = v.fault == VerifyFault::none ? "none" : "flip_pseudo_reward";
            break;
        }
        case ExperimentKind::dynamics: {
            j.update(detail::trainer_json(cfg.trainer));
            const auto& d = cfg.dynamics;
            j["p_grid"] = d.p_grid;
            j["init_grid"] = d.init_grid;
            Json vs = Json::array();
            for (auto v : d.variants) vs.push_back(std::string(to_string(v)));
            j["variants"] = vs;
            j["trajectories"] = d.trajectories;
            j["trace_every"] = d.trace_every;
            j["attractor_starts"] = d.starts == AttractorStarts::all_states ? "all" : "blue_red";
            break;
        }
        case ExperimentKind::train:
            j.update(detail::trainer_json(cfg.trainer));
            j["map"] = cfg.map;
            j["slip"] = cfg.slip;
            j["episodes"] = cfg.train.episodes;
            j["snapshot_every"] = cfg.train.snapshot_every;
            j["switch_period"] = cfg.train.switch_period;
            break;
        case ExperimentKind::plan:
        case ExperimentKind::correlate: {
            j["map"] = cfg.map;
            j["slip"] = cfg.slip;
            j["gamma"] = cfg.planning.gamma;
            j["iterations"] = cfg.planning.iterations;
            j["goals"] = cfg.planning.goals.empty() ? Json("all") : Json(cfg.planning.goals);
            Json sets = Json::array();
            for (const auto& s : cfg.option_sets) sets.push_back(detail::option_set_json(s));
            j["option_sets"] = sets;
            break;
        }
    }
    return j;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentKind kind) {
    std::ifstream is(path);
    detail::require<ConfigError>(is.good(), "cannot open config '", path.string(), "'");
    Json doc;
    try {
        doc = Json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(detail::concat("config '", path.string(), "': ", e.what()));
    }
    std::filesystem::path base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_experiment_config(doc, kind, base);
}

// Runs -----------------------------------------------------------------------------------

struct RunResult {
    bool passed = true;
    std::vector<std::string> failures;
    std::vector<std::string> outputs;  // relative to the output directory
    std::vector<std::pair<std::string, std::string>> summary;

    void fail(std::string what) {
        passed = false;
        failures.push_back(std::move(what));
    }
};

namespace detail {

class OutputDir {
  public:
    OutputDir(std::filesystem::path root, RunResult& result) : m_root(std::move(root)), m_result(result) {
        std::filesystem::create_directories(m_root);
    }

    std::ofstream open(const std::string& relative) {
        const auto p = m_root / relative;
        std::filesystem::create_directories(p.parent_path());
        m_result.outputs.push_back(relative);
        return open_output(p);
    }

  private:
    std::filesystem::path m_root;
    RunResult& m_result;
};

inline void write_heatmap(OutputDir& out, const std::string& name, const GridWorld& world, const Vector& values,
                          double lo, double hi) {
    auto os = out.open(name);
    write_ppm(os, render_heatmap(world, values, lo, hi));
}

inline void require_finite_agent(const OptionAgent& agent, RunResult& result) {
    bool ok = agent.q.allFinite();
    for (const auto& c : agent.critics) ok = ok && c.logits.allFinite() && c.model.probs().allFinite();
    for (const auto& p : agent.policy_logits) ok = ok && p.allFinite();
    if (!ok) result.fail("non-finite entries in agent tables");
}

}  // namespace detail

inline RunResult run_verify(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    RunResult result;
    detail::OutputDir out(out_dir, result);
    VerifyConfig v = cfg.verify;
    v.seed = cfg.seed_value();
    const VerifyReport report = run_verification(v);
    auto os = out.open("verify.csv");
    CsvWriter csv(os, {"check", "max_error", "threshold", "passed"});
    for (const auto& c : report.checks) {
        csv.row(c.name, c.value, c.threshold, c.passed ? "true" : "false");
        result.summary.push_back({c.name, format_number(c.value)});
        if (!c.passed) result.fail(detail::concat(c.name, " = ", format_number(c.value), " >= ", format_number(c.threshold)));
    }
    return result;
}

inline RunResult run_dynamics(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    detail::require<ConfigError>(cfg.seed.has_value(), "dynamics needs a seed (config key or --seed)");
    RunResult result;
    detail::OutputDir out(out_dir, result);
    const auto& d = cfg.dynamics;
    struct Job {
        UpdateVariant variant;
        double p, init;
    };
    std::vector<Job> jobs;
    for (auto v : d.variants) {
        for (double p : d.p_grid) {
            for (double init : d.init_grid) jobs.push_back({v, p, init});
        }
    }
    std::vector<DynamicsRun> runs(jobs.size());
    parallel_for(jobs.size(), worker_count(), [&](std::size_t i) {
        TrainerConfig t = cfg.trainer;
        t.variant = jobs[i].variant;
        runs[i] = run_attractor_dynamics(make_attractor(jobs[i].p, d.starts), jobs[i].init, d.trajectories, t,
                                         *cfg.seed, d.trace_every);
    });
    auto trace_os = out.open("trace.csv");
    CsvWriter trace(trace_os, {"step", "variant", "p", "init", "beta_green", "beta_blue", "beta_red", "objective",
                               "baseline"});
    auto final_os = out.open("final.csv");
    CsvWriter fin(final_os, {"variant", "p", "init", "beta_green", "beta_blue", "beta_red", "states_above_0.9"});
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const std::string variant(to_string(jobs[i].variant));
        for (const auto& row : runs[i].trace) {
            trace.row(row.step, variant, jobs[i].p, jobs[i].init, row.beta[0], row.beta[1], row.beta[2], row.objective,
                      row.baseline);
        }
        const Vector& b = runs[i].final_beta;
        fin.row(variant, jobs[i].p, jobs[i].init, b[0], b[1], b[2], static_cast<long>((b.array() > 0.9).count()));
        if (!b.allFinite()) result.fail("non-finite beta in run " + std::to_string(i));
    }
    for (auto v : d.variants) {
        long saturated = 0, total = 0;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].variant != v) continue;
            ++total;
            saturated += (runs[i].final_beta.array() > 0.9).count() >= 2;
        }
        result.summary.emplace_back(std::string(to_string(v)) + "_runs_with_2plus_saturated",
                                    std::to_string(saturated) + "/" + std::to_string(total));
    }
    return result;
}

inline RunResult run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    detail::require<ConfigError>(cfg.seed.has_value(), "train needs a seed (config key or --seed)");
    RunResult result;
    detail::OutputDir out(out_dir, result);
    const GridWorld world = load_world(cfg);
    const auto goals = world.goal_set();
    const GoalTaskEnvironment env(world, goals);
    const GoalTaskSchedule schedule(goals, cfg.train.switch_period, *cfg.seed);
    const TrainerConfig& tc = cfg.trainer;
    OptionAgent agent = make_agent(world.n_states(), 4, env.n_contexts(), tc);
    Rng rng(*cfg.seed);
    const Vector uniform = Vector::Constant(world.n_states(), 1.0 / static_cast<double>(world.n_states()));

    auto episodes_os = out.open("episodes.csv");
    CsvWriter episodes(episodes_os, {"episode", "goal", "return", "steps", "decisions", "reached_goal"});
    auto snap_os = out.open("snapshots.csv");
    CsvWriter snaps(snap_os, {"episode", "option", "termination_entropy", "max_beta", "mean_beta", "j_estimate",
                              "j_exact_uniform", "baseline"});
    auto maps_os = out.open("beta_maps.csv");
    CsvWriter maps(maps_os, {"episode", "option", "state", "row", "col", "beta"});

    auto snapshot = [&](long episode) {
        for (Index o = 0; o < agent.n_options(); ++o) {
            const OptionDef option = agent.option(o, tc.beta_epsilon);
            const Vector beta = option.beta();
            double h = 0.0;
            for (Index x = 0; x < beta.size(); ++x) h += bernoulli_entropy(beta[x]);
            const auto& c = agent.critics[static_cast<std::size_t>(o)];
            const double j_est = objective_entropy(c.model, c.tracker.start_dist).value;
            const double j_exact =
                objective_entropy(exact_option_model(induced_chain(world.mdp(), option.policy()), option), uniform).value;
            snaps.row(episode, o, h / static_cast<double>(beta.size()), beta.maxCoeff(), beta.mean(), j_est, j_exact,
                      c.baseline);
            for (Index x = 0; x < beta.size(); ++x) {
                maps.row(episode, o, x, world.cell(x).row, world.cell(x).col, beta[x]);
            }
        }
    };

    const double h0 = mean_termination_entropy(agent, tc.beta_epsilon);
    snapshot(0);
    long reached = 0;
    for (long e = 0; e < cfg.train.episodes; ++e) {
        const Index slot = schedule.goal_slot(e);
        EpisodeLog log = run_episode(agent, env, slot, tc, rng);
        reached += log.reached_goal ? 1 : 0;
        episodes.row(e, goals[static_cast<std::size_t>(slot)], log.episode_return, log.steps, log.decisions,
                     log.reached_goal ? 1 : 0);
        if ((e + 1) % cfg.train.snapshot_every == 0 || e + 1 == cfg.train.episodes) snapshot(e + 1);
    }
    detail::require_finite_agent(agent, result);

    const double h1 = mean_termination_entropy(agent, tc.beta_epsilon);
    double min_max_beta = 1.0;
    std::vector<OptionDef> options;
    for (Index o = 0; o < agent.n_options(); ++o) options.push_back(agent.option(o, tc.beta_epsilon));
    const auto marginals = option_set_marginals(world, options);
    for (Index o = 0; o < agent.n_options(); ++o) {
        const Vector beta = options[static_cast<std::size_t>(o)].beta();
        min_max_beta = std::min(min_max_beta, beta.maxCoeff());
        const Vector& m = marginals[static_cast<std::size_t>(o)];
        detail::write_heatmap(out, "heatmaps/beta_option" + std::to_string(o) + ".ppm", world, beta, 0.0, 1.0);
        detail::write_heatmap(out, "heatmaps/pbar_option" + std::to_string(o) + ".ppm", world, m, 0.0,
                              std::max(m.maxCoeff(), 1e-12));
    }
    {
        auto os = out.open("checkpoint.txt");
        write_checkpoint(os, agent, tc.beta_epsilon);
    }
    auto sum_os = out.open("summary.csv");
    CsvWriter sum(sum_os, {"metric", "value"});
    const std::vector<std::pair<std::string, double>> metrics{
        {"initial_termination_entropy", h0},
        {"final_termination_entropy", h1},
        {"entropy_ratio", h1 / h0},
        {"min_option_max_beta", min_max_beta},
        {"success_rate", static_cast<double>(reached) / static_cast<double>(cfg.train.episodes)}};
    for (const auto& [k, v] : metrics) {
        sum.row(k, v);
        result.summary.push_back({k, format_number(v)});
    }
    return result;
}

/// plan and correlate: score every option set plus the primitives-only
/// baseline, render heatmaps, and check value-iteration invariants.
inline RunResult run_planning(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    RunResult result;
    detail::OutputDir out(out_dir, result);
    const GridWorld world = load_world(cfg);
    PlanningConfig pc = cfg.planning;
    pc.threads = worker_count();
    const PlanningScore baseline = primitive_baseline(world, pc);
    std::vector<PlanningScore> scores;
    for (const auto& spec : cfg.option_sets) {
        OptionSet set = [&] {
            try {
                return build_option_set(spec, world);
            } catch (const ValidationError& e) {
                throw ConfigError(detail::concat("option set '", spec.name, "': ", e.what()));
            }
        }();
        for (const auto& o : set.options) {
            if (!options_eventually_terminate(induced_chain(world.mdp(), o.policy()), o)) {
                result.fail("option set '" + spec.name + "' has an option that can run forever");
            }
        }
        scores.push_back(planning_score(world, set, pc));
        const auto marginals = option_set_marginals(world, set.options);
        for (std::size_t o = 0; o < set.options.size(); ++o) {
            const std::string stem = "heatmaps/" + spec.name + "_option" + std::to_string(o);
            detail::write_heatmap(out, stem + "_beta.ppm", world, set.options[o].beta(), 0.0, 1.0);
            detail::write_heatmap(out, stem + "_pbar.ppm", world, marginals[o], 0.0,
                                  std::max(marginals[o].maxCoeff(), 1e-12));
        }
    }

    // Invariants: options never hurt and averages never decrease.
    double worst_gap = std::numeric_limits<double>::infinity();
    double worst_step = std::numeric_limits<double>::infinity();
    for (const auto& s : scores) {
        for (std::size_t t = 0; t < s.per_task.size(); ++t) {
            for (std::size_t k = 0; k < s.per_task[t].size(); ++k) {
                worst_gap = std::min(worst_gap, s.per_task[t][k] - baseline.per_task[t][k]);
                if (k > 0) worst_step = std::min(worst_step, s.per_task[t][k] - s.per_task[t][k - 1]);
            }
        }
    }
    if (worst_gap < 0.0) result.fail("options+primitives fell below primitives-only by " + format_number(-worst_gap));
    if (worst_step < 0.0) result.fail("per-iteration average decreased by " + format_number(-worst_step));

    const std::string table = cfg.kind == ExperimentKind::correlate ? "correlation.csv" : "planning.csv";
    {
        auto os = out.open(table);
        CorrelationReport report{scores, baseline, std::nullopt};
        write_correlation_csv(os, report);
    }
    {
        auto os = out.open("per_task.csv");
        std::vector<std::string> header{"set_name", "goal", "row", "col"};
        for (int k = 1; k <= pc.iterations; ++k) header.push_back("v" + std::to_string(k));
        CsvWriter csv(os, header);
        auto emit = [&](const PlanningScore& s) {
            for (std::size_t t = 0; t < s.goals.size(); ++t) {
                const Cell& c = world.cell(s.goals[t]);
                csv.row(s.name, s.goals[t], c.row, c.col, s.per_task[t]);
            }
        };
        for (const auto& s : scores) emit(s);
        emit(baseline);
    }
    result.summary.push_back({"min_gap_vs_primitives", format_number(worst_gap)});
    if (cfg.kind == ExperimentKind::correlate) {
        const CorrelationReport report = correlation_report(scores, baseline);
        auto os = out.open("correlation_summary.csv");
        CsvWriter csv(os, {"statistic", "value"});
        const std::string rho = report.spearman ? format_number(*report.spearman) : "undefined";
        csv.row("spearman_predictability_vs_score", rho);
        csv.row("option_sets", static_cast<long>(scores.size()));
        result.summary.push_back({"spearman", rho});
    }
    return result;
}

inline RunResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    RunResult result;
    switch (cfg.kind) {
        case ExperimentKind::verify: result = run_verify(cfg, out_dir); break;
        case ExperimentKind::dynamics: result = run_dynamics(cfg, out_dir); break;
        case ExperimentKind::train: result = run_train(cfg, out_dir); break;
        case ExperimentKind::plan:
        case ExperimentKind::correlate: result = run_planning(cfg, out_dir); break;
    }
    Json manifest;
    manifest["manifest_version"] = kManifestVersion;
    manifest["code_version"] = std::string(kCodeVersion);
    manifest["experiment"] = std::string(to_string(cfg.kind));
    manifest["seed"] = cfg.seed ? Json(*cfg.seed) : Json(nullptr);
    manifest["config"] = config_json(cfg);
    std::vector<std::string> outputs = result.outputs;
    std::sort(outputs.begin(), outputs.end());
    manifest["outputs"] = outputs;
    manifest["passed"] = result.passed;
    auto os = open_output(out_dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    return result;
}

}  // namespace tclab
