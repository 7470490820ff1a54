#include "tclab/experiments.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfigError = 2;

int run(tclab::ExperimentKind kind, const std::string& config_path, const std::string& out_dir,
        std::optional<std::uint64_t> seed) {
    tclab::ExperimentConfig cfg;
    try {
        cfg = tclab::load_experiment_config(config_path, kind);
        if (seed) cfg.seed = seed;
        (void)tclab::worker_count();  // validates TCLAB_THREADS up front
    } catch (const tclab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfigError;
    }
    try {
        const tclab::RunResult result = tclab::run_experiment(cfg, out_dir);
        for (const auto& [key, value] : result.summary) std::cout << key << " = " << value << '\n';
        for (const auto& f : result.failures) std::cerr << "check failed: " << f << '\n';
        return result.passed ? kExitOk : kExitCheckFailure;
    } catch (const tclab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tabular termination-critic experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<tclab::ExperimentKind> chosen;
    for (auto kind : {tclab::ExperimentKind::verify, tclab::ExperimentKind::dynamics, tclab::ExperimentKind::train,
                      tclab::ExperimentKind::plan, tclab::ExperimentKind::correlate}) {
        const std::string name(tclab::to_string(kind));
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", config_path, "JSON config or a previous run's manifest.json")->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed, "overrides the config seed");
        sub->callback([&chosen, kind] { chosen = kind; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfigError;
    }
    return run(*chosen, config_path, out_dir, seed);
}
