#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <sbdlas/experiment.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Adaptive surrogate construction for PDE-constrained Bayesian inversion"};
    app.require_subcommand(1);

    std::string target, out, scale;
    double alpha = 0.0;
    std::uint64_t seed = 0;

    auto* run = app.add_subcommand("run", "Run an experiment preset or config file");
    run->add_option("target", target,
                    "preset (exp1|exp2|exp3|ode-toy|algebraic-toy) or path to a config file")
        ->required();
    auto* alpha_opt =
        run->add_option("--alpha", alpha, "replace the configured alpha list with this value");
    auto* seed_opt = run->add_option("--seed", seed, "master seed");
    auto* scale_opt = run->add_option("--scale", scale, "desk or full scale")
                          ->check(CLI::IsMember({"desk", "full"}));
    auto* out_opt = run->add_option("--out", out, "output directory");

    std::string run_dir;
    auto* rep = app.add_subcommand("report", "Re-print the tables from a finished run");
    rep->add_option("run_dir", run_dir, "directory holding manifest.json")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const sbdlas::ExperimentConfig cfg = sbdlas::resolve_config(
                target, alpha_opt->count() ? std::optional<double>(alpha) : std::nullopt,
                seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt,
                scale_opt->count() ? std::optional<std::string>(scale) : std::nullopt,
                out_opt->count() ? std::optional<std::string>(out) : std::nullopt);
            sbdlas::run_experiment(cfg);
            std::cout << "run complete: " << cfg.resolved_out_dir() << "\n\n";
            sbdlas::report(cfg.resolved_out_dir());
        } else {
            sbdlas::report(run_dir);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
