#include "commands.hpp"
#include "config.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <optional>

namespace {

enum ExitCode { ok = 0, failure = 1, invalid = 2, missing = 3, numerical = 4 };

} // namespace

int main(int argc, char** argv) {
    using namespace mrsae;
    using namespace mrsae::cli;

    CLI::App app{"mrsae: manifold-regularized sparse autoencoders for clinical embedding analysis"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
    std::vector<std::string> overrides;
    bool print_config = false;
    app.add_option("--config", config_path, "Flat key = value experiment config");
    app.add_option("--seed", seed, "Master seed (overrides the config)");
    app.add_option("--out", out, "Output directory (overrides the config)");
    app.add_option("--threads", threads, "Worker threads for distance computations");
    app.add_option("--set", overrides, "Override any config key: --set train.lambda=0")->take_all();
    app.add_flag("--print-config", print_config, "Print the resolved config before running");

    const std::map<std::string, std::pair<std::string, std::function<void(const ExperimentConfig&)>>> commands{
        {"synth", {"Generate a planted synthetic cohort (and a second cohort for replication)", cmd_synth}},
        {"graph", {"Build the k-NN manifold graph over the training rows", cmd_graph}},
        {"train", {"Train the sparse autoencoder", cmd_train}},
        {"annotate", {"Assign clinical categories to alive features", cmd_annotate}},
        {"evaluate", {"Cross-validated converter prediction from feature subsets", cmd_evaluate}},
        {"replicate", {"Compare annotations across two cohorts with one frozen model", cmd_replicate}},
        {"diagnose", {"Geometric statistics of the embedding matrix", cmd_diagnose}},
        {"report", {"Summarize every output found in the output directory", cmd_report}},
    };
    for (const auto& [name, entry] : commands)
        app.add_subcommand(name, entry.first);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : invalid;
    }

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ValidationError("--set expects key=value, got '" + kv + "'");
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed)
            cfg.seed = *seed;
        if (out)
            cfg.out = *out;
        if (threads)
            cfg.threads = *threads;
        cfg.validate();
        if (print_config)
            std::cout << cfg.serialize();

        for (const auto* sub : app.get_subcommands())
            commands.at(sub->get_name()).second(cfg);
        return ok;
    } catch (const MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return missing;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numerical;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return failure;
    }
}
