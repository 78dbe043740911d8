#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <graphfed/errors.hpp>
#include <graphfed/experiment.hpp>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct global_options {
    std::optional<std::filesystem::path> config_path;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 1;
    std::vector<std::string> overrides;

    graphfed::experiment_config load() const {
        return graphfed::load_experiment_config(config_path, overrides, seed);
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial-temporal graph pipeline: synthesize recordings, extract node "
                 "features, build correlation graphs, and train a graph classifier "
                 "federated or centralized."};
    app.require_subcommand(1);

    global_options opts;
    std::string config_arg;
    app.add_option("--config", config_arg, "experiment config file (JSON)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", opts.seed, "override the experiment seed");
    app.add_option("--workers", opts.workers, "worker thread cap")
        ->check(CLI::Range(std::size_t(1), std::size_t(256)));
    app.add_option("--set", opts.overrides,
                   "config override as dotted.path=value (repeatable)");

    // fallthrough lets --config/--seed/--set follow the subcommand name
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic recording");
    gen->fallthrough();
    auto* extract = app.add_subcommand("extract", "extract node features from a recording");
    extract->fallthrough();
    auto* build = app.add_subcommand("build-graphs", "build per-timestamp graphs from features");
    build->fallthrough();
    auto* train = app.add_subcommand("train", "train the graph classifier");
    train->fallthrough();
    std::string mode = "federated";
    train->add_option("--mode", mode, "training mode")
        ->check(CLI::IsMember({"federated", "centralized"}));
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
    evaluate->fallthrough();
    auto* inspect = app.add_subcommand("inspect", "describe a pipeline artifact");
    inspect->fallthrough();
    std::string inspect_target;
    inspect->add_option("file", inspect_target, "artifact to describe")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (!config_arg.empty()) opts.config_path = config_arg;
        if (inspect->parsed()) {
            graphfed::cmd_inspect(inspect_target);
            return kExitOk;
        }
        const graphfed::experiment_config cfg = opts.load();
        if (gen->parsed()) {
            graphfed::cmd_gen_synthetic(cfg);
        } else if (extract->parsed()) {
            graphfed::cmd_extract(cfg, opts.workers);
        } else if (build->parsed()) {
            graphfed::cmd_build_graphs(cfg, opts.workers);
        } else if (train->parsed()) {
            graphfed::cmd_train(cfg, graphfed::train_mode_from_string(mode), opts.workers);
        } else if (evaluate->parsed()) {
            graphfed::cmd_evaluate(cfg);
        }
        return kExitOk;
    } catch (const graphfed::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const graphfed::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
