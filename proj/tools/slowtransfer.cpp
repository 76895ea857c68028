// Command-line driver for the source / extract / transfer / analysis pipeline.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slowtransfer/experiment.hpp"

namespace ex = slowtransfer::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct Options {
    std::string config;
    std::string preset = "desk";
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
};

ex::ExperimentConfig resolve(const Options& o) {
    ex::ExperimentConfig cfg;
    if (!o.config.empty()) {
        cfg = ex::load_config(o.config);
    } else if (o.preset == "paper") {
        cfg = ex::ExperimentConfig::paper();
    } else {
        cfg = ex::ExperimentConfig::desk();
    }
    if (o.out) cfg.output_dir = *o.out;
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Preset used when no config file is given")
        ->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--out", o.out, "Run directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
    slowtransfer::configure_allocator();
    CLI::App app{"Transfer of slow features between reaching tasks"};
    app.require_subcommand(1);
    Options o;

    using Command = void (*)(const ex::ExperimentConfig&, std::ostream&);
    std::vector<std::pair<CLI::App*, Command>> commands{
        {app.add_subcommand("train-source", "Train the source DQN on the primary task"), ex::cmd_train_source},
        {app.add_subcommand("extract", "Record rollouts and fit PCA and SFA"), ex::cmd_extract},
        {app.add_subcommand("transfer-matrix", "Train targets on the secondary task for every condition"),
         ex::cmd_transfer_matrix},
        {app.add_subcommand("analyze", "Correlations and response heatmaps"), ex::cmd_analyze},
    };
    for (auto& [sub, _] : commands) add_common(sub, o);

    auto* print = app.add_subcommand("print-config", "Print the resolved config as JSON");
    add_common(print, o);
    std::string verify_dir;
    auto* verify = app.add_subcommand("verify", "Check artifact checksums against the manifest");
    verify->add_option("dir", verify_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (verify->parsed()) {
            const auto bad = ex::verify_manifest(verify_dir);
            for (const auto& p : bad) std::cout << "mismatch: " << p << '\n';
            std::cout << (bad.empty() ? "all artifacts match\n" : "manifest check failed\n");
            return bad.empty() ? kOk : kRuntimeError;
        }
        const auto cfg = resolve(o);
        if (print->parsed()) {
            std::cout << ex::to_json(cfg).dump(2) << '\n';
            return kOk;
        }
        for (auto& [sub, run] : commands) {
            if (sub->parsed()) run(cfg, std::cout);
        }
    } catch (const slowtransfer::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kOk;
}
