#include "mimesim/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace mimesim {
namespace {

// Strip directories and a trailing extension: "configs/demo.cfg" -> "demo".
std::string stem_of(const std::string& path) {
    auto slash = path.find_last_of("/\\");
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
    return base.empty() ? "run" : base;
}

struct CommonOpts {
    std::string config_arg;
    std::string out_override;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    int threads_override = 0;
    bool no_plot = false;
    bool print_cfg = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("config", o.config_arg, "config file or bundled scenario name")->required();
    sub->add_option("--seed", o.seed_override, "override run.seed")
        ->each([&o](const std::string&) { o.seed_given = true; });
    sub->add_option("--out", o.out_override, "output directory (default: <config>_out)");
    sub->add_option("--threads", o.threads_override, "override run.threads");
    sub->add_flag("--no-plot", o.no_plot, "skip SVG plots");
    sub->add_flag("--print-config", o.print_cfg, "print the canonical config and exit");
}

ExperimentConfig prepare(const CommonOpts& o) {
    ExperimentConfig cfg = resolve_config(o.config_arg);
    if (o.seed_given) {
        cfg.seed = o.seed_override;
        cfg.seed_set = true;
    }
    if (!o.out_override.empty()) cfg.out_dir = o.out_override;
    if (cfg.out_dir.empty()) cfg.out_dir = stem_of(o.config_arg) + "_out";
    if (o.threads_override > 0) cfg.threads = o.threads_override;
    if (o.no_plot) cfg.plot = false;
    return cfg;
}

void report(const ResultTable& table, const ExperimentConfig& cfg) {
    write_outputs(table, cfg);
    std::cout << table.summary_csv;
    std::cout << "wrote " << cfg.out_dir << "/results.csv";
    if (!table.oracle_csv.empty()) std::cout << " and oracle.csv";
    std::cout << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"deterministic federated optimization simulator"};
    app.require_subcommand(1);

    CommonOpts run_o, sweep_o, oracle_o;
    std::string grid_file;

    CLI::App* run_cmd = app.add_subcommand("run", "run every [algo] entry of a config");
    add_common(run_cmd, run_o);
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "cross-product over the [grid] section");
    add_common(sweep_cmd, sweep_o);
    sweep_cmd->add_option("--grid", grid_file, "grid file overriding the config's [grid]");
    CLI::App* oracle_cmd =
        app.add_subcommand("oracle", "run and emit reduction/drift oracle rows");
    add_common(oracle_cmd, oracle_o);
    CLI::App* list_cmd = app.add_subcommand("list", "list bundled scenarios");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (list_cmd->parsed()) {
            for (const auto& [name, _] : bundled_scenarios()) std::cout << name << "\n";
            return 0;
        }
        if (run_cmd->parsed()) {
            ExperimentConfig cfg = prepare(run_o);
            if (run_o.print_cfg) {
                std::cout << print_config(cfg);
                return 0;
            }
            report(run_experiment(cfg), cfg);
            return 0;
        }
        if (sweep_cmd->parsed()) {
            ExperimentConfig cfg = prepare(sweep_o);
            if (!grid_file.empty()) cfg.grid = parse_grid_text_file(grid_file);
            if (sweep_o.print_cfg) {
                std::cout << print_config(cfg);
                return 0;
            }
            report(sweep(cfg), cfg);
            return 0;
        }
        if (oracle_cmd->parsed()) {
            ExperimentConfig cfg = prepare(oracle_o);
            if (cfg.oracle_every < 1) cfg.oracle_every = 1;
            if (oracle_o.print_cfg) {
                std::cout << print_config(cfg);
                return 0;
            }
            ResultTable table = run_experiment(cfg);
            write_outputs(table, cfg);
            if (table.oracle_csv.empty()) {
                std::cerr << "no oracle rows: the oracles cover mime and mimelite rounds "
                             "without split communication\n";
                return 1;
            }
            std::cout << table.oracle_csv;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mimesim
