#pragma once

#include "mimesim/diagnostics.hpp"
#include "mimesim/fed.hpp"
#include "mimesim/problems.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mimesim {

// Experiment configuration, parsed from a sectioned key = value text file.
// Grammar (see README for the full key list):
//   [problem]   one section: the problem family and its dials
//   [run]       one section: rounds, seed, output, tracing, theory mode
//   [algo]      one section per algorithm entry
//   [grid]      optional: parameter lists swept by the sweep command
// '#' and ';' start comments; values are whitespace-separated tokens.

struct ProblemConfig {
    std::string kind = "quadratic";  // quadratic | logistic | explicit_quadratic | file
    QuadraticSpec quadratic;
    LogisticSpec logistic;
    std::vector<Eigen::MatrixXd> explicit_hessians;
    std::vector<Vec> explicit_targets;
    std::string path;  // kind = file
};

enum class X0Mode { Zeros, Gauss, Offset };

struct ExperimentConfig {
    ProblemConfig problem;
    std::vector<AlgoConfig> algos;
    int rounds = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;  // the seed is mandatory: no environment entropy
    std::string out_dir;
    int threads = 1;
    X0Mode x0_mode = X0Mode::Zeros;
    double x0_scale = 1.0;
    bool trace_drift = true;
    int oracle_every = 0;  // emit oracle rows every k rounds; 0 = off
    bool theory_mode = false;
    bool plot = true;
    std::map<std::string, std::vector<std::string>> grid;
};

// Throws std::invalid_argument naming the offending field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical re-emission; parse(print_config(cfg)) reproduces cfg.
std::string print_config(const ExperimentConfig& cfg);

// Bundled scenario texts by name (drift_demo, reduction_check, scaling_S,
// mvr_vs_sgd, mini_sweep).
const std::map<std::string, std::string>& bundled_scenarios();

// Resolve a CLI argument: an existing file path wins, then a bundled name.
ExperimentConfig resolve_config(const std::string& path_or_name);

// Build the population for a config (kind = file is loaded and may nest once).
Population build_population(const ProblemConfig& problem, RngStream rng);

struct AlgoRunResult {
    std::string label;
    std::vector<RoundRecord> records;
    bool aborted = false;  // NaN/inf detected; records end with a flagged row
    double final_f = 0.0;
    double final_grad_norm_sq = 0.0;
    long total_comm_down = 0;
    long total_comm_up = 0;
    int rounds_to_target = -1;  // first round with f - f* <= 1% of f(x0) - f*
};

struct ResultTable {
    std::vector<AlgoRunResult> runs;
    std::optional<double> f_star;     // population optimum value when known
    std::string csv;                  // per-round records
    std::string oracle_csv;           // reduction/drift oracle rows; may be empty
    std::string summary_csv;          // one row per run
};

// Run every algorithm entry from identical (population, x0, streams).
ResultTable run_experiment(const ExperimentConfig& cfg);

// Cross-product of cfg.grid applied to every algorithm entry; the summary
// marks the best cell per base algorithm by final f-value (NaN excluded).
ResultTable sweep(const ExperimentConfig& cfg);

// Write results.csv / summary.csv / oracle.csv / plots / config.txt under
// cfg.out_dir (created if needed).
void write_outputs(const ResultTable& table, const ExperimentConfig& cfg);

// Static SVG line plot; one polyline per series over (round, value) points.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};
std::string render_line_plot(const std::string& title, const std::string& y_label,
                             const std::vector<PlotSeries>& series);

// Apply one algorithm key (e.g. "eta") with a textual value; used for grid
// overrides and CLI tweaks. Throws std::invalid_argument naming the field.
void apply_algo_override(AlgoConfig& a, const std::string& key, const std::string& value);

// Read a sweep grid from a file: either a [grid] section or bare
// `key = value ...` lines. Keys must be sweepable algorithm keys.
std::map<std::string, std::vector<std::string>> parse_grid_text_file(const std::string& path);

// Full command-line entry (run | sweep | oracle | list).
int run_cli(int argc, const char* const* argv);

}  // namespace mimesim
