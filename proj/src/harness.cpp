#include "mimesim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mimesim {
namespace {

// Stream labels hanging off the root seed. Population, x0 and the run streams
// are separated so changing one dial never perturbs the others.
constexpr std::uint64_t kPopulationLabel = 1;
constexpr std::uint64_t kX0Label = 2;
constexpr std::uint64_t kRunLabel = 3;  // then .child(cell_index)
constexpr std::uint64_t kLsmoothProbeLabel = 4;
constexpr std::uint64_t kDeltaProbeLabel = 5;

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool is_mvr_algo(Algorithm a) {
    return a == Algorithm::MimeMvr || a == Algorithm::MimeLiteMvr;
}

bool is_mime_or_lite(Algorithm a) { return a == Algorithm::Mime || a == Algorithm::MimeLite; }

Vec initial_point(const ExperimentConfig& cfg, const Population& pop, RngStream rng) {
    const int d = static_cast<int>(pop.dim());
    switch (cfg.x0_mode) {
        case X0Mode::Zeros:
            return Vec::Zero(d);
        case X0Mode::Gauss:
            return cfg.x0_scale * rng.normal_vec(d);
        case X0Mode::Offset: {
            auto opt = pop.global_optimum(WeightMode::Uniform);
            if (!opt) throw std::runtime_error("x0 = offset needs a problem with a closed-form optimum");
            Vec dir = rng.normal_vec(d);
            double n = dir.norm();
            if (n == 0.0) {
                dir.setZero();
                dir[0] = 1.0;
            } else {
                dir /= n;
            }
            return *opt + cfg.x0_scale * dir;
        }
    }
    throw std::logic_error("unreachable x0 mode");
}

struct OracleRow {
    std::string kind;
    std::string algo;
    int t = 0;
    double f_value = 0.0;
    double grad_norm_sq = 0.0;
    double drift = 0.0;
    double momentum_err_sq = 0.0;
};

int effective_local_steps(const AlgoConfig& a, const Population& pop) {
    if (a.batching == BatchingMode::Steps || pop.num_clients() == 0) return a.local_steps;
    int n = pop.clients.front()->num_samples();
    int b = a.batch_size > 0 ? std::min(a.batch_size, n) : n;
    return a.local_steps * ((n + b - 1) / b);
}

struct CellRun {
    AlgoRunResult result;
    std::vector<OracleRow> oracle_rows;
};

CellRun run_single(const ExperimentConfig& cfg, const AlgoConfig& algo_in, const Population& pop,
                   const Vec& x0, RngStream run_rng, const std::optional<TheoryInputs>& theory,
                   int threads) {
    AlgoConfig algo = algo_in;
    if (theory) {
        TheoryInputs in = *theory;
        in.clients_per_round = algo.clients_per_round > 0 ? algo.clients_per_round : pop.num_clients();
        in.local_steps = effective_local_steps(algo, pop);
        in.rounds = cfg.rounds;
        TheorySchedule sched = theory_schedule(algo, in);
        algo.eta = sched.eta;
        if (is_mvr_algo(algo.algorithm)) algo.mvr_a = sched.mvr_a;
        if (!sched.k_large_enough)
            std::cerr << "note: " << algo.label()
                      << ": local_steps is below L/delta; the theory step size is extrapolating\n";
    }

    CellRun out;
    out.result.label = algo.label();
    ServerState state = init_server_state(algo, pop, x0);
    if (is_mvr_algo(algo.algorithm) && !state.warmed_up) {
        mvr_warmup(algo, state, pop, run_rng.child(0));
    }

    const bool can_oracle =
        cfg.oracle_every > 0 && is_mime_or_lite(algo.algorithm) && !algo.split_communication;
    for (int t = 0; t < cfg.rounds; ++t) {
        RngStream round_rng = run_rng.child(static_cast<std::uint64_t>(t) + 1);
        RoundRecord rec;
        if (can_oracle && (t + 1) % cfg.oracle_every == 0) {
            // Replay the upcoming round on a copy, then advance for real with
            // tracing; both consume the identical stream, so they see the
            // same sampled clients and batches.
            ReductionReport rep = reduction_oracle(algo, state, pop, round_rng, threads);
            RoundTrace trace;
            rec = run_round(algo, state, pop, round_rng, threads, &trace);
            DriftTrace dt = drift_trace(algo, trace);
            out.oracle_rows.push_back({"reduction", out.result.label, t + 1, rep.max_abs_deviation,
                                       rep.e_t.squaredNorm(), dt.eps_k, rep.eta_tilde});
            if (cfg.trace_drift) {
                out.oracle_rows.push_back({"drift", out.result.label, t + 1, dt.eps_k,
                                           dt.mime_bound_rhs, dt.cv_norm_sq, dt.eta_tilde});
            }
        } else {
            rec = run_round(algo, state, pop, round_rng, threads);
        }
        out.result.records.push_back(rec);
        out.result.total_comm_down += rec.comm_down;
        out.result.total_comm_up += rec.comm_up;
        if (!std::isfinite(rec.f_value) || !std::isfinite(rec.grad_norm_sq) || !all_finite(state.x)) {
            out.result.aborted = true;  // the row just pushed is the flagged one
            break;
        }
    }

    if (!out.result.records.empty()) {
        out.result.final_f = out.result.records.back().f_value;
        out.result.final_grad_norm_sq = out.result.records.back().grad_norm_sq;
    }

    // Rounds until f - f* falls under 1% of the initial gap (when f* is known).
    auto xs = pop.global_optimum(algo.weighting);
    if (xs && !out.result.aborted) {
        double f_star = pop.population_loss(*xs, algo.weighting);
        double f0 = pop.population_loss(x0, algo.weighting);
        double target = f_star + 0.01 * (f0 - f_star);
        if (f0 > f_star) {
            for (std::size_t i = 0; i < out.result.records.size(); ++i) {
                if (out.result.records[i].f_value <= target) {
                    out.result.rounds_to_target = static_cast<int>(i) + 1;
                    break;
                }
            }
        }
    }
    return out;
}

struct Cell {
    std::vector<AlgoConfig> algos;  // every [algo] entry with overrides applied
    std::string suffix;             // "[eta=0.1]" or empty
};

std::vector<Cell> expand_grid(const ExperimentConfig& cfg) {
    std::vector<Cell> cells;
    if (cfg.grid.empty()) {
        cells.push_back({cfg.algos, ""});
        return cells;
    }
    std::vector<std::string> keys;
    std::size_t total = 1;
    for (const auto& [k, vals] : cfg.grid) {
        keys.push_back(k);
        total *= vals.size();
    }
    std::vector<std::size_t> idx(keys.size(), 0);
    while (true) {
        Cell cell;
        std::string suffix;
        if (total > 1) {
            suffix += '[';
            for (std::size_t j = 0; j < keys.size(); ++j) {
                if (j) suffix += ',';
                suffix += keys[j] + "=" + cfg.grid.at(keys[j])[idx[j]];
            }
            suffix += ']';
        }
        for (const AlgoConfig& base : cfg.algos) {
            AlgoConfig a = base;
            for (std::size_t j = 0; j < keys.size(); ++j)
                apply_algo_override(a, keys[j], cfg.grid.at(keys[j])[idx[j]]);
            if (!suffix.empty()) a.name = (base.name.empty() ? base.label() : base.name) + suffix;
            cell.algos.push_back(std::move(a));
        }
        cell.suffix = suffix;
        cells.push_back(std::move(cell));
        std::size_t j = 0;
        for (; j < keys.size(); ++j) {
            if (++idx[j] < cfg.grid.at(keys[j]).size()) break;
            idx[j] = 0;
        }
        if (j == keys.size()) break;
    }
    return cells;
}

ResultTable run_cells(const ExperimentConfig& cfg, const std::vector<Cell>& cells, bool mark_best) {
    RngStream root(cfg.seed);
    Population pop = build_population(cfg.problem, root.child(kPopulationLabel));
    const Vec x0 = initial_point(cfg, pop, root.child(kX0Label));

    std::optional<TheoryInputs> theory;
    if (cfg.theory_mode) {
        TheoryInputs in;
        in.l_smooth = estimate_l_smooth(pop, root.child(kLsmoothProbeLabel));
        in.delta = estimate_delta(pop, root.child(kDeltaProbeLabel));
        in.g_diversity_sq = estimate_gradient_diversity_sq(pop, x0, WeightMode::Uniform);
        in.noise_sq = estimate_noise_sq(pop, x0);
        try {
            in.mu = estimate_pl_constant(pop);
        } catch (const std::exception&) {
            in.mu = 0.0;
        }
        double f0 = pop.population_loss(x0, WeightMode::Uniform);
        auto xs = pop.global_optimum(WeightMode::Uniform);
        double f_star = xs ? pop.population_loss(*xs, WeightMode::Uniform) : 0.0;
        in.f_gap = std::max(f0 - f_star, 1e-12);
        in.h_bound =
            std::sqrt(in.g_diversity_sq) + pop.population_gradient(x0, WeightMode::Uniform).norm();
        theory = in;
    }

    // Each cell gets its own stream child; within a cell every algorithm sees
    // the identical stream so head-to-head noise realizations match.
    std::vector<std::vector<CellRun>> by_cell(cells.size());
    auto run_cell = [&](std::size_t ci, int threads_inside) {
        RngStream cell_rng = root.child(kRunLabel).child(ci);
        std::vector<CellRun> runs;
        runs.reserve(cells[ci].algos.size());
        for (const AlgoConfig& a : cells[ci].algos)
            runs.push_back(run_single(cfg, a, pop, x0, cell_rng, theory, threads_inside));
        return runs;
    };

    if (cells.size() > 1 && cfg.threads > 1) {
        int workers = std::min<int>(cfg.threads, static_cast<int>(cells.size()));
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> futs;
        futs.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            futs.push_back(std::async(std::launch::async, [&] {
                for (std::size_t ci = next.fetch_add(1); ci < cells.size(); ci = next.fetch_add(1))
                    by_cell[ci] = run_cell(ci, 1);
            }));
        }
        for (auto& f : futs) f.get();
    } else {
        for (std::size_t ci = 0; ci < cells.size(); ++ci) by_cell[ci] = run_cell(ci, cfg.threads);
    }

    ResultTable table;
    if (auto xs = pop.global_optimum(WeightMode::Uniform))
        table.f_star = pop.population_loss(*xs, WeightMode::Uniform);

    std::ostringstream csv, oracle, summary;
    csv << "algo,t,f_value,grad_norm_sq,drift,momentum_err_sq,comm_down,comm_up\n";
    oracle << "kind,algo,t,f_value,grad_norm_sq,drift,momentum_err_sq,comm_down,comm_up\n";
    bool any_oracle = false;
    for (const auto& cell_runs : by_cell) {
        for (const CellRun& run : cell_runs) {
            const AlgoRunResult& r = run.result;
            for (std::size_t i = 0; i < r.records.size(); ++i) {
                const RoundRecord& rec = r.records[i];
                csv << r.label << ',' << (i + 1) << ',' << fmt17(rec.f_value) << ','
                    << fmt17(rec.grad_norm_sq) << ',' << fmt17(rec.drift) << ','
                    << fmt17(rec.momentum_err_sq) << ',' << rec.comm_down << ',' << rec.comm_up
                    << '\n';
            }
            for (const OracleRow& row : run.oracle_rows) {
                any_oracle = true;
                oracle << row.kind << ',' << row.algo << ',' << row.t << ',' << fmt17(row.f_value)
                       << ',' << fmt17(row.grad_norm_sq) << ',' << fmt17(row.drift) << ','
                       << fmt17(row.momentum_err_sq) << ",0,0\n";
            }
            table.runs.push_back(r);
        }
    }

    // Best cell per base algorithm by final f-value; aborted runs never win.
    std::vector<bool> best(table.runs.size(), false);
    if (mark_best && !table.runs.empty()) {
        std::size_t per_cell = cells.front().algos.size();
        for (std::size_t a = 0; a < per_cell; ++a) {
            std::size_t winner = table.runs.size();
            double best_f = std::numeric_limits<double>::infinity();
            for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                std::size_t r = ci * per_cell + a;
                if (table.runs[r].aborted) continue;
                if (table.runs[r].final_f < best_f) {
                    best_f = table.runs[r].final_f;
                    winner = r;
                }
            }
            if (winner < table.runs.size()) best[winner] = true;
        }
    } else {
        for (std::size_t r = 0; r < table.runs.size(); ++r) best[r] = !table.runs[r].aborted;
    }

    summary << "algo,final_f,final_gap,final_grad_norm_sq,rounds_to_target,total_comm_down,"
               "total_comm_up,aborted,best\n";
    for (std::size_t r = 0; r < table.runs.size(); ++r) {
        const AlgoRunResult& run = table.runs[r];
        double gap = table.f_star ? run.final_f - *table.f_star
                                  : std::numeric_limits<double>::quiet_NaN();
        summary << run.label << ',' << fmt17(run.final_f) << ',' << fmt17(gap) << ','
                << fmt17(run.final_grad_norm_sq) << ',' << run.rounds_to_target << ','
                << run.total_comm_down << ',' << run.total_comm_up << ',' << (run.aborted ? 1 : 0)
                << ',' << (best[r] ? 1 : 0) << '\n';
    }

    table.csv = csv.str();
    if (any_oracle) table.oracle_csv = oracle.str();
    table.summary_csv = summary.str();
    return table;
}

}  // namespace

Population build_population(const ProblemConfig& problem, RngStream rng) {
    if (problem.kind == "quadratic") return make_quadratic_population(problem.quadratic, rng);
    if (problem.kind == "logistic") return make_logistic_population(problem.logistic, rng);
    if (problem.kind == "explicit_quadratic")
        return make_explicit_quadratic(problem.explicit_hessians, problem.explicit_targets);
    if (problem.kind == "file") {
        std::ifstream probe(problem.path);
        if (!probe) throw std::runtime_error("cannot open problem file: " + problem.path);
        std::string first_word;
        probe >> first_word;
        if (first_word == "mimesim-population") return load_population(problem.path);
        ExperimentConfig inner = load_config_file(problem.path);
        if (inner.problem.kind == "file")
            throw std::runtime_error("problem.path: nested kind = file is not supported");
        return build_population(inner.problem, rng);
    }
    throw std::invalid_argument("config: problem.kind: unknown kind '" + problem.kind + "'");
}

ResultTable run_experiment(const ExperimentConfig& cfg) {
    ExperimentConfig plain = cfg;
    plain.grid.clear();
    return run_cells(plain, expand_grid(plain), false);
}

ResultTable sweep(const ExperimentConfig& cfg) {
    if (cfg.grid.empty())
        throw std::invalid_argument("config: grid: sweep needs a [grid] section or --grid file");
    return run_cells(cfg, expand_grid(cfg), true);
}

void write_outputs(const ResultTable& table, const ExperimentConfig& cfg) {
    if (cfg.out_dir.empty())
        throw std::invalid_argument("config: run.out: no output directory set");
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream out(fs::path(cfg.out_dir) / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (fs::path(cfg.out_dir) / name).string());
        out << content;
    };
    write("results.csv", table.csv);
    write("summary.csv", table.summary_csv);
    if (!table.oracle_csv.empty()) write("oracle.csv", table.oracle_csv);
    write("config.txt", print_config(cfg));

    if (!cfg.plot) return;
    const double tiny = 1e-300;
    std::vector<PlotSeries> fsub, gnorm;
    for (const AlgoRunResult& run : table.runs) {
        PlotSeries fs_series{run.label, {}}, gn_series{run.label, {}};
        for (std::size_t i = 0; i < run.records.size(); ++i) {
            double t = static_cast<double>(i + 1);
            double f = run.records[i].f_value;
            double g = run.records[i].grad_norm_sq;
            if (table.f_star) {
                double gap = f - *table.f_star;
                if (std::isfinite(gap) && gap > 0) fs_series.points.emplace_back(t, std::log10(gap + tiny));
            } else if (std::isfinite(f)) {
                fs_series.points.emplace_back(t, f);
            }
            if (std::isfinite(g) && g > 0) gn_series.points.emplace_back(t, std::log10(g));
        }
        if (!fs_series.points.empty()) fsub.push_back(std::move(fs_series));
        if (!gn_series.points.empty()) gnorm.push_back(std::move(gn_series));
    }
    if (!fsub.empty())
        write("fsubopt.svg", render_line_plot("loss vs round",
                                              table.f_star ? "log10(f - f*)" : "f", fsub));
    if (!gnorm.empty())
        write("gradnorm.svg", render_line_plot("gradient norm vs round", "log10 ||grad f||^2", gnorm));
}

}  // namespace mimesim
