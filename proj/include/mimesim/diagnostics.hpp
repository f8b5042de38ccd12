#pragma once

#include "mimesim/fed.hpp"

#include <functional>

namespace mimesim {

// Numerical oracles for the framework's core identities: every quantity here
// is recomputed from recorded per-step gradients, independently of the round
// implementation under test, so the checks hold for any loss family.

struct ReductionReport {
    Vec e_t;            // measured drift error
    Vec surrogate_x;    // centralized one-step iterate
    double max_abs_deviation = 0.0;
    double eta_tilde = 0.0;  // K * eta (expanded step count in epochs mode)
};

// Replays one Mime/MimeLite round on a copy of the state with tracing, then
// checks that the round equals one centralized base-optimizer step of size
// eta_tilde on c + e_t, where
//   e_t = mean over (client, step) of grad f_i(y_{k-1}; batch) - grad f_i(x; batch).
// Refuses split rounds and batch schedules whose epoch sums do not
// telescope (for those the identity does not hold as an identity).
ReductionReport reduction_oracle(const AlgoConfig& cfg, const ServerState& state,
                                 const Population& pop, RngStream round_rng,
                                 int threads = 1);

struct DriftTrace {
    std::vector<double> per_step_dist_sq;  // ||y_{i,k-1} - x||^2 in trace order
    double eps_k = 0.0;                    // their mean: the drift epsilon_K
    double cv_norm_sq = 0.0;               // ||c||^2 this round
    double eta_tilde = 0.0;
    double mime_bound_rhs = 0.0;  // 18 B^2 eta_tilde^2 ||c||^2
};

// Exact drift statistics of a traced round plus the closed-form bound RHS.
DriftTrace drift_trace(const AlgoConfig& cfg, const RoundTrace& trace);

// Drift-bound right-hand sides, exposed for the acceptance checks.
double mime_drift_bound(double lipschitz_b, double eta_tilde, double cv_norm_sq);
double mimelite_drift_bound(double lipschitz_b, double eta_tilde, double grad_norm_sq,
                            double g_diversity_sq, double noise_sq, int local_steps);

// || m - grad f(x) ||^2.
double momentum_error(const Vec& m, const Vec& x, const Population& pop,
                      WeightMode mode = WeightMode::Uniform);

// Visit every k-subset of {0..n-1} in lexicographic order.
void for_each_subset(int n, int k, const std::function<void(std::span<const int>)>& visit);

struct BiasProbeReport {
    double lhs = 0.0;
    double rhs = 0.0;
    bool enumerated = true;  // false: Monte-Carlo expectation over subsets
};

// Expected squared aggregation bias of the Mime update direction at frozen
// local iterates ys (one per universe client), as an expectation over the
// random client subset of size subset_size:
//   lhs = E_S || mean_{i in S} [grad f_i(y_i) - grad f_i(x) + c_S] - mean_{i in S} grad f(y_i) ||^2
//   rhs = 2 delta^2 mean_i ||y_i - x||^2 + 2 G^2 / S.
// Exact subset enumeration when feasible, otherwise Monte Carlo.
BiasProbeReport mime_bias_probe(const Population& pop, const Vec& x, std::span<const Vec> ys,
                                int subset_size, RngStream rng);

// Same for the uncorrected MimeLite direction with single-sample gradients:
//   lhs = E_S || mean_{i in S} [grad f_i(y_i) - grad f(y_i)] ||^2
//         + E_S (1/S^2) sum_{i in S} Var_zeta grad f_i(y_i; zeta)
//   rhs = 2 delta^2 mean_i ||y_i - x||^2 + 2 G^2 + sigma^2.
BiasProbeReport mimelite_bias_probe(const Population& pop, const Vec& x,
                                    std::span<const Vec> ys, int subset_size, RngStream rng);

}  // namespace mimesim
