#pragma once

#include "mimesim/base_opt.hpp"
#include "mimesim/problems.hpp"

#include <string>
#include <vector>

namespace mimesim {

// Federated optimizers simulated at desk scale. The mime family keeps the
// base optimizer's statistics at the server and applies them *frozen* during
// local steps; the fedavg family runs plain (proximal) SGD locally and feeds
// the pseudo-gradient x - mean(y_i) to a server-side base optimizer.
enum class Algorithm {
    Mime,
    MimeLite,
    MimeMvr,
    MimeLiteMvr,
    FedAvg,
    FedProx,
    Scaffold,
    LocMime,
    ServerOnly,
};

std::string to_string(Algorithm algo);
Algorithm algorithm_from_string(const std::string& name);

// Does the algorithm consume a (u_step, v_step) base optimizer?
bool uses_base_optimizer(Algorithm algo);

enum class BatchingMode { Steps, Epochs };
enum class MvrAnchor { Prev, PrevPrev };
enum class CvSampling { SameSample, IndependentSample };

struct AlgoConfig {
    Algorithm algorithm = Algorithm::Mime;
    std::string name;  // CSV label; empty -> canonical algorithm name

    BaseOptConfig base;
    double eta = 0.1;          // client step size
    int local_steps = 1;       // K: minibatch steps, or epochs in Epochs mode
    BatchingMode batching = BatchingMode::Steps;
    int batch_size = 0;        // 0 = full local batch
    int clients_per_round = 0; // S; 0 = full participation
    WeightMode weighting = WeightMode::Uniform;

    // Mime family options.
    CvSampling cv_sampling = CvSampling::SameSample;
    bool split_communication = false;  // halve uplink: one object per client

    // FedAvg family options.
    double server_lr = 1.0;
    double prox_mu = 0.0;  // FedProx proximal strength

    // Momentum-variance-reduction options.
    double mvr_a = 0.1;
    MvrAnchor mvr_anchor = MvrAnchor::PrevPrev;
    int mvr_warmup_rounds = 1;  // T0 rounds of gradient averaging for m0

    std::string label() const;  // CSV/report label
};

struct ServerState {
    Vec x;
    OptimizerState opt;  // server-held base-optimizer statistics

    // SCAFFOLD control variates.
    Vec c_server;
    std::vector<Vec> c_clients;

    // Momentum variance reduction.
    Vec m;
    Vec x_prev;           // previous round's starting point (x0 on round one)
    bool warmed_up = false;

    int round_index = 0;  // rounds completed
};

ServerState init_server_state(const AlgoConfig& cfg, const Population& pop, const Vec& x0);

// One local step recorded for the oracles: the same-batch gradient pair at
// the evolving iterate and at the round anchor x.
struct ClientTraceStep {
    int client = 0;  // universe index
    int step = 0;
    Vec grad_y;
    Vec grad_x;
    double dist_sq = 0.0;  // ||y_{k-1} - x||^2 before the step
};

struct RoundTrace {
    Vec x_start;
    Vec control_variate;  // c broadcast this round (empty when unused)
    OptimizerState stats_used;
    std::vector<int> sampled;
    std::vector<double> weights;              // per sampled client
    std::vector<Vec> client_full_grad_at_x;   // per sampled client
    std::vector<ClientTraceStep> steps;
    int steps_per_client = 0;  // expanded step count (epochs mode multiplies)
    bool epoch_aligned = false;
    double eta = 0.0;
};

struct RoundRecord {
    double f_value = 0.0;          // population loss at the new x
    double grad_norm_sq = 0.0;     // ||grad f(new x)||^2
    double drift = 0.0;            // mean over (i, k) of ||y_{i,k-1} - x||^2
    double momentum_err_sq = 0.0;  // MVR: ||m_new - grad f(x_start)||^2, else 0
    long comm_down = 0;            // floats sent server -> clients this round
    long comm_up = 0;              // floats sent clients -> server this round
};

// Per-client, per-round communication volume in floats for dimension d.
// In split mode the uplink is one object (d floats) per client; the down
// figure then refers to the update-group clients (the gradient group
// receives only x).
struct CommCost {
    long down = 0;
    long up = 0;
};
CommCost comm_cost(const AlgoConfig& cfg, Eigen::Index d);

// Advance one communication round. round_rng must be the dedicated stream
// for this round (see run_rounds for the labeling convention); threads > 1
// runs client work concurrently with a deterministic ordered reduction.
// When trace is non-null and the algorithm is Mime or MimeLite, per-step
// gradient pairs are recorded for the oracles.
RoundRecord run_round(const AlgoConfig& cfg, ServerState& state, const Population& pop,
                      RngStream round_rng, int threads = 1, RoundTrace* trace = nullptr);

// Initialize the MVR momentum by averaging full gradients at state.x over
// mvr_warmup_rounds rounds of clients_per_round clients, walking a shuffled
// universe without replacement across rounds. With T0 * S = N every client
// contributes exactly once and m0 equals the population gradient exactly.
void mvr_warmup(const AlgoConfig& cfg, ServerState& state, const Population& pop,
                RngStream warmup_rng);

// Run `rounds` rounds with the standard stream labels: warmup uses
// run_rng.child(0), round t (0-based) uses run_rng.child(t + 1). Identical
// labels across algorithms make noise realizations comparable head-to-head.
std::vector<RoundRecord> run_rounds(const AlgoConfig& cfg, ServerState& state,
                                    const Population& pop, RngStream run_rng, int rounds,
                                    int threads = 1);

// Pure pieces of the client update rules, exposed for direct verification.

// Mime's variance-reduced local gradient: g(y; batch) - g(x; batch) + c.
Vec mime_corrected_gradient(const Client& client, const Vec& y, const Vec& x,
                            std::span<const int> batch, const Vec& c);

// FedProx local direction: g + prox_mu (y - x).
Vec fedprox_direction(const Vec& g, const Vec& y, const Vec& x, double prox_mu);

// MVR local direction:
//   a (g_y - g_anchor + c) + (1-a) m + (1-a) (g_y - g_anchor).
Vec mvr_client_direction(double a, const Vec& grad_y, const Vec& grad_anchor, const Vec& c,
                         const Vec& m);

// MVR server momentum:
//   m' = a g_cur + (1-a) m + (1-a) (g_cur - g_prev).
Vec mvr_momentum_update(double a, const Vec& grad_cur, const Vec& grad_prev, const Vec& m);

// Same rule from per-client gradient lists (plain sampled means); the lists
// must cover the same clients in the same order.
Vec mvr_momentum_update(double a, std::span<const Vec> grads_cur,
                        std::span<const Vec> grads_prev, const Vec& m);

// Constant-free theoretical step-size schedules, every hidden constant set
// to 1 and clipped to the validity caps (eta_tilde <= 1/(2LB) for base-
// optimizer algorithms; K >= L/delta reported via k_large_enough).
struct TheoryInputs {
    double l_smooth = 1.0;
    double mu = 0.0;          // > 0 selects the PL schedule for base-opt algos
    double delta = 0.0;
    double g_diversity_sq = 0.0;  // G^2
    double noise_sq = 0.0;        // sigma^2
    double f_gap = 1.0;           // F = f(x0) - f*
    double h_bound = 1.0;         // H: gradient-norm bound for the adam schedule
    int clients_per_round = 1;
    int local_steps = 1;
    int rounds = 1;
};

struct TheorySchedule {
    double eta = 0.0;
    double mvr_a = 0.0;        // only for the MVR algorithms
    bool k_large_enough = true;  // K >= L/delta
};

TheorySchedule theory_schedule(const AlgoConfig& cfg, const TheoryInputs& in);

}  // namespace mimesim
