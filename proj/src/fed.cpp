#include "mimesim/fed.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <initializer_list>
#include <limits>
#include <stdexcept>

namespace mimesim {

namespace {

// Stream labels within one round. Keeping them fixed across algorithms makes
// two algorithms with the same seed sample the same clients and batches,
// which is what the head-to-head equivalence checks rely on.
constexpr std::uint64_t kSamplingLabel = 0;
constexpr std::uint64_t kClientBlockLabel = 1;
constexpr std::uint64_t kCvSampleLabel = 2;
constexpr std::uint64_t kEpochLabelBase = 10000;

bool is_mvr(Algorithm a) {
    return a == Algorithm::MimeMvr || a == Algorithm::MimeLiteMvr;
}

bool is_mime_family(Algorithm a) {
    return a == Algorithm::Mime || a == Algorithm::MimeLite || a == Algorithm::LocMime;
}

bool is_fedavg_family(Algorithm a) {
    return a == Algorithm::FedAvg || a == Algorithm::FedProx || a == Algorithm::Scaffold;
}

struct BatchSchedule {
    std::vector<std::vector<int>> batches;  // one entry per local step
    bool aligned = true;                    // epoch sums telescope exactly
};

// Shuffled epoch partitions: each epoch is a fresh permutation of the local
// dataset cut into consecutive batch_size slices. In Steps mode exactly
// local_steps batches are taken; in Epochs mode local_steps full passes.
BatchSchedule make_batch_schedule(int n, const AlgoConfig& cfg, const RngStream& client_rng) {
    BatchSchedule out;
    const bool full = cfg.batch_size <= 0 || cfg.batch_size >= n;
    const int b = full ? n : cfg.batch_size;
    const int per_epoch = full ? 1 : (n + b - 1) / b;
    const int total = cfg.batching == BatchingMode::Steps ? cfg.local_steps
                                                          : cfg.local_steps * per_epoch;
    out.batches.reserve(static_cast<std::size_t>(total));
    if (full) {
        std::vector<int> all(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            all[static_cast<std::size_t>(i)] = i;
        }
        out.batches.assign(static_cast<std::size_t>(total), all);
        out.aligned = true;
        return out;
    }
    std::vector<int> perm;
    for (int k = 0; k < total; ++k) {
        const int epoch = k / per_epoch;
        const int pos = k % per_epoch;
        if (pos == 0) {
            perm = client_rng.child(kEpochLabelBase + static_cast<std::uint64_t>(epoch))
                       .permutation(n);
        }
        const int lo = pos * b;
        const int hi = std::min(n, lo + b);
        out.batches.emplace_back(perm.begin() + lo, perm.begin() + hi);
    }
    const bool divides = n % b == 0;
    out.aligned = cfg.batching == BatchingMode::Epochs ? divides
                                                       : (divides && total % per_epoch == 0);
    return out;
}

void validate(const AlgoConfig& cfg, const Population& pop, const ServerState& state) {
    const int n = pop.num_clients();
    if (cfg.eta < 0.0) {
        throw std::invalid_argument("algo config: eta must be >= 0");
    }
    if (cfg.local_steps < 0 || cfg.batch_size < 0) {
        throw std::invalid_argument("algo config: local_steps and batch_size must be >= 0");
    }
    if (cfg.clients_per_round < 0 || cfg.clients_per_round > n) {
        throw std::invalid_argument("algo config: clients_per_round exceeds the population");
    }
    if (cfg.split_communication && !(cfg.algorithm == Algorithm::Mime ||
                                     cfg.algorithm == Algorithm::MimeLite)) {
        throw std::invalid_argument("algo config: split communication is a Mime/MimeLite option");
    }
    if (cfg.split_communication && cfg.cv_sampling == CvSampling::IndependentSample) {
        throw std::invalid_argument(
            "algo config: split communication already dedicates a gradient group; "
            "combining it with independent control-variate sampling is not meaningful");
    }
    if (cfg.cv_sampling == CvSampling::IndependentSample && !is_mime_family(cfg.algorithm)) {
        throw std::invalid_argument(
            "algo config: independent control-variate sampling is a Mime-family option");
    }
    if (cfg.prox_mu < 0.0) {
        throw std::invalid_argument("algo config: prox_mu must be >= 0");
    }
    if (cfg.server_lr < 0.0) {
        throw std::invalid_argument("algo config: server_lr must be >= 0");
    }
    if (cfg.mvr_a < 0.0 || cfg.mvr_a > 1.0) {
        throw std::invalid_argument("algo config: mvr_a must lie in [0, 1]");
    }
    if (cfg.mvr_warmup_rounds < 1) {
        throw std::invalid_argument("algo config: mvr_warmup_rounds must be >= 1");
    }
    if (state.x.size() != pop.dim()) {
        throw std::invalid_argument("server state: dimension does not match the population");
    }
    if (cfg.algorithm == Algorithm::Scaffold &&
        state.c_clients.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("server state: scaffold needs one control variate per client");
    }
}

int resolve_s(const AlgoConfig& cfg, const Population& pop) {
    return cfg.clients_per_round <= 0 ? pop.num_clients() : cfg.clients_per_round;
}

// Run fn(i) for i in [0, count), possibly across threads. Results must be
// written to pre-sized slots so the reduction order never depends on timing.
template <typename F>
void parallel_for(int count, int threads, F&& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    const int workers = std::min(threads, count);
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&fn, w, workers, count] {
            for (int i = w; i < count; i += workers) {
                fn(i);
            }
        }));
    }
    for (auto& f : futures) {
        f.get();
    }
}

struct ClientOutcome {
    Vec y;
    double drift_sum = 0.0;
    int steps = 0;
    Vec c_refresh;  // scaffold: mean of the round's raw batch gradients
    std::vector<ClientTraceStep> trace;
};

ClientOutcome run_client(const AlgoConfig& cfg, const Client& cl, int uid, const Vec& x,
                         const OptimizerState& stats, const Vec& c, const Vec& m,
                         const Vec& anchor, const Vec& c_i, const Vec& c_srv,
                         RngStream client_rng, bool want_trace) {
    const Algorithm algo = cfg.algorithm;
    const BatchSchedule sched = make_batch_schedule(cl.num_samples(), cfg, client_rng);

    ClientOutcome out;
    out.y = x;
    out.steps = static_cast<int>(sched.batches.size());
    OptimizerState local_stats = stats;  // evolves only for LocMime
    Vec c_acc = Vec::Zero(x.size());

    for (int k = 0; k < out.steps; ++k) {
        const auto& batch = sched.batches[static_cast<std::size_t>(k)];
        const double dist_sq = (out.y - x).squaredNorm();
        out.drift_sum += dist_sq;

        Vec dir;
        Vec grad_y;
        Vec grad_x;
        switch (algo) {
            case Algorithm::Mime:
            case Algorithm::LocMime: {
                grad_y = cl.sample_gradient(out.y, batch);
                grad_x = cl.sample_gradient(x, batch);
                const Vec g = grad_y - grad_x + c;
                dir = u_step(cfg.base, g, local_stats);
                if (algo == Algorithm::LocMime) {
                    local_stats = v_step(cfg.base, g, local_stats);
                }
                break;
            }
            case Algorithm::MimeLite: {
                grad_y = cl.sample_gradient(out.y, batch);
                if (want_trace) {
                    grad_x = cl.sample_gradient(x, batch);
                }
                dir = u_step(cfg.base, grad_y, local_stats);
                break;
            }
            case Algorithm::MimeMvr: {
                const Vec gy = cl.sample_gradient(out.y, batch);
                const Vec ga = cl.sample_gradient(anchor, batch);
                dir = mvr_client_direction(cfg.mvr_a, gy, ga, c, m);
                break;
            }
            case Algorithm::MimeLiteMvr: {
                const Vec gy = cl.sample_gradient(out.y, batch);
                const Vec gx = cl.sample_gradient(x, batch);
                dir = cfg.mvr_a * gy + (1.0 - cfg.mvr_a) * m + (1.0 - cfg.mvr_a) * (gy - gx);
                break;
            }
            case Algorithm::FedAvg: {
                dir = cl.sample_gradient(out.y, batch);
                break;
            }
            case Algorithm::FedProx: {
                dir = fedprox_direction(cl.sample_gradient(out.y, batch), out.y, x, cfg.prox_mu);
                break;
            }
            case Algorithm::Scaffold: {
                const Vec g = cl.sample_gradient(out.y, batch);
                c_acc += g;
                dir = g - c_i + c_srv;
                break;
            }
            case Algorithm::ServerOnly:
                throw std::invalid_argument("run_client: server-only takes no local steps");
        }
        if (want_trace && (algo == Algorithm::Mime || algo == Algorithm::MimeLite)) {
            out.trace.push_back({uid, k, grad_y, grad_x, dist_sq});
        }
        out.y -= cfg.eta * dir;
    }
    if (algo == Algorithm::Scaffold && out.steps > 0) {
        out.c_refresh = c_acc / static_cast<double>(out.steps);
    } else if (algo == Algorithm::Scaffold) {
        out.c_refresh = c_i;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and small pure rules

std::string to_string(Algorithm algo) {
    switch (algo) {
        case Algorithm::Mime: return "mime";
        case Algorithm::MimeLite: return "mimelite";
        case Algorithm::MimeMvr: return "mimemvr";
        case Algorithm::MimeLiteMvr: return "mimelitemvr";
        case Algorithm::FedAvg: return "fedavg";
        case Algorithm::FedProx: return "fedprox";
        case Algorithm::Scaffold: return "scaffold";
        case Algorithm::LocMime: return "locmime";
        case Algorithm::ServerOnly: return "serveronly";
    }
    throw std::invalid_argument("to_string: unknown algorithm");
}

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "mime") return Algorithm::Mime;
    if (name == "mimelite") return Algorithm::MimeLite;
    if (name == "mimemvr") return Algorithm::MimeMvr;
    if (name == "mimelitemvr") return Algorithm::MimeLiteMvr;
    if (name == "fedavg") return Algorithm::FedAvg;
    if (name == "fedprox") return Algorithm::FedProx;
    if (name == "scaffold") return Algorithm::Scaffold;
    if (name == "locmime") return Algorithm::LocMime;
    if (name == "serveronly") return Algorithm::ServerOnly;
    throw std::invalid_argument("unknown algorithm '" + name + "'");
}

bool uses_base_optimizer(Algorithm algo) {
    return !is_mvr(algo);
}

std::string AlgoConfig::label() const {
    return name.empty() ? to_string(algorithm) : name;
}

Vec mime_corrected_gradient(const Client& client, const Vec& y, const Vec& x,
                            std::span<const int> batch, const Vec& c) {
    if (y.size() != x.size() || c.size() != x.size()) {
        throw std::invalid_argument("mime_corrected_gradient: dimension mismatch");
    }
    return client.sample_gradient(y, batch) - client.sample_gradient(x, batch) + c;
}

Vec fedprox_direction(const Vec& g, const Vec& y, const Vec& x, double prox_mu) {
    return g + prox_mu * (y - x);
}

Vec mvr_client_direction(double a, const Vec& grad_y, const Vec& grad_anchor, const Vec& c,
                         const Vec& m) {
    const Vec svrg = grad_y - grad_anchor;
    return a * (svrg + c) + (1.0 - a) * m + (1.0 - a) * svrg;
}

Vec mvr_momentum_update(double a, const Vec& grad_cur, const Vec& grad_prev, const Vec& m) {
    return a * grad_cur + (1.0 - a) * m + (1.0 - a) * (grad_cur - grad_prev);
}

Vec mvr_momentum_update(double a, std::span<const Vec> grads_cur,
                        std::span<const Vec> grads_prev, const Vec& m) {
    if (grads_cur.size() != grads_prev.size()) {
        throw std::invalid_argument("mvr_momentum_update: gradient list length mismatch");
    }
    return mvr_momentum_update(a, weighted_average(grads_cur), weighted_average(grads_prev), m);
}

// ---------------------------------------------------------------------------
// State and rounds

ServerState init_server_state(const AlgoConfig& cfg, const Population& pop, const Vec& x0) {
    if (x0.size() != pop.dim()) {
        throw std::invalid_argument("init_server_state: x0 dimension mismatch");
    }
    ServerState st;
    st.x = x0;
    const Eigen::Index d = pop.dim();
    if (uses_base_optimizer(cfg.algorithm)) {
        st.opt = init_state(cfg.base, d);
    }
    if (cfg.algorithm == Algorithm::Scaffold) {
        st.c_server = Vec::Zero(d);
        st.c_clients.assign(static_cast<std::size_t>(pop.num_clients()), Vec::Zero(d));
    }
    if (is_mvr(cfg.algorithm)) {
        st.m = Vec::Zero(d);
        st.x_prev = x0;
    }
    return st;
}

CommCost comm_cost(const AlgoConfig& cfg, Eigen::Index d) {
    const long dd = static_cast<long>(d);
    const long s = uses_base_optimizer(cfg.algorithm)
                       ? static_cast<long>(state_size(cfg.base, d))
                       : 0;
    switch (cfg.algorithm) {
        case Algorithm::Mime:
        case Algorithm::LocMime:
            return {2 * dd + s, cfg.split_communication ? dd : 2 * dd};
        case Algorithm::MimeLite:
            return {dd + s, cfg.split_communication ? dd : 2 * dd};
        case Algorithm::MimeMvr:
            return {4 * dd, 3 * dd};  // x, x_prev, m, c down; y and two grads up
        case Algorithm::MimeLiteMvr:
            return {3 * dd, 3 * dd};  // x, x_prev, m down; y and two grads up
        case Algorithm::FedAvg:
        case Algorithm::FedProx:
            return {dd, dd};
        case Algorithm::Scaffold:
            return {2 * dd, 2 * dd};
        case Algorithm::ServerOnly:
            return {dd, dd};
    }
    throw std::invalid_argument("comm_cost: unknown algorithm");
}

void mvr_warmup(const AlgoConfig& cfg, ServerState& state, const Population& pop,
                RngStream warmup_rng) {
    if (!is_mvr(cfg.algorithm)) {
        throw std::invalid_argument("mvr_warmup: not a momentum-variance-reduction algorithm");
    }
    validate(cfg, pop, state);
    const int n = pop.num_clients();
    const int s_count = resolve_s(cfg, pop);
    const int picks = cfg.mvr_warmup_rounds * s_count;

    // Walk a shuffled universe without replacement across warmup rounds,
    // reshuffling only when exhausted; with picks == n every client appears
    // exactly once and the average telescopes to the population gradient.
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(picks));
    std::vector<int> order;
    int pos = 0;
    std::uint64_t shuffle_idx = 0;
    for (int p = 0; p < picks; ++p) {
        if (pos == 0 || pos >= n) {
            order = warmup_rng.child(shuffle_idx++).permutation(n);
            pos = 0;
        }
        chosen.push_back(order[static_cast<std::size_t>(pos++)]);
    }
    std::stable_sort(chosen.begin(), chosen.end());

    const std::vector<double> all_weights = pop.client_weights(cfg.weighting);
    std::vector<Vec> grads;
    std::vector<double> weights;
    grads.reserve(chosen.size());
    weights.reserve(chosen.size());
    for (int uid : chosen) {
        grads.push_back(pop.clients[static_cast<std::size_t>(uid)]->full_gradient(state.x));
        weights.push_back(all_weights[static_cast<std::size_t>(uid)]);
    }
    state.m = weighted_average(grads, weights);
    state.warmed_up = true;
}

RoundRecord run_round(const AlgoConfig& cfg, ServerState& state, const Population& pop,
                      RngStream round_rng, int threads, RoundTrace* trace) {
    validate(cfg, pop, state);
    const Algorithm algo = cfg.algorithm;
    const Eigen::Index d = pop.dim();
    const int n_universe = pop.num_clients();
    const int s_count = resolve_s(cfg, pop);
    if (is_mvr(algo) && !state.warmed_up) {
        throw std::invalid_argument("run_round: momentum warmup has not run");
    }

    RngStream sampling_rng = round_rng.child(kSamplingLabel);
    const std::vector<int> sampled = sampling_rng.sample_without_replacement(n_universe, s_count);
    const std::vector<double> all_weights = pop.client_weights(cfg.weighting);
    std::vector<double> weights;
    weights.reserve(sampled.size());
    for (int uid : sampled) {
        weights.push_back(all_weights[static_cast<std::size_t>(uid)]);
    }

    const Vec x = state.x;
    const OptimizerState stats_in = state.opt;  // frozen during client work
    const Vec anchor = is_mvr(algo)
                           ? (cfg.mvr_anchor == MvrAnchor::PrevPrev ? state.x_prev : x)
                           : Vec();

    // Split mode: the first half of the sampled clients only report gradients
    // (they define c), the rest only run updates.
    const bool split = cfg.split_communication;
    const int split_grad_count = split ? s_count / 2 : 0;
    if (split && (split_grad_count < 1 || s_count - split_grad_count < 1)) {
        throw std::invalid_argument("run_round: split communication needs at least 2 clients");
    }
    const std::vector<int> update_set(sampled.begin() + split_grad_count, sampled.end());
    const std::vector<double> update_weights(weights.begin() + split_grad_count, weights.end());

    // Reference gradients. The control variate c is the weighted mean full
    // gradient over its reporting set; MVR also needs the sampled mean
    // gradients at the current and previous server iterates.
    Vec c;
    std::vector<Vec> update_full_grads;  // at x, for the update set
    Vec m_new;
    const bool needs_update_grads =
        is_mime_family(algo) || algo == Algorithm::ServerOnly || is_mvr(algo) ||
        trace != nullptr;
    if (needs_update_grads && !is_mvr(algo)) {
        update_full_grads.resize(update_set.size());
        parallel_for(static_cast<int>(update_set.size()), threads, [&](int i) {
            const int uid = update_set[static_cast<std::size_t>(i)];
            update_full_grads[static_cast<std::size_t>(i)] =
                pop.clients[static_cast<std::size_t>(uid)]->full_gradient(x);
        });
    }
    if (is_mime_family(algo) || algo == Algorithm::ServerOnly) {
        if (split) {
            std::vector<Vec> grad_grp(static_cast<std::size_t>(split_grad_count));
            std::vector<double> grad_w(weights.begin(), weights.begin() + split_grad_count);
            parallel_for(split_grad_count, threads, [&](int i) {
                const int uid = sampled[static_cast<std::size_t>(i)];
                grad_grp[static_cast<std::size_t>(i)] =
                    pop.clients[static_cast<std::size_t>(uid)]->full_gradient(x);
            });
            c = weighted_average(grad_grp, grad_w);
        } else if (cfg.cv_sampling == CvSampling::IndependentSample) {
            RngStream cv_rng = round_rng.child(kCvSampleLabel);
            const std::vector<int> cv_set =
                cv_rng.sample_without_replacement(n_universe, s_count);
            std::vector<Vec> cv_grads(cv_set.size());
            std::vector<double> cv_w;
            for (int uid : cv_set) {
                cv_w.push_back(all_weights[static_cast<std::size_t>(uid)]);
            }
            parallel_for(static_cast<int>(cv_set.size()), threads, [&](int i) {
                cv_grads[static_cast<std::size_t>(i)] =
                    pop.clients[static_cast<std::size_t>(cv_set[static_cast<std::size_t>(i)])]
                        ->full_gradient(x);
            });
            c = weighted_average(cv_grads, cv_w);
        } else {
            c = weighted_average(update_full_grads, update_weights);
        }
    }
    if (is_mvr(algo)) {
        std::vector<Vec> grads_cur(update_set.size());
        std::vector<Vec> grads_prev(update_set.size());
        parallel_for(static_cast<int>(update_set.size()), threads, [&](int i) {
            const auto& cl = pop.clients[static_cast<std::size_t>(update_set[static_cast<std::size_t>(i)])];
            grads_cur[static_cast<std::size_t>(i)] = cl->full_gradient(x);
            grads_prev[static_cast<std::size_t>(i)] = cl->full_gradient(state.x_prev);
        });
        const Vec g_cur = weighted_average(grads_cur, update_weights);
        const Vec g_prev = weighted_average(grads_prev, update_weights);
        if (algo == Algorithm::MimeMvr) {
            c = cfg.mvr_anchor == MvrAnchor::PrevPrev ? g_prev : g_cur;
        }
        m_new = mvr_momentum_update(cfg.mvr_a, g_cur, g_prev, state.m);
        if (trace == nullptr) {
            update_full_grads = std::move(grads_cur);
        } else {
            update_full_grads = grads_cur;
        }
    }

    // Local work.
    const bool want_trace = trace != nullptr;
    std::vector<ClientOutcome> outcomes(update_set.size());
    long total_steps = 0;
    double drift_sum = 0.0;
    if (algo != Algorithm::ServerOnly) {
        RngStream client_block = round_rng.child(kClientBlockLabel);
        parallel_for(static_cast<int>(update_set.size()), threads, [&](int i) {
            const int uid = update_set[static_cast<std::size_t>(i)];
            const Vec& c_i = algo == Algorithm::Scaffold
                                 ? state.c_clients[static_cast<std::size_t>(uid)]
                                 : c;
            outcomes[static_cast<std::size_t>(i)] = run_client(
                cfg, *pop.clients[static_cast<std::size_t>(uid)], uid, x, stats_in, c,
                state.m, anchor, c_i, state.c_server,
                client_block.child(static_cast<std::uint64_t>(uid)), want_trace);
        });
        for (const auto& oc : outcomes) {
            total_steps += oc.steps;
            drift_sum += oc.drift_sum;
        }
    }

    // Aggregation and server update.
    Vec x_new = x;
    switch (algo) {
        case Algorithm::Mime:
        case Algorithm::MimeLite:
        case Algorithm::LocMime: {
            if (total_steps > 0) {
                std::vector<Vec> ys;
                ys.reserve(outcomes.size());
                for (const auto& oc : outcomes) {
                    ys.push_back(oc.y);
                }
                x_new = weighted_average(ys, update_weights);
            }
            state.opt = v_step(cfg.base, c, state.opt);
            break;
        }
        case Algorithm::MimeMvr:
        case Algorithm::MimeLiteMvr: {
            if (total_steps > 0) {
                std::vector<Vec> ys;
                ys.reserve(outcomes.size());
                for (const auto& oc : outcomes) {
                    ys.push_back(oc.y);
                }
                x_new = weighted_average(ys, update_weights);
            }
            state.x_prev = x;
            state.m = m_new;
            break;
        }
        case Algorithm::FedAvg:
        case Algorithm::FedProx:
        case Algorithm::Scaffold: {
            std::vector<Vec> deltas;
            deltas.reserve(outcomes.size());
            for (const auto& oc : outcomes) {
                deltas.push_back(x - oc.y);
            }
            const Vec pseudo_grad = weighted_average(deltas, update_weights);
            x_new = x - cfg.server_lr * u_step(cfg.base, pseudo_grad, state.opt);
            state.opt = v_step(cfg.base, pseudo_grad, state.opt);
            if (algo == Algorithm::Scaffold) {
                Vec shift = Vec::Zero(d);
                for (std::size_t i = 0; i < update_set.size(); ++i) {
                    const int uid = update_set[i];
                    shift += outcomes[i].c_refresh - state.c_clients[static_cast<std::size_t>(uid)];
                    state.c_clients[static_cast<std::size_t>(uid)] = outcomes[i].c_refresh;
                }
                shift /= static_cast<double>(update_set.size());
                state.c_server +=
                    (static_cast<double>(s_count) / static_cast<double>(n_universe)) * shift;
            }
            break;
        }
        case Algorithm::ServerOnly: {
            x_new = x - cfg.eta * u_step(cfg.base, c, state.opt);
            state.opt = v_step(cfg.base, c, state.opt);
            break;
        }
    }

    if (trace != nullptr) {
        trace->x_start = x;
        trace->control_variate = c;
        trace->stats_used = stats_in;
        trace->sampled = update_set;
        trace->weights = update_weights;
        trace->client_full_grad_at_x = update_full_grads;
        trace->steps.clear();
        for (const auto& oc : outcomes) {
            trace->steps.insert(trace->steps.end(), oc.trace.begin(), oc.trace.end());
        }
        trace->steps_per_client =
            outcomes.empty() ? 0 : outcomes.front().steps;
        bool aligned = true;
        for (int uid : update_set) {
            aligned = aligned &&
                      make_batch_schedule(
                          pop.clients[static_cast<std::size_t>(uid)]->num_samples(), cfg,
                          round_rng.child(kClientBlockLabel).child(static_cast<std::uint64_t>(uid)))
                          .aligned;
        }
        trace->epoch_aligned = aligned;
        trace->eta = cfg.eta;
    }

    RoundRecord rec;
    state.x = x_new;
    state.round_index += 1;
    rec.f_value = pop.population_loss(x_new, cfg.weighting);
    rec.grad_norm_sq = pop.population_gradient(x_new, cfg.weighting).squaredNorm();
    rec.drift = total_steps > 0 ? drift_sum / static_cast<double>(total_steps) : 0.0;
    if (is_mvr(algo)) {
        rec.momentum_err_sq =
            (state.m - pop.population_gradient(x, cfg.weighting)).squaredNorm();
    }

    const CommCost per = comm_cost(cfg, d);
    if (split) {
        rec.comm_down = static_cast<long>(split_grad_count) * static_cast<long>(d) +
                        static_cast<long>(update_set.size()) * per.down;
        rec.comm_up = static_cast<long>(s_count) * static_cast<long>(d);
    } else if (cfg.cv_sampling == CvSampling::IndependentSample) {
        // The independent gradient set adds one x down and one gradient up per
        // reporter; update clients then upload only their model.
        rec.comm_down = static_cast<long>(s_count) * (per.down + static_cast<long>(d));
        rec.comm_up = static_cast<long>(s_count) * per.up;
    } else {
        rec.comm_down = static_cast<long>(s_count) * per.down;
        rec.comm_up = static_cast<long>(s_count) * per.up;
    }
    return rec;
}

std::vector<RoundRecord> run_rounds(const AlgoConfig& cfg, ServerState& state,
                                    const Population& pop, RngStream run_rng, int rounds,
                                    int threads) {
    if (rounds < 0) {
        throw std::invalid_argument("run_rounds: rounds must be >= 0");
    }
    if (is_mvr(cfg.algorithm) && !state.warmed_up) {
        mvr_warmup(cfg, state, pop, run_rng.child(0));
    }
    std::vector<RoundRecord> records;
    records.reserve(static_cast<std::size_t>(rounds));
    for (int t = 0; t < rounds; ++t) {
        records.push_back(
            run_round(cfg, state, pop, run_rng.child(static_cast<std::uint64_t>(t) + 1), threads));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Theory-mode schedules

namespace {

double min_finite_positive(std::initializer_list<double> candidates) {
    double best = std::numeric_limits<double>::infinity();
    for (double c : candidates) {
        if (std::isfinite(c) && c > 0.0) {
            best = std::min(best, c);
        }
    }
    return best;
}

}  // namespace

TheorySchedule theory_schedule(const AlgoConfig& cfg, const TheoryInputs& in) {
    if (in.l_smooth <= 0.0 || in.rounds < 1 || in.local_steps < 1 || in.clients_per_round < 1) {
        throw std::invalid_argument("theory_schedule: need L > 0 and positive S, K, T");
    }
    if (in.f_gap <= 0.0) {
        throw std::invalid_argument("theory_schedule: need f(x0) - f* > 0");
    }
    const double l = in.l_smooth;
    const double k = static_cast<double>(in.local_steps);
    const double t = static_cast<double>(in.rounds);
    const double s = static_cast<double>(in.clients_per_round);

    TheorySchedule out;
    out.k_large_enough = in.delta > 0.0 ? k >= l / in.delta : true;

    if (is_mvr(cfg.algorithm)) {
        // eta = min(1/L, 1/(delta K), (S F / (K^3 T delta^2 G^2))^(1/3)),
        // every constant set to one. The lite variant has no S gain and sees
        // sampling noise on top of diversity.
        const double s_eff = cfg.algorithm == Algorithm::MimeMvr ? s : 1.0;
        const double g_eff_sq = cfg.algorithm == Algorithm::MimeMvr
                                    ? in.g_diversity_sq
                                    : in.g_diversity_sq + in.noise_sq;
        const double cube = in.delta > 0.0 && g_eff_sq > 0.0
                                ? std::cbrt(s_eff * in.f_gap /
                                            (k * k * k * t * in.delta * in.delta * g_eff_sq))
                                : std::numeric_limits<double>::infinity();
        const double by_delta = in.delta > 0.0 ? 1.0 / (in.delta * k)
                                               : std::numeric_limits<double>::infinity();
        out.eta = min_finite_positive({1.0 / l, by_delta, cube});
        const double a_raw =
            std::max(out.eta * out.eta * in.delta * in.delta * k * k, 1.0 / t);
        out.mvr_a = std::min(1.0, a_raw);
        return out;
    }

    const double b = lipschitz_bound(cfg.base);
    double eta;
    if (cfg.base.kind == BaseOptKind::Adam || cfg.base.kind == BaseOptKind::Adagrad) {
        // eps0^2 / (K L (H + eps0)) with the gradient-norm bound H.
        if (in.h_bound < 0.0) {
            throw std::invalid_argument("theory_schedule: adaptive schedule needs H >= 0");
        }
        eta = cfg.base.eps0 * cfg.base.eps0 / (k * l * (in.h_bound + cfg.base.eps0));
    } else if (in.mu > 0.0) {
        eta = 1.0 / (in.mu * k * t);
    } else {
        const double g_tilde_sq = in.g_diversity_sq + in.noise_sq / k;
        eta = g_tilde_sq > 0.0
                  ? std::sqrt(in.f_gap * s / (l * g_tilde_sq * t * k * k))
                  : std::numeric_limits<double>::infinity();
    }
    out.eta = std::min(eta, 1.0 / (2.0 * l * b * k));
    return out;
}

}  // namespace mimesim
