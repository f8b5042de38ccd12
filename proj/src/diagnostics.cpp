#include "mimesim/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mimesim {

namespace {

// Uniform mean over an index set of precomputed per-client vectors.
Vec subset_mean(std::span<const Vec> values, std::span<const int> subset) {
    Vec acc = Vec::Zero(values[0].size());
    for (int i : subset) {
        acc += values[static_cast<std::size_t>(i)];
    }
    return acc / static_cast<double>(subset.size());
}

double binomial(int n, int k) {
    double v = 1.0;
    for (int i = 0; i < k; ++i) {
        v *= static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    return v;
}

}  // namespace

ReductionReport reduction_oracle(const AlgoConfig& cfg, const ServerState& state,
                                 const Population& pop, RngStream round_rng, int threads) {
    if (cfg.algorithm != Algorithm::Mime && cfg.algorithm != Algorithm::MimeLite) {
        throw std::invalid_argument(
            "reduction_oracle: the centralized-step identity covers mime and mimelite");
    }
    if (cfg.split_communication) {
        throw std::invalid_argument(
            "reduction_oracle: split rounds have no single control variate to reduce to");
    }

    ServerState replay = state;
    RoundTrace trace;
    run_round(cfg, replay, pop, round_rng, threads, &trace);
    if (!trace.epoch_aligned) {
        throw std::runtime_error(
            "reduction_oracle: batch schedule is not aligned to epochs, so per-step "
            "gradients at x do not telescope to full gradients; use full batches, or "
            "batch sizes dividing the local dataset with K a multiple of the epoch "
            "length");
    }

    const Eigen::Index d = pop.dim();
    ReductionReport rep;
    rep.e_t = Vec::Zero(d);
    rep.eta_tilde = trace.eta * static_cast<double>(trace.steps_per_client);

    if (trace.steps_per_client > 0) {
        // Per-client mean of the gradient drift, then the weighted client mean.
        std::map<int, Vec> acc;
        std::map<int, int> count;
        for (const auto& st : trace.steps) {
            auto [it, fresh] = acc.try_emplace(st.client, Vec::Zero(d));
            it->second += st.grad_y - st.grad_x;
            count[st.client] += 1;
        }
        std::vector<Vec> per_client;
        per_client.reserve(trace.sampled.size());
        for (std::size_t i = 0; i < trace.sampled.size(); ++i) {
            const int uid = trace.sampled[i];
            if (count[uid] != trace.steps_per_client) {
                throw std::runtime_error(
                    "reduction_oracle: clients took different step counts; equalize the "
                    "local datasets or use steps mode");
            }
            per_client.push_back(acc[uid] / static_cast<double>(count[uid]));
        }
        rep.e_t = weighted_average(per_client, trace.weights);
    }

    const Vec c_for_identity =
        cfg.algorithm == Algorithm::Mime
            ? trace.control_variate
            : weighted_average(trace.client_full_grad_at_x, trace.weights);
    rep.surrogate_x =
        trace.x_start -
        rep.eta_tilde * u_step(cfg.base, c_for_identity + rep.e_t, trace.stats_used);
    rep.max_abs_deviation = (rep.surrogate_x - replay.x).lpNorm<Eigen::Infinity>();
    return rep;
}

DriftTrace drift_trace(const AlgoConfig& cfg, const RoundTrace& trace) {
    if (trace.steps_per_client > 0 && trace.steps.empty()) {
        throw std::invalid_argument("drift_trace: the round was not traced");
    }
    DriftTrace out;
    out.per_step_dist_sq.reserve(trace.steps.size());
    double sum = 0.0;
    for (const auto& st : trace.steps) {
        out.per_step_dist_sq.push_back(st.dist_sq);
        sum += st.dist_sq;
    }
    out.eps_k = trace.steps.empty() ? 0.0 : sum / static_cast<double>(trace.steps.size());
    out.cv_norm_sq = trace.control_variate.size() > 0 ? trace.control_variate.squaredNorm() : 0.0;
    out.eta_tilde = trace.eta * static_cast<double>(trace.steps_per_client);
    out.mime_bound_rhs = mime_drift_bound(lipschitz_bound(cfg.base), out.eta_tilde, out.cv_norm_sq);
    return out;
}

double mime_drift_bound(double lipschitz_b, double eta_tilde, double cv_norm_sq) {
    return 18.0 * lipschitz_b * lipschitz_b * eta_tilde * eta_tilde * cv_norm_sq;
}

double mimelite_drift_bound(double lipschitz_b, double eta_tilde, double grad_norm_sq,
                            double g_diversity_sq, double noise_sq, int local_steps) {
    if (local_steps < 1) {
        return 0.0;
    }
    return 18.0 * lipschitz_b * lipschitz_b * eta_tilde * eta_tilde *
           (grad_norm_sq + g_diversity_sq +
            noise_sq / (2.0 * static_cast<double>(local_steps)));
}

double momentum_error(const Vec& m, const Vec& x, const Population& pop, WeightMode mode) {
    return (m - pop.population_gradient(x, mode)).squaredNorm();
}

void for_each_subset(int n, int k, const std::function<void(std::span<const int>)>& visit) {
    if (k < 0 || n < 0 || k > n) {
        throw std::invalid_argument("for_each_subset: need 0 <= k <= n");
    }
    if (k == 0) {
        visit({});
        return;
    }
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        idx[static_cast<std::size_t>(i)] = i;
    }
    for (;;) {
        visit(idx);
        // Advance to the next lexicographic combination.
        int pos = k - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == n - k + pos) {
            --pos;
        }
        if (pos < 0) {
            return;
        }
        ++idx[static_cast<std::size_t>(pos)];
        for (int j = pos + 1; j < k; ++j) {
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
        }
    }
}

namespace {

struct ProbeInputs {
    std::vector<Vec> grad_fi_at_yi;   // grad f_i(y_i)
    std::vector<Vec> grad_fi_at_x;    // grad f_i(x)
    std::vector<Vec> grad_f_at_yi;    // grad f(y_i)
    Vec grad_f_at_x;
    std::vector<double> var_at_yi;    // within-client sample variance at y_i
    double mean_dist_sq = 0.0;
    double delta = 0.0;
    double g_sq_at_x = 0.0;
    double sigma_sq = 0.0;
};

ProbeInputs gather_probe_inputs(const Population& pop, const Vec& x, std::span<const Vec> ys,
                                RngStream& rng, bool with_variance) {
    const int n = pop.num_clients();
    if (static_cast<int>(ys.size()) != n) {
        throw std::invalid_argument("bias probe: need one frozen iterate per client");
    }
    ProbeInputs in;
    in.grad_f_at_x = pop.population_gradient(x);
    for (int i = 0; i < n; ++i) {
        const auto& cl = pop.clients[static_cast<std::size_t>(i)];
        const Vec& y = ys[static_cast<std::size_t>(i)];
        in.grad_fi_at_yi.push_back(cl->full_gradient(y));
        in.grad_fi_at_x.push_back(cl->full_gradient(x));
        in.grad_f_at_yi.push_back(pop.population_gradient(y));
        in.mean_dist_sq += (y - x).squaredNorm();
        if (with_variance) {
            const Vec full = in.grad_fi_at_yi.back();
            double var = 0.0;
            for (int z = 0; z < cl->num_samples(); ++z) {
                const int batch[1] = {z};
                var += (cl->sample_gradient(y, batch) - full).squaredNorm();
            }
            in.var_at_yi.push_back(var / static_cast<double>(cl->num_samples()));
        }
    }
    in.mean_dist_sq /= static_cast<double>(n);
    in.delta = estimate_delta(pop, rng.child(9001));
    in.g_sq_at_x = estimate_gradient_diversity_sq(pop, x);
    in.sigma_sq = with_variance ? estimate_noise_sq(pop, x) : 0.0;
    return in;
}

// Expectation over subsets: enumerate when the count is tame, else 1e3 MC.
template <typename PerSubset>
std::pair<double, bool> subset_expectation(int n, int s, RngStream& rng, PerSubset&& value) {
    const bool enumerate = binomial(n, s) <= 5000.0;
    double acc = 0.0;
    long count = 0;
    if (enumerate) {
        for_each_subset(n, s, [&](std::span<const int> subset) {
            acc += value(subset);
            ++count;
        });
    } else {
        for (int rep = 0; rep < 1000; ++rep) {
            const std::vector<int> subset = rng.sample_without_replacement(n, s);
            acc += value(subset);
            ++count;
        }
    }
    return {acc / static_cast<double>(count), enumerate};
}

}  // namespace

BiasProbeReport mime_bias_probe(const Population& pop, const Vec& x, std::span<const Vec> ys,
                                int subset_size, RngStream rng) {
    const int n = pop.num_clients();
    if (subset_size < 1 || subset_size > n) {
        throw std::invalid_argument("mime_bias_probe: bad subset size");
    }
    const ProbeInputs in = gather_probe_inputs(pop, x, ys, rng, /*with_variance=*/false);
    auto [lhs, enumerated] = subset_expectation(n, subset_size, rng, [&](std::span<const int> sub) {
        const Vec c_s = subset_mean(in.grad_fi_at_x, sub);
        Vec err = Vec::Zero(x.size());
        for (int i : sub) {
            err += in.grad_fi_at_yi[static_cast<std::size_t>(i)] -
                   in.grad_fi_at_x[static_cast<std::size_t>(i)] + c_s -
                   in.grad_f_at_yi[static_cast<std::size_t>(i)];
        }
        err /= static_cast<double>(sub.size());
        return err.squaredNorm();
    });
    BiasProbeReport rep;
    rep.lhs = lhs;
    rep.enumerated = enumerated;
    rep.rhs = 2.0 * in.delta * in.delta * in.mean_dist_sq +
              2.0 * in.g_sq_at_x / static_cast<double>(subset_size);
    return rep;
}

BiasProbeReport mimelite_bias_probe(const Population& pop, const Vec& x,
                                    std::span<const Vec> ys, int subset_size, RngStream rng) {
    const int n = pop.num_clients();
    if (subset_size < 1 || subset_size > n) {
        throw std::invalid_argument("mimelite_bias_probe: bad subset size");
    }
    const ProbeInputs in = gather_probe_inputs(pop, x, ys, rng, /*with_variance=*/true);
    auto [lhs, enumerated] = subset_expectation(n, subset_size, rng, [&](std::span<const int> sub) {
        Vec err = Vec::Zero(x.size());
        double noise = 0.0;
        for (int i : sub) {
            err += in.grad_fi_at_yi[static_cast<std::size_t>(i)] -
                   in.grad_f_at_yi[static_cast<std::size_t>(i)];
            noise += in.var_at_yi[static_cast<std::size_t>(i)];
        }
        const double s = static_cast<double>(sub.size());
        err /= s;
        // Exact second moment: squared mean bias plus independent per-client
        // single-sample noise.
        return err.squaredNorm() + noise / (s * s);
    });
    BiasProbeReport rep;
    rep.lhs = lhs;
    rep.enumerated = enumerated;
    rep.rhs = 2.0 * in.delta * in.delta * in.mean_dist_sq + 2.0 * in.g_sq_at_x + in.sigma_sq;
    return rep;
}

}  // namespace mimesim
