#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mimesim/fed.hpp"

#include <cmath>
#include <stdexcept>
#include <variant>
#include <vector>

using namespace mimesim;

namespace {

Vec scalar(double v) {
    Vec x(1);
    x[0] = v;
    return x;
}

Eigen::MatrixXd mat1(double a) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = a;
    return m;
}

// f(y) = (a/2) (y - opt)^2 as a one-sample scalar client.
Population scalar_pop(std::vector<double> curvatures, std::vector<double> optima) {
    std::vector<Eigen::MatrixXd> hs;
    std::vector<Vec> bs;
    for (std::size_t i = 0; i < curvatures.size(); ++i) {
        hs.push_back(mat1(curvatures[i]));
        bs.push_back(scalar(curvatures[i] * optima[i]));
    }
    return make_explicit_quadratic(std::move(hs), std::move(bs));
}

Population noisy_pop(int clients, unsigned seed) {
    QuadraticSpec spec;
    spec.dim = 4;
    spec.num_clients = clients;
    spec.samples_per_client = 4;
    spec.l_smooth = 2.0;
    spec.mu = 0.5;
    spec.hessian_spread = 0.5;
    spec.optimum_spread = 1.0;
    spec.noise_std = 0.2;
    return make_quadratic_population(spec, RngStream(seed));
}

Vec run_trajectory(AlgoConfig cfg, const Population& pop, const Vec& x0, int rounds,
                   std::uint64_t seed) {
    ServerState st = init_server_state(cfg, pop, x0);
    run_rounds(cfg, st, pop, RngStream(seed), rounds);
    return st.x;
}

double max_gap(const Vec& a, const Vec& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

}  // namespace

TEST_CASE("mime corrected gradient: one hand-checked scalar step") {
    // f(y) = (y-1)^2/2; at y=0.5 with c=0.2 the corrected gradient is
    // (0.5-1) - (0-1) + 0.2 = 0.7, so an eta=0.1 SGD step lands on 0.43.
    QuadraticClient client(mat1(1.0), {scalar(1.0)});
    const int batch[1] = {0};
    Vec g = mime_corrected_gradient(client, scalar(0.5), scalar(0.0), batch, scalar(0.2));
    CHECK(g[0] == doctest::Approx(0.7).epsilon(1e-15));
    BaseOptConfig sgd;
    Vec y = scalar(0.5) - 0.1 * u_step(sgd, g, EmptyState{});
    CHECK(y[0] == doctest::Approx(0.43).epsilon(1e-14));
}

TEST_CASE("mime with K=1 moves every client by the same control-variate step") {
    Population pop = scalar_pop({1.0, 2.0, 3.0}, {1.0, -1.0, 0.5});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::Mime;
    cfg.eta = 0.1;
    cfg.local_steps = 1;
    Vec x0 = scalar(0.4);
    ServerState st = init_server_state(cfg, pop, x0);
    run_round(cfg, st, pop, RngStream(7));
    // y_i = x - eta * c for all i, so the average is the same point.
    Vec want = x0 - 0.1 * pop.population_gradient(x0);
    CHECK(max_gap(st.x, want) <= 1e-15);
}

TEST_CASE("mime on the zero function with c=0 is a fixed point") {
    Population pop = make_explicit_quadratic({mat1(0.0), mat1(0.0)}, {scalar(0.0), scalar(0.0)});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::Mime;
    cfg.base.kind = BaseOptKind::SgdMomentum;
    cfg.eta = 0.3;
    cfg.local_steps = 4;
    Vec x0 = scalar(1.25);
    ServerState st = init_server_state(cfg, pop, x0);
    RoundRecord rec = run_round(cfg, st, pop, RngStream(8));
    CHECK(st.x[0] == x0[0]);
    CHECK(rec.drift == 0.0);
}

TEST_CASE("zero local steps leave the model untouched") {
    Population pop = scalar_pop({1.0, 2.0}, {1.0, -1.0});
    for (Algorithm algo : {Algorithm::Mime, Algorithm::FedAvg}) {
        AlgoConfig cfg;
        cfg.algorithm = algo;
        cfg.local_steps = 0;
        Vec x0 = scalar(0.7);
        ServerState st = init_server_state(cfg, pop, x0);
        RoundRecord rec = run_round(cfg, st, pop, RngStream(9));
        CHECK(st.x[0] == x0[0]);
        CHECK(rec.drift == 0.0);
    }
}

TEST_CASE("requesting more clients than the population is rejected") {
    Population pop = scalar_pop({1.0, 1.0}, {0.0, 1.0});
    AlgoConfig cfg;
    cfg.clients_per_round = 3;
    ServerState st = init_server_state(AlgoConfig{}, pop, scalar(0.0));
    CHECK_THROWS_AS(run_round(cfg, st, pop, RngStream(1)), std::invalid_argument);
}

TEST_CASE("mimelite local SGD: 0 -> 0.5 -> 0.75 on (y-1)^2/2") {
    Population pop = scalar_pop({1.0}, {1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeLite;
    cfg.eta = 0.5;
    cfg.local_steps = 2;
    ServerState st = init_server_state(cfg, pop, scalar(0.0));
    RoundRecord rec = run_round(cfg, st, pop, RngStream(10));
    CHECK(st.x[0] == 0.75);
    // Drift averages ||y_k - x||^2 over the two step starts: (0 + 0.25) / 2.
    CHECK(rec.drift == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("mimelite at the client optimum stays put") {
    Population pop = scalar_pop({2.0}, {1.5});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeLite;
    cfg.eta = 0.1;
    cfg.local_steps = 5;
    ServerState st = init_server_state(cfg, pop, scalar(1.5));
    run_round(cfg, st, pop, RngStream(11));
    CHECK(st.x[0] == 1.5);
}

TEST_CASE("mvr client direction: hand-checked scalar combinations") {
    Vec d = mvr_client_direction(0.5, scalar(2.0), scalar(1.5), scalar(1.6), scalar(1.0));
    CHECK(d[0] == doctest::Approx(1.8).epsilon(1e-15));

    // a = 1 collapses to the SVRG-corrected gradient with no momentum.
    Vec svrg = mvr_client_direction(1.0, scalar(2.0), scalar(1.5), scalar(1.6), scalar(99.0));
    CHECK(svrg[0] == doctest::Approx(2.0 - 1.5 + 1.6).epsilon(1e-15));

    // a = 0 with m = grad(anchor) telescopes to grad(y).
    Vec tele = mvr_client_direction(0.0, scalar(2.0), scalar(1.5), scalar(777.0), scalar(1.5));
    CHECK(tele[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("mvr momentum update: hand-checked scalar combinations") {
    CHECK(mvr_momentum_update(0.5, scalar(2.0), scalar(1.5), scalar(1.0))[0] ==
          doctest::Approx(1.75).epsilon(1e-15));
    // Equal anchor gradients reduce to the plain momentum average.
    CHECK(mvr_momentum_update(0.3, scalar(2.0), scalar(2.0), scalar(1.0))[0] ==
          doctest::Approx(0.3 * 2.0 + 0.7 * 1.0).epsilon(1e-15));
    // a = 1 forgets all history.
    CHECK(mvr_momentum_update(1.0, scalar(2.0), scalar(-5.0), scalar(44.0))[0] ==
          doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("mvr momentum update from per-client gradient lists") {
    std::vector<Vec> cur = {scalar(2.0), scalar(3.0)};
    std::vector<Vec> prev = {scalar(1.0), scalar(2.0)};
    Vec from_lists = mvr_momentum_update(0.5, cur, prev, scalar(1.0));
    Vec from_means = mvr_momentum_update(0.5, scalar(2.5), scalar(1.5), scalar(1.0));
    CHECK(from_lists[0] == doctest::Approx(from_means[0]).epsilon(1e-15));

    std::vector<Vec> short_prev = {scalar(1.0)};
    CHECK_THROWS_AS(mvr_momentum_update(0.5, cur, short_prev, scalar(1.0)),
                    std::invalid_argument);
}

TEST_CASE("momentum warmup: identical clients give the exact population gradient") {
    Population pop = scalar_pop({2.0, 2.0, 2.0, 2.0}, {1.0, 1.0, 1.0, 1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeMvr;
    cfg.clients_per_round = 2;
    cfg.mvr_warmup_rounds = 1;
    ServerState st = init_server_state(cfg, pop, scalar(0.0));
    mvr_warmup(cfg, st, pop, RngStream(12));
    CHECK(max_gap(st.m, pop.population_gradient(scalar(0.0))) <= 1e-15);
}

TEST_CASE("momentum warmup covering the whole population is exact") {
    Population pop = scalar_pop({1.0, 2.0, 3.0, 1.5, 2.5, 0.5}, {1, -1, 2, 0, -2, 1});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeLiteMvr;
    cfg.clients_per_round = 3;
    cfg.mvr_warmup_rounds = 2;  // T0 * S = 6 = N: every client exactly once
    Vec x0 = scalar(0.3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ServerState st = init_server_state(cfg, pop, x0);
        mvr_warmup(cfg, st, pop, RngStream(seed));
        CHECK(max_gap(st.m, pop.population_gradient(x0)) <= 1e-13);
    }
}

TEST_CASE("momentum warmup variance stays below 1.5 G^2 / (S T0)") {
    std::vector<double> curv(16, 1.0), opts;
    for (int i = 0; i < 16; ++i) opts.push_back(0.25 * (i - 7.5));
    Population pop = scalar_pop(curv, opts);
    Vec x0 = scalar(0.0);
    double g_sq = estimate_gradient_diversity_sq(pop, x0);
    Vec grad = pop.population_gradient(x0);

    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeMvr;
    cfg.clients_per_round = 2;
    cfg.mvr_warmup_rounds = 2;
    double acc = 0.0;
    const int kSeeds = 1000;
    for (int seed = 0; seed < kSeeds; ++seed) {
        ServerState st = init_server_state(cfg, pop, x0);
        mvr_warmup(cfg, st, pop, RngStream(static_cast<std::uint64_t>(seed)));
        acc += (st.m - grad).squaredNorm();
    }
    CHECK(acc / kSeeds <= 1.5 * g_sq / (2.0 * 2.0));
}

TEST_CASE("fedavg with an SGD server at lr 1 averages the local endpoints") {
    Population pop = scalar_pop({1.0, 3.0}, {2.0, -1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::FedAvg;
    cfg.eta = 0.05;
    cfg.local_steps = 3;
    Vec x0 = scalar(0.5);
    ServerState st = init_server_state(cfg, pop, x0);
    run_round(cfg, st, pop, RngStream(13));

    double mean = 0.0;
    for (const auto& c : pop.clients) {
        Vec y = x0;
        for (int k = 0; k < 3; ++k) y -= 0.05 * c->full_gradient(y);
        mean += y[0];
    }
    mean /= 2.0;
    CHECK(st.x[0] == doctest::Approx(mean).epsilon(1e-15));
}

TEST_CASE("fedavg with K=1 equals a server-only step") {
    Population pop = scalar_pop({1.0, 2.0, 3.0}, {1.0, 0.0, -1.0});
    AlgoConfig fedavg;
    fedavg.algorithm = Algorithm::FedAvg;
    fedavg.eta = 0.07;
    fedavg.local_steps = 1;
    fedavg.clients_per_round = 2;
    AlgoConfig central = fedavg;
    central.algorithm = Algorithm::ServerOnly;
    Vec x0 = scalar(0.9);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Vec a = run_trajectory(fedavg, pop, x0, 3, seed);
        Vec b = run_trajectory(central, pop, x0, 3, seed);
        CHECK(max_gap(a, b) <= 1e-12);
    }
}

TEST_CASE("fedavg stalls at the drift fixed point of the asymmetric pair") {
    // f1 = (3/2)(x-1)^2, f2 = (1/2)(x+1)^2; K local GD steps contract each
    // client onto its own optimum, so the round map has the fixed point
    // (rho2 - rho1) / (2 - rho1 - rho2), far from the true optimum 0.5.
    Population pop = scalar_pop({3.0, 1.0}, {1.0, -1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::FedAvg;
    cfg.eta = 0.01;
    cfg.local_steps = 200;
    Vec x = run_trajectory(cfg, pop, scalar(0.0), 40, 14);

    double rho1 = std::pow(1.0 - 0.01 * 3.0, 200);
    double rho2 = std::pow(1.0 - 0.01 * 1.0, 200);
    double fixed_point = (rho2 - rho1) / (2.0 - rho1 - rho2);
    CHECK(x[0] == doctest::Approx(fixed_point).epsilon(1e-9));
    CHECK((*pop.global_optimum())[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(x[0] - 0.5) > 0.4);  // the averaging bias is real
}

TEST_CASE("single-client scaffold is plain local SGD") {
    Population pop = scalar_pop({2.0}, {1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::Scaffold;
    cfg.eta = 0.2;
    cfg.local_steps = 4;
    ServerState st = init_server_state(cfg, pop, scalar(0.0));
    Vec y = scalar(0.0);
    for (int t = 0; t < 3; ++t) {
        run_round(cfg, st, pop, RngStream(15).child(static_cast<std::uint64_t>(t)));
        for (int k = 0; k < 4; ++k) y -= 0.2 * pop.clients[0]->full_gradient(y);
        CHECK(max_gap(st.x, y) <= 1e-15);
    }
}

TEST_CASE("scaffold on identical clients tracks fedavg") {
    // Full participation keeps the server variate equal to every client
    // variate, so the corrections cancel round after round.
    Population pop = scalar_pop({2.0, 2.0, 2.0, 2.0}, {1.0, 1.0, 1.0, 1.0});
    AlgoConfig scaffold;
    scaffold.algorithm = Algorithm::Scaffold;
    scaffold.eta = 0.1;
    scaffold.local_steps = 3;
    scaffold.clients_per_round = 4;
    AlgoConfig fedavg = scaffold;
    fedavg.algorithm = Algorithm::FedAvg;
    Vec x0 = scalar(0.2);
    Vec a = run_trajectory(scaffold, pop, x0, 10, 16);
    Vec b = run_trajectory(fedavg, pop, x0, 10, 16);
    CHECK(max_gap(a, b) <= 1e-9);
}

TEST_CASE("uniform sampling: mean participation count is S T / N") {
    // 20 of 3400 clients for 1000 rounds: every client averages 5.88 rounds.
    const int n = 3400, s = 20, t = 1000;
    std::vector<int> counts(n, 0);
    RngStream rng(17);
    for (int round = 0; round < t; ++round) {
        auto picked = rng.child(static_cast<std::uint64_t>(round))
                          .sample_without_replacement(n, s);
        for (int c : picked) ++counts[static_cast<std::size_t>(c)];
    }
    double mean = 0.0;
    int busiest = 0;
    for (int c : counts) {
        mean += c;
        busiest = std::max(busiest, c);
    }
    mean /= n;
    CHECK(mean == doctest::Approx(static_cast<double>(s) * t / n).epsilon(1e-12));
    CHECK(std::abs(mean - 5.9) < 0.05);
    CHECK(busiest < 30);
}

TEST_CASE("fedprox direction: proximal pull and its degenerate cases") {
    Vec g = scalar(0.0), y = scalar(2.0), x = scalar(1.0);
    // Zero gradient: one step contracts y toward x by (1 - eta mu).
    Vec d = fedprox_direction(g, y, x, 0.5);
    Vec y1 = y - 0.1 * d;
    CHECK((y1[0] - x[0]) == doctest::Approx((1.0 - 0.1 * 0.5) * (y[0] - x[0])).epsilon(1e-15));
    // y = x: the proximal term vanishes entirely.
    Vec at_anchor = fedprox_direction(scalar(1.7), x, x, 0.5);
    CHECK(at_anchor[0] == 1.7);
    // mu = 0: plain gradient.
    CHECK(fedprox_direction(scalar(1.7), y, x, 0.0)[0] == 1.7);
}

TEST_CASE("fedprox with mu = 0 reproduces fedavg exactly") {
    Population pop = noisy_pop(5, 70);
    AlgoConfig prox;
    prox.algorithm = Algorithm::FedProx;
    prox.prox_mu = 0.0;
    prox.eta = 0.05;
    prox.local_steps = 3;
    prox.batch_size = 2;
    prox.clients_per_round = 3;
    AlgoConfig fedavg = prox;
    fedavg.algorithm = Algorithm::FedAvg;
    fedavg.prox_mu = 0.0;
    Vec x0 = Vec::Zero(4);
    Vec a = run_trajectory(prox, pop, x0, 8, 18);
    Vec b = run_trajectory(fedavg, pop, x0, 8, 18);
    CHECK(max_gap(a, b) == 0.0);
}

TEST_CASE("loc-mime with a stateless base equals mime") {
    Population pop = noisy_pop(5, 71);
    AlgoConfig mime;
    mime.algorithm = Algorithm::Mime;
    mime.eta = 0.05;
    mime.local_steps = 3;
    mime.batch_size = 2;
    mime.clients_per_round = 3;
    AlgoConfig loc = mime;
    loc.algorithm = Algorithm::LocMime;
    Vec x0 = Vec::Zero(4);
    CHECK(max_gap(run_trajectory(mime, pop, x0, 6, 19),
                  run_trajectory(loc, pop, x0, 6, 19)) <= 1e-15);
}

TEST_CASE("loc-mime with one step per round equals mime") {
    Population pop = noisy_pop(4, 72);
    AlgoConfig mime;
    mime.algorithm = Algorithm::Mime;
    mime.base.kind = BaseOptKind::SgdMomentum;
    mime.eta = 0.05;
    mime.local_steps = 1;
    mime.clients_per_round = 2;
    AlgoConfig loc = mime;
    loc.algorithm = Algorithm::LocMime;
    Vec x0 = Vec::Zero(4);
    CHECK(max_gap(run_trajectory(mime, pop, x0, 6, 20),
                  run_trajectory(loc, pop, x0, 6, 20)) <= 1e-15);
}

TEST_CASE("loc-mime's second momentum step diverges from mime by beta (m_loc - m_glob)") {
    // Single client f = y^2/2 from x = 1 with zero initial momentum: after
    // step one the local state is (1-beta) c while the global state is still
    // zero, so step two differs by beta (1-beta) c and the round ends
    // eta beta (1-beta) c apart.
    Population pop = scalar_pop({1.0}, {0.0});
    AlgoConfig mime;
    mime.algorithm = Algorithm::Mime;
    mime.base.kind = BaseOptKind::SgdMomentum;
    mime.base.beta = 0.9;
    mime.eta = 0.1;
    mime.local_steps = 2;
    AlgoConfig loc = mime;
    loc.algorithm = Algorithm::LocMime;
    Vec x0 = scalar(1.0);
    Vec a = run_trajectory(mime, pop, x0, 1, 21);
    Vec b = run_trajectory(loc, pop, x0, 1, 21);
    double c = 1.0;  // population gradient at x0
    CHECK((a[0] - b[0]) == doctest::Approx(0.1 * 0.9 * 0.1 * c).epsilon(1e-12));
}

TEST_CASE("server-only momentum: two hand-checked scalar rounds") {
    Population pop = scalar_pop({1.0}, {0.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::ServerOnly;
    cfg.base.kind = BaseOptKind::SgdMomentum;
    cfg.base.beta = 0.9;
    cfg.eta = 0.1;
    ServerState st = init_server_state(cfg, pop, scalar(2.0));
    run_round(cfg, st, pop, RngStream(22).child(0));
    CHECK(st.x[0] == doctest::Approx(1.98).epsilon(1e-14));  // u = 0.1 * 2
    run_round(cfg, st, pop, RngStream(22).child(1));
    // u = 0.1 * 1.98 + 0.9 * 0.2 = 0.378, x = 1.98 - 0.0378.
    CHECK(st.x[0] == doctest::Approx(1.9422).epsilon(1e-14));
}

TEST_CASE("server-only at a stationary point stays put") {
    Population pop = scalar_pop({1.0, 1.0}, {1.0, -1.0});
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::ServerOnly;
    cfg.eta = 0.5;
    ServerState st = init_server_state(cfg, pop, scalar(0.0));
    run_round(cfg, st, pop, RngStream(23));
    CHECK(st.x[0] == 0.0);
}

TEST_CASE("mime with K=1 full batch equals server-only for every base") {
    Population pop = scalar_pop({1.0, 2.0, 4.0}, {1.0, -0.5, 0.25});
    for (BaseOptKind kind :
         {BaseOptKind::Sgd, BaseOptKind::SgdMomentum, BaseOptKind::Adam, BaseOptKind::Adagrad}) {
        AlgoConfig mime;
        mime.algorithm = Algorithm::Mime;
        mime.base.kind = kind;
        mime.eta = 0.05;
        mime.local_steps = 1;
        AlgoConfig central = mime;
        central.algorithm = Algorithm::ServerOnly;
        Vec x0 = scalar(1.1);
        Vec a = run_trajectory(mime, pop, x0, 5, 24);
        Vec b = run_trajectory(central, pop, x0, 5, 24);
        CHECK(max_gap(a, b) <= 1e-12);
    }
}

TEST_CASE("communication cost per client, by algorithm") {
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::Mime;  // sgd base: state is empty
    CommCost mime = comm_cost(cfg, 10);
    CHECK(mime.down == 20);
    CHECK(mime.up == 20);

    cfg.split_communication = true;
    CHECK(comm_cost(cfg, 10).up == 10);  // one object per client
    cfg.split_communication = false;

    cfg.base.kind = BaseOptKind::Adam;  // state adds 2d to the broadcast
    CHECK(comm_cost(cfg, 10).down == 40);

    cfg.base.kind = BaseOptKind::Sgd;
    cfg.algorithm = Algorithm::FedAvg;
    CHECK(comm_cost(cfg, 10).down == 10);
    CHECK(comm_cost(cfg, 10).up == 10);

    cfg.algorithm = Algorithm::MimeLite;
    cfg.base.kind = BaseOptKind::SgdMomentum;
    CHECK(comm_cost(cfg, 10).down == 20);  // x + momentum
    CHECK(comm_cost(cfg, 10).up == 20);    // y + grads at x

    cfg.algorithm = Algorithm::MimeMvr;
    CHECK(comm_cost(cfg, 10).down == 40);  // x, anchor, m, c
    CHECK(comm_cost(cfg, 10).up == 30);

    cfg.algorithm = Algorithm::MimeLiteMvr;
    CHECK(comm_cost(cfg, 10).down == 30);
    CHECK(comm_cost(cfg, 10).up == 30);

    cfg.algorithm = Algorithm::Scaffold;
    CHECK(comm_cost(cfg, 10).down == 20);
    CHECK(comm_cost(cfg, 10).up == 20);

    cfg.algorithm = Algorithm::ServerOnly;
    CHECK(comm_cost(cfg, 10).down == 10);
    CHECK(comm_cost(cfg, 10).up == 10);
}

TEST_CASE("server statistics are frozen during client work") {
    Population pop = noisy_pop(5, 73);
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::Mime;
    cfg.base.kind = BaseOptKind::SgdMomentum;
    cfg.eta = 0.05;
    cfg.local_steps = 5;
    cfg.batch_size = 2;
    cfg.clients_per_round = 3;
    ServerState st = init_server_state(cfg, pop, Vec::Zero(4));
    // Put nonzero momentum in play first.
    run_round(cfg, st, pop, RngStream(25).child(0));
    Vec m_before = std::get<MomentumState>(st.opt).m;

    RoundTrace trace;
    run_round(cfg, st, pop, RngStream(25).child(1), 1, &trace);
    // Every local step saw exactly the entering statistics...
    CHECK((std::get<MomentumState>(trace.stats_used).m - m_before).lpNorm<Eigen::Infinity>() ==
          0.0);
    // ...and the end-of-round fold is the only mutation.
    OptimizerState want = v_step(cfg.base, trace.control_variate, MomentumState{m_before});
    CHECK((std::get<MomentumState>(st.opt).m - std::get<MomentumState>(want).m)
              .lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("control variate is unbiased over all client subsets") {
    Population pop = scalar_pop({1, 1, 1, 1, 1, 1, 1, 1}, {3, 1, 4, -1, -5, 9, 2, -6});
    const int n = 8, s = 3;
    Vec x = scalar(0.6);
    Vec mean_c = Vec::Zero(1);
    double mean_dev_sq = 0.0;
    int subsets = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k) {
                Vec c = (pop.clients[static_cast<std::size_t>(i)]->full_gradient(x) +
                         pop.clients[static_cast<std::size_t>(j)]->full_gradient(x) +
                         pop.clients[static_cast<std::size_t>(k)]->full_gradient(x)) /
                        3.0;
                mean_c += c;
                mean_dev_sq += (c - pop.population_gradient(x)).squaredNorm();
                ++subsets;
            }
    mean_c /= subsets;
    mean_dev_sq /= subsets;
    CHECK(max_gap(mean_c, pop.population_gradient(x)) <= 1e-12);

    double g_sq = estimate_gradient_diversity_sq(pop, x);
    CHECK(mean_dev_sq <= g_sq / s * (n - s) / (n - 1.0) + 1e-12);
}

TEST_CASE("mimelite with SGD is fedavg with SGD clients and server") {
    Population pop = noisy_pop(6, 74);
    AlgoConfig lite;
    lite.algorithm = Algorithm::MimeLite;
    lite.eta = 0.05;
    lite.local_steps = 3;
    lite.batch_size = 2;
    lite.clients_per_round = 3;
    AlgoConfig fedavg = lite;
    fedavg.algorithm = Algorithm::FedAvg;
    fedavg.server_lr = 1.0;
    Vec x0 = Vec::Zero(4);
    for (std::uint64_t seed : {31ull, 32ull, 33ull}) {
        ServerState a = init_server_state(lite, pop, x0);
        ServerState b = init_server_state(fedavg, pop, x0);
        for (int t = 0; t < 50; ++t) {
            RngStream tick = RngStream(seed).child(static_cast<std::uint64_t>(t));
            run_round(lite, a, pop, tick);
            run_round(fedavg, b, pop, tick);
            CHECK(max_gap(a.x, b.x) <= 1e-12);
        }
    }
}

TEST_CASE("mvr with a=1 anchored at the round start equals mime-sgd") {
    Population pop = noisy_pop(5, 75);
    AlgoConfig mvr;
    mvr.algorithm = Algorithm::MimeMvr;
    mvr.mvr_a = 1.0;
    mvr.mvr_anchor = MvrAnchor::Prev;
    mvr.eta = 0.04;
    mvr.local_steps = 3;
    mvr.batch_size = 2;
    mvr.clients_per_round = 2;
    AlgoConfig mime = mvr;
    mime.algorithm = Algorithm::Mime;
    mime.base.kind = BaseOptKind::Sgd;
    Vec x0 = Vec::Zero(4);
    Vec a = run_trajectory(mvr, pop, x0, 20, 26);
    Vec b = run_trajectory(mime, pop, x0, 20, 26);
    CHECK(max_gap(a, b) <= 1e-12);
}

TEST_CASE("n_i weighting with equal client sizes matches uniform weighting") {
    Population pop = noisy_pop(5, 76);  // every client holds 4 samples
    AlgoConfig uni;
    uni.algorithm = Algorithm::Mime;
    uni.base.kind = BaseOptKind::SgdMomentum;
    uni.eta = 0.05;
    uni.local_steps = 3;
    uni.clients_per_round = 3;
    AlgoConfig byn = uni;
    byn.weighting = WeightMode::ByCount;
    Vec x0 = Vec::Zero(4);
    Vec a = run_trajectory(uni, pop, x0, 5, 27);
    Vec b = run_trajectory(byn, pop, x0, 5, 27);
    CHECK(max_gap(a, b) == 0.0);
}

TEST_CASE("round records report finite metrics and communication totals") {
    Population pop = noisy_pop(4, 77);
    AlgoConfig cfg;
    cfg.algorithm = Algorithm::MimeMvr;
    cfg.eta = 0.05;
    cfg.local_steps = 2;
    cfg.clients_per_round = 2;
    ServerState st = init_server_state(cfg, pop, Vec::Zero(4));
    auto recs = run_rounds(cfg, st, pop, RngStream(28), 3);
    REQUIRE(recs.size() == 3);
    CommCost per = comm_cost(cfg, 4);
    for (const auto& r : recs) {
        CHECK(std::isfinite(r.f_value));
        CHECK(r.grad_norm_sq >= 0.0);
        CHECK(r.drift >= 0.0);
        CHECK(r.momentum_err_sq >= 0.0);
        CHECK(r.comm_down == per.down * 2);
        CHECK(r.comm_up == per.up * 2);
    }
}

TEST_CASE("algorithm names round-trip") {
    for (Algorithm algo : {Algorithm::Mime, Algorithm::MimeLite, Algorithm::MimeMvr,
                           Algorithm::MimeLiteMvr, Algorithm::FedAvg, Algorithm::FedProx,
                           Algorithm::Scaffold, Algorithm::LocMime, Algorithm::ServerOnly}) {
        CHECK(algorithm_from_string(to_string(algo)) == algo);
    }
    CHECK_THROWS_AS(algorithm_from_string("fedsgd"), std::invalid_argument);
}
