#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mimesim/base_opt.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace mimesim;

namespace {

Vec make_vec(std::initializer_list<double> vals) {
    Vec v(static_cast<Eigen::Index>(vals.size()));
    Eigen::Index i = 0;
    for (double x : vals) v[i++] = x;
    return v;
}

BaseOptConfig sgd() { return {BaseOptKind::Sgd}; }

BaseOptConfig sgdm(double beta = 0.9) {
    BaseOptConfig c{BaseOptKind::SgdMomentum};
    c.beta = beta;
    return c;
}

BaseOptConfig adam(double b1 = 0.9, double b2 = 0.99, double eps0 = 1e-7) {
    BaseOptConfig c{BaseOptKind::Adam};
    c.beta1 = b1;
    c.beta2 = b2;
    c.eps0 = eps0;
    return c;
}

BaseOptConfig adagrad(double eps0 = 1e-7, double init = 0.1) {
    BaseOptConfig c{BaseOptKind::Adagrad};
    c.eps0 = eps0;
    c.adagrad_init = init;
    return c;
}

// A random state of the right shape for property tests.
OptimizerState random_state(const BaseOptConfig& cfg, Eigen::Index d, RngStream& rng) {
    switch (cfg.kind) {
        case BaseOptKind::Sgd:
            return EmptyState{};
        case BaseOptKind::SgdMomentum:
            return MomentumState{rng.normal_vec(d)};
        case BaseOptKind::Adagrad:
            return AdagradState{rng.normal_vec(d).cwiseAbs()};
        case BaseOptKind::Adam:
            return AdamState{rng.normal_vec(d), rng.normal_vec(d).cwiseAbs()};
    }
    throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("sgd u_step is the identity on g") {
    Vec g = make_vec({1, 2});
    Vec u = u_step(sgd(), g, EmptyState{});
    CHECK(u[0] == 1.0);
    CHECK(u[1] == 2.0);
}

TEST_CASE("sgdm u_step blends gradient and momentum") {
    // (1-0.5)*2 + 0.5*4 = 3
    Vec u = u_step(sgdm(0.5), make_vec({2}), MomentumState{make_vec({4})});
    CHECK(u[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("adam u_step with beta1 = 0 divides by eps0 + sqrt(v)") {
    // 3 / (1 + sqrt(4)) = 1
    Vec u = u_step(adam(0.0, 0.99, 1.0), make_vec({3}),
                   AdamState{make_vec({0}), make_vec({4})});
    CHECK(u[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("adagrad u_step divides elementwise") {
    // 2 / (0.5 + sqrt(4)) = 0.8
    Vec u = u_step(adagrad(0.5), make_vec({2}), AdagradState{make_vec({4})});
    CHECK(u[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("adagrad v_step accumulates squared gradients") {
    // v' = 1 + 2^2 = 5
    OptimizerState s = v_step(adagrad(), make_vec({2}), AdagradState{make_vec({1})});
    CHECK(std::get<AdagradState>(s).v[0] == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("adam v_step is an exponential average of g^2") {
    // v' = (1-0.5)*2^2 + 0.5*4 = 4
    OptimizerState s =
        v_step(adam(0.9, 0.5), make_vec({2}), AdamState{make_vec({0}), make_vec({4})});
    CHECK(std::get<AdamState>(s).v[0] == doctest::Approx(4.0).epsilon(1e-15));
    // m' = (1-0.9)*2 + 0.9*0 = 0.2
    CHECK(std::get<AdamState>(s).m[0] == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("sgdm v_step from zero momentum") {
    // m' = (1-0.9)*10 = 1
    OptimizerState s = v_step(sgdm(0.9), make_vec({10}), MomentumState{make_vec({0})});
    CHECK(std::get<MomentumState>(s).m[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("sgd v_step keeps the empty state") {
    OptimizerState s = v_step(sgd(), make_vec({5}), EmptyState{});
    CHECK(std::holds_alternative<EmptyState>(s));
}

TEST_CASE("no bias correction: first adam step uses the raw averages") {
    // From zero state: m' = 0.1 g, v' = 0.01 g^2. A bias-corrected variant
    // would divide these by (1 - 0.9) and (1 - 0.99) respectively.
    BaseOptConfig cfg = adam();
    OptimizerState s0 = init_state(cfg, 1);
    OptimizerState s1 = v_step(cfg, make_vec({2}), s0);
    CHECK(std::get<AdamState>(s1).m[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(std::get<AdamState>(s1).v[0] == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("init_state shapes and initial values") {
    CHECK(std::holds_alternative<EmptyState>(init_state(sgd(), 4)));

    OptimizerState m = init_state(sgdm(), 4);
    CHECK(std::get<MomentumState>(m).m.isZero(0.0));

    OptimizerState ag = init_state(adagrad(1e-7, 0.1), 4);
    CHECK(std::get<AdagradState>(ag).v.size() == 4);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::get<AdagradState>(ag).v[i] == 0.1);

    OptimizerState ad = init_state(adam(), 4);
    CHECK(std::get<AdamState>(ad).m.isZero(0.0));
    CHECK(std::get<AdamState>(ad).v.isZero(0.0));
}

TEST_CASE("lipschitz bounds per optimizer") {
    CHECK(lipschitz_bound(sgd()) == 1.0);
    CHECK(lipschitz_bound(sgdm(0.3)) == 1.0);
    CHECK(lipschitz_bound(adam(0.9, 0.99, 1e-7)) == doctest::Approx(1e7).epsilon(1e-12));
    CHECK(lipschitz_bound(adagrad(1e-2)) == doctest::Approx(1e2).epsilon(1e-12));
    BaseOptConfig bad = adam();
    bad.eps0 = 0.0;
    CHECK_THROWS_AS(lipschitz_bound(bad), std::invalid_argument);
}

TEST_CASE("state_size counts broadcast floats") {
    CHECK(state_size(sgd(), 10) == 0);
    CHECK(state_size(sgdm(), 10) == 10);
    CHECK(state_size(adagrad(), 10) == 10);
    CHECK(state_size(adam(), 10) == 20);
}

TEST_CASE("kind names round-trip") {
    for (BaseOptKind k :
         {BaseOptKind::Sgd, BaseOptKind::SgdMomentum, BaseOptKind::Adam, BaseOptKind::Adagrad}) {
        CHECK(base_opt_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(base_opt_kind_from_string("adamw"), std::invalid_argument);
}

TEST_CASE("kind mismatch between state and config is rejected") {
    CHECK_THROWS_AS(u_step(sgd(), make_vec({1}), MomentumState{make_vec({0})}),
                    std::invalid_argument);
    CHECK_THROWS_AS(v_step(adam(), make_vec({1}), AdagradState{make_vec({1})}),
                    std::invalid_argument);
    CHECK_THROWS_AS(u_step(sgdm(), make_vec({1, 2}), MomentumState{make_vec({0})}),
                    std::invalid_argument);
}

TEST_CASE("u_step preserves averages for every optimizer kind") {
    RngStream rng(31);
    const Eigen::Index d = 8;
    for (BaseOptConfig cfg : {sgd(), sgdm(), adam(0.9, 0.99, 1e-3), adagrad(1e-3)}) {
        for (int trial = 0; trial < 50; ++trial) {
            OptimizerState s = random_state(cfg, d, rng);
            std::vector<Vec> gs;
            Vec mean = Vec::Zero(d);
            for (int i = 0; i < 5; ++i) {
                gs.push_back(rng.normal_vec(d));
                mean += gs.back();
            }
            mean /= 5.0;
            Vec direct = u_step(cfg, mean, s);
            Vec averaged = Vec::Zero(d);
            for (const Vec& g : gs) averaged += u_step(cfg, g, s);
            averaged /= 5.0;
            CHECK((direct - averaged).lpNorm<Eigen::Infinity>() <= 1e-12);
        }
    }
}

TEST_CASE("the g-dependent part of u_step is additive") {
    RngStream rng(32);
    const Eigen::Index d = 8;
    for (BaseOptConfig cfg : {sgd(), sgdm(), adam(0.9, 0.99, 1e-3), adagrad(1e-3)}) {
        for (int trial = 0; trial < 50; ++trial) {
            OptimizerState s = random_state(cfg, d, rng);
            Vec g1 = rng.normal_vec(d), g2 = rng.normal_vec(d);
            Vec zero = u_step(cfg, Vec::Zero(d), s);
            Vec lhs = u_step(cfg, g1 + g2, s) - zero;
            Vec rhs = (u_step(cfg, g1, s) - zero) + (u_step(cfg, g2, s) - zero);
            CHECK((lhs - rhs).lpNorm<Eigen::Infinity>() <= 1e-12);
        }
    }
}

TEST_CASE("fixed-state updates respect the advertised Lipschitz bound") {
    RngStream rng(33);
    const Eigen::Index d = 6;
    for (BaseOptConfig cfg : {sgd(), sgdm(0.7), adam(0.9, 0.99, 1e-2), adagrad(1e-2, 0.0)}) {
        const double b = lipschitz_bound(cfg);
        for (int trial = 0; trial < 10000; ++trial) {
            OptimizerState s = random_state(cfg, d, rng);
            Vec g = rng.normal_vec(d) * std::exp(rng.uniform(-3.0, 3.0));
            Vec zero = u_step(cfg, Vec::Zero(d), s);
            double lhs = (u_step(cfg, g, s) - zero).norm();
            CHECK(lhs <= b * g.norm() * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("adagrad accumulator never decreases") {
    RngStream rng(34);
    BaseOptConfig cfg = adagrad();
    OptimizerState s = init_state(cfg, 5);
    for (int step = 0; step < 200; ++step) {
        Vec g = rng.normal_vec(5);
        OptimizerState next = v_step(cfg, g, s);
        const Vec& v_old = std::get<AdagradState>(s).v;
        const Vec& v_new = std::get<AdagradState>(next).v;
        for (Eigen::Index i = 0; i < 5; ++i) CHECK(v_new[i] >= v_old[i]);
        s = next;
    }
}

TEST_CASE("v_step leaves its input state untouched") {
    BaseOptConfig cfg = adam();
    AdamState original{make_vec({1, 2}), make_vec({3, 4})};
    OptimizerState s = original;
    (void)v_step(cfg, make_vec({5, 6}), s);
    CHECK(std::get<AdamState>(s).m[0] == 1.0);
    CHECK(std::get<AdamState>(s).v[1] == 4.0);
}
