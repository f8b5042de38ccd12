#include "mimesim/problems.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mimesim {

namespace {

double stable_softplus(double z) {
    // log(1 + e^z) without overflow for large |z|.
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_batch(std::span<const int> batch, int n) {
    if (batch.empty()) {
        throw std::invalid_argument("client: empty batch");
    }
    for (int idx : batch) {
        if (idx < 0 || idx >= n) {
            throw std::invalid_argument("client: batch index out of range");
        }
    }
}

// Largest |eigenvalue| of a symmetric matrix.
double sym_abs_max_eig(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("eigen decomposition failed");
    }
    const auto& ev = es.eigenvalues();
    return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

double sym_min_eig(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("eigen decomposition failed");
    }
    return es.eigenvalues().minCoeff();
}

// ||op||_2 for a symmetric operator, via power iteration on op∘op (which is
// positive semidefinite, so the iteration cannot oscillate between extreme
// eigenvalues of opposite sign). For a unit vector v, v' (op∘op) v = ||op v||^2.
double sym_operator_norm(const std::function<Vec(const Vec&)>& op, Eigen::Index d,
                         RngStream& rng) {
    Vec v = rng.normal_vec(d);
    double nv = v.norm();
    if (nv == 0.0) {
        v = Vec::Unit(d, 0);
        nv = 1.0;
    }
    v /= nv;
    double est = 0.0;
    for (int it = 0; it < 500; ++it) {
        const Vec w = op(v);
        const double nw = w.norm();
        if (nw <= 1e-300) {
            return 0.0;
        }
        const Vec w2 = op(w / nw);
        const double next = w2.norm();  // ~ ||op|| once v aligns
        v = w2 / std::max(next, 1e-300);
        if (it > 2 && std::abs(next - est) <= 1e-7 * std::max(1.0, next)) {
            return next;
        }
        est = next;
    }
    return est;
}

bool all_quadratic(const Population& pop) {
    for (const auto& c : pop.clients) {
        if (c->hessian_matrix() == nullptr || c->mean_target() == nullptr) {
            return false;
        }
    }
    return !pop.clients.empty();
}

// Dense population Hessian at x, assembled column by column from HVPs.
Eigen::MatrixXd dense_population_hessian(const Population& pop, const Vec& x) {
    const Eigen::Index d = pop.dim();
    Eigen::MatrixXd h(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        h.col(j) = pop.population_hvp(x, Vec::Unit(d, j));
    }
    return 0.5 * (h + h.transpose());
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        idx[static_cast<std::size_t>(i)] = i;
    }
    return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Population

Eigen::Index Population::dim() const {
    if (clients.empty()) {
        throw std::invalid_argument("population: no clients");
    }
    return clients.front()->dim();
}

int Population::num_clients() const {
    return static_cast<int>(clients.size());
}

std::vector<double> Population::client_weights(WeightMode mode) const {
    std::vector<double> w(clients.size(), 1.0);
    if (mode == WeightMode::ByCount) {
        for (std::size_t i = 0; i < clients.size(); ++i) {
            w[i] = static_cast<double>(clients[i]->num_samples());
        }
    }
    return w;
}

double Population::population_loss(const Vec& x, WeightMode mode) const {
    const std::vector<double> w = client_weights(mode);
    double acc = 0.0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        acc += w[i] * clients[i]->full_loss(x);
        wsum += w[i];
    }
    return acc / wsum;
}

Vec Population::population_gradient(const Vec& x, WeightMode mode) const {
    const std::vector<double> w = client_weights(mode);
    std::vector<Vec> grads;
    grads.reserve(clients.size());
    for (const auto& c : clients) {
        grads.push_back(c->full_gradient(x));
    }
    return weighted_average(grads, w);
}

Vec Population::population_hvp(const Vec& x, const Vec& v, WeightMode mode) const {
    const std::vector<double> w = client_weights(mode);
    std::vector<Vec> prods;
    prods.reserve(clients.size());
    for (const auto& c : clients) {
        prods.push_back(c->hvp(x, v, all_indices(c->num_samples())));
    }
    return weighted_average(prods, w);
}

std::optional<Vec> Population::global_optimum(WeightMode mode) const {
    const std::vector<double> w = client_weights(mode);
    const Eigen::Index d = dim();
    Eigen::MatrixXd a_bar = Eigen::MatrixXd::Zero(d, d);
    Vec b_bar = Vec::Zero(d);
    double wsum = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const Eigen::MatrixXd* a = clients[i]->hessian_matrix();
        const Vec* b = clients[i]->mean_target();
        if (a == nullptr || b == nullptr) {
            return std::nullopt;  // no closed form for this family
        }
        a_bar += w[i] * (*a);
        b_bar += w[i] * (*b);
        wsum += w[i];
    }
    a_bar /= wsum;
    b_bar /= wsum;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a_bar);
    if (!lu.isInvertible()) {
        throw std::runtime_error("global_optimum: mean Hessian is singular");
    }
    return lu.solve(b_bar);
}

// ---------------------------------------------------------------------------
// QuadraticClient

QuadraticClient::QuadraticClient(Eigen::MatrixXd a, std::vector<Vec> targets)
    : a_(std::move(a)), targets_(std::move(targets)) {
    if (a_.rows() != a_.cols() || a_.rows() == 0) {
        throw std::invalid_argument("quadratic client: Hessian must be square");
    }
    if (!a_.isApprox(a_.transpose(), 1e-12)) {
        throw std::invalid_argument("quadratic client: Hessian must be symmetric");
    }
    if (targets_.empty()) {
        throw std::invalid_argument("quadratic client: needs at least one sample");
    }
    for (const Vec& b : targets_) {
        if (b.size() != a_.rows()) {
            throw std::invalid_argument("quadratic client: target dimension mismatch");
        }
    }
    mean_target_ = Vec::Zero(a_.rows());
    for (const Vec& b : targets_) {
        mean_target_ += b;
    }
    mean_target_ /= static_cast<double>(targets_.size());
}

Eigen::Index QuadraticClient::dim() const { return a_.rows(); }

int QuadraticClient::num_samples() const { return static_cast<int>(targets_.size()); }

double QuadraticClient::full_loss(const Vec& x) const {
    return 0.5 * x.dot(a_ * x) - mean_target_.dot(x);
}

Vec QuadraticClient::full_gradient(const Vec& x) const {
    return a_ * x - mean_target_;
}

Vec QuadraticClient::sample_gradient(const Vec& x, std::span<const int> batch) const {
    check_batch(batch, num_samples());
    Vec b = Vec::Zero(dim());
    for (int idx : batch) {
        b += targets_[static_cast<std::size_t>(idx)];
    }
    b /= static_cast<double>(batch.size());
    return a_ * x - b;
}

Vec QuadraticClient::hvp(const Vec& /*x*/, const Vec& v, std::span<const int> batch) const {
    check_batch(batch, num_samples());
    return a_ * v;
}

const Eigen::MatrixXd* QuadraticClient::hessian_matrix() const { return &a_; }

const Vec* QuadraticClient::mean_target() const { return &mean_target_; }

// ---------------------------------------------------------------------------
// LogisticClient

LogisticClient::LogisticClient(Eigen::MatrixXd features, std::vector<int> labels,
                               double l2_reg)
    : features_(std::move(features)), labels_(std::move(labels)), l2_reg_(l2_reg) {
    if (features_.rows() == 0 || features_.cols() == 0) {
        throw std::invalid_argument("logistic client: empty feature matrix");
    }
    if (static_cast<std::size_t>(features_.rows()) != labels_.size()) {
        throw std::invalid_argument("logistic client: feature/label count mismatch");
    }
    for (int y : labels_) {
        if (y != 0 && y != 1) {
            throw std::invalid_argument("logistic client: labels must be 0 or 1");
        }
    }
    if (l2_reg_ < 0.0) {
        throw std::invalid_argument("logistic client: negative regularizer");
    }
}

Eigen::Index LogisticClient::dim() const { return features_.cols(); }

int LogisticClient::num_samples() const { return static_cast<int>(features_.rows()); }

double LogisticClient::full_loss(const Vec& x) const {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < features_.rows(); ++r) {
        const double z = features_.row(r).dot(x);
        acc += stable_softplus(z) - static_cast<double>(labels_[static_cast<std::size_t>(r)]) * z;
    }
    return acc / static_cast<double>(features_.rows()) + 0.5 * l2_reg_ * x.squaredNorm();
}

Vec LogisticClient::full_gradient(const Vec& x) const {
    return sample_gradient(x, all_indices(num_samples()));
}

Vec LogisticClient::sample_gradient(const Vec& x, std::span<const int> batch) const {
    check_batch(batch, num_samples());
    Vec g = Vec::Zero(dim());
    for (int idx : batch) {
        const auto row = features_.row(idx);
        const double z = row.dot(x);
        g += (sigmoid(z) - static_cast<double>(labels_[static_cast<std::size_t>(idx)])) *
             row.transpose();
    }
    g /= static_cast<double>(batch.size());
    g += l2_reg_ * x;
    return g;
}

Vec LogisticClient::hvp(const Vec& x, const Vec& v, std::span<const int> batch) const {
    check_batch(batch, num_samples());
    Vec h = Vec::Zero(dim());
    for (int idx : batch) {
        const auto row = features_.row(idx);
        const double p = sigmoid(row.dot(x));
        h += (p * (1.0 - p) * row.dot(v)) * row.transpose();
    }
    h /= static_cast<double>(batch.size());
    h += l2_reg_ * v;
    return h;
}

// ---------------------------------------------------------------------------
// Generators

Population make_quadratic_population(const QuadraticSpec& spec, RngStream rng) {
    const Eigen::Index d = spec.dim;
    const int n_clients = spec.num_clients;
    const int n_samples = spec.samples_per_client;
    if (d < 1 || n_clients < 1 || n_samples < 1) {
        throw std::invalid_argument("quadratic spec: dim, clients and samples must be >= 1");
    }
    if (!(spec.mu > 0.0)) {
        throw std::invalid_argument("quadratic spec: mean Hessian must be positive definite (mu > 0)");
    }
    if (spec.l_smooth < spec.mu) {
        throw std::invalid_argument("quadratic spec: need l_smooth >= mu");
    }
    if (d == 1 && spec.l_smooth != spec.mu) {
        throw std::invalid_argument("quadratic spec: dim 1 cannot span [mu, l_smooth]");
    }
    if (spec.hessian_spread < 0.0 || spec.optimum_spread < 0.0 || spec.noise_std < 0.0) {
        throw std::invalid_argument("quadratic spec: dials must be >= 0");
    }
    if ((spec.hessian_spread > 0.0 || spec.optimum_spread > 0.0) && n_clients < 2) {
        throw std::invalid_argument("quadratic spec: spread dials need at least 2 clients");
    }
    if (spec.noise_std > 0.0 && n_samples < 2) {
        throw std::invalid_argument("quadratic spec: noise needs at least 2 samples per client");
    }
    if (spec.hessian_spread > 2.0 * spec.l_smooth) {
        throw std::invalid_argument("quadratic spec: hessian_spread must be <= 2 l_smooth");
    }

    // Mean Hessian: random orthogonal basis, eigenvalues pinned to [mu, L].
    RngStream q_rng = rng.child(0);
    Eigen::MatrixXd gauss(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
        gauss.row(r) = q_rng.normal_vec(d).transpose();
    }
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ();
    RngStream eig_rng = rng.child(1);
    Vec eigs(d);
    eigs[0] = spec.mu;
    if (d > 1) {
        eigs[d - 1] = spec.l_smooth;
    }
    for (Eigen::Index i = 1; i + 1 < d; ++i) {
        eigs[i] = eig_rng.uniform(spec.mu, spec.l_smooth);
    }
    Eigen::MatrixXd a_bar = q * eigs.asDiagonal() * q.transpose();
    a_bar = 0.5 * (a_bar + a_bar.transpose());

    // Per-client Hessian deviations: symmetric Gaussian, centered to mean
    // zero, rescaled so the largest spectral norm equals hessian_spread.
    std::vector<Eigen::MatrixXd> deltas(static_cast<std::size_t>(n_clients),
                                        Eigen::MatrixXd::Zero(d, d));
    if (spec.hessian_spread > 0.0) {
        RngStream d_rng = rng.child(2);
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < n_clients; ++i) {
            RngStream ci = d_rng.child(static_cast<std::uint64_t>(i));
            Eigen::MatrixXd r(d, d);
            for (Eigen::Index row = 0; row < d; ++row) {
                r.row(row) = ci.normal_vec(d).transpose();
            }
            deltas[static_cast<std::size_t>(i)] = 0.5 * (r + r.transpose());
            mean += deltas[static_cast<std::size_t>(i)];
        }
        mean /= static_cast<double>(n_clients);
        double max_norm = 0.0;
        for (auto& dl : deltas) {
            dl -= mean;
            max_norm = std::max(max_norm, sym_abs_max_eig(dl));
        }
        if (max_norm > 0.0) {
            for (auto& dl : deltas) {
                dl *= spec.hessian_spread / max_norm;
            }
        }
    }

    const Vec x_star = rng.child(3).normal_vec(d);

    // Per-client gradient shifts at the optimum: centered, rescaled so the
    // mean squared norm equals optimum_spread^2.
    std::vector<Vec> shifts(static_cast<std::size_t>(n_clients), Vec::Zero(d));
    if (spec.optimum_spread > 0.0) {
        RngStream s_rng = rng.child(4);
        Vec mean = Vec::Zero(d);
        for (int i = 0; i < n_clients; ++i) {
            shifts[static_cast<std::size_t>(i)] =
                s_rng.child(static_cast<std::uint64_t>(i)).normal_vec(d);
            mean += shifts[static_cast<std::size_t>(i)];
        }
        mean /= static_cast<double>(n_clients);
        double mean_sq = 0.0;
        for (auto& s : shifts) {
            s -= mean;
            mean_sq += s.squaredNorm();
        }
        mean_sq /= static_cast<double>(n_clients);
        if (mean_sq > 0.0) {
            const double scale = spec.optimum_spread / std::sqrt(mean_sq);
            for (auto& s : shifts) {
                s *= scale;
            }
        }
    }

    RngStream noise_rng = rng.child(5);
    Population pop;
    pop.clients.reserve(static_cast<std::size_t>(n_clients));
    for (int i = 0; i < n_clients; ++i) {
        Eigen::MatrixXd a = a_bar + deltas[static_cast<std::size_t>(i)];
        // Keep each client convex: floor tiny/negative eigenvalues. Only
        // triggers when hessian_spread >= mu, and the floor is small enough
        // not to disturb the measured dials at test tolerances.
        const double lmin = sym_min_eig(a);
        if (lmin < 1e-9) {
            a += (1e-9 - lmin) * Eigen::MatrixXd::Identity(d, d);
        }
        const Vec b_mean = a * x_star + shifts[static_cast<std::size_t>(i)];

        std::vector<Vec> targets(static_cast<std::size_t>(n_samples), b_mean);
        if (spec.noise_std > 0.0) {
            RngStream ci = noise_rng.child(static_cast<std::uint64_t>(i));
            std::vector<Vec> noise(static_cast<std::size_t>(n_samples));
            Vec mean = Vec::Zero(d);
            for (int z = 0; z < n_samples; ++z) {
                noise[static_cast<std::size_t>(z)] = ci.normal_vec(d);
                mean += noise[static_cast<std::size_t>(z)];
            }
            mean /= static_cast<double>(n_samples);
            double mean_sq = 0.0;
            for (auto& e : noise) {
                e -= mean;
                mean_sq += e.squaredNorm();
            }
            mean_sq /= static_cast<double>(n_samples);
            const double scale = mean_sq > 0.0 ? spec.noise_std / std::sqrt(mean_sq) : 0.0;
            for (int z = 0; z < n_samples; ++z) {
                targets[static_cast<std::size_t>(z)] =
                    b_mean + scale * noise[static_cast<std::size_t>(z)];
            }
        }
        pop.clients.push_back(std::make_shared<QuadraticClient>(std::move(a), std::move(targets)));
    }
    return pop;
}

Population make_logistic_population(const LogisticSpec& spec, RngStream rng) {
    const Eigen::Index d = spec.dim;
    if (d < 1 || spec.num_clients < 1 || spec.samples_per_client < 1) {
        throw std::invalid_argument("logistic spec: dim, clients and samples must be >= 1");
    }
    if (spec.label_skew < 0.0 || spec.label_skew > 1.0) {
        throw std::invalid_argument("logistic spec: label_skew must be in [0, 1]");
    }
    if (spec.shift < 0.0 || spec.l2_reg < 0.0) {
        throw std::invalid_argument("logistic spec: shift and l2_reg must be >= 0");
    }

    Vec w_true = rng.child(0).normal_vec(d);
    const double wn = w_true.norm();
    w_true = wn > 0.0 ? Vec(2.0 * w_true / wn) : Vec(2.0 * Vec::Unit(d, 0));

    Population pop;
    pop.clients.reserve(static_cast<std::size_t>(spec.num_clients));
    for (int i = 0; i < spec.num_clients; ++i) {
        RngStream ci = rng.child(10 + static_cast<std::uint64_t>(i));
        Vec dir = ci.child(0).normal_vec(d);
        const double dn = dir.norm();
        dir = dn > 0.0 ? Vec(dir / dn) : Vec(Vec::Unit(d, 0));
        const Vec center = spec.shift * dir;

        RngStream feat_rng = ci.child(1);
        RngStream label_rng = ci.child(2);
        const double prior = ci.child(3).uniform();

        Eigen::MatrixXd feats(spec.samples_per_client, d);
        std::vector<int> labels(static_cast<std::size_t>(spec.samples_per_client));
        for (int z = 0; z < spec.samples_per_client; ++z) {
            const Vec a = center + feat_rng.normal_vec(d);
            feats.row(z) = a.transpose();
            // Ground-truth model labels, replaced by a client-specific prior
            // with probability label_skew.
            const double p_model = sigmoid(a.dot(w_true));
            const bool use_prior = label_rng.uniform() < spec.label_skew;
            const double p = use_prior ? prior : p_model;
            labels[static_cast<std::size_t>(z)] = label_rng.uniform() < p ? 1 : 0;
        }
        pop.clients.push_back(
            std::make_shared<LogisticClient>(std::move(feats), std::move(labels), spec.l2_reg));
    }
    return pop;
}

Population make_explicit_quadratic(std::vector<Eigen::MatrixXd> hessians,
                                   std::vector<Vec> targets) {
    if (hessians.empty() || hessians.size() != targets.size()) {
        throw std::invalid_argument("explicit quadratic: need one Hessian and target per client");
    }
    Population pop;
    pop.clients.reserve(hessians.size());
    for (std::size_t i = 0; i < hessians.size(); ++i) {
        pop.clients.push_back(std::make_shared<QuadraticClient>(
            std::move(hessians[i]), std::vector<Vec>{std::move(targets[i])}));
    }
    return pop;
}

Population repartition_iid(const Population& pop, RngStream rng) {
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<int> labels;
    double reg = 0.0;
    for (const auto& c : pop.clients) {
        const auto* lc = dynamic_cast<const LogisticClient*>(c.get());
        if (lc == nullptr) {
            throw std::invalid_argument("repartition_iid: population is not logistic");
        }
        reg = lc->l2_reg();
        for (Eigen::Index r = 0; r < lc->features().rows(); ++r) {
            rows.push_back(lc->features().row(r));
            labels.push_back(lc->labels()[static_cast<std::size_t>(r)]);
        }
    }
    const int n_clients = pop.num_clients();
    const int total = static_cast<int>(rows.size());
    if (total % n_clients != 0) {
        throw std::invalid_argument("repartition_iid: total samples not divisible by clients");
    }
    const int per = total / n_clients;
    const std::vector<int> perm = rng.permutation(total);
    Population out;
    out.clients.reserve(static_cast<std::size_t>(n_clients));
    const Eigen::Index d = pop.dim();
    for (int i = 0; i < n_clients; ++i) {
        Eigen::MatrixXd feats(per, d);
        std::vector<int> lab(static_cast<std::size_t>(per));
        for (int z = 0; z < per; ++z) {
            const int src = perm[static_cast<std::size_t>(i * per + z)];
            feats.row(z) = rows[static_cast<std::size_t>(src)];
            lab[static_cast<std::size_t>(z)] = labels[static_cast<std::size_t>(src)];
        }
        out.clients.push_back(
            std::make_shared<LogisticClient>(std::move(feats), std::move(lab), reg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Measured constants

double estimate_delta(const Population& pop, RngStream rng, int probe_points) {
    const Eigen::Index d = pop.dim();
    if (all_quadratic(pop)) {
        // Per-sample Hessians equal the per-client matrices: exact answer.
        Eigen::MatrixXd a_bar = Eigen::MatrixXd::Zero(d, d);
        for (const auto& c : pop.clients) {
            a_bar += *c->hessian_matrix();
        }
        a_bar /= static_cast<double>(pop.num_clients());
        double worst = 0.0;
        for (const auto& c : pop.clients) {
            worst = std::max(worst, sym_abs_max_eig(*c->hessian_matrix() - a_bar));
        }
        return worst;
    }
    if (probe_points < 1) {
        throw std::invalid_argument("estimate_delta: need at least one probe point");
    }
    double worst = 0.0;
    for (int p = 0; p < probe_points; ++p) {
        RngStream probe_rng = rng.child(static_cast<std::uint64_t>(p));
        const Vec x = probe_rng.normal_vec(d);
        const Eigen::MatrixXd h_bar = dense_population_hessian(pop, x);
        for (const auto& c : pop.clients) {
            for (int z = 0; z < c->num_samples(); ++z) {
                const int batch[1] = {z};
                auto op = [&](const Vec& v) -> Vec {
                    return c->hvp(x, v, batch) - h_bar * v;
                };
                worst = std::max(worst, sym_operator_norm(op, d, probe_rng));
            }
        }
    }
    return worst;
}

double estimate_l_smooth(const Population& pop, RngStream rng, int probe_points) {
    const Eigen::Index d = pop.dim();
    if (all_quadratic(pop)) {
        double worst = 0.0;
        for (const auto& c : pop.clients) {
            worst = std::max(worst, sym_abs_max_eig(*c->hessian_matrix()));
        }
        return worst;
    }
    if (probe_points < 1) {
        throw std::invalid_argument("estimate_l_smooth: need at least one probe point");
    }
    double worst = 0.0;
    for (int p = 0; p < probe_points; ++p) {
        RngStream probe_rng = rng.child(static_cast<std::uint64_t>(p));
        const Vec x = probe_rng.normal_vec(d);
        for (const auto& c : pop.clients) {
            for (int z = 0; z < c->num_samples(); ++z) {
                const int batch[1] = {z};
                auto op = [&](const Vec& v) -> Vec { return c->hvp(x, v, batch); };
                worst = std::max(worst, sym_operator_norm(op, d, probe_rng));
            }
        }
    }
    return worst;
}

double estimate_gradient_diversity_sq(const Population& pop, const Vec& x, WeightMode mode) {
    const std::vector<double> w = pop.client_weights(mode);
    const Vec g_bar = pop.population_gradient(x, mode);
    double acc = 0.0;
    double wsum = 0.0;
    for (std::size_t i = 0; i < pop.clients.size(); ++i) {
        acc += w[i] * (pop.clients[i]->full_gradient(x) - g_bar).squaredNorm();
        wsum += w[i];
    }
    return acc / wsum;
}

double estimate_gradient_diversity_sq(const Population& pop, std::span<const Vec> probes,
                                      WeightMode mode) {
    if (probes.empty()) {
        throw std::invalid_argument("estimate_gradient_diversity_sq: need at least one probe point");
    }
    double worst = 0.0;
    for (const Vec& x : probes) {
        worst = std::max(worst, estimate_gradient_diversity_sq(pop, x, mode));
    }
    return worst;
}

double estimate_noise_sq(const Population& pop, const Vec& x) {
    double acc = 0.0;
    for (const auto& c : pop.clients) {
        const Vec full = c->full_gradient(x);
        double var = 0.0;
        for (int z = 0; z < c->num_samples(); ++z) {
            const int batch[1] = {z};
            var += (c->sample_gradient(x, batch) - full).squaredNorm();
        }
        acc += var / static_cast<double>(c->num_samples());
    }
    return acc / static_cast<double>(pop.num_clients());
}

double estimate_pl_constant(const Population& pop) {
    if (all_quadratic(pop)) {
        const Eigen::Index d = pop.dim();
        Eigen::MatrixXd a_bar = Eigen::MatrixXd::Zero(d, d);
        for (const auto& c : pop.clients) {
            a_bar += *c->hessian_matrix();
        }
        a_bar /= static_cast<double>(pop.num_clients());
        return sym_min_eig(a_bar);
    }
    const auto* lc = dynamic_cast<const LogisticClient*>(pop.clients.front().get());
    if (lc != nullptr) {
        // The regularizer certifies strong convexity; a lower bound on the
        // curvature everywhere.
        return lc->l2_reg();
    }
    throw std::runtime_error("estimate_pl_constant: unsupported problem family");
}

namespace {

std::string full_precision(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

[[noreturn]] void bad_population_file(const std::string& why) {
    throw std::runtime_error("population file: " + why);
}

double read_double(std::istream& in, const char* what) {
    double v;
    if (!(in >> v)) bad_population_file(std::string("expected ") + what);
    return v;
}

long read_long(std::istream& in, const char* what) {
    long v;
    if (!(in >> v)) bad_population_file(std::string("expected ") + what);
    return v;
}

void expect_word(std::istream& in, const std::string& want) {
    std::string got;
    if (!(in >> got) || got != want) bad_population_file("expected '" + want + "', got '" + got + "'");
}

}  // namespace

// Self-describing plain-text layout, one token stream:
//   mimesim-population 1
//   dim <d> clients <N>
//   client <i> quadratic <n>
//     hessian <d*d row-major values>
//     target <d values>              (n times)
//   client <i> logistic <n> l2_reg <v>
//     sample <d feature values> <label 0|1>   (n times)
std::string serialize_population(const Population& pop) {
    const Eigen::Index d = pop.dim();
    std::ostringstream out;
    out << "mimesim-population 1\n";
    out << "dim " << d << " clients " << pop.num_clients() << "\n";
    for (int i = 0; i < pop.num_clients(); ++i) {
        const Client& c = *pop.clients[static_cast<std::size_t>(i)];
        if (const auto* qc = dynamic_cast<const QuadraticClient*>(&c)) {
            out << "client " << i << " quadratic " << qc->num_samples() << "\n";
            out << "hessian";
            const Eigen::MatrixXd& a = *qc->hessian_matrix();
            for (Eigen::Index r = 0; r < d; ++r)
                for (Eigen::Index col = 0; col < d; ++col) out << ' ' << full_precision(a(r, col));
            out << "\n";
            for (int z = 0; z < qc->num_samples(); ++z) {
                const int batch[1] = {z};
                // grad = A x - b_z, so b_z = A*0 - grad at 0.
                Vec b = -qc->sample_gradient(Vec::Zero(d), batch);
                out << "target";
                for (Eigen::Index k = 0; k < d; ++k) out << ' ' << full_precision(b[k]);
                out << "\n";
            }
        } else if (const auto* lc = dynamic_cast<const LogisticClient*>(&c)) {
            out << "client " << i << " logistic " << lc->num_samples() << " l2_reg "
                << full_precision(lc->l2_reg()) << "\n";
            for (int z = 0; z < lc->num_samples(); ++z) {
                out << "sample";
                for (Eigen::Index k = 0; k < d; ++k)
                    out << ' ' << full_precision(lc->features()(z, k));
                out << ' ' << lc->labels()[static_cast<std::size_t>(z)] << "\n";
            }
        } else {
            throw std::runtime_error("serialize_population: unsupported client type");
        }
    }
    return out.str();
}

Population deserialize_population(const std::string& text) {
    std::istringstream in(text);
    expect_word(in, "mimesim-population");
    if (read_long(in, "format version") != 1) bad_population_file("unsupported version");
    expect_word(in, "dim");
    const Eigen::Index d = read_long(in, "dimension");
    expect_word(in, "clients");
    const long n_clients = read_long(in, "client count");
    if (d < 1 || n_clients < 1) bad_population_file("dimension and client count must be >= 1");

    Population pop;
    for (long i = 0; i < n_clients; ++i) {
        expect_word(in, "client");
        if (read_long(in, "client index") != i) bad_population_file("client indices must be 0..N-1 in order");
        std::string kind;
        if (!(in >> kind)) bad_population_file("expected client kind");
        const long n = read_long(in, "sample count");
        if (n < 1) bad_population_file("sample count must be >= 1");
        if (kind == "quadratic") {
            expect_word(in, "hessian");
            Eigen::MatrixXd a(d, d);
            for (Eigen::Index r = 0; r < d; ++r)
                for (Eigen::Index col = 0; col < d; ++col) a(r, col) = read_double(in, "hessian entry");
            std::vector<Vec> targets;
            targets.reserve(static_cast<std::size_t>(n));
            for (long z = 0; z < n; ++z) {
                expect_word(in, "target");
                Vec b(d);
                for (Eigen::Index k = 0; k < d; ++k) b[k] = read_double(in, "target entry");
                targets.push_back(std::move(b));
            }
            pop.clients.push_back(std::make_shared<QuadraticClient>(std::move(a), std::move(targets)));
        } else if (kind == "logistic") {
            expect_word(in, "l2_reg");
            const double reg = read_double(in, "l2_reg value");
            Eigen::MatrixXd feats(n, d);
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (long z = 0; z < n; ++z) {
                expect_word(in, "sample");
                for (Eigen::Index k = 0; k < d; ++k) feats(z, k) = read_double(in, "feature value");
                labels[static_cast<std::size_t>(z)] = static_cast<int>(read_long(in, "label"));
            }
            pop.clients.push_back(std::make_shared<LogisticClient>(std::move(feats), std::move(labels), reg));
        } else {
            bad_population_file("unknown client kind '" + kind + "'");
        }
    }
    if (pop.dim() != d) bad_population_file("client dimensions disagree with header");
    return pop;
}

void save_population(const Population& pop, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write population file: " + path);
    out << serialize_population(pop);
}

Population load_population(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open population file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_population(buf.str());
}

}  // namespace mimesim
