#pragma once

#include "mimesim/core.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace mimesim {

// One client's local dataset. Gradients are mean gradients over the given
// batch of sample indices; implementations must be pure (no internal state),
// so concurrent calls from worker threads are safe.
class Client {
public:
    virtual ~Client() = default;

    virtual Eigen::Index dim() const = 0;
    virtual int num_samples() const = 0;

    // Mean loss / gradient over the whole local dataset.
    virtual double full_loss(const Vec& x) const = 0;
    virtual Vec full_gradient(const Vec& x) const = 0;

    // Mean gradient over the samples named in batch (indices into [0, n_i)).
    virtual Vec sample_gradient(const Vec& x, std::span<const int> batch) const = 0;

    // Mean Hessian-vector product over the batch.
    virtual Vec hvp(const Vec& x, const Vec& v, std::span<const int> batch) const = 0;

    // Closed-form accessors for quadratic clients; null for other families.
    virtual const Eigen::MatrixXd* hessian_matrix() const { return nullptr; }
    virtual const Vec* mean_target() const { return nullptr; }
};

enum class WeightMode { Uniform, ByCount };

struct Population {
    std::vector<std::shared_ptr<const Client>> clients;

    Eigen::Index dim() const;
    int num_clients() const;

    // Aggregation weights: all-ones, or local sample counts.
    std::vector<double> client_weights(WeightMode mode) const;

    double population_loss(const Vec& x, WeightMode mode = WeightMode::Uniform) const;
    Vec population_gradient(const Vec& x, WeightMode mode = WeightMode::Uniform) const;
    Vec population_hvp(const Vec& x, const Vec& v, WeightMode mode = WeightMode::Uniform) const;

    // Minimizer of the weighted objective when every client is quadratic;
    // nullopt when the family has no closed form (e.g. logistic). Throws
    // std::runtime_error if the mean Hessian is singular.
    std::optional<Vec> global_optimum(WeightMode mode = WeightMode::Uniform) const;
};

// f_i(x; zeta) = 0.5 x'Ax - b_zeta'x with a fixed per-client A and one b per
// sample. The client's own objective uses the mean target b.
class QuadraticClient : public Client {
public:
    QuadraticClient(Eigen::MatrixXd a, std::vector<Vec> targets);

    Eigen::Index dim() const override;
    int num_samples() const override;
    double full_loss(const Vec& x) const override;
    Vec full_gradient(const Vec& x) const override;
    Vec sample_gradient(const Vec& x, std::span<const int> batch) const override;
    Vec hvp(const Vec& x, const Vec& v, std::span<const int> batch) const override;
    const Eigen::MatrixXd* hessian_matrix() const override;
    const Vec* mean_target() const override;

private:
    Eigen::MatrixXd a_;
    std::vector<Vec> targets_;
    Vec mean_target_;
};

// Binary logistic regression with l2 regularization:
// f(x; (a, y)) = softplus(a'x) - y a'x + 0.5 reg ||x||^2, labels y in {0, 1}.
class LogisticClient : public Client {
public:
    LogisticClient(Eigen::MatrixXd features, std::vector<int> labels, double l2_reg);

    Eigen::Index dim() const override;
    int num_samples() const override;
    double full_loss(const Vec& x) const override;
    Vec full_gradient(const Vec& x) const override;
    Vec sample_gradient(const Vec& x, std::span<const int> batch) const override;
    Vec hvp(const Vec& x, const Vec& v, std::span<const int> batch) const override;

    const Eigen::MatrixXd& features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }
    double l2_reg() const { return l2_reg_; }

private:
    Eigen::MatrixXd features_;
    std::vector<int> labels_;
    double l2_reg_;
};

// Synthetic quadratic family with independently tunable dials. The generated
// population satisfies, exactly by construction (up to an eigenvalue floor
// when hessian_spread >= mu):
//   - eigenvalues of the mean Hessian span [mu, l_smooth],
//   - max_i ||A_i - mean A||_2 = hessian_spread,
//   - mean_i ||grad f_i(x*) - grad f(x*)||^2 = optimum_spread^2,
//   - per-client intra-sample gradient variance = noise_std^2 at every x.
struct QuadraticSpec {
    Eigen::Index dim = 20;
    int num_clients = 50;
    int samples_per_client = 1;
    double l_smooth = 1.0;
    double mu = 0.1;             // smallest eigenvalue of the mean Hessian, > 0
    double hessian_spread = 0.0; // delta dial
    double optimum_spread = 0.0; // G dial
    double noise_std = 0.0;      // sigma dial; needs samples_per_client >= 2
};

Population make_quadratic_population(const QuadraticSpec& spec, RngStream rng);

// Heterogeneous logistic family: per-client Gaussian feature clusters whose
// centers sit at distance `shift` from the origin in random directions, and
// labels drawn from a shared ground-truth model, flipped toward a per-client
// prior with probability `label_skew`.
struct LogisticSpec {
    Eigen::Index dim = 10;
    int num_clients = 20;
    int samples_per_client = 50;
    double shift = 1.0;
    double label_skew = 0.0;  // in [0, 1]
    double l2_reg = 1e-3;
};

Population make_logistic_population(const LogisticSpec& spec, RngStream rng);

// Hand-specified quadratic population, one sample per client.
Population make_explicit_quadratic(std::vector<Eigen::MatrixXd> hessians,
                                   std::vector<Vec> targets);

// Pools every sample in the population and deals them back out uniformly at
// random into equally sized clients. Only defined for logistic populations.
Population repartition_iid(const Population& pop, RngStream rng);

// Measured problem constants. Estimates are exact for quadratic populations
// (closed-form Hessians); other families use Hessian-vector-product power
// iteration at random probe points.

// max over (client, sample) of || per-sample Hessian - population Hessian ||_2.
double estimate_delta(const Population& pop, RngStream rng, int probe_points = 5);

// max over (client, sample) of || per-sample Hessian ||_2.
double estimate_l_smooth(const Population& pop, RngStream rng, int probe_points = 5);

// Weighted mean_i || grad f_i(x) - grad f(x) ||^2 at the given point.
double estimate_gradient_diversity_sq(const Population& pop, const Vec& x,
                                      WeightMode mode = WeightMode::Uniform);

// Max of the above over a set of probe points.
double estimate_gradient_diversity_sq(const Population& pop, std::span<const Vec> probes,
                                      WeightMode mode = WeightMode::Uniform);

// Mean over clients of the within-client per-sample gradient variance at x.
double estimate_noise_sq(const Population& pop, const Vec& x);

// Smallest eigenvalue of the population Hessian: exact for quadratics; for
// logistic families returns the l2 regularizer (a certified lower bound).
double estimate_pl_constant(const Population& pop);

// Plain-text population files ("mimesim-population 1" header; dimensions,
// per-client sample counts, then matrices row-major with full precision).
// Round-trips quadratic and logistic populations bit-exactly.
std::string serialize_population(const Population& pop);
Population deserialize_population(const std::string& text);
void save_population(const Population& pop, const std::string& path);
Population load_population(const std::string& path);

}  // namespace mimesim
