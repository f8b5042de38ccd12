#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace mimesim {

using Vec = Eigen::VectorXd;

// Splittable counter-based random stream.
//
// Every consumer of randomness in the simulator owns its own stream, derived
// from a parent via child(label). Derivation is pure: it depends only on the
// parent's key and the label, never on how many draws the parent has made.
// This is what makes runs reproducible under client-level parallelism and
// lets two algorithms replay identical noise when given identical labels.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    // Pure derivation: same (parent, label) always yields the same child.
    RngStream child(std::uint64_t label) const;

    std::uint64_t next_u64();
    // Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound);

    double uniform();                        // [0, 1)
    double uniform(double lo, double hi);    // [lo, hi)
    double normal();                         // standard normal
    Vec normal_vec(Eigen::Index d);          // iid standard normals

    // k distinct indices from {0,...,n-1}, returned in ascending order so
    // downstream iteration order never depends on draw order.
    std::vector<int> sample_without_replacement(int n, int k);
    std::vector<int> permutation(int n);

private:
    RngStream(std::uint64_t key, std::uint64_t ctr);

    std::uint64_t key_;
    std::uint64_t ctr_;
};

// Weighted mean of equally sized vectors. Accumulates in ascending index
// order for bit-stable results. Equal weights are detected and collapse to
// the plain mean, so scaling all weights by a constant cannot perturb the
// last ulp. Throws std::invalid_argument on empty input, size mismatch,
// negative/non-finite weights, or all-zero weight.
Vec weighted_average(std::span<const Vec> vectors, std::span<const double> weights);

// Uniform variant: plain mean in ascending index order.
Vec weighted_average(std::span<const Vec> vectors);

bool all_finite(const Vec& v);

}  // namespace mimesim
