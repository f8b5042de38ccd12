#include "mimesim/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mimesim {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer; full-avalanche mixing of a 64-bit word.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed + kGolden)), ctr_(0) {}

RngStream::RngStream(std::uint64_t key, std::uint64_t ctr) : key_(key), ctr_(ctr) {}

RngStream RngStream::child(std::uint64_t label) const {
    // Mix the label through its own avalanche before combining with the key so
    // that small labels (0, 1, 2, ...) land in decorrelated streams.
    const std::uint64_t k = mix64(key_ ^ mix64(label * kGolden + 0x632be59bd9b4e019ULL));
    return RngStream(k, 0);
}

std::uint64_t RngStream::next_u64() {
    ++ctr_;
    return mix64(key_ + ctr_ * kGolden);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
    if (bound == 0) {
        throw std::invalid_argument("RngStream::next_below: bound must be positive");
    }
    // Rejection sampling: discard the partial top interval so every residue
    // is equally likely.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) {
            return r % bound;
        }
    }
}

double RngStream::uniform() {
    // 53 random mantissa bits -> uniform double in [0, 1).
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    if (!(lo < hi)) {
        throw std::invalid_argument("RngStream::uniform: need lo < hi");
    }
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    // Box-Muller, keeping only the cosine branch: one normal per two uniforms,
    // so the draw count per sample is fixed and streams stay aligned.
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) {
        u1 = 0x1.0p-53;
    }
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec RngStream::normal_vec(Eigen::Index d) {
    Vec v(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        v[i] = normal();
    }
    return v;
}

std::vector<int> RngStream::sample_without_replacement(int n, int k) {
    if (n < 0 || k < 0 || k > n) {
        throw std::invalid_argument("sample_without_replacement: need 0 <= k <= n");
    }
    std::vector<int> pool(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        pool[static_cast<std::size_t>(i)] = i;
    }
    // Partial Fisher-Yates: the first k slots end up holding the sample.
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::vector<int> RngStream::permutation(int n) {
    if (n < 0) {
        throw std::invalid_argument("permutation: n must be >= 0");
    }
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        p[static_cast<std::size_t>(i)] = i;
    }
    for (int i = 0; i + 1 < n; ++i) {
        const int j = i + static_cast<int>(next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
}

Vec weighted_average(std::span<const Vec> vectors, std::span<const double> weights) {
    if (vectors.empty()) {
        throw std::invalid_argument("weighted_average: empty input");
    }
    if (vectors.size() != weights.size()) {
        throw std::invalid_argument("weighted_average: vectors/weights size mismatch");
    }
    const Eigen::Index d = vectors[0].size();
    double wsum = 0.0;
    bool equal = true;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != d) {
            throw std::invalid_argument("weighted_average: dimension mismatch");
        }
        const double w = weights[i];
        if (!std::isfinite(w) || w < 0.0) {
            throw std::invalid_argument("weighted_average: weights must be finite and >= 0");
        }
        wsum += w;
        equal = equal && (w == weights[0]);
    }
    if (wsum <= 0.0) {
        throw std::invalid_argument("weighted_average: weights sum to zero");
    }
    if (equal) {
        return weighted_average(vectors);
    }
    Vec acc = Vec::Zero(d);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        acc += weights[i] * vectors[i];
    }
    return acc / wsum;
}

Vec weighted_average(std::span<const Vec> vectors) {
    if (vectors.empty()) {
        throw std::invalid_argument("weighted_average: empty input");
    }
    const Eigen::Index d = vectors[0].size();
    Vec acc = Vec::Zero(d);
    for (const Vec& v : vectors) {
        if (v.size() != d) {
            throw std::invalid_argument("weighted_average: dimension mismatch");
        }
        acc += v;
    }
    return acc / static_cast<double>(vectors.size());
}

bool all_finite(const Vec& v) {
    return v.allFinite();
}

}  // namespace mimesim
