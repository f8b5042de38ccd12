#pragma once

#include "mimesim/core.hpp"

#include <string>
#include <variant>

namespace mimesim {

// A base optimizer is the pair (u_step, v_step): u_step maps a gradient and
// the current statistics to a parameter update direction, v_step folds a
// gradient into the statistics. Neither applies a learning rate and neither
// mutates its inputs; state flows by value.
//
// No bias correction anywhere, and the stability offset sits outside the
// square root: denominators are eps0 + sqrt(v).
enum class BaseOptKind { Sgd, SgdMomentum, Adam, Adagrad };

struct BaseOptConfig {
    BaseOptKind kind = BaseOptKind::Sgd;
    double beta = 0.9;          // sgdm momentum
    double beta1 = 0.9;         // adam first moment
    double beta2 = 0.99;        // adam second moment
    double eps0 = 1e-7;         // additive offset outside the sqrt
    double adagrad_init = 0.1;  // initial accumulator value per coordinate
};

struct EmptyState {};
struct MomentumState {
    Vec m;
};
struct AdagradState {
    Vec v;
};
struct AdamState {
    Vec m;
    Vec v;
};

using OptimizerState = std::variant<EmptyState, MomentumState, AdagradState, AdamState>;

OptimizerState init_state(const BaseOptConfig& cfg, Eigen::Index d);

// Update direction; the caller applies x -= eta * u_step(...).
Vec u_step(const BaseOptConfig& cfg, const Vec& g, const OptimizerState& s);

// New statistics after folding in g; the input state is untouched.
OptimizerState v_step(const BaseOptConfig& cfg, const Vec& g, const OptimizerState& s);

// Smallest B with ||u_step(g, s) - u_step(0, s)|| <= B ||g|| for all g, s:
// 1 for sgd/sgdm, 1/eps0 for adam/adagrad (the denominator can shrink to eps0).
double lipschitz_bound(const BaseOptConfig& cfg);

// Number of floats needed to broadcast the statistics for dimension d:
// 0, d, d, 2d for sgd, sgdm, adagrad, adam.
Eigen::Index state_size(const BaseOptConfig& cfg, Eigen::Index d);

std::string to_string(BaseOptKind kind);
BaseOptKind base_opt_kind_from_string(const std::string& name);

}  // namespace mimesim
