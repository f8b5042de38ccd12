#include "mimesim/base_opt.hpp"

#include <stdexcept>

namespace mimesim {

namespace {

void check_dim(const Vec& state_vec, const Vec& g, const char* what) {
    if (state_vec.size() != g.size()) {
        throw std::invalid_argument(std::string("base_opt: ") + what +
                                    " dimension does not match gradient");
    }
}

}  // namespace

OptimizerState init_state(const BaseOptConfig& cfg, Eigen::Index d) {
    if (d <= 0) {
        throw std::invalid_argument("init_state: dimension must be positive");
    }
    switch (cfg.kind) {
        case BaseOptKind::Sgd:
            return EmptyState{};
        case BaseOptKind::SgdMomentum:
            return MomentumState{Vec::Zero(d)};
        case BaseOptKind::Adagrad:
            return AdagradState{Vec::Constant(d, cfg.adagrad_init)};
        case BaseOptKind::Adam:
            return AdamState{Vec::Zero(d), Vec::Zero(d)};
    }
    throw std::invalid_argument("init_state: unknown optimizer kind");
}

Vec u_step(const BaseOptConfig& cfg, const Vec& g, const OptimizerState& s) {
    switch (cfg.kind) {
        case BaseOptKind::Sgd: {
            if (!std::holds_alternative<EmptyState>(s)) {
                throw std::invalid_argument("u_step: sgd expects empty state");
            }
            return g;
        }
        case BaseOptKind::SgdMomentum: {
            const auto* st = std::get_if<MomentumState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("u_step: sgdm expects momentum state");
            }
            check_dim(st->m, g, "momentum");
            return (1.0 - cfg.beta) * g + cfg.beta * st->m;
        }
        case BaseOptKind::Adagrad: {
            const auto* st = std::get_if<AdagradState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("u_step: adagrad expects accumulator state");
            }
            check_dim(st->v, g, "accumulator");
            return (g.array() / (cfg.eps0 + st->v.array().sqrt())).matrix();
        }
        case BaseOptKind::Adam: {
            const auto* st = std::get_if<AdamState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("u_step: adam expects adam state");
            }
            check_dim(st->m, g, "first moment");
            check_dim(st->v, g, "second moment");
            const Vec num = (1.0 - cfg.beta1) * g + cfg.beta1 * st->m;
            return (num.array() / (cfg.eps0 + st->v.array().sqrt())).matrix();
        }
    }
    throw std::invalid_argument("u_step: unknown optimizer kind");
}

OptimizerState v_step(const BaseOptConfig& cfg, const Vec& g, const OptimizerState& s) {
    switch (cfg.kind) {
        case BaseOptKind::Sgd: {
            if (!std::holds_alternative<EmptyState>(s)) {
                throw std::invalid_argument("v_step: sgd expects empty state");
            }
            return EmptyState{};
        }
        case BaseOptKind::SgdMomentum: {
            const auto* st = std::get_if<MomentumState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("v_step: sgdm expects momentum state");
            }
            check_dim(st->m, g, "momentum");
            return MomentumState{(1.0 - cfg.beta) * g + cfg.beta * st->m};
        }
        case BaseOptKind::Adagrad: {
            const auto* st = std::get_if<AdagradState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("v_step: adagrad expects accumulator state");
            }
            check_dim(st->v, g, "accumulator");
            return AdagradState{st->v + g.cwiseProduct(g)};
        }
        case BaseOptKind::Adam: {
            const auto* st = std::get_if<AdamState>(&s);
            if (st == nullptr) {
                throw std::invalid_argument("v_step: adam expects adam state");
            }
            check_dim(st->m, g, "first moment");
            check_dim(st->v, g, "second moment");
            AdamState next;
            next.m = (1.0 - cfg.beta1) * g + cfg.beta1 * st->m;
            next.v = (1.0 - cfg.beta2) * g.cwiseProduct(g) + cfg.beta2 * st->v;
            return next;
        }
    }
    throw std::invalid_argument("v_step: unknown optimizer kind");
}

double lipschitz_bound(const BaseOptConfig& cfg) {
    switch (cfg.kind) {
        case BaseOptKind::Sgd:
        case BaseOptKind::SgdMomentum:
            return 1.0;
        case BaseOptKind::Adagrad:
        case BaseOptKind::Adam:
            if (cfg.eps0 <= 0.0) {
                throw std::invalid_argument("lipschitz_bound: eps0 must be positive");
            }
            return 1.0 / cfg.eps0;
    }
    throw std::invalid_argument("lipschitz_bound: unknown optimizer kind");
}

Eigen::Index state_size(const BaseOptConfig& cfg, Eigen::Index d) {
    switch (cfg.kind) {
        case BaseOptKind::Sgd:
            return 0;
        case BaseOptKind::SgdMomentum:
        case BaseOptKind::Adagrad:
            return d;
        case BaseOptKind::Adam:
            return 2 * d;
    }
    throw std::invalid_argument("state_size: unknown optimizer kind");
}

std::string to_string(BaseOptKind kind) {
    switch (kind) {
        case BaseOptKind::Sgd:
            return "sgd";
        case BaseOptKind::SgdMomentum:
            return "sgdm";
        case BaseOptKind::Adam:
            return "adam";
        case BaseOptKind::Adagrad:
            return "adagrad";
    }
    throw std::invalid_argument("to_string: unknown optimizer kind");
}

BaseOptKind base_opt_kind_from_string(const std::string& name) {
    if (name == "sgd") return BaseOptKind::Sgd;
    if (name == "sgdm") return BaseOptKind::SgdMomentum;
    if (name == "adam") return BaseOptKind::Adam;
    if (name == "adagrad") return BaseOptKind::Adagrad;
    throw std::invalid_argument("unknown base optimizer '" + name + "'");
}

}  // namespace mimesim
