#include "mimesim/harness.hpp"

namespace mimesim {

// Bundled, self-contained scenario configs. Each is a full experiment file;
// the CLI resolves these names when no file with that name exists.
const std::map<std::string, std::string>& bundled_scenarios() {
    static const std::map<std::string, std::string> scenarios = {
        {"drift_demo", R"cfg(
# Two scalar quadratics pulling in opposite directions: client drift pins
# FedAvg-SGDm near a stale fixed point while Mime-SGDm reaches the optimum
# at x = 0.5.
[problem]
kind = explicit_quadratic
client0_hessian = 3
client0_target = 3
client1_hessian = 1
client1_target = -1

[run]
rounds = 500
seed = 7
x0 = zeros
oracle_every = 0

[algo]
algorithm = fedavg
name = fedavg-sgdm
base = sgdm
eta = 0.01
local_steps = 200

[algo]
algorithm = mime
name = mime-sgdm
base = sgdm
eta = 0.01
local_steps = 200
)cfg"},
        {"reduction_check", R"cfg(
# Emits reduction and drift oracle rows every round for Mime and MimeLite on
# a heterogeneous quadratic; max_abs_deviation should sit at numerical zero.
[problem]
kind = quadratic
dim = 20
clients = 50
samples_per_client = 1
l_smooth = 1
mu = 0.1
hessian_spread = 0.5
optimum_spread = 1

[run]
rounds = 3
seed = 11
x0 = gauss
x0_scale = 1
oracle_every = 1
trace_drift = true

[algo]
algorithm = mime
base = sgdm
eta = 0.04
local_steps = 5
clients_per_round = 5

[algo]
algorithm = mimelite
base = sgdm
eta = 0.04
local_steps = 5
clients_per_round = 5
)cfg"},
        {"scaling_S", R"cfg(
# Server-side momentum turns extra sampled clients into a lower noise floor:
# the S = 8 plateau of ||grad f||^2 sits well under the S = 2 one.
[problem]
kind = quadratic
dim = 10
clients = 50
samples_per_client = 4
l_smooth = 2
mu = 0.5
hessian_spread = 0.5
optimum_spread = 1
noise_std = 0.1

[run]
rounds = 2000
seed = 3
threads = 2
x0 = gauss
x0_scale = 1

[algo]
algorithm = mime
name = mime_s2
base = sgd
eta = 0.02
local_steps = 5
batch_size = 2
clients_per_round = 2

[algo]
algorithm = mime
name = mime_s8
base = sgd
eta = 0.02
local_steps = 5
batch_size = 2
clients_per_round = 8
)cfg"},
        {"mvr_vs_sgd", R"cfg(
# Momentum variance reduction against plain Mime-SGD under the measured
# theory schedule; the MVR momentum error shrinks as rounds accumulate.
[problem]
kind = quadratic
dim = 10
clients = 50
samples_per_client = 4
l_smooth = 2
mu = 0.5
hessian_spread = 0.2
optimum_spread = 2
noise_std = 0.3

[run]
rounds = 200
seed = 5
theory_mode = true
x0 = offset
x0_scale = 2

[algo]
algorithm = mimemvr
base = sgd
local_steps = 10
batch_size = 2
clients_per_round = 5
mvr_anchor = prev_prev
mvr_warmup_rounds = 1

[algo]
algorithm = mime
base = sgd
local_steps = 10
batch_size = 2
clients_per_round = 5
)cfg"},
        {"mini_sweep", R"cfg(
# Nine-point learning-rate grid over a small noisy quadratic; cells run
# concurrently and the summary marks the best step size.
[problem]
kind = quadratic
dim = 5
clients = 10
samples_per_client = 2
l_smooth = 1
mu = 0.1
hessian_spread = 0.3
optimum_spread = 0.5
noise_std = 0.05

[run]
rounds = 50
seed = 13
threads = 2
x0 = gauss
x0_scale = 1

[algo]
algorithm = mime
base = sgdm
local_steps = 5
clients_per_round = 5

[grid]
eta = 1 0.31622776601683794 0.1 0.031622776601683791 0.01 0.0031622776601683794 0.001 0.00031622776601683794 0.0001
)cfg"},
    };
    return scenarios;
}

}  // namespace mimesim
