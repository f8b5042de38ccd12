#include "mimesim/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mimesim {
namespace {

[[noreturn]] void fail(const std::string& field, const std::string& why) {
    throw std::invalid_argument("config: " + field + ": " + why);
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

double parse_double(const std::string& field, const std::string& v) {
    try {
        size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) fail(field, "not a number: '" + v + "'");
        return x;
    } catch (const std::invalid_argument&) {
        fail(field, "not a number: '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(field, "out of range: '" + v + "'");
    }
}

long parse_int(const std::string& field, const std::string& v) {
    try {
        size_t used = 0;
        long x = std::stol(v, &used);
        if (used != v.size()) fail(field, "not an integer: '" + v + "'");
        return x;
    } catch (const std::invalid_argument&) {
        fail(field, "not an integer: '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(field, "out of range: '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& field, const std::string& v) {
    try {
        size_t used = 0;
        std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) fail(field, "not an unsigned integer: '" + v + "'");
        return x;
    } catch (const std::invalid_argument&) {
        fail(field, "not an unsigned integer: '" + v + "'");
    } catch (const std::out_of_range&) {
        fail(field, "out of range: '" + v + "'");
    }
}

bool parse_bool(const std::string& field, const std::string& v) {
    std::string s = lower(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(field, "not a boolean: '" + v + "'");
}

std::vector<double> parse_double_list(const std::string& field, const std::string& v) {
    std::istringstream in(v);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_double(field, tok));
    if (out.empty()) fail(field, "empty value");
    return out;
}

struct KeyValue {
    std::string key;
    std::string value;
};

struct Section {
    std::string name;
    std::vector<KeyValue> entries;
};

std::vector<Section> tokenize(const std::string& text) {
    std::vector<Section> sections;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("line " + std::to_string(lineno), "unterminated section header");
            sections.push_back({lower(trim(line.substr(1, line.size() - 2))), {}});
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) fail("line " + std::to_string(lineno), "expected key = value");
        if (sections.empty()) fail("line " + std::to_string(lineno), "key before any [section]");
        sections.back().entries.push_back({lower(trim(line.substr(0, eq))), trim(line.substr(eq + 1))});
    }
    return sections;
}

void apply_problem_key(ProblemConfig& p, const std::string& key, const std::string& value) {
    const std::string f = "problem." + key;
    if (key == "kind") {
        std::string k = lower(value);
        if (k != "quadratic" && k != "logistic" && k != "explicit_quadratic" && k != "file")
            fail(f, "unknown kind '" + value + "'");
        p.kind = k;
    } else if (key == "path") {
        p.path = value;
    } else if (key == "dim") {
        p.quadratic.dim = static_cast<int>(parse_int(f, value));
        p.logistic.dim = p.quadratic.dim;
    } else if (key == "clients") {
        p.quadratic.num_clients = static_cast<int>(parse_int(f, value));
        p.logistic.num_clients = p.quadratic.num_clients;
    } else if (key == "samples_per_client") {
        p.quadratic.samples_per_client = static_cast<int>(parse_int(f, value));
        p.logistic.samples_per_client = p.quadratic.samples_per_client;
    } else if (key == "l_smooth") {
        p.quadratic.l_smooth = parse_double(f, value);
    } else if (key == "mu") {
        p.quadratic.mu = parse_double(f, value);
    } else if (key == "hessian_spread") {
        p.quadratic.hessian_spread = parse_double(f, value);
    } else if (key == "optimum_spread") {
        p.quadratic.optimum_spread = parse_double(f, value);
    } else if (key == "noise_std") {
        p.quadratic.noise_std = parse_double(f, value);
    } else if (key == "shift") {
        p.logistic.shift = parse_double(f, value);
    } else if (key == "label_skew") {
        p.logistic.label_skew = parse_double(f, value);
    } else if (key == "l2_reg") {
        p.logistic.l2_reg = parse_double(f, value);
    } else if (key.rfind("client", 0) == 0 &&
               (key.find("_hessian") != std::string::npos || key.find("_target") != std::string::npos)) {
        bool hess = key.find("_hessian") != std::string::npos;
        std::string idx_str = key.substr(6, key.find('_') - 6);
        if (idx_str.empty()) fail(f, "missing client index");
        size_t idx = static_cast<size_t>(parse_int(f, idx_str));
        std::vector<double> vals = parse_double_list(f, value);
        if (hess) {
            if (p.explicit_hessians.size() <= idx) p.explicit_hessians.resize(idx + 1);
            int d = static_cast<int>(std::llround(std::sqrt(static_cast<double>(vals.size()))));
            if (static_cast<size_t>(d) * d != vals.size())
                fail(f, "hessian needs a square number of entries (row-major)");
            Eigen::MatrixXd a(d, d);
            for (int r = 0; r < d; ++r)
                for (int c = 0; c < d; ++c) a(r, c) = vals[static_cast<size_t>(r) * d + c];
            p.explicit_hessians[idx] = a;
        } else {
            if (p.explicit_targets.size() <= idx) p.explicit_targets.resize(idx + 1);
            p.explicit_targets[idx] = Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
        }
    } else {
        fail(f, "unknown key");
    }
}

WeightMode weight_mode_from_string(const std::string& field, const std::string& v) {
    std::string s = lower(v);
    if (s == "uniform") return WeightMode::Uniform;
    if (s == "by_count") return WeightMode::ByCount;
    fail(field, "unknown weighting '" + v + "'");
}

void apply_algo_key(AlgoConfig& a, const std::string& key, const std::string& value) {
    const std::string f = "algo." + key;
    if (key == "algorithm") {
        a.algorithm = algorithm_from_string(value);
    } else if (key == "name") {
        a.name = value;
    } else if (key == "base") {
        a.base.kind = base_opt_kind_from_string(value);
    } else if (key == "eta") {
        a.eta = parse_double(f, value);
        if (a.eta < 0) fail(f, "must be >= 0");
    } else if (key == "local_steps") {
        a.local_steps = static_cast<int>(parse_int(f, value));
        if (a.local_steps < 0) fail(f, "must be >= 0");
    } else if (key == "batching") {
        std::string s = lower(value);
        if (s == "steps") a.batching = BatchingMode::Steps;
        else if (s == "epochs") a.batching = BatchingMode::Epochs;
        else fail(f, "unknown batching '" + value + "'");
    } else if (key == "batch_size") {
        a.batch_size = static_cast<int>(parse_int(f, value));
        if (a.batch_size < 0) fail(f, "must be >= 0 (0 = full batch)");
    } else if (key == "clients_per_round") {
        a.clients_per_round = static_cast<int>(parse_int(f, value));
        if (a.clients_per_round < 0) fail(f, "must be >= 0 (0 = all clients)");
    } else if (key == "weighting") {
        a.weighting = weight_mode_from_string(f, value);
    } else if (key == "cv_sampling") {
        std::string s = lower(value);
        if (s == "same_sample") a.cv_sampling = CvSampling::SameSample;
        else if (s == "independent_sample") a.cv_sampling = CvSampling::IndependentSample;
        else fail(f, "unknown cv_sampling '" + value + "'");
    } else if (key == "split_communication") {
        a.split_communication = parse_bool(f, value);
    } else if (key == "server_lr") {
        a.server_lr = parse_double(f, value);
        if (a.server_lr < 0) fail(f, "must be >= 0");
    } else if (key == "prox_mu") {
        a.prox_mu = parse_double(f, value);
        if (a.prox_mu < 0) fail(f, "must be >= 0");
    } else if (key == "mvr_a") {
        a.mvr_a = parse_double(f, value);
        if (a.mvr_a < 0 || a.mvr_a > 1) fail(f, "must lie in [0, 1]");
    } else if (key == "mvr_anchor") {
        std::string s = lower(value);
        if (s == "prev") a.mvr_anchor = MvrAnchor::Prev;
        else if (s == "prev_prev") a.mvr_anchor = MvrAnchor::PrevPrev;
        else fail(f, "unknown mvr_anchor '" + value + "'");
    } else if (key == "mvr_warmup_rounds") {
        a.mvr_warmup_rounds = static_cast<int>(parse_int(f, value));
        if (a.mvr_warmup_rounds < 1) fail(f, "must be >= 1");
    } else if (key == "beta") {
        a.base.beta = parse_double(f, value);
    } else if (key == "beta1") {
        a.base.beta1 = parse_double(f, value);
    } else if (key == "beta2") {
        a.base.beta2 = parse_double(f, value);
    } else if (key == "eps0") {
        a.base.eps0 = parse_double(f, value);
    } else if (key == "adagrad_init") {
        a.base.adagrad_init = parse_double(f, value);
    } else {
        fail(f, "unknown key");
    }
}

const std::set<std::string>& algo_grid_keys() {
    static const std::set<std::string> keys = {
        "base", "eta", "local_steps", "batching", "batch_size", "clients_per_round",
        "weighting", "cv_sampling", "split_communication", "server_lr", "prox_mu",
        "mvr_a", "mvr_anchor", "mvr_warmup_rounds", "beta", "beta1", "beta2",
        "eps0", "adagrad_init"};
    return keys;
}

void apply_run_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const std::string f = "run." + key;
    if (key == "rounds") {
        cfg.rounds = static_cast<int>(parse_int(f, value));
    } else if (key == "seed") {
        cfg.seed = parse_u64(f, value);
        cfg.seed_set = true;
    } else if (key == "out") {
        cfg.out_dir = value;
    } else if (key == "threads") {
        cfg.threads = static_cast<int>(parse_int(f, value));
    } else if (key == "x0") {
        std::string s = lower(value);
        if (s == "zeros") cfg.x0_mode = X0Mode::Zeros;
        else if (s == "gauss") cfg.x0_mode = X0Mode::Gauss;
        else if (s == "offset") cfg.x0_mode = X0Mode::Offset;
        else fail(f, "unknown x0 mode '" + value + "'");
    } else if (key == "x0_scale") {
        cfg.x0_scale = parse_double(f, value);
    } else if (key == "trace_drift") {
        cfg.trace_drift = parse_bool(f, value);
    } else if (key == "oracle_every") {
        cfg.oracle_every = static_cast<int>(parse_int(f, value));
    } else if (key == "theory_mode") {
        cfg.theory_mode = parse_bool(f, value);
    } else if (key == "plot") {
        cfg.plot = parse_bool(f, value);
    } else {
        fail(f, "unknown key");
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    bool saw_problem = false;
    for (const Section& sec : tokenize(text)) {
        if (sec.name == "problem") {
            if (saw_problem) fail("problem", "duplicate [problem] section");
            saw_problem = true;
            for (const auto& [k, v] : sec.entries) apply_problem_key(cfg.problem, k, v);
        } else if (sec.name == "run") {
            for (const auto& [k, v] : sec.entries) apply_run_key(cfg, k, v);
        } else if (sec.name == "algo") {
            AlgoConfig a;
            for (const auto& [k, v] : sec.entries) apply_algo_key(a, k, v);
            cfg.algos.push_back(std::move(a));
        } else if (sec.name == "grid") {
            for (const auto& [k, v] : sec.entries) {
                if (!algo_grid_keys().count(k)) fail("grid." + k, "not a sweepable algorithm key");
                std::istringstream in(v);
                std::vector<std::string> toks;
                std::string tok;
                while (in >> tok) toks.push_back(tok);
                if (toks.empty()) fail("grid." + k, "empty value list");
                cfg.grid[k] = std::move(toks);
            }
        } else {
            fail(sec.name, "unknown section");
        }
    }
    if (!cfg.seed_set) fail("run.seed", "required (runs take no entropy from the environment)");
    if (cfg.rounds < 1) fail("run.rounds", "must be >= 1");
    if (cfg.threads < 1) fail("run.threads", "must be >= 1");
    if (cfg.oracle_every < 0) fail("run.oracle_every", "must be >= 0");
    if (cfg.algos.empty()) fail("algo", "at least one [algo] section is required");
    if (cfg.problem.kind == "explicit_quadratic") {
        if (cfg.problem.explicit_hessians.empty() ||
            cfg.problem.explicit_hessians.size() != cfg.problem.explicit_targets.size())
            fail("problem.client<j>_hessian", "explicit_quadratic needs matching hessian/target rows");
        for (size_t i = 0; i < cfg.problem.explicit_hessians.size(); ++i) {
            if (cfg.problem.explicit_hessians[i].size() == 0 || cfg.problem.explicit_targets[i].size() == 0)
                fail("problem.client" + std::to_string(i), "missing hessian or target row");
        }
    }
    if (cfg.problem.kind == "file" && cfg.problem.path.empty()) fail("problem.path", "required for kind = file");
    std::set<std::string> labels;
    for (const AlgoConfig& a : cfg.algos) {
        if (!labels.insert(a.label()).second)
            fail("algo.name", "duplicate algorithm label '" + a.label() + "'");
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string print_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "[problem]\n";
    out << "kind = " << cfg.problem.kind << "\n";
    if (cfg.problem.kind == "quadratic") {
        const QuadraticSpec& q = cfg.problem.quadratic;
        out << "dim = " << q.dim << "\n";
        out << "clients = " << q.num_clients << "\n";
        out << "samples_per_client = " << q.samples_per_client << "\n";
        out << "l_smooth = " << fmt(q.l_smooth) << "\n";
        out << "mu = " << fmt(q.mu) << "\n";
        out << "hessian_spread = " << fmt(q.hessian_spread) << "\n";
        out << "optimum_spread = " << fmt(q.optimum_spread) << "\n";
        out << "noise_std = " << fmt(q.noise_std) << "\n";
    } else if (cfg.problem.kind == "logistic") {
        const LogisticSpec& l = cfg.problem.logistic;
        out << "dim = " << l.dim << "\n";
        out << "clients = " << l.num_clients << "\n";
        out << "samples_per_client = " << l.samples_per_client << "\n";
        out << "shift = " << fmt(l.shift) << "\n";
        out << "label_skew = " << fmt(l.label_skew) << "\n";
        out << "l2_reg = " << fmt(l.l2_reg) << "\n";
    } else if (cfg.problem.kind == "explicit_quadratic") {
        for (size_t i = 0; i < cfg.problem.explicit_hessians.size(); ++i) {
            const Eigen::MatrixXd& a = cfg.problem.explicit_hessians[i];
            out << "client" << i << "_hessian =";
            for (Eigen::Index r = 0; r < a.rows(); ++r)
                for (Eigen::Index c = 0; c < a.cols(); ++c) out << ' ' << fmt(a(r, c));
            out << "\n";
            out << "client" << i << "_target =";
            for (Eigen::Index k = 0; k < cfg.problem.explicit_targets[i].size(); ++k)
                out << ' ' << fmt(cfg.problem.explicit_targets[i][k]);
            out << "\n";
        }
    } else if (cfg.problem.kind == "file") {
        out << "path = " << cfg.problem.path << "\n";
    }

    out << "\n[run]\n";
    out << "rounds = " << cfg.rounds << "\n";
    out << "seed = " << cfg.seed << "\n";
    if (!cfg.out_dir.empty()) out << "out = " << cfg.out_dir << "\n";
    out << "threads = " << cfg.threads << "\n";
    out << "x0 = " << (cfg.x0_mode == X0Mode::Zeros ? "zeros" : cfg.x0_mode == X0Mode::Gauss ? "gauss" : "offset")
        << "\n";
    out << "x0_scale = " << fmt(cfg.x0_scale) << "\n";
    out << "trace_drift = " << (cfg.trace_drift ? "true" : "false") << "\n";
    out << "oracle_every = " << cfg.oracle_every << "\n";
    out << "theory_mode = " << (cfg.theory_mode ? "true" : "false") << "\n";
    out << "plot = " << (cfg.plot ? "true" : "false") << "\n";

    for (const AlgoConfig& a : cfg.algos) {
        out << "\n[algo]\n";
        out << "algorithm = " << to_string(a.algorithm) << "\n";
        if (!a.name.empty()) out << "name = " << a.name << "\n";
        if (uses_base_optimizer(a.algorithm)) {
            out << "base = " << to_string(a.base.kind) << "\n";
            if (a.base.kind == BaseOptKind::SgdMomentum) out << "beta = " << fmt(a.base.beta) << "\n";
            if (a.base.kind == BaseOptKind::Adam) {
                out << "beta1 = " << fmt(a.base.beta1) << "\n";
                out << "beta2 = " << fmt(a.base.beta2) << "\n";
            }
            if (a.base.kind == BaseOptKind::Adam || a.base.kind == BaseOptKind::Adagrad)
                out << "eps0 = " << fmt(a.base.eps0) << "\n";
            if (a.base.kind == BaseOptKind::Adagrad) out << "adagrad_init = " << fmt(a.base.adagrad_init) << "\n";
        }
        out << "eta = " << fmt(a.eta) << "\n";
        out << "local_steps = " << a.local_steps << "\n";
        out << "batching = " << (a.batching == BatchingMode::Steps ? "steps" : "epochs") << "\n";
        out << "batch_size = " << a.batch_size << "\n";
        out << "clients_per_round = " << a.clients_per_round << "\n";
        out << "weighting = " << (a.weighting == WeightMode::Uniform ? "uniform" : "by_count") << "\n";
        if (a.algorithm == Algorithm::Mime || a.algorithm == Algorithm::MimeLite ||
            a.algorithm == Algorithm::MimeMvr || a.algorithm == Algorithm::MimeLiteMvr) {
            out << "cv_sampling = "
                << (a.cv_sampling == CvSampling::SameSample ? "same_sample" : "independent_sample") << "\n";
        }
        if (a.algorithm == Algorithm::Mime || a.algorithm == Algorithm::MimeLite)
            out << "split_communication = " << (a.split_communication ? "true" : "false") << "\n";
        if (a.algorithm == Algorithm::FedAvg || a.algorithm == Algorithm::FedProx ||
            a.algorithm == Algorithm::Scaffold)
            out << "server_lr = " << fmt(a.server_lr) << "\n";
        if (a.algorithm == Algorithm::FedProx) out << "prox_mu = " << fmt(a.prox_mu) << "\n";
        if (a.algorithm == Algorithm::MimeMvr || a.algorithm == Algorithm::MimeLiteMvr) {
            out << "mvr_a = " << fmt(a.mvr_a) << "\n";
            out << "mvr_anchor = " << (a.mvr_anchor == MvrAnchor::Prev ? "prev" : "prev_prev") << "\n";
            out << "mvr_warmup_rounds = " << a.mvr_warmup_rounds << "\n";
        }
    }

    if (!cfg.grid.empty()) {
        out << "\n[grid]\n";
        for (const auto& [k, vals] : cfg.grid) {
            out << k << " =";
            for (const std::string& v : vals) out << ' ' << v;
            out << "\n";
        }
    }
    return out.str();
}

ExperimentConfig resolve_config(const std::string& path_or_name) {
    {
        std::ifstream probe(path_or_name);
        if (probe.good()) return load_config_file(path_or_name);
    }
    const auto& scenarios = bundled_scenarios();
    auto it = scenarios.find(path_or_name);
    if (it != scenarios.end()) return parse_config(it->second);
    throw std::runtime_error("no such config file or bundled scenario: " + path_or_name);
}

void apply_algo_override(AlgoConfig& a, const std::string& key, const std::string& value) {
    apply_algo_key(a, key, value);
}

std::map<std::string, std::vector<std::string>> parse_grid_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open grid file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (text.find('[') == std::string::npos) text = "[grid]\n" + text;
    std::map<std::string, std::vector<std::string>> grid;
    for (const Section& sec : tokenize(text)) {
        if (sec.name != "grid") fail(sec.name, "a grid file may only contain a [grid] section");
        for (const auto& [k, v] : sec.entries) {
            if (!algo_grid_keys().count(k)) fail("grid." + k, "not a sweepable algorithm key");
            std::istringstream toks(v);
            std::vector<std::string> vals;
            std::string tok;
            while (toks >> tok) vals.push_back(tok);
            if (vals.empty()) fail("grid." + k, "empty value list");
            grid[k] = std::move(vals);
        }
    }
    if (grid.empty()) fail("grid", "no entries found in " + path);
    return grid;
}

}  // namespace mimesim
