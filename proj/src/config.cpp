#include "mfc/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "mfc/parallel.hpp"

namespace mfc {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw ConfigError(where + ": missing key '" + key + "'");
    return obj.at(key);
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

std::string kind_of(const json& spec, const std::string& where) {
    if (spec.is_string()) return spec.get<std::string>();
    return require(spec, "kind", where).get<std::string>();
}

DriftField parse_drift(const json& spec, std::size_t dim) {
    const std::string kind = kind_of(spec, "model.drift");
    if (kind == "zero") return DriftField::zero();
    if (kind == "constant") {
        auto v = require(spec, "value", "model.drift").get<std::vector<double>>();
        if (v.size() != dim) throw ConfigError("model.drift.value: length must equal dim");
        return DriftField::constant(std::move(v));
    }
    if (kind == "mean_attraction")
        return DriftField::mean_attraction(require(spec, "strength", "model.drift").get<double>(), dim);
    throw ConfigError("model.drift: unknown kind '" + kind + "'");
}

MeanFieldCost parse_cost(const json& spec, std::size_t dim, const std::string& where) {
    const std::string kind = kind_of(spec, where);
    if (kind == "zero") return MeanFieldCost::zero();
    if (kind == "linear") return MeanFieldCost::linear(parse_integrand(require(spec, "integrand", where), dim));
    throw ConfigError(where + ": unknown kind '" + kind + "'");
}

ConstraintFunctional parse_constraint(const json& spec, std::size_t dim, const SpaceTimeGrid& grid) {
    const std::string where = "model.constraint";
    const std::string kind = kind_of(spec, where);
    if (kind == "linear") {
        Integrand psi = parse_integrand(require(spec, "integrand", where), dim);
        const double kappa = require(spec, "kappa", where).get<double>();
        double c = get_or<double>(spec, "c_psi", 0.0, where);
        if (c <= 0.0) c = sup_gradient_norm(psi, grid.x_min, grid.x_max, dim);
        return ConstraintFunctional::linear(std::move(psi), kappa, c);
    }
    if (kind == "cylindrical") {
        // F(y) = sum_j a_j y_j + 1/2 sum_j q_j y_j^2 - offset.
        const double c = require(spec, "c_psi", where).get<double>();
        std::vector<Integrand> inner;
        for (const auto& f : require(spec, "inner", where)) inner.push_back(parse_integrand(f, dim));
        const json& outer = require(spec, "outer", where);
        auto a = get_or<std::vector<double>>(outer, "linear", std::vector<double>(inner.size(), 0.0), where);
        auto q = get_or<std::vector<double>>(outer, "quadratic", std::vector<double>(inner.size(), 0.0), where);
        const double offset = get_or<double>(outer, "offset", 0.0, where);
        if (a.size() != inner.size() || q.size() != inner.size())
            throw ConfigError(where + ".outer: coefficient count != number of inner integrands");
        auto f = [a, q, offset](std::span<const double> y) {
            double s = -offset;
            for (std::size_t j = 0; j < y.size(); ++j) s += a[j] * y[j] + 0.5 * q[j] * y[j] * y[j];
            return s;
        };
        auto df = [a, q](std::span<const double> y, std::span<double> g) {
            for (std::size_t j = 0; j < y.size(); ++j) g[j] = a[j] + q[j] * y[j];
        };
        try {
            return ConstraintFunctional::cylindrical(f, df, std::move(inner), c);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    throw ConfigError(where + ": unknown kind '" + kind + "'");
}

void parse_hamiltonian(const json& spec, ModelSpec& model) {
    const std::string kind = kind_of(spec, "model.hamiltonian");
    if (kind == "quadratic") {
        model.hamiltonian = Hamiltonian::quadratic();
        model.lagrangian = Lagrangian::quadratic();
        return;
    }
    if (kind == "tilted") {
        const double eps = require(spec, "eps", "model.hamiltonian").get<double>();
        model.hamiltonian = Hamiltonian::tilted(eps);
        model.lagrangian = Lagrangian::tilted(eps);
        // Plugin pairs are gated on their Legendre duality.
        const LegendreReport rep = legendre_check(model.hamiltonian, model.lagrangian, 64, model.dim);
        if (!(rep.max_gap < 1e-6))
            throw ConfigError("model.hamiltonian: Legendre duality gap " + std::to_string(rep.max_gap));
        return;
    }
    throw ConfigError("model.hamiltonian: unknown kind '" + kind + "'");
}

}  // namespace

Integrand saturated_square(double cap) {
    if (!(cap > 0.0)) throw std::invalid_argument("saturated_square: cap must be > 0");
    Integrand f;
    f.value = [cap](std::span<const double> x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return cap * std::tanh(s / cap);
    };
    f.gradient = [cap](std::span<const double> x, std::span<double> g) {
        double s = 0.0;
        for (double v : x) s += v * v;
        const double c = 1.0 / std::cosh(s / cap);
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = 2.0 * x[k] * c * c;
    };
    return f;
}

Integrand parse_integrand(const json& spec, std::size_t dim) {
    const std::string kind = kind_of(spec, "integrand");
    if (kind == "smoothed_distance") {
        auto center = get_or<std::vector<double>>(spec, "center", std::vector<double>(dim, 0.0), "integrand");
        if (center.size() != dim) throw ConfigError("integrand.center: length must equal dim");
        const double s = require(spec, "smoothing", "integrand").get<double>();
        if (!(s > 0.0)) throw ConfigError("integrand.smoothing must be > 0");
        return smoothed_distance(std::move(center), s);
    }
    if (kind == "coordinate") {
        const auto axis = get_or<std::size_t>(spec, "axis", 0, "integrand");
        if (axis >= dim) throw ConfigError("integrand.axis out of range");
        return coordinate(axis, dim);
    }
    if (kind == "saturated_square") {
        const double cap = require(spec, "cap", "integrand").get<double>();
        if (!(cap > 0.0)) throw ConfigError("integrand.cap must be > 0");
        return saturated_square(cap);
    }
    throw ConfigError("integrand: unknown kind '" + kind + "'");
}

json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
}

void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("--set: empty key segment in '" + path + "'");
        if (!node->is_object()) throw ConfigError("--set: '" + path + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

std::string config_hash(const json& root) {
    const std::string text = root.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config(const json& root) {
    check_keys(root, {"model", "grid", "particle", "solver", "transfer", "chaos", "ldp", "output"}, "config");
    ExperimentConfig cfg;
    cfg.raw = root;
    cfg.hash = config_hash(root);
    try {
        const json& grid = root.value("grid", json::object());
        check_keys(grid, {"x_min", "x_max", "n_cells", "n_steps"}, "grid");
        auto& g = cfg.grid;
        g.x_min = get_or(grid, "x_min", g.x_min, "grid");
        g.x_max = get_or(grid, "x_max", g.x_max, "grid");
        g.n_cells = get_or(grid, "n_cells", g.n_cells, "grid");
        g.n_steps = get_or(grid, "n_steps", g.n_steps, "grid");

        const json& m = require(root, "model", "config");
        check_keys(m, {"dim", "t0", "horizon", "hamiltonian", "drift", "running", "terminal", "constraint", "initial"},
                   "model");
        auto& model = cfg.model;
        model.dim = get_or<std::size_t>(m, "dim", 1, "model");
        if (model.dim == 0) throw ConfigError("model.dim must be >= 1");
        model.t0 = get_or(m, "t0", 0.0, "model");
        model.horizon = get_or(m, "horizon", 1.0, "model");
        g.t0 = model.t0;
        g.horizon = model.horizon;
        parse_hamiltonian(m.value("hamiltonian", json("quadratic")), model);
        model.drift = parse_drift(m.value("drift", json("zero")), model.dim);
        model.running = parse_cost(m.value("running", json("zero")), model.dim, "model.running");
        model.terminal = parse_cost(m.value("terminal", json("zero")), model.dim, "model.terminal");
        model.constraint = parse_constraint(require(m, "constraint", "model"), model.dim, g);
        model.validate();
        g.validate();

        const json& init = require(m, "initial", "model");
        cfg.initial.kind = kind_of(init, "model.initial");
        if (cfg.initial.kind == "gaussian") {
            cfg.initial.mean = get_or(init, "mean", std::vector<double>(model.dim, 0.0), "model.initial");
            cfg.initial.sd = require(init, "sd", "model.initial").get<double>();
            if (cfg.initial.mean.size() != model.dim) throw ConfigError("model.initial.mean: length must equal dim");
            if (!(cfg.initial.sd > 0.0)) throw ConfigError("model.initial.sd must be > 0");
        } else if (cfg.initial.kind == "points") {
            cfg.initial.points = require(init, "points", "model.initial").get<std::vector<std::vector<double>>>();
            if (cfg.initial.points.empty()) throw ConfigError("model.initial.points: empty");
            for (const auto& p : cfg.initial.points)
                if (p.size() != model.dim) throw ConfigError("model.initial.points: wrong dimension");
        } else {
            throw ConfigError("model.initial: unknown kind '" + cfg.initial.kind + "'");
        }

        const json& part = require(root, "particle", "config");
        check_keys(part, {"n_list", "dt", "runs", "seed", "noise_substeps", "policy"}, "particle");
        auto& p = cfg.particle;
        if (!part.contains("seed")) throw ConfigError("particle.seed is required (no clock-based default)");
        p.seed = part.at("seed").get<std::uint64_t>();
        p.n_list = get_or(part, "n_list", p.n_list, "particle");
        p.dt = get_or(part, "dt", p.dt, "particle");
        p.runs = get_or(part, "runs", p.runs, "particle");
        p.noise_substeps = get_or(part, "noise_substeps", p.noise_substeps, "particle");
        if (p.n_list.empty()) throw ConfigError("particle.n_list: empty");
        if (p.runs == 0) throw ConfigError("particle.runs must be >= 1");
        if (part.contains("policy")) {
            const json& pol = part.at("policy");
            p.policy.kind = kind_of(pol, "particle.policy");
            if (p.policy.kind == "constant") {
                p.policy.value = require(pol, "value", "particle.policy").get<std::vector<double>>();
                if (p.policy.value.size() != model.dim)
                    throw ConfigError("particle.policy.value: length must equal dim");
            } else if (p.policy.kind == "linear") {
                p.policy.gain = require(pol, "gain", "particle.policy").get<double>();
            } else if (p.policy.kind == "mf-control") {
                p.policy.path = get_or<std::string>(pol, "path", "", "particle.policy");
            } else if (p.policy.kind != "zero") {
                throw ConfigError("particle.policy: unknown kind '" + p.policy.kind + "'");
            }
        }

        const json& sol = root.value("solver", json::object());
        check_keys(sol, {"penalty_eps", "tol_fp", "k_max", "omega", "omega_min", "eps_start", "stage_tol", "anderson_depth", "delta", "deltas"}, "solver");
        auto& so = cfg.solver;
        so.options.penalty_eps = get_or(sol, "penalty_eps", so.options.penalty_eps, "solver");
        so.options.tol_fp = get_or(sol, "tol_fp", so.options.tol_fp, "solver");
        so.options.k_max = get_or(sol, "k_max", so.options.k_max, "solver");
        so.options.omega = get_or(sol, "omega", so.options.omega, "solver");
        so.options.omega_min = get_or(sol, "omega_min", so.options.omega_min, "solver");
        so.options.eps_start = get_or(sol, "eps_start", so.options.eps_start, "solver");
        so.options.stage_tol = get_or(sol, "stage_tol", so.options.stage_tol, "solver");
        so.options.anderson_depth = get_or(sol, "anderson_depth", so.options.anderson_depth, "solver");
        so.delta = get_or(sol, "delta", so.delta, "solver");
        so.deltas = get_or(sol, "deltas", so.deltas, "solver");
        if (!(so.options.penalty_eps > 0.0)) throw ConfigError("solver.penalty_eps must be > 0");
        if (!(so.options.omega > 0.0 && so.options.omega <= 1.0)) throw ConfigError("solver.omega must lie in (0, 1]");
        if (so.deltas.empty()) throw ConfigError("solver.deltas: empty");

        const json& tr = root.value("transfer", json::object());
        check_keys(tr, {"delta", "resolve_barrier"}, "transfer");
        cfg.transfer.delta = get_or(tr, "delta", cfg.transfer.delta, "transfer");
        cfg.transfer.settings.resolve_barrier =
            get_or(tr, "resolve_barrier", cfg.transfer.settings.resolve_barrier, "transfer");
        if (!(cfg.transfer.delta > 0.0)) throw ConfigError("transfer.delta must be > 0");

        const json& ch = root.value("chaos", json::object());
        check_keys(ch, {"gain", "n_list", "runs"}, "chaos");
        cfg.chaos.gain = get_or(ch, "gain", cfg.chaos.gain, "chaos");
        cfg.chaos.n_list = get_or(ch, "n_list", cfg.chaos.n_list, "chaos");
        cfg.chaos.runs = get_or(ch, "runs", cfg.chaos.runs, "chaos");

        const json& ld = root.value("ldp", json::object());
        check_keys(ld, {"n_list", "dt", "pilot_runs", "min_runs", "max_runs", "target_successes", "deltas"}, "ldp");
        auto& lo = cfg.ldp;
        lo.n_list = get_or(ld, "n_list", lo.n_list, "ldp");
        lo.dt = get_or(ld, "dt", p.dt, "ldp");
        lo.seed = derive_seed(p.seed, 0x1d9);
        lo.pilot.pilot_runs = get_or(ld, "pilot_runs", lo.pilot.pilot_runs, "ldp");
        lo.pilot.min_runs = get_or(ld, "min_runs", lo.pilot.min_runs, "ldp");
        lo.pilot.max_runs = get_or(ld, "max_runs", lo.pilot.max_runs, "ldp");
        lo.pilot.target_successes = get_or(ld, "target_successes", lo.pilot.target_successes, "ldp");
        lo.deltas = get_or(ld, "deltas", lo.deltas, "ldp");

        const json& out = root.value("output", json::object());
        check_keys(out, {"dir", "dump_trajectories", "dump_every"}, "output");
        cfg.output.dir = get_or(out, "dir", cfg.output.dir, "output");
        cfg.output.dump_trajectories = get_or(out, "dump_trajectories", false, "output");
        cfg.output.dump_every = get_or(out, "dump_every", cfg.output.dump_every, "output");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json root = load_config_json(path);
    for (const auto& o : overrides) apply_override(root, o);
    return parse_config(root);
}

GridMeasure1D ExperimentConfig::initial_density() const {
    if (model.dim != 1) throw ConfigError("initial density requires a 1D model");
    if (initial.kind != "gaussian") throw ConfigError("initial density requires a gaussian initial spec");
    return GridMeasure1D::gaussian(grid.x_min, grid.x_max, grid.n_cells, initial.mean[0], initial.sd);
}

EmpiricalMeasure ExperimentConfig::initial_points(std::size_t n) const {
    if (n == 0) throw ConfigError("particle count must be >= 1");
    if (initial.kind == "points") {
        if (initial.points.size() != n)
            throw ConfigError("model.initial.points has " + std::to_string(initial.points.size()) +
                              " points, but N = " + std::to_string(n));
        return EmpiricalMeasure::from_points(initial.points);
    }
    if (model.dim == 1) return quantile_points(initial_density(), n);
    std::mt19937_64 rng(derive_seed(particle.seed, 0x5eed0000ULL + n));
    std::normal_distribution<double> normal;
    std::vector<double> c(n * model.dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < model.dim; ++k) c[i * model.dim + k] = initial.mean[k] + initial.sd * normal(rng);
    return {std::move(c), model.dim};
}

SimConfig ExperimentConfig::sim_config(std::size_t n) const {
    SimConfig s;
    s.dim = model.dim;
    s.dt = particle.dt;
    s.t0 = model.t0;
    s.horizon = model.horizon;
    s.seed = derive_seed(particle.seed, n);
    s.initial = initial_points(n);
    s.noise_substeps = particle.noise_substeps;
    return s;
}

std::string header_comment(const ExperimentConfig& cfg, const std::string& command) {
    std::ostringstream h;
    h << "# mfclab " << kArtifactVersion << "\n# config_hash fnv1a64:" << cfg.hash << "\n# command " << command
      << '\n';
    return h.str();
}

}  // namespace mfc
