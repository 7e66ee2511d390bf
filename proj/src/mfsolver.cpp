#include "mfc/mfsolver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mfc/parallel.hpp"

namespace mfc {

namespace {

double interpolate(const SpaceTimeGrid& g, const std::vector<std::vector<double>>& values,
                   double t, double x) {
    if (values.empty()) return 0.0;
    const double s = (t - g.t0) / g.dt();
    const auto k = static_cast<std::size_t>(
        std::clamp(std::floor(s + 1e-9), 0.0, static_cast<double>(values.size() - 1)));
    const auto& v = values[k];
    const double pos = (x - g.x_min) / g.dx() - 0.5;
    if (pos <= 0.0) return v.front();
    if (pos >= static_cast<double>(v.size() - 1)) return v.back();
    const auto i = static_cast<std::size_t>(pos);
    const double w = pos - static_cast<double>(i);
    return (1.0 - w) * v[i] + w * v[i + 1];
}

bool same_grid(const GridMeasure1D& m, const SpaceTimeGrid& g) {
    return m.cells() == g.n_cells && std::abs(m.x_min() - g.x_min) < 1e-12 &&
           std::abs(m.x_max() - g.x_max) < 1e-12;
}

std::vector<double> centers(const SpaceTimeGrid& g) {
    std::vector<double> x(g.n_cells);
    for (std::size_t i = 0; i < g.n_cells; ++i) x[i] = g.center(i);
    return x;
}

std::vector<double> drift_slice(const DriftField& drift, const GridMeasure1D& m,
                                const std::vector<double>& x) {
    std::vector<double> out(x.size(), 0.0);
    if (drift.is_zero) return out;
    const auto b = drift.bind_grid(m);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = b(x[i]);
    return out;
}

std::vector<double> control_slice(const Hamiltonian& h, const std::vector<double>& x,
                                  const std::vector<double>& du) {
    std::vector<double> a(x.size());
    double g = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        h.dp_h(std::span<const double>(&x[i], 1), std::span<const double>(&du[i], 1),
               std::span<double>(&g, 1));
        a[i] = -g;
    }
    return a;
}

double penalty(double excess, double eps) { return excess > 0.0 ? 2.0 / eps * excess : 0.0; }

struct Sweep {
    ValueField field;
    std::vector<std::vector<double>> control;
};

// Backward sweep given a flow: multipliers, sources, HJB, feedback.
Sweep backward(const ModelSpec& model, const std::vector<GridMeasure1D>& flow, double delta,
               double eps, const SpaceTimeGrid& grid, const std::vector<double>& x) {
    const std::size_t steps = grid.n_steps, n = grid.n_cells;
    HjbInputs in;
    std::vector<double> nu(steps);
    in.source.resize(steps);
    if (!model.drift.is_zero) in.drift.resize(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const auto& m = flow[k];
        nu[k] = penalty(model.constraint.eval(m) + delta, eps);
        auto& s = in.source[k];
        s.assign(n, 0.0);
        if (nu[k] > 0.0) {
            const auto dpsi = model.constraint.flat_derivative_on_grid(m);
            for (std::size_t i = 0; i < n; ++i) s[i] += nu[k] * dpsi[i];
        }
        if (!model.running.is_zero) {
            const auto df = model.running.flat_derivative_on_grid(m);
            for (std::size_t i = 0; i < n; ++i) s[i] += df[i];
        }
        if (!model.drift.is_zero) in.drift[k] = drift_slice(model.drift, m, x);
    }
    if (!model.drift.is_zero && model.drift.bind_flat_derivative) {
        in.source_hook = [&](std::size_t k, std::span<const double> du, std::span<double> extra) {
            const auto& m = flow[k];
            const auto fd = model.drift.bind_flat_derivative(m);
            const auto& rho = m.density();
            const double dx = m.dx();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (rho[j] > 0.0) acc += du[j] * fd(x[j], x[i]) * rho[j];
                extra[i] = acc * dx;
            }
        };
    }
    const auto& m_t = flow[steps];
    const double eta = penalty(model.constraint.eval(m_t) + delta, eps);
    in.terminal.assign(n, 0.0);
    if (!model.terminal.is_zero) in.terminal = model.terminal.flat_derivative_on_grid(m_t);
    if (eta > 0.0) {
        const auto dpsi = model.constraint.flat_derivative_on_grid(m_t);
        for (std::size_t i = 0; i < n; ++i) in.terminal[i] += eta * dpsi[i];
    }
    Sweep out;
    out.field = hjb_backward(in, model.hamiltonian, grid);
    out.field.nu = std::move(nu);
    out.field.eta = eta;
    out.control.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k)
        out.control[k] = control_slice(model.hamiltonian, x, out.field.du[k]);
    return out;
}

std::vector<GridMeasure1D> forward(const ModelSpec& model, const GridMeasure1D& mu0,
                                   const std::vector<std::vector<double>>& control,
                                   const SpaceTimeGrid& grid, const std::vector<double>& x,
                                   FpDiagnostics* diag) {
    FpOptions opts;
    opts.adaptive_substeps = true;
    return fp_forward(
        mu0,
        [&](std::size_t k, const GridMeasure1D& m, std::span<double> v) {
            const auto& a = control[k];
            if (model.drift.is_zero) {
                std::copy(a.begin(), a.end(), v.begin());
                return;
            }
            const auto b = drift_slice(model.drift, m, x);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
        },
        grid, opts, diag);
}

// Anderson mixing on the stacked densities of slices 1..n. With an empty history the
// update is the plain damped step x + omega (g - x).
class AndersonMixer {
public:
    explicit AndersonMixer(std::size_t depth) : depth_(depth) {}

    void reset() {
        dx_.clear();
        df_.clear();
        have_prev_ = false;
    }

    std::vector<double> step(const std::vector<double>& x, const std::vector<double>& g, double omega) {
        const std::size_t n = x.size();
        std::vector<double> f(n);
        for (std::size_t i = 0; i < n; ++i) f[i] = g[i] - x[i];
        if (depth_ > 0 && have_prev_) {
            std::vector<double> ddx(n), ddf(n);
            for (std::size_t i = 0; i < n; ++i) {
                ddx[i] = x[i] - prev_x_[i];
                ddf[i] = f[i] - prev_f_[i];
            }
            dx_.push_back(std::move(ddx));
            df_.push_back(std::move(ddf));
            if (dx_.size() > depth_) {
                dx_.erase(dx_.begin());
                df_.erase(df_.begin());
            }
        }
        prev_x_ = x;
        prev_f_ = f;
        have_prev_ = true;

        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + omega * f[i];
        const std::size_t m = df_.size();
        if (m == 0) return out;
        // Normal equations for min |f - dF gamma|, lightly regularized.
        std::vector<double> a(m * m), rhs(m);
        double scale = 0.0;
        for (std::size_t p = 0; p < m; ++p) {
            for (std::size_t q = 0; q <= p; ++q) {
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) s += df_[p][i] * df_[q][i];
                a[p * m + q] = a[q * m + p] = s;
            }
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += df_[p][i] * f[i];
            rhs[p] = s;
            scale = std::max(scale, a[p * m + p]);
        }
        for (std::size_t p = 0; p < m; ++p) a[p * m + p] += 1e-10 * scale + 1e-300;
        const auto gamma = solve_small(a, rhs, m);
        if (gamma.empty()) return out;
        for (std::size_t p = 0; p < m; ++p)
            for (std::size_t i = 0; i < n; ++i) out[i] -= gamma[p] * (dx_[p][i] + omega * df_[p][i]);
        return out;
    }

private:
    // Gaussian elimination with partial pivoting; empty result when singular.
    static std::vector<double> solve_small(std::vector<double> a, std::vector<double> b, std::size_t m) {
        for (std::size_t c = 0; c < m; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < m; ++r)
                if (std::abs(a[r * m + c]) > std::abs(a[piv * m + c])) piv = r;
            if (std::abs(a[piv * m + c]) == 0.0) return {};
            if (piv != c) {
                for (std::size_t k = 0; k < m; ++k) std::swap(a[c * m + k], a[piv * m + k]);
                std::swap(b[c], b[piv]);
            }
            for (std::size_t r = c + 1; r < m; ++r) {
                const double f = a[r * m + c] / a[c * m + c];
                for (std::size_t k = c; k < m; ++k) a[r * m + k] -= f * a[c * m + k];
                b[r] -= f * b[c];
            }
        }
        std::vector<double> x(m);
        for (std::size_t c = m; c-- > 0;) {
            double s = b[c];
            for (std::size_t k = c + 1; k < m; ++k) s -= a[c * m + k] * x[k];
            x[c] = s / a[c * m + c];
        }
        for (double v : x)
            if (!std::isfinite(v)) return {};
        return x;
    }

    std::size_t depth_;
    std::vector<std::vector<double>> dx_, df_;
    std::vector<double> prev_x_, prev_f_;
    bool have_prev_ = false;
};

std::vector<double> stack(const std::vector<GridMeasure1D>& flow) {
    std::vector<double> v;
    v.reserve((flow.size() - 1) * flow[0].cells());
    for (std::size_t k = 1; k < flow.size(); ++k)
        v.insert(v.end(), flow[k].density().begin(), flow[k].density().end());
    return v;
}

double flow_distance(const std::vector<GridMeasure1D>& a, const std::vector<GridMeasure1D>& b) {
    double gap = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) gap = std::max(gap, wasserstein_1d(a[k], b[k], 1));
    return gap;
}

}  // namespace

double MfSolution::control_at(double t, double x) const {
    return interpolate(grid, control, t, x);
}

MfSolution solve_mfoc(const ModelSpec& model, const GridMeasure1D& mu0, double delta,
                      const SpaceTimeGrid& grid, const SolverOptions& options) {
    model.validate();
    grid.validate();
    if (model.dim != 1) throw std::invalid_argument("solve_mfoc: the grid solver is 1D only");
    if (!same_grid(mu0, grid))
        throw std::invalid_argument("solve_mfoc: initial density does not match the grid");
    if (delta < 0.0) throw std::invalid_argument("solve_mfoc: delta must be >= 0");
    if (!(options.penalty_eps > 0.0)) throw std::invalid_argument("solve_mfoc: eps must be > 0");
    if (!(options.omega > 0.0 && options.omega <= 1.0))
        throw std::invalid_argument("solve_mfoc: omega must lie in (0, 1]");
    const double psi0 = model.constraint.eval(mu0);
    if (!(psi0 < -delta)) {
        std::ostringstream msg;
        msg << "solve_mfoc: need Psi(mu0) < -delta, got Psi = " << psi0 << " with delta = " << delta;
        throw std::invalid_argument(msg.str());
    }
    const std::size_t steps = grid.n_steps;
    const auto x = centers(grid);
    std::vector<double> stages;
    for (double e = options.eps_start; e > options.penalty_eps; e *= 0.5) stages.push_back(e);
    stages.push_back(options.penalty_eps);
    const double eps = options.penalty_eps;

    // Start from the uncontrolled flow.
    std::vector<std::vector<double>> zero(steps + 1, std::vector<double>(grid.n_cells, 0.0));
    std::vector<GridMeasure1D> flow = forward(model, mu0, zero, grid, x, nullptr);
    std::vector<GridMeasure1D> best;
    double best_gap = std::numeric_limits<double>::infinity();
    double omega = options.omega;
    std::size_t iter = 0;
    bool converged = false;

    for (std::size_t stage = 0; stage < stages.size() && iter < options.k_max; ++stage) {
        const bool last = stage + 1 == stages.size();
        const double tol = last ? options.tol_fp : std::max(options.tol_fp, options.stage_tol);
        double last_gap = std::numeric_limits<double>::infinity();
        std::vector<double> history;
        int rises = 0;
        int gains = 0;
        AndersonMixer mixer(options.anderson_depth);
        // Best iterate of this stage, kept so a bad extrapolation can be undone.
        std::vector<GridMeasure1D> anchor, anchor_fresh;
        double anchor_gap = std::numeric_limits<double>::infinity();
        while (iter < options.k_max) {
            ++iter;
            std::vector<GridMeasure1D> fresh;
            double gap = std::numeric_limits<double>::infinity();
            try {
                const Sweep sw = backward(model, flow, delta, stages[stage], grid, x);
                fresh = forward(model, mu0, sw.control, grid, x, nullptr);
                gap = flow_distance(fresh, flow);
                if (!std::isfinite(gap)) throw NumericalError("solve_mfoc: non-finite fixed-point gap");
            } catch (const NumericalError&) {
                if (anchor.empty()) throw;
            }
            if (options.monitor) options.monitor(iter, stages[stage], gap, omega);
            if (last && gap < best_gap) {
                best_gap = gap;
                best = flow;
            }
            if (gap < tol) {
                converged = last;
                break;
            }
            bool restart = false;
            if (gap < anchor_gap) {
                anchor_gap = gap;
                anchor = flow;
                anchor_fresh = fresh;
            } else if (gap > 2.0 * anchor_gap) {
                // Jumped out of the basin: go back to the best iterate and damp harder.
                flow = anchor;
                fresh = anchor_fresh;
                gap = anchor_gap;
                restart = true;
            }
            // Oscillation: two rises in a row, or a near-neutral 2-cycle (under 5% progress
            // over six iterations).
            rises = gap > last_gap ? rises + 1 : 0;
            history.push_back(gap);
            const bool stalled =
                history.size() >= 7 && gap > 0.95 * history[history.size() - 7];
            gains = gap < last_gap ? gains + 1 : 0;
            if (restart || rises >= 2 || stalled) {
                omega = std::max(options.omega_min, 0.5 * omega);
                rises = 0;
                gains = 0;
                history.clear();
                mixer.reset();
            } else if (gains >= 5 && omega < options.omega) {
                // Steady progress: give some damping back.
                omega = std::min(options.omega, 2.0 * omega);
                gains = 0;
            }
            last_gap = gap;
            const auto mixed = mixer.step(stack(flow), stack(fresh), omega);
            const std::size_t nc = grid.n_cells;
            for (std::size_t k = 1; k <= steps; ++k) {
                std::vector<double> mix(mixed.begin() + static_cast<long>((k - 1) * nc),
                                        mixed.begin() + static_cast<long>(k * nc));
                for (double& v : mix) v = std::max(v, 0.0);
                flow[k] = GridMeasure1D::normalized(grid.x_min, grid.x_max, std::move(mix));
            }
        }
    }
    if (!converged && !best.empty()) flow = std::move(best);

    // Consistent pair: feedback from the last flow, then the flow it generates.
    MfSolution sol;
    sol.grid = grid;
    sol.delta = delta;
    sol.penalty_eps = eps;
    Sweep sw = backward(model, flow, delta, eps, grid, x);
    FpDiagnostics diag;
    sol.flow = forward(model, mu0, sw.control, grid, x, &diag);
    sol.residuals.fixed_point_gap = flow_distance(sol.flow, flow);
    sol.value_field = std::move(sw.field);
    sol.control = std::move(sw.control);
    sol.iterations = iter;
    sol.converged = converged;
    sol.final_omega = omega;

    const double dt = grid.dt();
    sol.psi_path.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) sol.psi_path[k] = model.constraint.eval(sol.flow[k]);

    sol.initial_part = 0.0;
    {
        const auto& u0 = sol.value_field.u[0];
        const auto& rho = mu0.density();
        for (std::size_t i = 0; i < u0.size(); ++i) sol.initial_part += u0[i] * rho[i];
        sol.initial_part *= mu0.dx();
    }
    sol.running_part = 0.0;
    if (!model.running.is_zero)
        for (std::size_t k = 0; k < steps; ++k) sol.running_part += model.running.on_grid(sol.flow[k]) * dt;
    sol.terminal_part = model.terminal.is_zero ? 0.0 : model.terminal.on_grid(sol.flow[steps]);
    sol.value = sol.initial_part + sol.running_part + sol.terminal_part;

    double lagr = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        const auto& rho = sol.flow[k].density();
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            acc += model.lagrangian.l(std::span<const double>(&x[i], 1),
                                      std::span<const double>(&sol.control[k][i], 1)) *
                   rho[i];
        lagr += acc * grid.dx() * dt;
    }
    sol.direct_cost = lagr + sol.running_part + sol.terminal_part;

    auto& res = sol.residuals;
    double excl = 0.0;
    res.constraint_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k <= steps; ++k) {
        const double margin = sol.psi_path[k] + delta;
        res.constraint_max = std::max(res.constraint_max, margin);
        if (k < steps) excl += margin * sol.value_field.nu[k] * dt;
    }
    res.exclusion_gap = std::abs(excl);
    res.terminal_exclusion = std::abs((sol.psi_path[steps] + delta) * sol.value_field.eta);
    res.max_mass_error = diag.max_mass_error;
    res.clipped_mass = diag.clipped_mass;
    const std::size_t edge = std::min<std::size_t>(3, grid.n_cells / 2);
    for (const auto& m : sol.flow) {
        const auto& rho = m.density();
        double mass = 0.0;
        for (std::size_t i = 0; i < edge; ++i) mass += rho[i] + rho[rho.size() - 1 - i];
        res.boundary_mass = std::max(res.boundary_mass, mass * m.dx());
    }
    return sol;
}

StabilityRow summarize(const MfSolution& sol) {
    StabilityRow row;
    row.delta = sol.delta;
    row.value = sol.value;
    row.iterations = sol.iterations;
    row.converged = sol.converged;
    row.residuals = sol.residuals;
    return row;
}

std::vector<StabilityRow> stability_sweep(const ModelSpec& model, const GridMeasure1D& mu0,
                                          std::vector<double> deltas, const SpaceTimeGrid& grid,
                                          const SolverOptions& options) {
    if (deltas.empty()) throw std::invalid_argument("stability_sweep: empty delta list");
    std::sort(deltas.begin(), deltas.end(), std::greater<>());
    const double psi0 = model.constraint.eval(mu0);
    if (!(psi0 < -deltas.front()))
        throw std::invalid_argument("stability_sweep: need Psi(mu0) < -max(delta)");
    std::vector<StabilityRow> rows(deltas.size());
    parallel_for(deltas.size(), [&](std::size_t i) {
        try {
            rows[i] = summarize(solve_mfoc(model, mu0, deltas[i], grid, options));
        } catch (const NumericalError&) {
            rows[i].delta = deltas[i];
            rows[i].value = std::numeric_limits<double>::quiet_NaN();
            rows[i].converged = false;
        }
    });
    return rows;
}

void write_solution_dump(const std::string& path, const MfSolution& sol, std::size_t every,
                         const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "t,x,u,du,density,alpha,nu\n";
    out.precision(17);
    const auto& g = sol.grid;
    const std::size_t stride = std::max<std::size_t>(1, every);
    for (std::size_t k = 0; k <= g.n_steps; ++k) {
        if (k % stride != 0 && k != g.n_steps) continue;
        // The terminal slice carries the atom eta in the multiplier column.
        const double nu = k < g.n_steps ? sol.value_field.nu[k] : sol.value_field.eta;
        const auto& rho = sol.flow[k].density();
        for (std::size_t i = 0; i < g.n_cells; ++i)
            out << g.time(k) << ',' << g.center(i) << ',' << sol.value_field.u[k][i] << ','
                << sol.value_field.du[k][i] << ',' << rho[i] << ',' << sol.control[k][i] << ','
                << nu << '\n';
    }
}

void write_solution_summary(const std::string& path, const std::vector<StabilityRow>& rows,
                            const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment
        << "delta,U,iterations,converged,fixed_point_gap,exclusion_gap,terminal_exclusion,"
           "constraint_max,max_mass_error,clipped_mass,boundary_mass\n";
    out.precision(17);
    for (const auto& r : rows) {
        const auto& s = r.residuals;
        out << r.delta << ',' << r.value << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
            << ',' << s.fixed_point_gap << ',' << s.exclusion_gap << ',' << s.terminal_exclusion
            << ',' << s.constraint_max << ',' << s.max_mass_error << ',' << s.clipped_mass << ','
            << s.boundary_mass << '\n';
    }
}

GridControl::GridControl(SpaceTimeGrid grid, std::vector<std::vector<double>> values)
    : grid_(grid), values_(std::move(values)) {
    grid_.validate();
    if (values_.size() != grid_.n_steps + 1)
        throw std::invalid_argument("GridControl: need n_steps + 1 slices");
    for (const auto& v : values_)
        if (v.size() != grid_.n_cells) throw std::invalid_argument("GridControl: slice length");
}

double GridControl::operator()(double t, double x) const {
    return interpolate(grid_, values_, t, x);
}

void GridControl::save(const std::string& path, const std::string& header_comment) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.precision(17);
    out << header_comment << "# grid " << grid_.x_min << ' ' << grid_.x_max << ' '
        << grid_.n_cells << ' ' << grid_.t0 << ' ' << grid_.horizon << ' ' << grid_.n_steps
        << "\nt,x,alpha\n";
    for (std::size_t k = 0; k < values_.size(); ++k)
        for (std::size_t i = 0; i < grid_.n_cells; ++i)
            out << grid_.time(k) << ',' << grid_.center(i) << ',' << values_[k][i] << '\n';
}

GridControl GridControl::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    SpaceTimeGrid g;
    bool have_grid = false, have_columns = false;
    std::vector<double> flat;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# grid ", 0) == 0) {
                std::istringstream ss(line.substr(7));
                if (!(ss >> g.x_min >> g.x_max >> g.n_cells >> g.t0 >> g.horizon >> g.n_steps))
                    throw std::runtime_error("GridControl::load: malformed grid line in " + path);
                have_grid = true;
            }
            continue;
        }
        if (!have_columns) {
            if (line != "t,x,alpha")
                throw std::runtime_error("GridControl::load: unexpected column header in " + path);
            have_columns = true;
            continue;
        }
        const auto last = line.rfind(',');
        if (last == std::string::npos)
            throw std::runtime_error("GridControl::load: malformed row in " + path);
        flat.push_back(std::stod(line.substr(last + 1)));
    }
    if (!have_grid) throw std::runtime_error("GridControl::load: missing grid line in " + path);
    if (flat.size() != (g.n_steps + 1) * g.n_cells)
        throw std::runtime_error("GridControl::load: row count does not match grid in " + path);
    std::vector<std::vector<double>> values(g.n_steps + 1);
    for (std::size_t k = 0; k <= g.n_steps; ++k)
        values[k].assign(flat.begin() + static_cast<long>(k * g.n_cells),
                         flat.begin() + static_cast<long>((k + 1) * g.n_cells));
    return {g, std::move(values)};
}

}  // namespace mfc
