#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfc/mfsolver.hpp"

namespace mfc {

std::size_t SpaceTimeGrid::fp_substeps() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(parabolic_ratio() / 0.4)));
}

void SpaceTimeGrid::validate() const {
    if (!(x_max > x_min)) throw std::invalid_argument("grid: need x_min < x_max");
    if (n_cells < 3) throw std::invalid_argument("grid: need at least 3 cells");
    if (!(horizon > t0)) throw std::invalid_argument("grid: need t0 < T");
    if (n_steps == 0) throw std::invalid_argument("grid: need at least one time step");
}

std::vector<double> heat_apply(std::span<const double> f, double dx, double t) {
    if (t < 0.0) throw std::invalid_argument("heat_apply: negative time");
    std::vector<double> out(f.begin(), f.end());
    if (t == 0.0 || f.empty()) return out;
    const double sigma = std::sqrt(2.0 * t);
    const auto half = static_cast<long>(std::ceil(6.0 * sigma / dx));
    if (half == 0) return out;
    std::vector<double> w(static_cast<std::size_t>(2 * half + 1));
    double total = 0.0;
    for (long k = -half; k <= half; ++k) {
        const double z = static_cast<double>(k) * dx;
        const double v = std::exp(-z * z / (4.0 * t));
        w[static_cast<std::size_t>(k + half)] = v;
        total += v;
    }
    for (double& v : w) v /= total;
    const long n = static_cast<long>(f.size());
    const double* wk = w.data() + half;
    for (long i = 0; i < n; ++i) {
        double acc = 0.0;
        if (i - half >= 0 && i + half < n) {
            const double* fi = f.data() + i;
            for (long k = -half; k <= half; ++k) acc += wk[k] * fi[k];
        } else {
            for (long k = -half; k <= half; ++k)
                acc += wk[k] * f[static_cast<std::size_t>(std::clamp(i + k, 0L, n - 1))];
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

std::vector<GridMeasure1D> fp_forward(const GridMeasure1D& mu0, const VelocityField& velocity,
                                      const SpaceTimeGrid& grid, const FpOptions& options,
                                      FpDiagnostics* diagnostics) {
    grid.validate();
    const std::size_t n = grid.n_cells;
    if (mu0.cells() != n || std::abs(mu0.x_min() - grid.x_min) > 1e-12 ||
        std::abs(mu0.x_max() - grid.x_max) > 1e-12)
        throw std::invalid_argument("fp_forward: initial density does not match the grid");
    const double dx = grid.dx(), dt = grid.dt();
    const std::size_t base_substeps = grid.fp_substeps();

    FpDiagnostics diag;
    std::vector<GridMeasure1D> flow;
    flow.reserve(grid.n_steps + 1);
    flow.push_back(mu0);
    std::vector<double> rho = mu0.density(), next(n), v(n), flux(n + 1, 0.0);

    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        std::fill(v.begin(), v.end(), 0.0);
        velocity(k, flow.back(), v);
        double vmax = 0.0;
        for (double c : v) {
            if (!std::isfinite(c)) throw NumericalError("fp_forward: non-finite velocity");
            vmax = std::max(vmax, std::abs(c));
        }
        std::size_t substeps = base_substeps;
        const double cfl = [&](std::size_t s) {
            const double h = dt / static_cast<double>(s);
            return vmax * h / dx + 2.0 * h / (dx * dx);
        }(substeps);
        if (cfl > 1.0) {
            const auto needed = static_cast<std::size_t>(
                std::ceil(static_cast<double>(substeps) * cfl / 0.8));
            if (!options.adaptive_substeps) {
                std::ostringstream msg;
                msg << "fp_forward: CFL violation at step " << k << " (number " << cfl
                    << "); use at least " << needed << " sub-steps";
                throw NumericalError(msg.str());
            }
            substeps = needed;
        }
        diag.max_substeps = std::max(diag.max_substeps, substeps);
        const double h = dt / static_cast<double>(substeps);
        for (std::size_t s = 0; s < substeps; ++s) {
            for (std::size_t i = 0; i + 1 < n; ++i) {
                const double vf = 0.5 * (v[i] + v[i + 1]);
                const double adv = vf > 0.0 ? vf * rho[i] : vf * rho[i + 1];
                flux[i + 1] = adv - (rho[i + 1] - rho[i]) / dx;
            }
            flux[0] = 0.0;
            flux[n] = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                next[i] = rho[i] - h / dx * (flux[i + 1] - flux[i]);
                if (next[i] < 0.0) {
                    diag.clipped_mass += -next[i] * dx;
                    next[i] = 0.0;
                }
            }
            rho.swap(next);
        }
        double mass = 0.0;
        for (double c : rho) mass += c;
        mass *= dx;
        diag.max_mass_error = std::max(diag.max_mass_error, std::abs(mass - 1.0));
        if (std::abs(mass - 1.0) > 1e-10)
            flow.push_back(GridMeasure1D::normalized(grid.x_min, grid.x_max, rho));
        else
            flow.emplace_back(grid.x_min, grid.x_max, rho);
    }
    if (diagnostics) *diagnostics = diag;
    return flow;
}

std::vector<GridMeasure1D> fp_forward(const GridMeasure1D& mu0,
                                      const std::vector<std::vector<double>>& velocity,
                                      const SpaceTimeGrid& grid, const FpOptions& options,
                                      FpDiagnostics* diagnostics) {
    if (velocity.size() < grid.n_steps)
        throw std::invalid_argument("fp_forward: need one velocity field per step");
    for (const auto& v : velocity)
        if (v.size() != grid.n_cells)
            throw std::invalid_argument("fp_forward: velocity field has wrong length");
    return fp_forward(
        mu0,
        [&velocity](std::size_t k, const GridMeasure1D&, std::span<double> out) {
            std::copy(velocity[k].begin(), velocity[k].end(), out.begin());
        },
        grid, options, diagnostics);
}

std::vector<double> grid_gradient(std::span<const double> u, double dx) {
    const std::size_t n = u.size();
    std::vector<double> du(n, 0.0);
    if (n < 2) return du;
    du[0] = (u[1] - u[0]) / dx;
    du[n - 1] = (u[n - 1] - u[n - 2]) / dx;
    for (std::size_t i = 1; i + 1 < n; ++i) du[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx);
    return du;
}

ValueField hjb_backward(const HjbInputs& inputs, const Hamiltonian& hamiltonian,
                        const SpaceTimeGrid& grid) {
    grid.validate();
    const std::size_t n = grid.n_cells, steps = grid.n_steps;
    if (inputs.terminal.size() != n) throw std::invalid_argument("hjb_backward: terminal size");
    if (!inputs.source.empty() && inputs.source.size() < steps)
        throw std::invalid_argument("hjb_backward: need one source slice per step");
    if (!inputs.drift.empty() && inputs.drift.size() < steps)
        throw std::invalid_argument("hjb_backward: need one drift slice per step");
    const double dx = grid.dx(), dt = grid.dt();

    ValueField vf;
    vf.u.resize(steps + 1);
    vf.du.resize(steps + 1);
    vf.u[steps] = inputs.terminal;
    for (double v : vf.u[steps])
        if (!std::isfinite(v)) throw NumericalError("hjb_backward: non-finite terminal data");
    vf.du[steps] = grid_gradient(vf.u[steps], dx);

    std::vector<double> extra(n), grad(1);
    for (std::size_t k = steps; k-- > 0;) {
        std::fill(extra.begin(), extra.end(), 0.0);
        if (inputs.source_hook) inputs.source_hook(k, vf.du[k + 1], extra);
        // Explicit in H: split the slice when the characteristic speed would cross a cell.
        double speed = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = grid.center(i);
            hamiltonian.dp_h(std::span<const double>(&x, 1),
                             std::span<const double>(&vf.du[k + 1][i], 1), grad);
            double v = std::abs(grad[0]);
            if (!inputs.drift.empty()) v += std::abs(inputs.drift[k][i]);
            speed = std::max(speed, v);
        }
        const auto sub = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::ceil(speed * dt / (0.5 * dx))));
        if (sub > 100000) {
            std::ostringstream msg;
            msg << "hjb_backward: gradient blow-up at slice " << k;
            throw NumericalError(msg.str());
        }
        const double h = dt / static_cast<double>(sub);
        std::vector<double> cur = vf.u[k + 1];
        std::vector<double> dcur = vf.du[k + 1];
        for (std::size_t s = 0; s < sub; ++s) {
            std::vector<double> next = heat_apply(cur, dx, h);
            for (std::size_t i = 0; i < n; ++i) {
                const double x = grid.center(i);
                const double p = dcur[i];
                double rhs = extra[i] - hamiltonian.h(std::span<const double>(&x, 1),
                                                      std::span<const double>(&p, 1));
                if (!inputs.source.empty()) rhs += inputs.source[k][i];
                if (!inputs.drift.empty()) rhs += inputs.drift[k][i] * p;
                next[i] += h * rhs;
                if (!std::isfinite(next[i])) {
                    std::ostringstream msg;
                    msg << "hjb_backward: non-finite value at slice " << k;
                    throw NumericalError(msg.str());
                }
            }
            cur = std::move(next);
            dcur = grid_gradient(cur, dx);
        }
        vf.u[k] = std::move(cur);
        vf.du[k] = std::move(dcur);
    }
    return vf;
}

}  // namespace mfc
