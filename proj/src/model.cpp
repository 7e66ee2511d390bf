#include "mfc/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace mfc {

Hamiltonian Hamiltonian::quadratic(double shift) {
    Hamiltonian h;
    h.h = [shift](std::span<const double>, std::span<const double> p) {
        double sq = 0.0;
        for (double v : p) sq += v * v;
        return 0.5 * sq + shift;
    };
    h.dp_h = [](std::span<const double>, std::span<const double> p, std::span<double> out) {
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k];
    };
    h.dx_h = [](std::span<const double>, std::span<const double> p, std::span<double> out) {
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = 0.0;
    };
    return h;
}

Hamiltonian Hamiltonian::tilted(double eps) {
    Hamiltonian h;
    h.h = [eps](std::span<const double> x, std::span<const double> p) {
        double val = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) val += 0.5 * p[k] * p[k] + eps * std::sin(x[k]) * p[k];
        return val;
    };
    h.dp_h = [eps](std::span<const double> x, std::span<const double> p, std::span<double> out) {
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] + eps * std::sin(x[k]);
    };
    h.dx_h = [eps](std::span<const double> x, std::span<const double> p, std::span<double> out) {
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = eps * std::cos(x[k]) * p[k];
    };
    return h;
}

Lagrangian Lagrangian::quadratic(double shift) {
    Lagrangian l;
    l.l = [shift](std::span<const double>, std::span<const double> q) {
        double sq = 0.0;
        for (double v : q) sq += v * v;
        return 0.5 * sq + shift;
    };
    l.dq_l = [](std::span<const double>, std::span<const double> q, std::span<double> out) {
        for (std::size_t k = 0; k < q.size(); ++k) out[k] = q[k];
    };
    return l;
}

Lagrangian Lagrangian::tilted(double eps) {
    Lagrangian l;
    l.l = [eps](std::span<const double> x, std::span<const double> q) {
        double sq = 0.0;
        for (std::size_t k = 0; k < q.size(); ++k) {
            const double v = q[k] + eps * std::sin(x[k]);
            sq += v * v;
        }
        return 0.5 * sq;
    };
    l.dq_l = [eps](std::span<const double> x, std::span<const double> q, std::span<double> out) {
        for (std::size_t k = 0; k < q.size(); ++k) out[k] = q[k] + eps * std::sin(x[k]);
    };
    return l;
}

DriftField DriftField::zero() {
    DriftField b;
    b.bind_particles = [](const EmpiricalMeasure&) -> PointDrift {
        return [](std::span<const double>, std::span<double> out) {
            for (double& v : out) v = 0.0;
        };
    };
    b.bind_grid = [](const GridMeasure1D&) -> GridDrift { return [](double) { return 0.0; }; };
    b.bind_flat_derivative = [](const GridMeasure1D&) -> FlatDerivative {
        return [](double, double) { return 0.0; };
    };
    b.is_zero = true;
    return b;
}

DriftField DriftField::constant(std::vector<double> v) {
    DriftField b;
    double sq = 0.0;
    for (double c : v) sq += c * c;
    b.bind_particles = [v](const EmpiricalMeasure&) -> PointDrift {
        return [v](std::span<const double>, std::span<double> out) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = v[k];
        };
    };
    const double v0 = v.empty() ? 0.0 : v[0];
    b.bind_grid = [v0](const GridMeasure1D&) -> GridDrift { return [v0](double) { return v0; }; };
    b.bind_flat_derivative = [](const GridMeasure1D&) -> FlatDerivative {
        return [](double, double) { return 0.0; };
    };
    b.sup_norm = std::sqrt(sq);
    b.is_zero = sq == 0.0;
    return b;
}

DriftField DriftField::mean_attraction(double strength, std::size_t dim) {
    DriftField b;
    b.bind_particles = [strength, dim](const EmpiricalMeasure& m) -> PointDrift {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t i = 0; i < m.size(); ++i)
            for (std::size_t k = 0; k < dim; ++k) mean[k] += m.point(i)[k];
        for (double& v : mean) v /= static_cast<double>(m.size());
        return [strength, mean](std::span<const double> x, std::span<double> out) {
            for (std::size_t k = 0; k < out.size(); ++k) out[k] = strength * std::tanh(mean[k] - x[k]);
        };
    };
    b.bind_grid = [strength](const GridMeasure1D& m) -> GridDrift {
        const double mean = m.mean();
        return [strength, mean](double x) { return strength * std::tanh(mean - x); };
    };
    b.bind_flat_derivative = [strength](const GridMeasure1D& m) -> FlatDerivative {
        const double mean = m.mean();
        return [strength, mean](double y, double x) {
            const double c = std::cosh(mean - y);
            return strength * (x - mean) / (c * c);
        };
    };
    b.sup_norm = std::abs(strength) * std::sqrt(static_cast<double>(dim));
    b.lipschitz_x = std::abs(strength);
    b.lipschitz_m = std::abs(strength);
    b.is_zero = strength == 0.0;
    return b;
}

MeanFieldCost MeanFieldCost::zero() {
    MeanFieldCost c;
    c.on_particles = [](const EmpiricalMeasure&) { return 0.0; };
    c.on_grid = [](const GridMeasure1D&) { return 0.0; };
    c.flat_derivative_on_grid = [](const GridMeasure1D& m) {
        return std::vector<double>(m.cells(), 0.0);
    };
    c.is_zero = true;
    return c;
}

MeanFieldCost MeanFieldCost::linear(Integrand g) {
    MeanFieldCost c;
    auto f = g.value;
    auto on_line = [f](double x) { return f(std::span<const double>(&x, 1)); };
    c.on_particles = [f](const EmpiricalMeasure& m) { return m.integrate(f); };
    c.on_grid = [on_line](const GridMeasure1D& m) { return m.integrate(on_line); };
    c.flat_derivative_on_grid = [on_line](const GridMeasure1D& m) {
        const double mean = m.integrate(on_line);
        std::vector<double> out(m.cells());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = on_line(m.center(i)) - mean;
        return out;
    };
    return c;
}

void ModelSpec::validate() const {
    if (dim == 0) throw std::invalid_argument("model: dimension must be >= 1");
    if (!(t0 >= 0.0 && t0 < horizon)) throw std::invalid_argument("model: need 0 <= t0 < T");
    if (!hamiltonian.h || !hamiltonian.dp_h) throw std::invalid_argument("model: Hamiltonian unset");
    if (!lagrangian.l) throw std::invalid_argument("model: Lagrangian unset");
    if (!drift.bind_particles || !drift.bind_grid) throw std::invalid_argument("model: drift unset");
    if (!running.on_particles || !terminal.on_particles)
        throw std::invalid_argument("model: mean-field costs unset");
    if (!(hamiltonian.mu_lo > 0.0)) throw std::invalid_argument("model: need mu_lo > 0");
}

namespace {

struct BoxSampler {
    std::mt19937_64 rng;
    std::uniform_real_distribution<double> unif;
    BoxSampler(double box, std::uint64_t seed) : rng(seed), unif(-box, box) {}
    std::vector<double> draw(std::size_t dim) {
        std::vector<double> v(dim);
        for (double& c : v) c = unif(rng);
        return v;
    }
};

Eigen::MatrixXd fd_hessian(const Hamiltonian& h, std::span<const double> x,
                           std::span<const double> p) {
    const std::size_t d = p.size();
    constexpr double step = 1e-5;
    Eigen::MatrixXd hess(d, d);
    std::vector<double> pp(p.begin(), p.end()), gp(d), gm(d);
    for (std::size_t j = 0; j < d; ++j) {
        pp[j] = p[j] + step;
        h.dp_h(x, pp, gp);
        pp[j] = p[j] - step;
        h.dp_h(x, pp, gm);
        pp[j] = p[j];
        for (std::size_t i = 0; i < d; ++i) hess(i, j) = (gp[i] - gm[i]) / (2.0 * step);
    }
    return 0.5 * (hess + hess.transpose());
}

}  // namespace

LegendreReport legendre_check(const Hamiltonian& h, const Lagrangian& l, std::size_t samples,
                              std::size_t dim, double box, std::uint64_t seed) {
    if (samples == 0) throw std::invalid_argument("legendre_check: samples must be >= 1");
    BoxSampler sampler(box, seed);
    LegendreReport report;
    for (std::size_t s = 0; s < samples; ++s) {
        const auto x = sampler.draw(dim);
        const auto q = sampler.draw(dim);
        auto objective = [&](std::span<const double> p) {
            double dot = 0.0;
            for (std::size_t k = 0; k < dim; ++k) dot += p[k] * q[k];
            return -dot - h.h(x, p);
        };
        std::vector<double> p(dim, 0.0), grad(dim), trial(dim);
        bool converged = false;
        for (int it = 0; it < 100; ++it) {
            h.dp_h(x, p, grad);
            double gnorm = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                grad[k] = -q[k] - grad[k];
                gnorm = std::max(gnorm, std::abs(grad[k]));
            }
            if (gnorm < 1e-12) {
                converged = true;
                break;
            }
            const Eigen::MatrixXd hess = fd_hessian(h, x, p);
            const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grad.data(), dim);
            const Eigen::VectorXd dir = hess.ldlt().solve(g);
            const double base = objective(p);
            double step = 1.0;
            for (int ls = 0; ls < 40; ++ls) {
                for (std::size_t k = 0; k < dim; ++k) trial[k] = p[k] + step * dir(k);
                if (objective(trial) >= base - 1e-14 * (1.0 + std::abs(base))) break;
                step *= 0.5;
            }
            p = trial;
        }
        if (!converged) {
            std::ostringstream msg;
            msg << "legendre_check: Newton did not converge at sample " << s << " (x0=" << x[0]
                << ", q0=" << q[0] << ")";
            throw NumericalError(msg.str());
        }
        const double gap = std::abs(l.l(x, q) - objective(p));
        if (gap >= report.max_gap) {
            report.max_gap = gap;
            report.worst_x = x;
            report.worst_q = q;
        }
    }
    return report;
}

std::pair<double, double> hessian_bounds(const Hamiltonian& h, std::size_t samples,
                                         std::size_t dim, double box, std::uint64_t seed) {
    BoxSampler sampler(box, seed);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < samples; ++s) {
        const auto x = sampler.draw(dim);
        const auto p = sampler.draw(dim);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fd_hessian(h, x, p));
        lo = std::min(lo, eig.eigenvalues().minCoeff());
        hi = std::max(hi, eig.eigenvalues().maxCoeff());
    }
    return {lo, hi};
}

double particle_running_cost(const EmpiricalMeasure& state, std::span<const double> controls,
                             const ModelSpec& model) {
    const std::size_t n = state.size(), d = state.dim();
    if (controls.size() != n * d)
        throw std::invalid_argument("particle_running_cost: control length != N*d");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        sum += model.lagrangian.l(state.point(i), controls.subspan(i * d, d));
    return sum / static_cast<double>(n) + model.running.on_particles(state);
}

}  // namespace mfc
