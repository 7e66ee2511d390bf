#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfc/measure.hpp"

namespace mfc {

/// Raised when a computation produces non-finite values or fails to converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// H(x, p) with its p- and x-gradients. D2_pp H is bounded between mu_lo and mu_hi.
struct Hamiltonian {
    using Scalar = std::function<double(std::span<const double>, std::span<const double>)>;
    using Gradient =
        std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>;

    Scalar h;
    Gradient dp_h;
    Gradient dx_h;
    double mu_lo = 1.0;
    double mu_hi = 1.0;

    /// 1/2 |p|^2 + shift.
    static Hamiltonian quadratic(double shift = 0.0);
    /// 1/2 |p|^2 + eps * sum_k sin(x_k) p_k.
    static Hamiltonian tilted(double eps);
};

/// L(x, q) = sup_p { -p.q - H(x, p) }.
struct Lagrangian {
    using Scalar = std::function<double(std::span<const double>, std::span<const double>)>;
    using Gradient =
        std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>;

    Scalar l;
    Gradient dq_l;

    /// 1/2 |q|^2 + shift.
    static Lagrangian quadratic(double shift = 0.0);
    /// Dual of Hamiltonian::tilted: 1/2 |q + eps sin(x)|^2.
    static Lagrangian tilted(double eps);
};

/// Mean-field drift b(x, m). Statistics of m are computed once per bind, then the
/// returned closure evaluates b at individual points.
struct DriftField {
    using PointDrift = std::function<void(std::span<const double>, std::span<double>)>;
    using GridDrift = std::function<double(double)>;
    /// (y, x) -> db/dm(y, m, x) for a bound 1D measure m.
    using FlatDerivative = std::function<double(double, double)>;

    std::function<PointDrift(const EmpiricalMeasure&)> bind_particles;
    std::function<GridDrift(const GridMeasure1D&)> bind_grid;
    std::function<FlatDerivative(const GridMeasure1D&)> bind_flat_derivative;  // optional
    double sup_norm = 0.0;
    double lipschitz_x = 0.0;
    double lipschitz_m = 0.0;
    bool is_zero = false;

    static DriftField zero();
    static DriftField constant(std::vector<double> v);
    /// b_k(x, m) = strength * tanh(mean_k(m) - x_k).
    static DriftField mean_attraction(double strength, std::size_t dim);
};

/// Running cost F or terminal cost G on measures.
struct MeanFieldCost {
    std::function<double(const EmpiricalMeasure&)> on_particles;
    std::function<double(const GridMeasure1D&)> on_grid;
    /// Normalized flat derivative at the cell centers of m.
    std::function<std::vector<double>(const GridMeasure1D&)> flat_derivative_on_grid;
    bool is_zero = false;

    static MeanFieldCost zero();
    /// m -> int g dm, with flat derivative g - int g dm.
    static MeanFieldCost linear(Integrand g);
};

struct ModelSpec {
    std::size_t dim = 1;
    Hamiltonian hamiltonian = Hamiltonian::quadratic();
    Lagrangian lagrangian = Lagrangian::quadratic();
    DriftField drift = DriftField::zero();
    MeanFieldCost running = MeanFieldCost::zero();
    MeanFieldCost terminal = MeanFieldCost::zero();
    ConstraintFunctional constraint;
    double t0 = 0.0;
    double horizon = 1.0;

    /// Throws std::invalid_argument unless 0 <= t0 < T and all callables are set.
    void validate() const;
};

struct LegendreReport {
    double max_gap = 0.0;
    std::vector<double> worst_x;
    std::vector<double> worst_q;
};

/// Max over sampled (x, q) in [-box, box]^{2d} of |L(x,q) - (-p*.q - H(x,p*))|, p* from
/// damped Newton on the concave inner problem. Throws NumericalError on non-convergence.
LegendreReport legendre_check(const Hamiltonian& h, const Lagrangian& l, std::size_t samples,
                              std::size_t dim, double box = 2.0, std::uint64_t seed = 1);

/// Finite-difference check of mu_lo I <= D2_pp H <= mu_hi I on sampled points.
/// Returns the observed (min, max) eigenvalues.
std::pair<double, double> hessian_bounds(const Hamiltonian& h, std::size_t samples,
                                         std::size_t dim, double box = 2.0,
                                         std::uint64_t seed = 1);

/// (1/N) sum_i L(x_i, alpha_i) + F(m).
double particle_running_cost(const EmpiricalMeasure& state, std::span<const double> controls,
                             const ModelSpec& model);

}  // namespace mfc
