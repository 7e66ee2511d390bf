#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mfc {

/// Uniform empirical measure (1/N) sum_i delta_{x_i} on R^d.
///
/// Coordinates are stored row-major: point i occupies [i*dim, (i+1)*dim).
class EmpiricalMeasure {
public:
    EmpiricalMeasure() = default;
    EmpiricalMeasure(std::vector<double> coords, std::size_t dim);

    static EmpiricalMeasure from_points(const std::vector<std::vector<double>>& points);

    std::size_t size() const { return dim_ == 0 ? 0 : coords_.size() / dim_; }
    std::size_t dim() const { return dim_; }

    std::span<const double> point(std::size_t i) const {
        return {coords_.data() + i * dim_, dim_};
    }
    std::span<double> point(std::size_t i) { return {coords_.data() + i * dim_, dim_}; }

    std::span<const double> coords() const { return coords_; }
    std::span<double> coords() { return coords_; }

    /// (1/N) sum_i f(x_i).
    double integrate(const std::function<double(std::span<const double>)>& f) const;

    /// Second moment (1/N) sum_i |x_i|^2.
    double second_moment() const;

    /// Sorted coordinates of a one-dimensional measure.
    std::vector<double> sorted_1d() const;

private:
    std::vector<double> coords_;
    std::size_t dim_ = 0;
};

/// Piecewise-constant probability density on [x_min, x_max] split into equal cells.
class GridMeasure1D {
public:
    GridMeasure1D() = default;

    /// Validates nonnegativity and unit mass (tolerance 1e-10).
    GridMeasure1D(double x_min, double x_max, std::vector<double> density);

    /// Rescales a nonnegative profile to unit mass.
    static GridMeasure1D normalized(double x_min, double x_max, std::vector<double> profile);

    /// Cell-averaged Gaussian N(mean, sd^2), renormalized on the domain.
    static GridMeasure1D gaussian(double x_min, double x_max, std::size_t n_cells, double mean,
                                  double sd);

    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    std::size_t cells() const { return density_.size(); }
    double dx() const { return (x_max_ - x_min_) / static_cast<double>(density_.size()); }
    double center(std::size_t i) const { return x_min_ + (static_cast<double>(i) + 0.5) * dx(); }

    const std::vector<double>& density() const { return density_; }

    /// Midpoint rule: sum_i f(center_i) density_i dx.
    double integrate(const std::function<double(double)>& f) const;
    double mass() const;
    double mean() const;
    double variance() const;

private:
    double x_min_ = 0.0;
    double x_max_ = 1.0;
    std::vector<double> density_;
};

/// d_p between two equal-size 1D sample sets via the sorted (quantile) coupling.
double wasserstein_1d(std::span<const double> a, std::span<const double> b, int p);

/// d_p between two grid densities via their piecewise-linear quantile functions.
double wasserstein_1d(const GridMeasure1D& a, const GridMeasure1D& b, int p);

/// d_p between a 1D sample set (any size) and a grid density.
double wasserstein_1d(std::span<const double> samples, const GridMeasure1D& b, int p);

/// Exact d_p between equal-size uniform empirical measures by minimum-cost matching.
double wasserstein_assignment(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p);

/// Largest N accepted by wasserstein_assignment.
inline constexpr std::size_t kAssignmentLimit = 4096;

/// Minimum-cost perfect matching on an n x n cost matrix (row-major).
/// Returns assignment[row] = column.
std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n);

/// Real-valued function on R^d with its gradient.
struct Integrand {
    std::function<double(std::span<const double>)> value;
    std::function<void(std::span<const double>, std::span<double>)> gradient;
};

/// sqrt(|x - x0|^2 + s^2) - s.
Integrand smoothed_distance(std::vector<double> x0, double smoothing);

/// Coordinate projection x -> x[axis] (gradient e_axis).
Integrand coordinate(std::size_t axis, std::size_t dim);

/// sup |grad f| over a tensor grid on the box [lo, hi]^dim.
double sup_gradient_norm(const Integrand& f, double lo, double hi, std::size_t dim,
                         std::size_t points_per_axis = 201);

/// Constraint Psi on probability measures, either linear
///   Psi(m) = int psi dm - kappa
/// or cylindrical
///   Psi(m) = F(int f_1 dm, ..., int f_k dm).
class ConstraintFunctional {
public:
    enum class Kind { linear, cylindrical };

    using Outer = std::function<double(std::span<const double>)>;
    using OuterGradient = std::function<void(std::span<const double>, std::span<double>)>;

    static ConstraintFunctional linear(Integrand psi, double kappa, double lipschitz_c);
    static ConstraintFunctional cylindrical(Outer outer, OuterGradient outer_gradient,
                                            std::vector<Integrand> inner, double lipschitz_c);

    Kind kind() const { return kind_; }
    double lipschitz() const { return lipschitz_c_; }
    double kappa() const { return kappa_; }

    double eval(const EmpiricalMeasure& m) const;
    double eval(const GridMeasure1D& m) const;

    double flat_derivative(const EmpiricalMeasure& m, std::span<const double> x) const;
    double flat_derivative(const GridMeasure1D& m, double x) const;

    /// Flat derivative at every cell center of m.
    std::vector<double> flat_derivative_on_grid(const GridMeasure1D& m) const;

private:
    // Coefficients c_j and offsets such that dPsi/dm(m, x) = sum_j c_j (f_j(x) - int f_j dm).
    std::vector<double> inner_means(const EmpiricalMeasure& m) const;
    std::vector<double> inner_means(const GridMeasure1D& m) const;
    std::vector<double> weights(std::span<const double> means) const;
    double pointwise(std::span<const double> w, std::span<const double> means,
                     std::span<const double> x) const;

    Kind kind_ = Kind::linear;
    std::vector<Integrand> inner_;
    Outer outer_;
    OuterGradient outer_gradient_;
    double kappa_ = 0.0;
    double lipschitz_c_ = 0.0;
};

double eval_constraint(const ConstraintFunctional& psi, const EmpiricalMeasure& m);
double eval_constraint(const ConstraintFunctional& psi, const GridMeasure1D& m);
double flat_derivative(const ConstraintFunctional& psi, const EmpiricalMeasure& m,
                       std::span<const double> x);
double flat_derivative(const ConstraintFunctional& psi, const GridMeasure1D& m, double x);

}  // namespace mfc
