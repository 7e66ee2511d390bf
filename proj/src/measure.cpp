#include "mfc/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mfc {

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> coords, std::size_t dim)
    : coords_(std::move(coords)), dim_(dim) {
    if (dim_ == 0) throw std::invalid_argument("EmpiricalMeasure: dimension must be >= 1");
    if (coords_.empty()) throw std::invalid_argument("EmpiricalMeasure: empty measure");
    if (coords_.size() % dim_ != 0)
        throw std::invalid_argument("EmpiricalMeasure: coordinate count not a multiple of dim");
    for (double c : coords_)
        if (!std::isfinite(c)) throw std::invalid_argument("EmpiricalMeasure: non-finite coordinate");
}

EmpiricalMeasure EmpiricalMeasure::from_points(const std::vector<std::vector<double>>& points) {
    if (points.empty()) throw std::invalid_argument("EmpiricalMeasure: empty measure");
    const std::size_t dim = points.front().size();
    std::vector<double> coords;
    coords.reserve(points.size() * dim);
    for (const auto& p : points) {
        if (p.size() != dim) throw std::invalid_argument("EmpiricalMeasure: ragged point list");
        coords.insert(coords.end(), p.begin(), p.end());
    }
    return {std::move(coords), dim};
}

double EmpiricalMeasure::integrate(const std::function<double(std::span<const double>)>& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < size(); ++i) sum += f(point(i));
    return sum / static_cast<double>(size());
}

double EmpiricalMeasure::second_moment() const {
    double sum = 0.0;
    for (double c : coords_) sum += c * c;
    return sum / static_cast<double>(size());
}

std::vector<double> EmpiricalMeasure::sorted_1d() const {
    if (dim_ != 1) throw std::invalid_argument("sorted_1d: measure is not one-dimensional");
    std::vector<double> out = coords_;
    std::sort(out.begin(), out.end());
    return out;
}

GridMeasure1D::GridMeasure1D(double x_min, double x_max, std::vector<double> density)
    : x_min_(x_min), x_max_(x_max), density_(std::move(density)) {
    if (!(x_max_ > x_min_)) throw std::invalid_argument("GridMeasure1D: empty domain");
    if (density_.empty()) throw std::invalid_argument("GridMeasure1D: no cells");
    for (double v : density_)
        if (!(v >= 0.0) || !std::isfinite(v))
            throw std::invalid_argument("GridMeasure1D: negative or non-finite density");
    if (std::abs(mass() - 1.0) > 1e-10)
        throw std::invalid_argument("GridMeasure1D: mass " + std::to_string(mass()) + " != 1");
}

GridMeasure1D GridMeasure1D::normalized(double x_min, double x_max, std::vector<double> profile) {
    if (profile.empty()) throw std::invalid_argument("GridMeasure1D: no cells");
    const double dx = (x_max - x_min) / static_cast<double>(profile.size());
    double total = 0.0;
    for (double v : profile) {
        if (!(v >= 0.0)) throw std::invalid_argument("GridMeasure1D: negative profile value");
        total += v;
    }
    total *= dx;
    if (!(total > 0.0)) throw std::invalid_argument("GridMeasure1D: zero-mass profile");
    for (double& v : profile) v /= total;
    return {x_min, x_max, std::move(profile)};
}

GridMeasure1D GridMeasure1D::gaussian(double x_min, double x_max, std::size_t n_cells, double mean,
                                      double sd) {
    if (!(sd > 0.0)) throw std::invalid_argument("GridMeasure1D::gaussian: sd must be positive");
    const double dx = (x_max - x_min) / static_cast<double>(n_cells);
    auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
    std::vector<double> profile(n_cells);
    for (std::size_t i = 0; i < n_cells; ++i) {
        const double lo = x_min + static_cast<double>(i) * dx;
        profile[i] = cdf(lo + dx) - cdf(lo);
    }
    return normalized(x_min, x_max, std::move(profile));
}

double GridMeasure1D::integrate(const std::function<double(double)>& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < density_.size(); ++i) sum += f(center(i)) * density_[i];
    return sum * dx();
}

double GridMeasure1D::mass() const {
    return std::accumulate(density_.begin(), density_.end(), 0.0) * dx();
}

double GridMeasure1D::mean() const {
    return integrate([](double x) { return x; });
}

double GridMeasure1D::variance() const {
    const double m = mean();
    return integrate([m](double x) { return (x - m) * (x - m); });
}

namespace {

// Quantile function piece: Q(s) linear from q0 to q1 on [s0, s1].
struct QuantilePiece {
    double s0, s1, q0, q1;
    double at(double s) const {
        if (s1 <= s0) return q0;
        return q0 + (q1 - q0) * (s - s0) / (s1 - s0);
    }
};

std::vector<QuantilePiece> quantile_pieces(std::span<const double> sorted) {
    const double n = static_cast<double>(sorted.size());
    std::vector<QuantilePiece> out;
    out.reserve(sorted.size());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const double s0 = static_cast<double>(k) / n;
        const double s1 = k + 1 == sorted.size() ? 1.0 : static_cast<double>(k + 1) / n;
        out.push_back({s0, s1, sorted[k], sorted[k]});
    }
    return out;
}

std::vector<QuantilePiece> quantile_pieces(const GridMeasure1D& m) {
    const auto& rho = m.density();
    const double dx = m.dx();
    const double total = m.mass();
    std::vector<QuantilePiece> out;
    double cum = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) {
        const double w = rho[i] * dx / total;
        if (w <= 0.0) continue;
        const double left = m.x_min() + static_cast<double>(i) * dx;
        out.push_back({cum, cum + w, left, left + dx});
        cum += w;
    }
    if (out.empty()) throw std::invalid_argument("wasserstein_1d: empty measure");
    out.back().s1 = 1.0;
    return out;
}

// Exact integral of |d|^p over an interval where d is linear from d0 to d1.
double segment_cost(double d0, double d1, double len, int p) {
    if (p == 2) return len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    const double a0 = std::abs(d0), a1 = std::abs(d1);
    if ((d0 >= 0.0) == (d1 >= 0.0) || a0 + a1 == 0.0) return 0.5 * (a0 + a1) * len;
    return len * (d0 * d0 + d1 * d1) / (2.0 * (a0 + a1));
}

double quantile_distance(const std::vector<QuantilePiece>& a, const std::vector<QuantilePiece>& b,
                         int p) {
    if (p != 1 && p != 2) throw std::invalid_argument("wasserstein: p must be 1 or 2");
    double total = 0.0;
    std::size_t i = 0, j = 0;
    double s = 0.0;
    while (i < a.size() && j < b.size()) {
        const double hi = std::min(a[i].s1, b[j].s1);
        if (hi > s) {
            const double d0 = a[i].at(s) - b[j].at(s);
            const double d1 = a[i].at(hi) - b[j].at(hi);
            total += segment_cost(d0, d1, hi - s, p);
            s = hi;
        }
        if (a[i].s1 <= hi) ++i;
        if (j < b.size() && b[j].s1 <= hi) ++j;
    }
    return p == 1 ? total : std::sqrt(total);
}

}  // namespace

double wasserstein_1d(std::span<const double> a, std::span<const double> b, int p) {
    if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein_1d: empty measure");
    if (a.size() != b.size())
        throw std::invalid_argument("wasserstein_1d: sample counts differ");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (p != 1 && p != 2) throw std::invalid_argument("wasserstein: p must be 1 or 2");
    double total = 0.0;
    for (std::size_t k = 0; k < sa.size(); ++k) {
        const double d = std::abs(sa[k] - sb[k]);
        total += p == 1 ? d : d * d;
    }
    total /= static_cast<double>(sa.size());
    return p == 1 ? total : std::sqrt(total);
}

double wasserstein_1d(const GridMeasure1D& a, const GridMeasure1D& b, int p) {
    if (p == 1 && a.cells() == b.cells() && a.x_min() == b.x_min() && a.x_max() == b.x_max()) {
        // Same cells: d_1 = int |F_a - F_b| dx with both CDFs linear inside each cell.
        const auto& ra = a.density();
        const auto& rb = b.density();
        const double dx = a.dx(), sa = a.mass(), sb = b.mass();
        double d0 = 0.0, total = 0.0;
        for (std::size_t i = 0; i < ra.size(); ++i) {
            const double d1 = d0 + (ra[i] / sa - rb[i] / sb) * dx;
            total += segment_cost(d0, d1, dx, 1);
            d0 = d1;
        }
        return total;
    }
    return quantile_distance(quantile_pieces(a), quantile_pieces(b), p);
}

double wasserstein_1d(std::span<const double> samples, const GridMeasure1D& b, int p) {
    if (samples.empty()) throw std::invalid_argument("wasserstein_1d: empty measure");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    return quantile_distance(quantile_pieces(sorted), quantile_pieces(b), p);
}

double wasserstein_assignment(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p) {
    if (p != 1 && p != 2) throw std::invalid_argument("wasserstein: p must be 1 or 2");
    if (a.size() != b.size()) throw std::invalid_argument("wasserstein_assignment: size mismatch");
    if (a.dim() != b.dim()) throw std::invalid_argument("wasserstein_assignment: dimension mismatch");
    const std::size_t n = a.size();
    if (n > kAssignmentLimit)
        throw std::invalid_argument("wasserstein_assignment: N over limit " +
                                    std::to_string(kAssignmentLimit));
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = a.point(i);
        for (std::size_t j = 0; j < n; ++j) {
            const auto y = b.point(j);
            double sq = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) sq += (x[k] - y[k]) * (x[k] - y[k]);
            cost[i * n + j] = p == 2 ? sq : std::sqrt(sq);
        }
    }
    const auto match = min_cost_assignment(cost, n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + match[i]];
    total /= static_cast<double>(n);
    return p == 1 ? total : std::sqrt(total);
}

Integrand smoothed_distance(std::vector<double> x0, double smoothing) {
    if (!(smoothing > 0.0)) throw std::invalid_argument("smoothed_distance: smoothing must be > 0");
    Integrand f;
    f.value = [x0, smoothing](std::span<const double> x) {
        double sq = smoothing * smoothing;
        for (std::size_t k = 0; k < x.size(); ++k) sq += (x[k] - x0[k]) * (x[k] - x0[k]);
        return std::sqrt(sq) - smoothing;
    };
    f.gradient = [x0, smoothing](std::span<const double> x, std::span<double> g) {
        double sq = smoothing * smoothing;
        for (std::size_t k = 0; k < x.size(); ++k) sq += (x[k] - x0[k]) * (x[k] - x0[k]);
        const double r = std::sqrt(sq);
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = (x[k] - x0[k]) / r;
    };
    return f;
}

Integrand coordinate(std::size_t axis, std::size_t dim) {
    if (axis >= dim) throw std::invalid_argument("coordinate: axis out of range");
    Integrand f;
    f.value = [axis](std::span<const double> x) { return x[axis]; };
    f.gradient = [axis](std::span<const double> x, std::span<double> g) {
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = k == axis ? 1.0 : 0.0;
    };
    return f;
}

double sup_gradient_norm(const Integrand& f, double lo, double hi, std::size_t dim,
                         std::size_t points_per_axis) {
    if (dim == 0 || points_per_axis < 2)
        throw std::invalid_argument("sup_gradient_norm: need dim >= 1 and >= 2 points per axis");
    std::vector<std::size_t> idx(dim, 0);
    std::vector<double> x(dim), g(dim);
    const double h = (hi - lo) / static_cast<double>(points_per_axis - 1);
    double best = 0.0;
    while (true) {
        for (std::size_t k = 0; k < dim; ++k) x[k] = lo + h * static_cast<double>(idx[k]);
        f.gradient(x, g);
        double sq = 0.0;
        for (double v : g) sq += v * v;
        best = std::max(best, std::sqrt(sq));
        std::size_t k = 0;
        while (k < dim && ++idx[k] == points_per_axis) idx[k++] = 0;
        if (k == dim) break;
    }
    return best;
}

ConstraintFunctional ConstraintFunctional::linear(Integrand psi, double kappa, double lipschitz_c) {
    if (!psi.value) throw std::invalid_argument("ConstraintFunctional: missing integrand");
    ConstraintFunctional c;
    c.kind_ = Kind::linear;
    c.inner_.push_back(std::move(psi));
    c.kappa_ = kappa;
    c.lipschitz_c_ = lipschitz_c;
    return c;
}

ConstraintFunctional ConstraintFunctional::cylindrical(Outer outer, OuterGradient outer_gradient,
                                                       std::vector<Integrand> inner,
                                                       double lipschitz_c) {
    if (!outer || !outer_gradient || inner.empty())
        throw std::invalid_argument("ConstraintFunctional: incomplete cylindrical functional");
    if (!(lipschitz_c > 0.0))
        throw std::invalid_argument("ConstraintFunctional: cylindrical kind needs C_Psi > 0");
    ConstraintFunctional c;
    c.kind_ = Kind::cylindrical;
    c.outer_ = std::move(outer);
    c.outer_gradient_ = std::move(outer_gradient);
    c.inner_ = std::move(inner);
    c.lipschitz_c_ = lipschitz_c;
    return c;
}

std::vector<double> ConstraintFunctional::inner_means(const EmpiricalMeasure& m) const {
    std::vector<double> means(inner_.size());
    for (std::size_t j = 0; j < inner_.size(); ++j) means[j] = m.integrate(inner_[j].value);
    return means;
}

std::vector<double> ConstraintFunctional::inner_means(const GridMeasure1D& m) const {
    std::vector<double> means(inner_.size());
    for (std::size_t j = 0; j < inner_.size(); ++j) {
        const auto& f = inner_[j].value;
        means[j] = m.integrate([&f](double x) { return f(std::span<const double>(&x, 1)); });
    }
    return means;
}

std::vector<double> ConstraintFunctional::weights(std::span<const double> means) const {
    if (kind_ == Kind::linear) return {1.0};
    std::vector<double> w(inner_.size());
    outer_gradient_(means, w);
    return w;
}

double ConstraintFunctional::pointwise(std::span<const double> w, std::span<const double> means,
                                       std::span<const double> x) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < inner_.size(); ++j) sum += w[j] * (inner_[j].value(x) - means[j]);
    return sum;
}

double ConstraintFunctional::eval(const EmpiricalMeasure& m) const {
    const auto means = inner_means(m);
    return kind_ == Kind::linear ? means[0] - kappa_ : outer_(means);
}

double ConstraintFunctional::eval(const GridMeasure1D& m) const {
    const auto means = inner_means(m);
    return kind_ == Kind::linear ? means[0] - kappa_ : outer_(means);
}

double ConstraintFunctional::flat_derivative(const EmpiricalMeasure& m,
                                             std::span<const double> x) const {
    const auto means = inner_means(m);
    return pointwise(weights(means), means, x);
}

double ConstraintFunctional::flat_derivative(const GridMeasure1D& m, double x) const {
    const auto means = inner_means(m);
    return pointwise(weights(means), means, std::span<const double>(&x, 1));
}

std::vector<double> ConstraintFunctional::flat_derivative_on_grid(const GridMeasure1D& m) const {
    const auto means = inner_means(m);
    const auto w = weights(means);
    std::vector<double> out(m.cells());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = m.center(i);
        out[i] = pointwise(w, means, std::span<const double>(&x, 1));
    }
    return out;
}

double eval_constraint(const ConstraintFunctional& psi, const EmpiricalMeasure& m) {
    return psi.eval(m);
}
double eval_constraint(const ConstraintFunctional& psi, const GridMeasure1D& m) {
    return psi.eval(m);
}
double flat_derivative(const ConstraintFunctional& psi, const EmpiricalMeasure& m,
                       std::span<const double> x) {
    return psi.flat_derivative(m, x);
}
double flat_derivative(const ConstraintFunctional& psi, const GridMeasure1D& m, double x) {
    return psi.flat_derivative(m, x);
}

}  // namespace mfc
