#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfc/measure.hpp"
#include "mfc/model.hpp"

namespace mfc {

/// Uniform grid on [x_min, x_max] x [t0, T] for the one-dimensional solver.
struct SpaceTimeGrid {
    double x_min = -6.0;
    double x_max = 6.0;
    std::size_t n_cells = 300;
    double t0 = 0.0;
    double horizon = 1.0;
    std::size_t n_steps = 1000;

    double dx() const { return (x_max - x_min) / static_cast<double>(n_cells); }
    double dt() const { return (horizon - t0) / static_cast<double>(n_steps); }
    double center(std::size_t i) const { return x_min + (static_cast<double>(i) + 0.5) * dx(); }
    double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt(); }
    double parabolic_ratio() const { return dt() / (dx() * dx()); }
    /// Diffusion sub-steps per time step so that the effective ratio is <= 0.4.
    std::size_t fp_substeps() const;
    void validate() const;
};

/// Discrete heat semigroup P_t (generator the Laplacian): convolution with a Gaussian of
/// variance 2t sampled on the grid, truncated at 6 standard deviations and renormalized.
/// Values beyond the domain are taken equal to the nearest boundary value.
std::vector<double> heat_apply(std::span<const double> f, double dx, double t);

struct FpOptions {
    /// Increase sub-steps when the velocity violates the CFL bound instead of refusing.
    bool adaptive_substeps = false;
};

struct FpDiagnostics {
    double clipped_mass = 0.0;
    double max_mass_error = 0.0;
    std::size_t max_substeps = 0;
};

/// Velocity at cell centers for the step leaving `step`, given the current density.
using VelocityField = std::function<void(std::size_t, const GridMeasure1D&, std::span<double>)>;

/// Explicit conservative finite-volume Fokker-Planck solve
///   d_t mu + div(v mu) - Laplacian mu = 0, zero-flux boundary,
/// with upwind advective and centered diffusive fluxes. Returns n_steps + 1 densities.
std::vector<GridMeasure1D> fp_forward(const GridMeasure1D& mu0, const VelocityField& velocity,
                                      const SpaceTimeGrid& grid, const FpOptions& options = {},
                                      FpDiagnostics* diagnostics = nullptr);

/// Same with precomputed per-step velocities (n_steps fields of n_cells values).
std::vector<GridMeasure1D> fp_forward(const GridMeasure1D& mu0,
                                      const std::vector<std::vector<double>>& velocity,
                                      const SpaceTimeGrid& grid, const FpOptions& options = {},
                                      FpDiagnostics* diagnostics = nullptr);

/// u(t, x) on the space-time grid together with the multiplier density and terminal atom.
struct ValueField {
    std::vector<std::vector<double>> u;   // n_steps + 1 slices
    std::vector<std::vector<double>> du;  // centered differences, one-sided at the boundary
    std::vector<double> nu;               // n_steps values (left endpoints)
    double eta = 0.0;
};

struct HjbInputs {
    std::vector<double> terminal;
    /// n_steps slices; entry k is the source at t_k. Empty means zero.
    std::vector<std::vector<double>> source;
    /// n_steps slices of b(x, mu(t_k)) at cell centers. Empty means zero drift.
    std::vector<std::vector<double>> drift;
    /// Optional Du-dependent source added at step k given Du(t_{k+1}).
    std::function<void(std::size_t, std::span<const double>, std::span<double>)> source_hook;
};

/// Centered-difference gradient (one-sided at the ends).
std::vector<double> grid_gradient(std::span<const double> u, double dx);

/// Backward sweep u(t_k) = P_dt u(t_{k+1}) + dt [S_k - H(x, Du_{k+1}) + b_k Du_{k+1}].
/// A slice is split into equal sub-steps when |dpH| + |b| would move more than half a cell.
ValueField hjb_backward(const HjbInputs& inputs, const Hamiltonian& hamiltonian,
                        const SpaceTimeGrid& grid);

struct SolverOptions {
    double penalty_eps = 1e-3;
    double tol_fp = 1e-7;
    std::size_t k_max = 2000;
    double omega = 0.5;
    double omega_min = 1e-3;
    /// Continuation: penalty_eps is approached through eps_start, eps_start/2, ...
    /// (each stage solved to stage_tol) so early iterates avoid huge multipliers.
    double eps_start = 0.5;
    double stage_tol = 1e-4;
    /// Anderson mixing depth on top of the damped step (0 = plain damped Picard).
    std::size_t anderson_depth = 0;
    /// Optional progress callback (iteration, stage eps, fixed-point gap, omega).
    std::function<void(std::size_t, double, double, double)> monitor;
};

struct MfResiduals {
    double fixed_point_gap = 0.0;
    /// |sum_k (Psi(mu_k) + delta) nu_k dt|.
    double exclusion_gap = 0.0;
    /// |(Psi(mu_T) + delta) eta|.
    double terminal_exclusion = 0.0;
    /// max_k Psi(mu_k) + delta.
    double constraint_max = 0.0;
    double max_mass_error = 0.0;
    double clipped_mass = 0.0;
    /// Largest mass within 3 cells of either boundary over all slices.
    double boundary_mass = 0.0;
};

struct MfSolution {
    SpaceTimeGrid grid;
    double delta = 0.0;
    double penalty_eps = 0.0;
    std::vector<GridMeasure1D> flow;
    ValueField value_field;
    /// alpha = -dpH(x, Du) per slice (n_steps + 1).
    std::vector<std::vector<double>> control;
    std::vector<double> psi_path;
    double value = 0.0;
    double initial_part = 0.0;   // int u(t0) dmu0
    double running_part = 0.0;   // sum_k F(mu_k) dt
    double terminal_part = 0.0;  // G(mu_T)
    /// Direct discretization of int int L(x, alpha) dmu dt + int F + G.
    double direct_cost = 0.0;
    MfResiduals residuals;
    std::size_t iterations = 0;
    bool converged = false;
    double final_omega = 0.0;

    /// Piecewise-constant in time, linear in space (clamped at the ends).
    double control_at(double t, double x) const;
};

/// Penalized constrained mean-field optimality system, solved by damped Picard iteration
/// on the flow: nu(t) = (2/eps)(Psi(mu(t)) + delta)^+, eta = (2/eps)(Psi(mu(T)) + delta)^+.
MfSolution solve_mfoc(const ModelSpec& model, const GridMeasure1D& mu0, double delta,
                      const SpaceTimeGrid& grid, const SolverOptions& options = {});

struct StabilityRow {
    double delta = 0.0;
    double value = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    MfResiduals residuals;
};

/// solve_mfoc per delta (run as independent tasks); rows sorted by decreasing delta.
std::vector<StabilityRow> stability_sweep(const ModelSpec& model, const GridMeasure1D& mu0,
                                          std::vector<double> deltas, const SpaceTimeGrid& grid,
                                          const SolverOptions& options = {});

/// Per-slice CSV (t,x,u,du,density,alpha,nu), every `every`-th slice.
void write_solution_dump(const std::string& path, const MfSolution& sol, std::size_t every,
                         const std::string& header_comment);

/// Summary CSV (delta,U,iterations,converged,fixed_point_gap,exclusion_gap,...).
void write_solution_summary(const std::string& path, const std::vector<StabilityRow>& rows,
                            const std::string& header_comment);

StabilityRow summarize(const MfSolution& sol);

/// Feedback alpha(t, x) tabulated on a space-time grid.
class GridControl {
public:
    GridControl() = default;
    GridControl(SpaceTimeGrid grid, std::vector<std::vector<double>> values);
    explicit GridControl(const MfSolution& sol) : GridControl(sol.grid, sol.control) {}

    double operator()(double t, double x) const;
    const SpaceTimeGrid& grid() const { return grid_; }

    /// CSV with header comment lines, then rows t,x,alpha for every slice and cell.
    void save(const std::string& path, const std::string& header_comment) const;
    static GridControl load(const std::string& path);

private:
    SpaceTimeGrid grid_;
    std::vector<std::vector<double>> values_;
};

}  // namespace mfc
