#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfc/particle.hpp"

namespace mfc {

/// Confinement parameters: after the stopping time every particle is held within
/// d_2-radius r = delta / (4 C_Psi) of its position at that time.
struct FreezeParams {
    double delta = 0.0;
    double c_psi = 0.0;
    double r = 0.0;
    std::optional<EmpiricalMeasure> anchor;

    static FreezeParams make(double delta, double c_psi);

    /// Sets the anchor; throws std::logic_error if it was already set.
    void capture(const EmpiricalMeasure& state);

    /// (1/N) sum_i |x_i - anchor_i|^2 / r^2.
    double ratio(const EmpiricalMeasure& state) const;
};

/// beta_i = 4 y_i / (sum_j |y_j|^2 - r^2 N) - (2d/r^2) y_i - b(x_i, m), y = x - anchor.
/// Throws NumericalError when sum_j |y_j|^2 >= r^2 N.
std::vector<double> freeze_feedback(const EmpiricalMeasure& state, const FreezeParams& params,
                                    const DriftField& drift);

/// Ratio above which the displacement is pulled back radially before evaluating beta.
inline constexpr double kConfinementGuard = 1.0 - 1e-9;

/// With barrier resolution on, (barrier + spring gain) x sub-step stays below this.
inline constexpr double kFreezeStepGain = 0.25;

struct TransferSettings {
    /// Split post-switch steps near the confinement radius (see transfer_control).
    bool resolve_barrier = true;
    /// The confinement ratio is recorded at every ratio_every-th grid time, so runs at
    /// dt and dt/k can be compared on common times (ratio_every = k for the finer one).
    std::size_t ratio_every = 1;
};

/// Mean-field feedback alpha(t, x) -> control at a single point.
using PointControl = std::function<void(double, std::span<const double>, std::span<double>)>;

struct TransferRecord {
    TrajectoryRecord trajectory;
    FreezeParams params;
    double max_ratio = 0.0;
    /// -max_t Psi(m_t) over grid times.
    double min_margin = 0.0;
    /// Psi at the stopping step minus the -delta/2 threshold.
    double overshoot = 0.0;
    std::size_t clamp_events = 0;
};

/// Runs alpha(t, X^i) until tau_N = first grid time with Psi >= -delta/2, then switches
/// every particle to the freeze feedback anchored at the post-step state of that time.
/// With resolve_barrier, post-switch steps are split (Brownian bridge inside the step)
/// so the explicit update neither overshoots the barrier nor lets noise jump the radius.
TransferRecord transfer_control(const SimConfig& config, const ModelSpec& model,
                                const PointControl& alpha, double delta,
                                const TransferSettings& settings = {});

struct TransferSummary {
    std::size_t run = 0;
    bool aborted = false;
    std::string message;
    std::optional<std::size_t> tau_index;
    double tau_time = 0.0;
    double tau_gap = 0.0;
    double total_cost = 0.0;
    double post_tau_energy = 0.0;
    double max_ratio = 0.0;
    double min_margin = 0.0;
    double slack = 0.0;
    double overshoot = 0.0;
    std::size_t clamp_events = 0;
    bool violated = false;
};

struct TransferBatch {
    std::vector<TransferSummary> runs;
    std::size_t completed = 0;
    double mean_cost = 0.0;
    double se_cost = 0.0;
    double mean_tau_gap = 0.0;
    double mean_post_tau_energy = 0.0;
    double worst_ratio = 0.0;
    std::size_t clamp_events = 0;
};

TransferBatch transfer_batch(const SimConfig& config, const ModelSpec& model,
                             const PointControl& alpha, double delta, std::size_t runs,
                             const TransferSettings& settings = {});

/// Right-hand side of the post-stopping energy estimate for one run with T - tau = gap
/// (gap < 0 meaning tau never fired).
double freeze_cost_bound(std::optional<double> gap, std::size_t dim, double r, std::size_t n,
                         double drift_bound);

/// Same bound with expectations replaced by batch averages. Runs where tau never fires
/// contribute nothing to either expectation.
double freeze_cost_bound(const TransferBatch& batch, std::size_t dim, double r, std::size_t n,
                         double drift_bound);

/// Per-run CSV: run,tau,max_ratio,min_margin,post_tau_energy,bound.
void write_freeze_diagnostics(const std::string& path, const TransferBatch& batch,
                              std::size_t dim, double r, std::size_t n, double drift_bound,
                              const std::string& header_comment);

}  // namespace mfc
