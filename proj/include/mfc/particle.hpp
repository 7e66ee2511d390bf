#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfc/measure.hpp"
#include "mfc/model.hpp"

namespace mfc {

struct SimConfig {
    std::size_t dim = 1;
    double dt = 1e-3;
    double t0 = 0.0;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    EmpiricalMeasure initial;
    /// Brownian increments are drawn at resolution dt / noise_substeps and summed, so a
    /// run at (dt, k) and one at (dt / k, 1) with the same seed share a Brownian path.
    std::size_t noise_substeps = 1;
    /// Noise stream label per particle (defaults to the particle index).
    std::vector<std::uint64_t> particle_labels;

    std::size_t particles() const { return initial.size(); }
    /// Number of steps on [t0, T]; throws unless (T - t0)/dt is within 1e-9 of an integer.
    std::size_t steps() const;
    void validate() const;
};

/// Feedback map (t, state) -> per-particle controls (N*d, row-major).
using Policy = std::function<void(double, const EmpiricalMeasure&, std::span<double>)>;

/// Called after each completed step with the post-step index, time, state and Psi.
using StepObserver = std::function<void(std::size_t, double, const EmpiricalMeasure&, double)>;

struct SimOptions {
    bool keep_snapshots = false;
    std::size_t snapshot_every = 1;
    StepObserver observer;
    /// End the run at the first grid time with Psi >= 0 (survival estimation).
    bool stop_on_violation = false;
    /// Longest admissible sub-step (empty: always dt), given the time, the state, the
    /// Brownian increment W still to be spent (the state moves by sqrt(2) W) and the time
    /// left in the step. Shorter values split the step; W is then refined by a Brownian
    /// bridge, so grid-time noise does not depend on the splitting.
    std::function<double(double, const EmpiricalMeasure&, std::span<const double>, double)> max_substep;
};

struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<std::size_t> snapshot_steps;
    std::vector<EmpiricalMeasure> snapshots;
    std::vector<double> psi_path;
    /// Accumulated running cost at each grid time (terminal cost excluded).
    std::vector<double> cost_path;
    std::optional<std::size_t> tau_index;
    double running_cost = 0.0;
    double terminal_cost = 0.0;
    double control_energy = 0.0;
    double post_tau_energy = 0.0;
    /// max_k |Psi_{k+1} - Psi_k|: the monitoring gap between grid times.
    double max_psi_increment = 0.0;
    /// max_k (1/N) sum_i |X_{k+1}^i - X_k^i|, a d_1 bound for a single step.
    double max_step_displacement = 0.0;
    bool violated = false;
    EmpiricalMeasure final_state;

    double total_cost() const { return running_cost + terminal_cost; }
    /// T - T ^ tau (zero when tau never fires).
    double tau_gap() const;
};

/// x_i <- x_i + (b(x_i, m) + alpha_i) dt + sqrt(2 dt) xi_i, m the pre-step measure.
EmpiricalMeasure em_step(const EmpiricalMeasure& state, std::span<const double> control,
                         const DriftField& drift, double dt, std::span<const double> noise);

TrajectoryRecord simulate(const SimConfig& config, const ModelSpec& model, const Policy& policy,
                          std::optional<double> stop_threshold, const SimOptions& options = {});

struct RunSummary {
    std::size_t run = 0;
    bool aborted = false;
    std::string message;
    double total_cost = 0.0;
    double control_energy = 0.0;
    double post_tau_energy = 0.0;
    std::optional<std::size_t> tau_index;
    double tau_gap = 0.0;
    bool violated = false;
    double final_second_moment = 0.0;
    double max_psi_increment = 0.0;
};

struct BatchAggregate {
    std::size_t runs = 0;
    std::size_t completed = 0;
    std::size_t aborted = 0;
    std::size_t violations = 0;
    double mean_cost = 0.0;
    double se_cost = 0.0;
    double mean_tau_gap = 0.0;
    double mean_final_second_moment = 0.0;
    double se_final_second_moment = 0.0;
};

struct BatchResult {
    std::vector<RunSummary> summaries;
    std::vector<TrajectoryRecord> records;  // filled only when requested
    BatchAggregate aggregate;
};

struct BatchOptions {
    bool keep_records = false;
};

/// Mean and standard error (unbiased) of a sample; se is 0 for fewer than two values.
std::pair<double, double> mean_and_se(std::span<const double> values);

/// M independent runs; run r uses seed derive_seed(config.seed, r).
BatchResult mc_batch(const SimConfig& config, const ModelSpec& model, const Policy& policy,
                     std::size_t runs, std::optional<double> stop_threshold,
                     const BatchOptions& options = {});

/// Deterministic fold of run summaries (sorted by run index).
BatchAggregate aggregate_runs(std::vector<RunSummary>& summaries);

/// Line-delimited JSON records (run, step, time, psi, cost_so_far).
void write_trajectory_dump(const std::string& path, const std::vector<TrajectoryRecord>& records,
                           const std::string& header_comment);

/// Deterministic initial positions: the (i + 1/2)/N quantiles of a grid density.
EmpiricalMeasure quantile_points(const GridMeasure1D& m, std::size_t n);

}  // namespace mfc
