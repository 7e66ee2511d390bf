#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfc/mfsolver.hpp"
#include "mfc/particle.hpp"

namespace mfc {

struct SurvivalEstimate {
    std::size_t runs = 0;
    std::size_t successes = 0;
    std::size_t aborted = 0;
    double v_hat = 0.0;
    /// 95% Wilson score interval; one-sided [0, 1 - 0.05^(1/M)] when nothing survived.
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    bool rate_estimable = false;
    std::string message;
};

/// Wilson score interval for k successes out of m at normal quantile z.
std::pair<double, double> wilson_interval(std::size_t k, std::size_t m, double z = 1.959963984540054);

/// Builds the estimate (v_hat, interval, flags) from raw counts.
SurvivalEstimate survival_from_counts(std::size_t successes, std::size_t runs);

/// Fraction of M uncontrolled runs (alpha = 0) keeping Psi < 0 at every grid time up to
/// `horizon`. Run r uses seed derive_seed(config.seed, r).
SurvivalEstimate estimate_survival(const SimConfig& config, const DriftField& drift,
                                   const ConstraintFunctional& psi, double horizon,
                                   std::size_t runs);

/// Pools independent sub-batches by summing counts.
SurvivalEstimate pool(const std::vector<SurvivalEstimate>& batches);

/// -(2/N) log v_hat. Throws std::domain_error when v_hat = 0.
double rate_estimate(double v_hat, std::size_t n);

/// Rate interval obtained by mapping the survival interval through the decreasing map
/// v -> -(2/N) log v (upper end is +inf when ci_lo = 0).
std::pair<double, double> rate_interval(const SurvivalEstimate& est, std::size_t n);

struct PilotRule {
    std::size_t pilot_runs = 2000;
    std::size_t min_runs = 1000;
    std::size_t max_runs = 400000;
    double target_successes = 100.0;
};

/// Runs required so that M v_prior >= target, clamped to [min_runs, max_runs].
std::size_t pilot_size(double v_prior, const PilotRule& rule);

struct LdpRow {
    std::size_t n = 0;
    std::size_t runs = 0;
    double v_hat = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double rate = 0.0;
    double rate_lo = 0.0;
    double rate_hi = 0.0;
    double u_ref = 0.0;
    double gap = 0.0;
    bool estimable = false;
    std::string message;
};

struct LdpOptions {
    std::vector<std::size_t> n_list{4, 8, 16};
    double dt = 1e-3;
    std::uint64_t seed = 1;
    PilotRule pilot;
    /// Candidate constraint margins for the reference value; the smallest one whose solve
    /// converges is used.
    std::vector<double> deltas{0.02, 0.01, 0.005};
};

struct LdpReport {
    std::vector<LdpRow> rows;
    double u_ref = 0.0;
    double ref_delta = 0.0;
    std::vector<StabilityRow> sweep;
};

/// Survival-rate estimates per N (initial points at the quantiles of mu0) compared with the
/// mean-field value from the grid solver.
LdpReport ldp_compare(const ModelSpec& model, const GridMeasure1D& mu0, const SpaceTimeGrid& grid,
                      const SolverOptions& solver, const LdpOptions& options);

/// CSV: N,M,v_hat,ci_lo,ci_hi,rate,rate_lo,rate_hi,U_ref,gap.
void write_ldp_report(const std::string& path, const LdpReport& report,
                      const std::string& header_comment);

}  // namespace mfc
