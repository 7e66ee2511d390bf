#include "mfc/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "mfc/parallel.hpp"

namespace mfc {

std::pair<double, double> wilson_interval(std::size_t k, std::size_t m, double z) {
    if (m == 0) throw std::invalid_argument("wilson_interval: no trials");
    const double n = static_cast<double>(m);
    const double p = static_cast<double>(k) / n;
    const double z2 = z * z;
    const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    const double half = z / (1.0 + z2 / n) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

SurvivalEstimate survival_from_counts(std::size_t successes, std::size_t runs) {
    if (runs == 0) throw std::invalid_argument("survival_from_counts: no completed runs");
    if (successes > runs) throw std::invalid_argument("survival_from_counts: successes > runs");
    SurvivalEstimate est;
    est.runs = runs;
    est.successes = successes;
    est.v_hat = static_cast<double>(successes) / static_cast<double>(runs);
    if (successes == 0) {
        est.ci_lo = 0.0;
        est.ci_hi = 1.0 - std::pow(0.05, 1.0 / static_cast<double>(runs));
        est.rate_estimable = false;
        est.message = "rate not estimable, increase M or decrease N";
    } else {
        std::tie(est.ci_lo, est.ci_hi) = wilson_interval(successes, runs);
        est.rate_estimable = true;
    }
    return est;
}

SurvivalEstimate estimate_survival(const SimConfig& config, const DriftField& drift,
                                   const ConstraintFunctional& psi, double horizon,
                                   std::size_t runs) {
    if (runs == 0) throw std::invalid_argument("estimate_survival: need at least one run");
    SimConfig local = config;
    local.horizon = horizon;
    local.validate();
    const double psi0 = psi.eval(local.initial);
    if (!(psi0 < 0.0)) {
        std::ostringstream msg;
        msg << "estimate_survival: need Psi(m_0) < 0, got " << psi0;
        throw std::invalid_argument(msg.str());
    }
    ModelSpec model;
    model.dim = local.dim;
    model.drift = drift;
    model.constraint = psi;
    model.t0 = local.t0;
    model.horizon = horizon;

    // 1 survived, 0 violated, -1 aborted.
    std::vector<int> outcome(runs, 0);
    SimOptions opts;
    opts.stop_on_violation = true;
    const Policy zero = [](double, const EmpiricalMeasure&, std::span<double>) {};
    parallel_for(runs, [&](std::size_t r) {
        SimConfig run = local;
        run.seed = derive_seed(local.seed, r);
        try {
            outcome[r] = simulate(run, model, zero, std::nullopt, opts).violated ? 0 : 1;
        } catch (const NumericalError&) {
            outcome[r] = -1;
        }
    });
    std::size_t ok = 0, aborted = 0;
    for (int o : outcome) {
        if (o < 0)
            ++aborted;
        else
            ok += static_cast<std::size_t>(o);
    }
    SurvivalEstimate est = survival_from_counts(ok, runs - aborted);
    est.aborted = aborted;
    return est;
}

SurvivalEstimate pool(const std::vector<SurvivalEstimate>& batches) {
    std::size_t ok = 0, runs = 0, aborted = 0;
    for (const auto& b : batches) {
        ok += b.successes;
        runs += b.runs;
        aborted += b.aborted;
    }
    SurvivalEstimate est = survival_from_counts(ok, runs);
    est.aborted = aborted;
    return est;
}

double rate_estimate(double v_hat, std::size_t n) {
    if (n == 0) throw std::invalid_argument("rate_estimate: N must be >= 1");
    if (!(v_hat > 0.0)) throw std::domain_error("rate_estimate: rate undefined for v_hat = 0");
    if (v_hat > 1.0) throw std::invalid_argument("rate_estimate: v_hat > 1");
    return -2.0 / static_cast<double>(n) * std::log(v_hat);
}

std::pair<double, double> rate_interval(const SurvivalEstimate& est, std::size_t n) {
    const double hi = est.ci_lo > 0.0 ? rate_estimate(est.ci_lo, n)
                                      : std::numeric_limits<double>::infinity();
    const double lo = est.ci_hi > 0.0 ? rate_estimate(est.ci_hi, n)
                                      : std::numeric_limits<double>::infinity();
    return {lo, hi};
}

std::size_t pilot_size(double v_prior, const PilotRule& rule) {
    if (!(v_prior > 0.0)) return rule.max_runs;
    const double need = std::ceil(rule.target_successes / v_prior);
    if (need >= static_cast<double>(rule.max_runs)) return rule.max_runs;
    return std::max(rule.min_runs, static_cast<std::size_t>(need));
}

LdpReport ldp_compare(const ModelSpec& model, const GridMeasure1D& mu0, const SpaceTimeGrid& grid,
                      const SolverOptions& solver, const LdpOptions& options) {
    if (!model.running.is_zero || !model.terminal.is_zero)
        throw std::invalid_argument("ldp_compare: the identity needs F = G = 0");
    if (options.n_list.empty()) throw std::invalid_argument("ldp_compare: empty N list");
    LdpReport report;
    report.sweep = stability_sweep(model, mu0, options.deltas, grid, solver);
    bool found = false;
    for (auto it = report.sweep.rbegin(); it != report.sweep.rend(); ++it) {
        if (it->converged && std::isfinite(it->value)) {
            report.u_ref = it->value;
            report.ref_delta = it->delta;
            found = true;
            break;
        }
    }
    if (!found) throw NumericalError("ldp_compare: no reference solve converged");

    for (std::size_t n : options.n_list) {
        SimConfig cfg;
        cfg.dim = 1;
        cfg.dt = options.dt;
        cfg.t0 = model.t0;
        cfg.horizon = model.horizon;
        cfg.initial = quantile_points(mu0, n);
        cfg.seed = derive_seed(options.seed, 2 * n + 1);
        const SurvivalEstimate pilot = estimate_survival(cfg, model.drift, model.constraint,
                                                         model.horizon, options.pilot.pilot_runs);
        const std::size_t runs = pilot_size(pilot.v_hat, options.pilot);
        cfg.seed = derive_seed(options.seed, 2 * n);
        const SurvivalEstimate est =
            estimate_survival(cfg, model.drift, model.constraint, model.horizon, runs);
        LdpRow row;
        row.n = n;
        row.runs = est.runs;
        row.v_hat = est.v_hat;
        row.ci_lo = est.ci_lo;
        row.ci_hi = est.ci_hi;
        row.u_ref = report.u_ref;
        row.estimable = est.rate_estimable;
        row.message = est.message;
        if (est.rate_estimable) {
            row.rate = rate_estimate(est.v_hat, n);
            std::tie(row.rate_lo, row.rate_hi) = rate_interval(est, n);
            row.gap = std::abs(row.rate - report.u_ref);
        } else {
            row.rate = row.rate_hi = row.gap = std::numeric_limits<double>::infinity();
            row.rate_lo = rate_interval(est, n).first;
        }
        report.rows.push_back(row);
    }
    return report;
}

void write_ldp_report(const std::string& path, const LdpReport& report,
                      const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "N,M,v_hat,ci_lo,ci_hi,rate,rate_lo,rate_hi,U_ref,gap\n";
    out.precision(17);
    for (const auto& r : report.rows)
        out << r.n << ',' << r.runs << ',' << r.v_hat << ',' << r.ci_lo << ',' << r.ci_hi << ','
            << r.rate << ',' << r.rate_lo << ',' << r.rate_hi << ',' << r.u_ref << ',' << r.gap
            << '\n';
}

}  // namespace mfc
