#include "mfc/freeze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mfc/parallel.hpp"

namespace mfc {

FreezeParams FreezeParams::make(double delta, double c_psi) {
    if (!(delta > 0.0)) throw std::invalid_argument("FreezeParams: delta must be positive");
    if (!(c_psi > 0.0)) throw std::invalid_argument("FreezeParams: C_Psi must be positive");
    FreezeParams p;
    p.delta = delta;
    p.c_psi = c_psi;
    p.r = delta / (4.0 * c_psi);
    return p;
}

void FreezeParams::capture(const EmpiricalMeasure& state) {
    if (anchor) throw std::logic_error("FreezeParams: anchor already captured");
    anchor = state;
}

double FreezeParams::ratio(const EmpiricalMeasure& state) const {
    if (!anchor) return 0.0;
    const auto x = state.coords();
    const auto a = anchor->coords();
    double sum = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) sum += (x[j] - a[j]) * (x[j] - a[j]);
    return sum / (static_cast<double>(state.size()) * r * r);
}

namespace {

// Evaluates beta for displacements y (N*d) scaled by `scale`, writing into out.
void beta_formula(const EmpiricalMeasure& state, std::span<const double> anchor, double scale,
                  double r, const DriftField& drift, std::span<double> out) {
    const std::size_t n = state.size(), d = state.dim();
    const auto x = state.coords();
    double sum_sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double y = scale * (x[j] - anchor[j]);
        sum_sq += y * y;
    }
    const double denom = sum_sq - r * r * static_cast<double>(n);
    if (!(denom < 0.0)) {
        std::ostringstream msg;
        msg << "freeze_feedback: confinement violated, radius ratio "
            << sum_sq / (r * r * static_cast<double>(n));
        throw NumericalError(msg.str());
    }
    const double spring = 2.0 * static_cast<double>(d) / (r * r);
    const auto b = drift.bind_particles(state);
    std::vector<double> bx(d);
    for (std::size_t i = 0; i < n; ++i) {
        b(state.point(i), bx);
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t j = i * d + k;
            const double y = scale * (x[j] - anchor[j]);
            out[j] = 4.0 * y / denom - spring * y - bx[k];
        }
    }
}

}  // namespace

std::vector<double> freeze_feedback(const EmpiricalMeasure& state, const FreezeParams& params,
                                    const DriftField& drift) {
    if (!params.anchor) throw std::logic_error("freeze_feedback: anchor not captured");
    if (params.anchor->size() != state.size() || params.anchor->dim() != state.dim())
        throw std::invalid_argument("freeze_feedback: anchor shape mismatch");
    std::vector<double> beta(state.coords().size());
    beta_formula(state, params.anchor->coords(), 1.0, params.r, drift, beta);
    return beta;
}

TransferRecord transfer_control(const SimConfig& config, const ModelSpec& model,
                                const PointControl& alpha, double delta,
                                const TransferSettings& settings) {
    config.validate();
    const double psi0 = model.constraint.eval(config.initial);
    if (!(psi0 < -delta)) {
        std::ostringstream msg;
        msg << "transfer_control: need Psi(m_0) < -delta, got Psi = " << psi0
            << " with delta = " << delta;
        throw std::invalid_argument(msg.str());
    }
    TransferRecord out;
    out.params = FreezeParams::make(delta, model.constraint.lipschitz());
    const double threshold = -0.5 * delta;
    const std::size_t d = config.dim;
    FreezeParams& params = out.params;

    Policy policy = [&](double t, const EmpiricalMeasure& state, std::span<double> controls) {
        if (!params.anchor) {
            for (std::size_t i = 0; i < state.size(); ++i)
                alpha(t, state.point(i), controls.subspan(i * d, d));
            return;
        }
        const double ratio = params.ratio(state);
        double scale = 1.0;
        if (ratio > kConfinementGuard) {
            scale = std::sqrt(kConfinementGuard / ratio);
            ++out.clamp_events;
        }
        beta_formula(state, params.anchor->coords(), scale, params.r, model.drift, controls);
    };

    double max_psi = psi0;
    SimOptions options;
    const std::size_t every = std::max<std::size_t>(1, settings.ratio_every);
    options.observer = [&](std::size_t k, double, const EmpiricalMeasure& state, double psi) {
        max_psi = std::max(max_psi, psi);
        if (!params.anchor) {
            if (psi >= threshold) {
                params.capture(state);
                out.overshoot = psi - threshold;
            }
            return;
        }
        if (k % every == 0) out.max_ratio = std::max(out.max_ratio, params.ratio(state));
    };
    // The barrier term stiffens and the noise can jump the radius as the cloud nears it.
    // Sub-steps keep the explicit update stable and put a crossing many standard
    // deviations of the ratio increment away.
    const double n_r2 = params.r * params.r * static_cast<double>(config.particles());
    const double spring = 2.0 * static_cast<double>(d) / (params.r * params.r);
    if (settings.resolve_barrier)
        options.max_substep = [&](double, const EmpiricalMeasure& state, std::span<const double> w,
                                  double left) {
            if (!params.anchor) return config.dt;
            const double s = std::min(params.ratio(state), kConfinementGuard);
            const double room = 1.0 - s;
            const double stiff = kFreezeStepGain / (4.0 / (n_r2 * room) + spring);
            // Linear noise term: sd of the ratio increment is sqrt(8 h s / (N r^2)).
            const double noisy = n_r2 * room * room / (512.0 * std::max(s, 1e-3));
            // Quadratic term 2h |xi|^2 / (N r^2), with room for a 6-sigma coordinate.
            const double square = n_r2 * room / (8.0 * (static_cast<double>(config.particles() * d) + 40.0));
            // Inside a split step the bridge drifts toward the pending increment w. If
            // spending all of it would move the ratio by more than room/8, take a fraction.
            const auto x = state.coords();
            const auto a = params.anchor->coords();
            double yw = 0.0, ww = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                yw += (x[j] - a[j]) * w[j];
                ww += w[j] * w[j];
            }
            const double shift = (2.0 * std::sqrt(2.0) * std::abs(yw) + 2.0 * ww) / n_r2;
            const double bridge = shift > room / 8.0 ? left * room / (8.0 * shift) : left;
            return std::min({stiff, noisy, square, bridge});
        };
    out.trajectory = simulate(config, model, policy, threshold, options);
    out.min_margin = -max_psi;
    return out;
}

TransferBatch transfer_batch(const SimConfig& config, const ModelSpec& model,
                             const PointControl& alpha, double delta, std::size_t runs,
                             const TransferSettings& settings) {
    if (runs == 0) throw std::invalid_argument("transfer_batch: need at least one run");
    TransferBatch batch;
    batch.runs.resize(runs);
    parallel_for(runs, [&](std::size_t r) {
        SimConfig local = config;
        local.seed = derive_seed(config.seed, r);
        TransferSummary& s = batch.runs[r];
        s.run = r;
        try {
            const TransferRecord rec = transfer_control(local, model, alpha, delta, settings);
            const auto& tr = rec.trajectory;
            s.tau_index = tr.tau_index;
            s.tau_time = tr.tau_index ? tr.times[*tr.tau_index] : tr.times.back();
            s.tau_gap = tr.tau_gap();
            s.total_cost = tr.total_cost();
            s.post_tau_energy = tr.post_tau_energy;
            s.max_ratio = rec.max_ratio;
            s.min_margin = rec.min_margin;
            s.slack = tr.max_step_displacement;
            s.overshoot = rec.overshoot;
            s.clamp_events = rec.clamp_events;
            s.violated = tr.violated;
        } catch (const NumericalError& e) {
            s.aborted = true;
            s.message = e.what();
        }
    });
    std::vector<double> costs, gaps, energies;
    for (const auto& s : batch.runs) {
        if (s.aborted) continue;
        ++batch.completed;
        costs.push_back(s.total_cost);
        gaps.push_back(s.tau_gap);
        energies.push_back(s.post_tau_energy);
        batch.worst_ratio = std::max(batch.worst_ratio, s.max_ratio);
        batch.clamp_events += s.clamp_events;
    }
    std::tie(batch.mean_cost, batch.se_cost) = mean_and_se(costs);
    batch.mean_tau_gap = mean_and_se(gaps).first;
    batch.mean_post_tau_energy = mean_and_se(energies).first;
    return batch;
}

double freeze_cost_bound(std::optional<double> gap, std::size_t dim, double r, std::size_t n,
                         double drift_bound) {
    if (!gap) return 0.0;
    const double d = static_cast<double>(dim);
    return 32.0 * d * std::exp(*gap) / (r * r * static_cast<double>(n)) +
           (16.0 * d * d / (r * r) + 2.0 * drift_bound * drift_bound) * *gap;
}

double freeze_cost_bound(const TransferBatch& batch, std::size_t dim, double r, std::size_t n,
                         double drift_bound) {
    double exp_term = 0.0, gap_term = 0.0;
    std::size_t count = 0;
    for (const auto& s : batch.runs) {
        if (s.aborted) continue;
        ++count;
        if (s.tau_index) exp_term += std::exp(s.tau_gap);
        gap_term += s.tau_gap;
    }
    if (count == 0) return 0.0;
    exp_term /= static_cast<double>(count);
    gap_term /= static_cast<double>(count);
    const double d = static_cast<double>(dim);
    return 32.0 * d * exp_term / (r * r * static_cast<double>(n)) +
           (16.0 * d * d / (r * r) + 2.0 * drift_bound * drift_bound) * gap_term;
}

void write_freeze_diagnostics(const std::string& path, const TransferBatch& batch,
                              std::size_t dim, double r, std::size_t n, double drift_bound,
                              const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "run,tau,max_ratio,min_margin,post_tau_energy,bound\n";
    out.precision(17);
    for (const auto& s : batch.runs) {
        if (s.aborted) continue;
        const std::optional<double> gap =
            s.tau_index ? std::optional<double>(s.tau_gap) : std::nullopt;
        out << s.run << ',';
        if (s.tau_index)
            out << s.tau_time;
        else
            out << "never";
        out << ',' << s.max_ratio << ',' << s.min_margin << ',' << s.post_tau_energy << ','
            << freeze_cost_bound(gap, dim, r, n, drift_bound) << '\n';
    }
}

}  // namespace mfc
