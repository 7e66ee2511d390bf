#include "mfc/particle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mfc/parallel.hpp"

namespace mfc {

std::size_t SimConfig::steps() const {
    if (!(dt > 0.0)) throw std::invalid_argument("SimConfig: dt must be positive");
    const double ratio = (horizon - t0) / dt;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
        throw std::invalid_argument("SimConfig: (T - t0)/dt is not an integer");
    return static_cast<std::size_t>(rounded);
}

void SimConfig::validate() const {
    if (initial.size() == 0) throw std::invalid_argument("SimConfig: N must be >= 1");
    if (initial.dim() != dim) throw std::invalid_argument("SimConfig: initial points have wrong dim");
    if (noise_substeps == 0) throw std::invalid_argument("SimConfig: noise_substeps must be >= 1");
    if (!particle_labels.empty() && particle_labels.size() != initial.size())
        throw std::invalid_argument("SimConfig: particle_labels size != N");
    (void)steps();
}

double TrajectoryRecord::tau_gap() const {
    if (!tau_index || times.empty()) return 0.0;
    return times.back() - times[*tau_index];
}

EmpiricalMeasure em_step(const EmpiricalMeasure& state, std::span<const double> control,
                         const DriftField& drift, double dt, std::span<const double> noise) {
    const std::size_t n = state.size(), d = state.dim();
    if (control.size() != n * d) throw std::invalid_argument("em_step: control length != N*d");
    if (noise.size() != n * d) throw std::invalid_argument("em_step: noise length != N*d");
    if (!(dt > 0.0)) throw std::invalid_argument("em_step: dt must be positive");
    const auto b = drift.bind_particles(state);
    const double scale = std::sqrt(2.0 * dt);
    std::vector<double> next(state.coords().begin(), state.coords().end());
    std::vector<double> bx(d);
    for (std::size_t i = 0; i < n; ++i) {
        b(state.point(i), bx);
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t j = i * d + k;
            next[j] += (bx[k] + control[j]) * dt + scale * noise[j];
            if (!std::isfinite(next[j])) {
                std::ostringstream msg;
                msg << "em_step: non-finite state for particle " << i << " coordinate " << k;
                throw NumericalError(msg.str());
            }
        }
    }
    return {std::move(next), d};
}

namespace {

class ParticleNoise {
public:
    ParticleNoise(const SimConfig& config) : d_(config.dim), substeps_(config.noise_substeps) {
        const std::size_t n = config.particles();
        streams_.reserve(n);
        bridges_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t label =
                config.particle_labels.empty() ? i : config.particle_labels[i];
            const std::uint64_t seed = derive_seed(config.seed, label);
            streams_.emplace_back(seed);
            bridges_.emplace_back(derive_seed(seed, 0x62726964ULL));
        }
        normals_.resize(n);
        bridge_normals_.resize(n);
    }

    void draw(std::span<double> out) {
        const double norm = 1.0 / std::sqrt(static_cast<double>(substeps_));
        for (std::size_t i = 0; i < streams_.size(); ++i) {
            auto xi = out.subspan(i * d_, d_);
            std::fill(xi.begin(), xi.end(), 0.0);
            for (std::size_t s = 0; s < substeps_; ++s)
                for (std::size_t k = 0; k < d_; ++k) xi[k] += normals_[i](streams_[i]);
            for (double& v : xi) v *= norm;
        }
    }

    /// Splits the remaining Brownian increment w (over time `left`) at h: writes the
    /// increment over [0, h] into piece and leaves the rest in w.
    void bridge(std::span<double> w, double left, double h, std::span<double> piece) {
        const double sd = std::sqrt(h * (left - h) / left);
        for (std::size_t i = 0; i < bridges_.size(); ++i)
            for (std::size_t k = 0; k < d_; ++k) {
                const std::size_t j = i * d_ + k;
                piece[j] = w[j] * h / left + sd * bridge_normals_[i](bridges_[i]);
                w[j] -= piece[j];
            }
    }

private:
    std::size_t d_;
    std::size_t substeps_;
    std::vector<std::mt19937_64> streams_, bridges_;
    // Separate distributions: each caches a spare variate from the engine it last used.
    std::vector<std::normal_distribution<double>> normals_, bridge_normals_;
};

}  // namespace

TrajectoryRecord simulate(const SimConfig& config, const ModelSpec& model, const Policy& policy,
                          std::optional<double> stop_threshold, const SimOptions& options) {
    config.validate();
    if (model.dim != config.dim) throw std::invalid_argument("simulate: model/config dim mismatch");
    const std::size_t steps = config.steps();
    const std::size_t n = config.particles(), d = config.dim;
    const double inv_n = 1.0 / static_cast<double>(n);

    TrajectoryRecord rec;
    rec.times.reserve(steps + 1);
    rec.psi_path.reserve(steps + 1);
    rec.cost_path.reserve(steps + 1);

    EmpiricalMeasure state = config.initial;
    double psi = model.constraint.eval(state);
    rec.times.push_back(config.t0);
    rec.psi_path.push_back(psi);
    rec.cost_path.push_back(0.0);
    if (stop_threshold && psi >= *stop_threshold) rec.tau_index = 0;
    rec.violated = psi >= 0.0;
    const std::size_t every = std::max<std::size_t>(1, options.snapshot_every);
    if (options.keep_snapshots) {
        rec.snapshot_steps.push_back(0);
        rec.snapshots.push_back(state);
    }

    ParticleNoise noise_source(config);
    std::vector<double> controls(n * d), noise(n * d);
    // One left-point Euler step of length h from time t, charging its cost.
    auto advance = [&](std::size_t k, double t, const EmpiricalMeasure& from, double h,
                       std::span<const double> xi) {
        std::fill(controls.begin(), controls.end(), 0.0);
        policy(t, from, controls);
        double energy = 0.0;
        for (double a : controls) {
            if (!std::isfinite(a)) {
                std::ostringstream msg;
                msg << "simulate: non-finite control at step " << k;
                throw NumericalError(msg.str());
            }
            energy += a * a;
        }
        energy *= inv_n;
        rec.running_cost += particle_running_cost(from, controls, model) * h;
        rec.control_energy += energy * h;
        if (rec.tau_index && k >= *rec.tau_index) rec.post_tau_energy += energy * h;
        return em_step(from, controls, model.drift, h, xi);
    };

    std::vector<double> piece(n * d), pending(n * d);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = config.t0 + static_cast<double>(k) * config.dt;
        noise_source.draw(noise);
        const double root = std::sqrt(config.dt);
        double limit = config.dt;
        if (options.max_substep) {
            for (std::size_t j = 0; j < noise.size(); ++j) pending[j] = noise[j] * root;
            limit = options.max_substep(t, state, pending, config.dt);
        }
        EmpiricalMeasure next;
        if (!(limit < config.dt)) {
            next = advance(k, t, state, config.dt, noise);
        } else {
            // The step's Brownian increment, consumed piece by piece.
            next = state;
            double left = config.dt;
            double lim = limit;
            const double floor_h = config.dt * 0x1p-60;
            while (left > 0.0) {
                double h = std::min(left, std::max(lim, floor_h));
                if (left - h < 1e-12 * config.dt) h = left;
                if (h < left) {
                    noise_source.bridge(pending, left, h, piece);
                } else {
                    std::copy(pending.begin(), pending.end(), piece.begin());
                }
                const double inv_root = 1.0 / std::sqrt(h);
                for (double& v : piece) v *= inv_root;
                next = advance(k, t + (config.dt - left), next, h, piece);
                left -= h;
                if (left > 0.0) lim = options.max_substep(t + (config.dt - left), next, pending, left);
            }
        }

        double disp = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double v = next.point(i)[c] - state.point(i)[c];
                sq += v * v;
            }
            disp += std::sqrt(sq);
        }
        rec.max_step_displacement = std::max(rec.max_step_displacement, disp * inv_n);
        state = std::move(next);

        const double next_psi = model.constraint.eval(state);
        if (!std::isfinite(next_psi)) throw NumericalError("simulate: non-finite constraint value");
        rec.max_psi_increment = std::max(rec.max_psi_increment, std::abs(next_psi - psi));
        psi = next_psi;
        const double t_next = config.t0 + static_cast<double>(k + 1) * config.dt;
        rec.times.push_back(t_next);
        rec.psi_path.push_back(psi);
        rec.cost_path.push_back(rec.running_cost);
        if (stop_threshold && !rec.tau_index && psi >= *stop_threshold) rec.tau_index = k + 1;
        if (psi >= 0.0) rec.violated = true;
        if (options.keep_snapshots && ((k + 1) % every == 0 || k + 1 == steps)) {
            rec.snapshot_steps.push_back(k + 1);
            rec.snapshots.push_back(state);
        }
        if (options.observer) options.observer(k + 1, t_next, state, psi);
        if (options.stop_on_violation && rec.violated) break;
    }
    rec.terminal_cost = model.terminal.on_particles(state);
    rec.final_state = std::move(state);
    return rec;
}

std::pair<double, double> mean_and_se(std::span<const double> values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(values.size() - 1);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

BatchAggregate aggregate_runs(std::vector<RunSummary>& summaries) {
    std::sort(summaries.begin(), summaries.end(),
              [](const RunSummary& a, const RunSummary& b) { return a.run < b.run; });
    BatchAggregate agg;
    agg.runs = summaries.size();
    std::vector<double> costs, gaps, moments;
    for (const auto& s : summaries) {
        if (s.aborted) {
            ++agg.aborted;
            continue;
        }
        ++agg.completed;
        if (s.violated) ++agg.violations;
        costs.push_back(s.total_cost);
        gaps.push_back(s.tau_gap);
        moments.push_back(s.final_second_moment);
    }
    std::tie(agg.mean_cost, agg.se_cost) = mean_and_se(costs);
    agg.mean_tau_gap = mean_and_se(gaps).first;
    std::tie(agg.mean_final_second_moment, agg.se_final_second_moment) = mean_and_se(moments);
    return agg;
}

BatchResult mc_batch(const SimConfig& config, const ModelSpec& model, const Policy& policy,
                     std::size_t runs, std::optional<double> stop_threshold,
                     const BatchOptions& options) {
    if (runs == 0) throw std::invalid_argument("mc_batch: need at least one run");
    config.validate();
    BatchResult result;
    result.summaries.resize(runs);
    if (options.keep_records) result.records.resize(runs);
    parallel_for(runs, [&](std::size_t r) {
        SimConfig local = config;
        local.seed = derive_seed(config.seed, r);
        RunSummary& s = result.summaries[r];
        s.run = r;
        try {
            TrajectoryRecord rec = simulate(local, model, policy, stop_threshold);
            s.total_cost = rec.total_cost();
            s.control_energy = rec.control_energy;
            s.post_tau_energy = rec.post_tau_energy;
            s.tau_index = rec.tau_index;
            s.tau_gap = rec.tau_gap();
            s.violated = rec.violated;
            s.final_second_moment = rec.final_state.second_moment();
            s.max_psi_increment = rec.max_psi_increment;
            if (options.keep_records) result.records[r] = std::move(rec);
        } catch (const NumericalError& e) {
            s.aborted = true;
            s.message = e.what();
        }
    });
    result.aggregate = aggregate_runs(result.summaries);
    return result;
}

void write_trajectory_dump(const std::string& path, const std::vector<TrajectoryRecord>& records,
                           const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& rec = records[r];
        for (std::size_t k = 0; k < rec.times.size(); ++k) {
            nlohmann::ordered_json line;
            line["run"] = r;
            line["step"] = k;
            line["time"] = rec.times[k];
            line["psi"] = rec.psi_path[k];
            line["cost_so_far"] = rec.cost_path[k];
            out << line.dump() << '\n';
        }
    }
}

EmpiricalMeasure quantile_points(const GridMeasure1D& m, std::size_t n) {
    if (n == 0) throw std::invalid_argument("quantile_points: n must be >= 1");
    const auto& rho = m.density();
    const double dx = m.dx();
    std::vector<double> pts(n);
    std::size_t cell = 0;
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double target = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        while (cell + 1 < rho.size() && cum + rho[cell] * dx < target) {
            cum += rho[cell] * dx;
            ++cell;
        }
        const double w = rho[cell] * dx;
        const double frac = w > 0.0 ? std::clamp((target - cum) / w, 0.0, 1.0) : 0.5;
        pts[i] = m.x_min() + (static_cast<double>(cell) + frac) * dx;
    }
    return {std::move(pts), 1};
}

}  // namespace mfc
