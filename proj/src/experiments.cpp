#include "mfc/experiments.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mfc/parallel.hpp"

namespace mfc {

PointControl point_control(GridControl control) {
    return [control = std::move(control)](double t, std::span<const double> x, std::span<double> out) {
        out[0] = control(t, x[0]);
    };
}

PointControl make_point_control(const PolicySpec& spec, std::size_t dim) {
    if (spec.kind == "zero")
        return [](double, std::span<const double>, std::span<double> out) {
            std::fill(out.begin(), out.end(), 0.0);
        };
    if (spec.kind == "constant") {
        if (spec.value.size() != dim) throw std::invalid_argument("constant policy: wrong length");
        return [v = spec.value](double, std::span<const double>, std::span<double> out) {
            std::copy(v.begin(), v.end(), out.begin());
        };
    }
    if (spec.kind == "linear")
        return [g = spec.gain](double, std::span<const double> x, std::span<double> out) {
            for (std::size_t k = 0; k < x.size(); ++k) out[k] = -g * x[k];
        };
    if (spec.kind == "mf-control") {
        if (dim != 1) throw std::invalid_argument("mf-control policy: tabulated controls are 1D");
        if (spec.path.empty()) throw std::invalid_argument("mf-control policy: no control file given");
        return point_control(GridControl::load(spec.path));
    }
    throw std::invalid_argument("unknown policy kind '" + spec.kind + "'");
}

Policy broadcast(PointControl alpha, std::size_t dim) {
    return [alpha = std::move(alpha), dim](double t, const EmpiricalMeasure& state, std::span<double> out) {
        for (std::size_t i = 0; i < state.size(); ++i) alpha(t, state.point(i), out.subspan(i * dim, dim));
    };
}

std::vector<TransferRow> transfer_sweep(const std::function<SimConfig(std::size_t)>& make_config,
                                        const ModelSpec& model, const PointControl& alpha,
                                        double delta, double u_delta,
                                        const std::vector<std::size_t>& n_list, std::size_t runs,
                                        std::vector<TransferBatch>* batches,
                                        const TransferSettings& settings) {
    std::vector<TransferRow> rows;
    for (std::size_t n : n_list) {
        const SimConfig cfg = make_config(n);
        TransferBatch batch = transfer_batch(cfg, model, alpha, delta, runs, settings);
        TransferRow row;
        row.n = n;
        row.runs = runs;
        row.completed = batch.completed;
        row.mean_j = batch.mean_cost;
        row.se = batch.se_cost;
        row.e_tau_gap = batch.mean_tau_gap;
        row.u_delta = u_delta;
        row.gap = std::abs(batch.mean_cost - u_delta);
        row.worst_ratio = batch.worst_ratio;
        row.post_tau_energy = batch.mean_post_tau_energy;
        const double r = delta / (4.0 * model.constraint.lipschitz());
        row.bound = freeze_cost_bound(batch, cfg.dim, r, n, model.drift.sup_norm);
        for (const auto& s : batch.runs)
            if (!s.aborted && s.violated) ++row.violations;
        rows.push_back(row);
        if (batches) batches->push_back(std::move(batch));
    }
    return rows;
}

void write_transfer_table(const std::string& path, const std::vector<TransferRow>& rows,
                          const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "N,mean_J,se,E_tau_gap,U_delta,gap\n";
    out.precision(17);
    for (const auto& r : rows)
        out << r.n << ',' << r.mean_j << ',' << r.se << ',' << r.e_tau_gap << ',' << r.u_delta << ','
            << r.gap << '\n';
}

std::vector<ChaosRow> chaos_experiment(const ModelSpec& model, const GridMeasure1D& mu0,
                                       const SpaceTimeGrid& grid, double gain, double dt,
                                       std::uint64_t seed, const std::vector<std::size_t>& n_list,
                                       std::size_t runs) {
    if (model.dim != 1) throw std::invalid_argument("chaos_experiment: 1D models only");
    if (runs == 0) throw std::invalid_argument("chaos_experiment: need at least one run");
    const double ratio = grid.dt() / dt;
    const auto stride = static_cast<std::size_t>(std::llround(ratio));
    if (stride == 0 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio)
        throw std::invalid_argument("chaos_experiment: particle dt must divide the grid step");

    const auto flow = fp_forward(
        mu0,
        [&](std::size_t, const GridMeasure1D& m, std::span<double> v) {
            const auto b = model.drift.bind_grid(m);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double x = grid.center(i);
                v[i] = -gain * x + b(x);
            }
        },
        grid, FpOptions{true});

    const PointControl alpha = [gain](double, std::span<const double> x, std::span<double> out) {
        out[0] = -gain * x[0];
    };
    const Policy policy = broadcast(alpha, 1);
    std::vector<ChaosRow> rows;
    for (std::size_t n : n_list) {
        SimConfig cfg;
        cfg.dim = 1;
        cfg.dt = dt;
        cfg.t0 = grid.t0;
        cfg.horizon = grid.horizon;
        cfg.initial = quantile_points(mu0, n);
        std::vector<double> sup(runs, 0.0);
        std::vector<char> failed(runs, 0);
        parallel_for(runs, [&](std::size_t r) {
            SimConfig local = cfg;
            local.seed = derive_seed(derive_seed(seed, n), r);
            double worst = wasserstein_1d(local.initial.coords(), flow[0], 1);
            SimOptions opts;
            opts.observer = [&](std::size_t k, double, const EmpiricalMeasure& state, double) {
                if (k % stride != 0) return;
                worst = std::max(worst, wasserstein_1d(state.coords(), flow[k / stride], 1));
            };
            try {
                simulate(local, model, policy, std::nullopt, opts);
                sup[r] = worst;
            } catch (const NumericalError&) {
                failed[r] = 1;
            }
        });
        std::vector<double> ok;
        for (std::size_t r = 0; r < runs; ++r)
            if (!failed[r]) ok.push_back(sup[r]);
        ChaosRow row;
        row.n = n;
        row.runs = ok.size();
        std::tie(row.mean_sup_d1, row.se) = mean_and_se(ok);
        rows.push_back(row);
    }
    return rows;
}

void write_chaos_table(const std::string& path, const std::vector<ChaosRow>& rows,
                       const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "N,M,mean_sup_d1,se\n";
    out.precision(17);
    for (const auto& r : rows) out << r.n << ',' << r.runs << ',' << r.mean_sup_d1 << ',' << r.se << '\n';
}

void write_batch_table(const std::string& path, const BatchResult& batch,
                       const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << header_comment << "run,total_cost,control_energy,tau,violated,final_second_moment\n";
    out.precision(17);
    for (const auto& s : batch.summaries) {
        out << s.run << ',';
        if (s.aborted) {
            out << "aborted,,,,\n";
            continue;
        }
        out << s.total_cost << ',' << s.control_energy << ',';
        if (s.tau_index)
            out << *s.tau_index;
        else
            out << "never";
        out << ',' << (s.violated ? 1 : 0) << ',' << s.final_second_moment << '\n';
    }
}

}  // namespace mfc
