// mfclab: experiment driver for the constrained mean-field control laboratory.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "mfc/config.hpp"
#include "mfc/experiments.hpp"
#include "mfc/freeze.hpp"
#include "mfc/ldp.hpp"
#include "mfc/mfsolver.hpp"
#include "mfc/parallel.hpp"

namespace fs = std::filesystem;
using namespace mfc;

namespace {

struct Context {
    ExperimentConfig cfg;
    fs::path out;
    bool dump = false;

    std::string header(const std::string& command) const { return header_comment(cfg, command); }
    std::string file(const std::string& name) const { return (out / name).string(); }
};

void report_solution(const MfSolution& sol) {
    std::cout << "delta=" << sol.delta << " U=" << sol.value << " direct_cost=" << sol.direct_cost
              << " iterations=" << sol.iterations << " converged=" << (sol.converged ? "yes" : "no")
              << " fixed_point_gap=" << sol.residuals.fixed_point_gap
              << " exclusion_gap=" << sol.residuals.exclusion_gap
              << " constraint_max=" << sol.residuals.constraint_max << '\n';
}

int cmd_solve(const Context& ctx) {
    const auto& c = ctx.cfg;
    const MfSolution sol = solve_mfoc(c.model, c.initial_density(), c.solver.delta, c.grid, c.solver.options);
    report_solution(sol);
    write_solution_dump(ctx.file("solution.csv"), sol, c.output.dump_every, ctx.header("solve-mf"));
    write_solution_summary(ctx.file("summary.csv"), {summarize(sol)}, ctx.header("solve-mf"));
    GridControl(sol).save(ctx.file("control.csv"), ctx.header("solve-mf"));
    return 0;
}

int cmd_stability(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto rows = stability_sweep(c.model, c.initial_density(), c.solver.deltas, c.grid, c.solver.options);
    for (const auto& r : rows)
        std::cout << "delta=" << r.delta << " U=" << r.value << " converged=" << (r.converged ? "yes" : "no")
                  << " exclusion_gap=" << r.residuals.exclusion_gap << '\n';
    write_solution_summary(ctx.file("stability.csv"), rows, ctx.header("stability"));
    return 0;
}

int cmd_simulate(const Context& ctx) {
    const auto& c = ctx.cfg;
    const Policy policy = broadcast(make_point_control(c.particle.policy, c.model.dim), c.model.dim);
    std::ofstream summary(ctx.file("simulate_summary.csv"));
    summary << ctx.header("simulate") << "N,runs,completed,aborted,violations,mean_cost,se_cost\n";
    summary.precision(17);
    for (std::size_t n : c.particle.n_list) {
        BatchOptions opts;
        opts.keep_records = ctx.dump;
        const BatchResult batch = mc_batch(c.sim_config(n), c.model, policy, c.particle.runs, std::nullopt, opts);
        const auto& a = batch.aggregate;
        std::cout << "N=" << n << " mean_cost=" << a.mean_cost << " se=" << a.se_cost
                  << " violations=" << a.violations << " aborted=" << a.aborted << '\n';
        summary << n << ',' << a.runs << ',' << a.completed << ',' << a.aborted << ',' << a.violations << ','
                << a.mean_cost << ',' << a.se_cost << '\n';
        write_batch_table(ctx.file("simulate_N" + std::to_string(n) + ".csv"), batch, ctx.header("simulate"));
        if (ctx.dump)
            write_trajectory_dump(ctx.file("trajectories_N" + std::to_string(n) + ".jsonl"), batch.records,
                                  ctx.header("simulate"));
    }
    return 0;
}

int cmd_transfer(const Context& ctx) {
    const auto& c = ctx.cfg;
    const double delta = c.transfer.delta;
    const MfSolution sol = solve_mfoc(c.model, c.initial_density(), delta, c.grid, c.solver.options);
    report_solution(sol);
    GridControl control(sol);
    if (c.particle.policy.kind == "mf-control" && !c.particle.policy.path.empty())
        control = GridControl::load(c.particle.policy.path);
    else
        control.save(ctx.file("control.csv"), ctx.header("transfer"));
    std::vector<TransferBatch> batches;
    const auto rows = transfer_sweep([&](std::size_t n) { return c.sim_config(n); }, c.model,
                                     point_control(control), delta, sol.value, c.particle.n_list,
                                     c.particle.runs, &batches, c.transfer.settings);
    const double r = delta / (4.0 * c.model.constraint.lipschitz());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = rows[i];
        std::cout << "N=" << row.n << " mean_J=" << row.mean_j << " se=" << row.se << " E_tau_gap=" << row.e_tau_gap
                  << " U_delta=" << row.u_delta << " gap=" << row.gap << " worst_ratio=" << row.worst_ratio << '\n';
        write_freeze_diagnostics(ctx.file("freeze_N" + std::to_string(row.n) + ".csv"), batches[i], c.model.dim, r,
                                 row.n, c.model.drift.sup_norm, ctx.header("transfer"));
    }
    write_transfer_table(ctx.file("transfer.csv"), rows, ctx.header("transfer"));
    return 0;
}

int cmd_ldp(const Context& ctx) {
    const auto& c = ctx.cfg;
    const LdpReport rep = ldp_compare(c.model, c.initial_density(), c.grid, c.solver.options, c.ldp);
    std::cout << "U_ref=" << rep.u_ref << " (delta=" << rep.ref_delta << ")\n";
    for (const auto& row : rep.rows) {
        std::cout << "N=" << row.n << " M=" << row.runs << " v_hat=" << row.v_hat << " rate=" << row.rate
                  << " gap=" << row.gap;
        if (!row.estimable) std::cout << " [" << row.message << "]";
        std::cout << '\n';
    }
    write_ldp_report(ctx.file("ldp.csv"), rep, ctx.header("ldp"));
    write_solution_summary(ctx.file("ldp_sweep.csv"), rep.sweep, ctx.header("ldp"));
    return 0;
}

int cmd_chaos(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto rows = chaos_experiment(c.model, c.initial_density(), c.grid, c.chaos.gain, c.particle.dt,
                                       derive_seed(c.particle.seed, 0xc4a05), c.chaos.n_list, c.chaos.runs);
    for (const auto& r : rows)
        std::cout << "N=" << r.n << " M=" << r.runs << " mean_sup_d1=" << r.mean_sup_d1 << " se=" << r.se << '\n';
    write_chaos_table(ctx.file("chaos.csv"), rows, ctx.header("chaos"));
    return 0;
}

// Fast oracle checks; each prints one line.
int cmd_selftest(const Context& ctx) {
    int failures = 0;
    auto check = [&](const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
        if (!ok) ++failures;
    };
    std::mt19937_64 rng(derive_seed(ctx.cfg.particle.seed, 0x5e1f));
    std::normal_distribution<double> normal;

    {
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> a(6), b(6);
            for (auto& v : a) v = normal(rng);
            for (auto& v : b) v = normal(rng);
            std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5};
            double best = 1e300;
            do {
                double s = 0.0;
                for (std::size_t i = 0; i < 6; ++i) s += (a[i] - b[perm[i]]) * (a[i] - b[perm[i]]);
                best = std::min(best, s / 6.0);
            } while (std::next_permutation(perm.begin(), perm.end()));
            worst = std::max(worst, std::abs(wasserstein_1d(a, b, 2) - std::sqrt(best)));
        }
        check("quantile_coupling_vs_permutations", worst < 1e-12, "max_err=" + std::to_string(worst));
    }
    {
        const SpaceTimeGrid g{-10.0, 10.0, 400, 0.0, 1.0, 10};
        std::vector<double> f(g.n_cells);
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = g.center(i) * g.center(i);
        const auto h = heat_apply(f, g.dx(), 0.3);
        double err = 0.0;
        for (std::size_t i = 100; i < 300; ++i) err = std::max(err, std::abs(h[i] - f[i] - 0.6));
        check("heat_semigroup_quadratic", err < 1e-6, "max_err=" + std::to_string(err));
    }
    {
        const SpaceTimeGrid g{-6.0, 6.0, 200, 0.0, 0.5, 1000};
        const auto mu0 = GridMeasure1D::gaussian(g.x_min, g.x_max, g.n_cells, 0.0, 0.5);
        std::vector<std::vector<double>> v(g.n_steps, std::vector<double>(g.n_cells, 0.0));
        const auto flow = fp_forward(mu0, v, g);
        double mass_err = 0.0;
        for (const auto& m : flow) mass_err = std::max(mass_err, std::abs(m.mass() - 1.0));
        check("fokker_planck_mass", mass_err < 1e-9, "max_err=" + std::to_string(mass_err));
    }
    {
        const double gap = legendre_check(Hamiltonian::quadratic(), Lagrangian::quadratic(), 100, 2).max_gap;
        check("legendre_quadratic", gap < 1e-12, "gap=" + std::to_string(gap));
    }
    {
        FreezeParams p = FreezeParams::make(4.0, 1.0);
        p.capture(EmpiricalMeasure({0.0}, 1));
        const double y = 0.6;
        const auto beta = freeze_feedback(EmpiricalMeasure({y}, 1), p, DriftField::zero());
        const double expect = 4.0 * y / (y * y - 1.0) - 2.0 * y;
        check("freeze_feedback_single_particle", std::abs(beta[0] - expect) < 1e-14,
              "beta=" + std::to_string(beta[0]));
    }
    {
        const double r = rate_estimate(std::exp(-4.0), 8);
        check("rate_inverse", std::abs(r - 1.0) < 1e-14, "rate=" + std::to_string(r));
    }
    {
        const auto& c = ctx.cfg;
        bool ok = c.model.constraint.lipschitz() > 0.0;
        std::string detail = "C_Psi=" + std::to_string(c.model.constraint.lipschitz());
        if (c.model.dim == 1 && c.initial.kind == "gaussian") {
            const double psi0 = c.model.constraint.eval(c.initial_density());
            double dmax = 0.0;
            for (double d : c.solver.deltas) dmax = std::max(dmax, d);
            ok = ok && psi0 < -dmax;
            detail += " Psi(mu0)=" + std::to_string(psi0);
        }
        check("shipped_config_preconditions", ok, detail);
    }
    std::cout << (failures == 0 ? "selftest: all checks passed\n" : "selftest: failures present\n");
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mfclab: constrained mean-field control laboratory"};
    app.require_subcommand(1);
    std::vector<std::string> overrides;
    std::string out_dir;
    bool dump = false;
    std::string config_path;

    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Context&);
    };
    const std::vector<Sub> subs{
        {"solve-mf", "Solve the penalized optimality system at solver.delta", cmd_solve},
        {"stability", "Value table over solver.deltas", cmd_stability},
        {"simulate", "Monte Carlo batch with the particle.policy feedback", cmd_simulate},
        {"transfer", "Mean-field control with the confinement switch, N sweep", cmd_transfer},
        {"ldp", "Survival-rate estimates against the mean-field value", cmd_ldp},
        {"chaos", "Empirical measure vs forward-equation flow, N sweep", cmd_chaos},
        {"selftest", "Fast oracle checks", cmd_selftest},
    };
    std::vector<CLI::App*> handles;
    for (const auto& s : subs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        sub->add_option("config", config_path, "Experiment config (JSON)")->required();
        sub->add_option("--set", overrides, "Override a config entry: key.path=value")->take_all();
        sub->add_option("--out-dir", out_dir, "Output directory (overrides output.dir)");
        sub->add_flag("--dump-trajectories", dump, "Write per-step JSONL trajectory records");
        handles.push_back(sub);
    }
    CLI11_PARSE(app, argc, argv);

    try {
        Context ctx;
        ctx.cfg = load_config(config_path, overrides);
        ctx.out = out_dir.empty() ? fs::path(ctx.cfg.output.dir) : fs::path(out_dir);
        ctx.dump = dump || ctx.cfg.output.dump_trajectories;
        fs::create_directories(ctx.out);
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (handles[i]->parsed()) return subs[i].fn(ctx);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
