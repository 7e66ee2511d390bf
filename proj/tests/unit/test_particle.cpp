#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>

#include "mfc/parallel.hpp"
#include "mfc/particle.hpp"

using namespace mfc;

namespace {

Policy zero_policy() {
    return [](double, const EmpiricalMeasure&, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); };
}

Policy constant_policy(double v) {
    return [v](double, const EmpiricalMeasure&, std::span<double> out) { std::fill(out.begin(), out.end(), v); };
}

ModelSpec free_model(std::size_t dim = 1) {
    ModelSpec m;
    m.dim = dim;
    m.constraint = ConstraintFunctional::linear(smoothed_distance(std::vector<double>(dim, 0.0), 0.1), 1e6, 1.0);
    return m;
}

SimConfig sim(std::vector<double> pts, std::size_t dim, double dt, std::uint64_t seed) {
    SimConfig c;
    c.dim = dim;
    c.dt = dt;
    c.seed = seed;
    c.initial = EmpiricalMeasure(std::move(pts), dim);
    return c;
}

}  // namespace

TEST_CASE("em_step without noise") {
    const EmpiricalMeasure x({0.5, -1.0, 2.0}, 1);
    const std::vector<double> zero(3, 0.0), v(3, 0.7);
    const auto same = em_step(x, zero, DriftField::zero(), 0.01, zero);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same.point(i)[0] == x.point(i)[0]);
    const auto moved = em_step(x, v, DriftField::zero(), 0.01, zero);
    for (std::size_t i = 0; i < 3; ++i) CHECK(moved.point(i)[0] == doctest::Approx(x.point(i)[0] + 0.007));
}

TEST_CASE("Brownian variance of a single particle") {
    const std::size_t runs = 100000;
    auto cfg = sim({0.0}, 1, 0.05, 99);
    const auto batch = mc_batch(cfg, free_model(), zero_policy(), runs, std::nullopt);
    // final_second_moment equals X_T^2 for N = 1.
    double s = 0.0, s2 = 0.0;
    for (const auto& r : batch.summaries) {
        s += r.final_second_moment;
        s2 += r.final_second_moment * r.final_second_moment;
    }
    const double mean = s / runs, se = std::sqrt((s2 / runs - mean * mean) / (runs - 1));
    CHECK(std::abs(mean - 2.0) < 3.0 * se);
}

TEST_CASE("second moment of the cloud grows by 2 d t") {
    auto cfg = sim({0.0, 1.0, -0.5, 0.3, 1.0, 1.0}, 2, 0.02, 7);
    const std::size_t runs = 10000;
    const auto batch = mc_batch(cfg, free_model(2), zero_policy(), runs, std::nullopt);
    const double expected = cfg.initial.second_moment() + 2.0 * 2.0 * 1.0;
    CHECK(std::abs(batch.aggregate.mean_final_second_moment - expected) < 3.0 * batch.aggregate.se_final_second_moment);
}

TEST_CASE("simulate costs") {
    const auto cfg = sim({0.0, 0.4}, 1, 1e-3, 1);
    const auto zero = simulate(cfg, free_model(), zero_policy(), std::nullopt);
    CHECK(zero.total_cost() == 0.0);
    const double v = 0.8;
    const auto rec = simulate(cfg, free_model(), constant_policy(v), std::nullopt);
    CHECK(std::abs(rec.total_cost() - 0.5 * v * v) <= cfg.dt * 0.5 * v * v + 1e-12);
    CHECK(rec.times.size() == 1001);
}

TEST_CASE("stopping at the first grid time") {
    const auto cfg = sim({0.0}, 1, 1e-2, 1);
    auto model = free_model();
    const double psi0 = eval_constraint(model.constraint, cfg.initial);
    const auto rec = simulate(cfg, model, zero_policy(), psi0 - 1.0);
    REQUIRE(rec.tau_index.has_value());
    CHECK(*rec.tau_index == 0);
}

TEST_CASE("batches are deterministic and independent of the worker count") {
    const auto cfg = sim({0.0, 0.5, -0.5}, 1, 1e-2, 1234);
    ::setenv("MFC_WORKERS", "1", 1);
    const auto a = mc_batch(cfg, free_model(), constant_policy(0.3), 50, std::nullopt);
    ::setenv("MFC_WORKERS", "4", 1);
    const auto b = mc_batch(cfg, free_model(), constant_policy(0.3), 50, std::nullopt);
    ::unsetenv("MFC_WORKERS");
    CHECK(a.aggregate.mean_cost == b.aggregate.mean_cost);
    CHECK(a.aggregate.mean_final_second_moment == b.aggregate.mean_final_second_moment);
    for (std::size_t r = 0; r < 50; ++r)
        CHECK(a.summaries[r].final_second_moment == b.summaries[r].final_second_moment);

    const auto one = mc_batch(cfg, free_model(), zero_policy(), 1, std::nullopt);
    CHECK(one.aggregate.mean_final_second_moment == one.summaries[0].final_second_moment);
    CHECK(one.aggregate.se_cost == 0.0);
}

TEST_CASE("permuting particles with their noise labels permutes trajectories") {
    auto a = sim({0.0, 1.0, -2.0}, 1, 1e-2, 55);
    a.particle_labels = {0, 1, 2};
    auto b = sim({-2.0, 0.0, 1.0}, 1, 1e-2, 55);
    b.particle_labels = {2, 0, 1};
    ModelSpec model = free_model();
    model.drift = DriftField::mean_attraction(1.0, 1);
    const auto ra = simulate(a, model, constant_policy(0.1), std::nullopt);
    const auto rb = simulate(b, model, constant_policy(0.1), std::nullopt);
    CHECK(rb.final_state.point(0)[0] == doctest::Approx(ra.final_state.point(2)[0]).epsilon(1e-12));
    CHECK(rb.final_state.point(1)[0] == doctest::Approx(ra.final_state.point(0)[0]).epsilon(1e-12));
    CHECK(rb.final_state.point(2)[0] == doctest::Approx(ra.final_state.point(1)[0]).epsilon(1e-12));
    CHECK(rb.total_cost() == doctest::Approx(ra.total_cost()).epsilon(1e-12));
    for (std::size_t k = 0; k < ra.psi_path.size(); ++k)
        CHECK(rb.psi_path[k] == doctest::Approx(ra.psi_path[k]).epsilon(1e-12));
}

TEST_CASE("distinct particles receive uncorrelated noise") {
    const std::size_t runs = 4000;
    auto cfg = sim({0.0, 0.0}, 1, 0.1, 808);
    BatchOptions keep;
    keep.keep_records = true;
    const auto batch = mc_batch(cfg, free_model(), zero_policy(), runs, std::nullopt, keep);
    std::vector<double> prod(runs);
    for (std::size_t r = 0; r < runs; ++r) {
        const auto& f = batch.records[r].final_state;
        prod[r] = f.point(0)[0] * f.point(1)[0];
    }
    const auto [mean, se] = mean_and_se(prod);
    CHECK(std::abs(mean) < 4.0 * se);
}

TEST_CASE("splitting a step does not change grid-time noise") {
    auto cfg = sim({0.0, 0.3, -0.7}, 1, 1e-2, 77);
    const auto model = free_model();
    const auto whole = simulate(cfg, model, zero_policy(), std::nullopt);
    SimOptions split;
    split.max_substep = [&](double, const EmpiricalMeasure&, std::span<const double>, double) { return cfg.dt / 3.0; };
    const auto parts = simulate(cfg, model, zero_policy(), std::nullopt, split);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(parts.final_state.point(i)[0] == doctest::Approx(whole.final_state.point(i)[0]).epsilon(1e-12));
}

TEST_CASE("noise sub-steps share the Brownian path with a finer grid") {
    auto coarse = sim({0.0, 1.0}, 1, 4e-3, 5);
    coarse.noise_substeps = 4;
    auto fine = sim({0.0, 1.0}, 1, 1e-3, 5);
    const auto model = free_model();
    const auto a = simulate(coarse, model, zero_policy(), std::nullopt);
    const auto b = simulate(fine, model, zero_policy(), std::nullopt);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(a.final_state.point(i)[0] == doctest::Approx(b.final_state.point(i)[0]).epsilon(1e-12));
}

TEST_CASE("configuration checks") {
    auto cfg = sim({0.0}, 1, 0.3, 1);
    CHECK_THROWS(cfg.steps());
    cfg.dt = 0.25;
    CHECK(cfg.steps() == 4);
}

TEST_CASE("mean and standard error") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const auto [m, se] = mean_and_se(v);
    CHECK(m == 2.5);
    CHECK(se == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
}
