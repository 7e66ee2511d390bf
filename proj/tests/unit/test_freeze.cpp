#include <doctest.h>

#include <cmath>

#include "mfc/freeze.hpp"

using namespace mfc;

namespace {

FreezeParams anchored(const EmpiricalMeasure& anchor, double r) {
    FreezeParams p = FreezeParams::make(4.0 * r, 1.0);
    p.capture(anchor);
    return p;
}

ModelSpec model_with(double kappa) {
    ModelSpec m;
    m.constraint = ConstraintFunctional::linear(smoothed_distance({0.0}, 0.1), kappa, 1.0);
    return m;
}

PointControl constant_alpha(double v) {
    return [v](double, std::span<const double>, std::span<double> out) { out[0] = v; };
}

}  // namespace

TEST_CASE("radius and anchor bookkeeping") {
    auto p = FreezeParams::make(0.2, 0.8);
    CHECK(p.r == 0.2 / (4.0 * 0.8));
    CHECK_THROWS(FreezeParams::make(0.0, 1.0));
    p.capture(EmpiricalMeasure({0.0}, 1));
    CHECK_THROWS_AS(p.capture(EmpiricalMeasure({0.0}, 1)), std::logic_error);
}

TEST_CASE("feedback at the anchor cancels the drift") {
    const EmpiricalMeasure x({-0.5, 0.25, 1.0}, 1);
    const auto drift = DriftField::mean_attraction(1.5, 1);
    const auto beta = freeze_feedback(x, anchored(x, 0.3), drift);
    const auto b = drift.bind_particles(x);
    for (std::size_t i = 0; i < 3; ++i) {
        double bi = 0.0;
        b(x.point(i), std::span<double>(&bi, 1));
        CHECK(beta[i] == -bi);
    }
}

TEST_CASE("single particle formula") {
    for (double y : {-0.9, -0.3, 0.0, 0.45, 0.8}) {
        const auto beta = freeze_feedback(EmpiricalMeasure({y}, 1), anchored(EmpiricalMeasure({0.0}, 1), 1.0),
                                          DriftField::zero());
        CHECK(beta[0] == doctest::Approx(4.0 * y / (y * y - 1.0) - 2.0 * y).epsilon(1e-15));
    }
}

TEST_CASE("symmetric displacements give antisymmetric feedback") {
    const auto p = anchored(EmpiricalMeasure({1.0, 1.0}, 1), 0.5);
    const auto beta = freeze_feedback(EmpiricalMeasure({1.2, 0.8}, 1), p, DriftField::zero());
    CHECK(beta[0] == doctest::Approx(-beta[1]).epsilon(1e-14));
}

TEST_CASE("feedback refuses states outside the confinement ball") {
    const auto p = anchored(EmpiricalMeasure({0.0, 0.0}, 1), 0.5);
    CHECK_THROWS_AS(freeze_feedback(EmpiricalMeasure({0.5, 0.5}, 1), p, DriftField::zero()), NumericalError);
    FreezeParams bare = FreezeParams::make(1.0, 1.0);
    CHECK_THROWS_AS(freeze_feedback(EmpiricalMeasure({0.0}, 1), bare, DriftField::zero()), std::logic_error);
}

TEST_CASE("cost bound by direct substitution") {
    CHECK(freeze_cost_bound(std::nullopt, 1, 0.5, 8, 1.0) == 0.0);
    const double s = 0.3, r = 0.25, bnorm = 0.7;
    const std::size_t d = 2, n = 16;
    const double expected = 32.0 * d * std::exp(s) / (r * r * n) + (16.0 * d * d / (r * r) + 2.0 * bnorm * bnorm) * s;
    CHECK(freeze_cost_bound(s, d, r, n, bnorm) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("unreachable constraint: transfer equals plain simulation") {
    SimConfig cfg;
    cfg.dt = 1e-2;
    cfg.seed = 42;
    cfg.initial = EmpiricalMeasure({0.0, 0.5, -0.5}, 1);
    const auto model = model_with(1e6);
    const auto rec = transfer_control(cfg, model, constant_alpha(0.4), 1.0);
    CHECK(!rec.trajectory.tau_index.has_value());
    CHECK(rec.max_ratio == 0.0);
    const Policy plain = [](double, const EmpiricalMeasure&, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.4);
    };
    const auto ref = simulate(cfg, model, plain, std::nullopt);
    CHECK(rec.trajectory.total_cost() == ref.total_cost());
    for (std::size_t i = 0; i < 3; ++i) CHECK(rec.trajectory.final_state.point(i)[0] == ref.final_state.point(i)[0]);

    const auto batch = transfer_batch(cfg, model, constant_alpha(0.4), 1.0, 20);
    CHECK(batch.mean_tau_gap == 0.0);
    CHECK(batch.mean_post_tau_energy == 0.0);
    CHECK(freeze_cost_bound(batch, 1, 0.25, 3, 0.0) == 0.0);
}

TEST_CASE("transfer rejects an initial state inside the margin") {
    SimConfig cfg;
    cfg.dt = 1e-2;
    cfg.initial = EmpiricalMeasure({0.0}, 1);
    CHECK_THROWS_AS(transfer_control(cfg, model_with(0.5), constant_alpha(0.0), 1.0), std::invalid_argument);
}

TEST_CASE("switched runs stay confined and respect the bound") {
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.seed = 3;
    cfg.initial = EmpiricalMeasure({-0.2, -0.1, 0.0, 0.1, 0.2, 0.3, -0.3, 0.05}, 1);
    const auto model = model_with(1.0);
    const double delta = 0.4;
    const auto batch = transfer_batch(cfg, model, constant_alpha(1.5), delta, 40);
    CHECK(batch.completed == 40);
    std::size_t fired = 0;
    for (const auto& s : batch.runs) {
        if (s.tau_index) ++fired;
        CHECK(s.max_ratio <= 1.05);
        CHECK(-s.min_margin <= -delta / 4.0 + s.slack);
    }
    CHECK(fired > 0);
    const double r = delta / 4.0;
    CHECK(batch.mean_post_tau_energy <= 1.1 * freeze_cost_bound(batch, 1, r, 8, 0.0));
}
