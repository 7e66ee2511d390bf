#include <doctest.h>

#include <cmath>

#include "mfc/ldp.hpp"

using namespace mfc;

TEST_CASE("Wilson interval") {
    // k = 40, m = 100: closed form at z = 1.96.
    const double z = 1.959963984540054, p = 0.4, m = 100.0;
    const double centre = (p + z * z / (2 * m)) / (1 + z * z / m);
    const double half = z / (1 + z * z / m) * std::sqrt(p * (1 - p) / m + z * z / (4 * m * m));
    const auto [lo, hi] = wilson_interval(40, 100);
    CHECK(lo == doctest::Approx(centre - half).epsilon(1e-14));
    CHECK(hi == doctest::Approx(centre + half).epsilon(1e-14));
}

TEST_CASE("zero successes are flagged") {
    const auto est = survival_from_counts(0, 500);
    CHECK(est.v_hat == 0.0);
    CHECK(!est.rate_estimable);
    CHECK(est.ci_hi == doctest::Approx(1.0 - std::pow(0.05, 1.0 / 500.0)));
    CHECK(est.message.find("not estimable") != std::string::npos);
    CHECK_THROWS_AS(rate_estimate(0.0, 4), std::domain_error);
}

TEST_CASE("rate estimate") {
    CHECK(rate_estimate(1.0, 7) == 0.0);
    for (std::size_t n : {1ul, 4ul, 16ul}) CHECK(rate_estimate(std::exp(-0.5 * n), n) == doctest::Approx(1.0));
    double prev = INFINITY;
    for (double v = 0.01; v <= 1.0; v += 0.01) {
        const double r = rate_estimate(v, 8);
        CHECK(r < prev);
        prev = r;
    }
    const auto est = survival_from_counts(30, 200);
    const auto [lo, hi] = rate_interval(est, 8);
    CHECK(lo == doctest::Approx(rate_estimate(est.ci_hi, 8)));
    CHECK(hi == doctest::Approx(rate_estimate(est.ci_lo, 8)));
}

TEST_CASE("pooling equals the weighted mean") {
    const std::vector<SurvivalEstimate> parts{survival_from_counts(13, 100), survival_from_counts(40, 300),
                                              survival_from_counts(0, 50)};
    const auto pooled = pool(parts);
    const double weighted = (0.13 * 100 + (40.0 / 300.0) * 300 + 0.0 * 50) / 450.0;
    CHECK(pooled.v_hat == doctest::Approx(weighted).epsilon(1e-15));
    CHECK(pooled.runs == 450);
}

TEST_CASE("pilot rule") {
    PilotRule rule;
    CHECK(pilot_size(0.5, rule) == rule.min_runs);
    CHECK(pilot_size(1e-3, rule) == 100000);
    CHECK(pilot_size(1e-9, rule) == rule.max_runs);
}

TEST_CASE("survival of a single Brownian particle below a level") {
    SimConfig cfg;
    cfg.dt = 2.5e-4;
    cfg.seed = 17;
    cfg.initial = EmpiricalMeasure({0.0}, 1);
    const double kappa = 1.2, t = 0.5;
    const auto psi = ConstraintFunctional::linear(coordinate(0, 1), kappa, 1.0);
    const std::size_t runs = 4000;
    const auto est = estimate_survival(cfg, DriftField::zero(), psi, t, runs);
    const double exact = std::erf(kappa / std::sqrt(2.0 * t) / std::sqrt(2.0));
    const double se = std::sqrt(exact * (1 - exact) / runs);
    CHECK(std::abs(est.v_hat - exact) < 3.0 * se);
}

TEST_CASE("survival preconditions and unreachable constraints") {
    SimConfig cfg;
    cfg.dt = 1e-2;
    cfg.seed = 2;
    cfg.initial = EmpiricalMeasure({0.0, 0.1}, 1);
    const auto far = ConstraintFunctional::linear(coordinate(0, 1), 1e6, 1.0);
    CHECK(estimate_survival(cfg, DriftField::zero(), far, 1.0, 50).v_hat == 1.0);
    const auto violated = ConstraintFunctional::linear(coordinate(0, 1), -1.0, 1.0);
    CHECK_THROWS(estimate_survival(cfg, DriftField::zero(), violated, 1.0, 50));

    // Same seed: identical estimate.
    const auto psi = ConstraintFunctional::linear(coordinate(0, 1), 0.5, 1.0);
    const auto a = estimate_survival(cfg, DriftField::zero(), psi, 1.0, 200);
    const auto b = estimate_survival(cfg, DriftField::zero(), psi, 1.0, 200);
    CHECK(a.successes == b.successes);
}
