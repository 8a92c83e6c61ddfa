#include <catch2/catch_amalgamated.hpp>

#include "glevy/pide.hpp"
#include "glevy/sublinear.hpp"

#include "support/stats.hpp"

using namespace glevy;

namespace {

UncertaintySet poisson_singleton() {
    return singleton_set(JumpMeasure::single_atom(1.0, 1.0), {0.0}, Mat::scalar(0.0));
}

UncertaintySet vol_family(double lo, double hi) {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::zero(1);
    f.sigma = FamilyDescriptor::Interval{lo, hi};
    return expand_family(f, 2);
}

UncertaintySet intensity_family() {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::single_atom(1.0, 1.0);
    f.intensity = FamilyDescriptor::Interval{0.5, 1.0};
    return expand_family(f, 2);
}

double poisson_min_cap_oracle(double cap, double lambda) {
    return testsupport::poisson_expectation(
        lambda, [cap](int k) { return std::min(static_cast<double>(k), cap); }, cap);
}

}  // namespace

TEST_CASE("apply_generator identities on handmade slices") {
    const SpatialGrid grid{-5.0, 5.0, 101};
    std::vector<double> affine(101), quadratic(101);
    for (int j = 0; j < 101; ++j) {
        affine[static_cast<std::size_t>(j)] = grid.x(j);
        quadratic[static_cast<std::size_t>(j)] = grid.x(j) * grid.x(j);
    }
    const int mid = 50;

    SECTION("affine slice, no coefficients: zero") {
        const Triple t{JumpMeasure::zero(1), {0.0}, Mat::scalar(0.0)};
        CHECK(apply_generator(affine, grid, mid, t) == 0.0);
    }
    SECTION("quadratic slice, pure diffusion: sigma^2 exactly") {
        const Triple t{JumpMeasure::zero(1), {0.0}, Mat::scalar(0.7)};
        CHECK(apply_generator(quadratic, grid, mid, t) == Catch::Approx(0.49).margin(1e-10));
    }
    SECTION("affine slice, unit jump: increment of 1") {
        const Triple t{JumpMeasure::single_atom(1.0, 1.0), {0.0}, Mat::scalar(0.0)};
        CHECK(apply_generator(affine, grid, mid, t) == Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("affine slice, drift p: p times slope") {
        const Triple t{JumpMeasure::zero(1), {0.6}, Mat::scalar(0.0)};
        CHECK(apply_generator(affine, grid, mid, t) == Catch::Approx(0.6).margin(1e-12));
        const Triple tm{JumpMeasure::zero(1), {-0.6}, Mat::scalar(0.0)};
        CHECK(apply_generator(affine, grid, mid, tm) == Catch::Approx(-0.6).margin(1e-12));
    }
    SECTION("off-node jump target uses linear interpolation") {
        const Triple t{JumpMeasure::single_atom(0.15, 1.0), {0.0}, Mat::scalar(0.0)};
        // affine slice: interpolation is exact
        CHECK(apply_generator(affine, grid, mid, t) == Catch::Approx(0.15).margin(1e-12));
    }
}

TEST_CASE("solve_pide: worst-case volatility on a quadratic payoff") {
    const auto u = vol_family(0.5, 1.0);
    const SpatialGrid grid{-12.0, 12.0, 241};
    const int steps = 256;  // CFL: dt * sigma_max^2 / h^2 = (1/256) / 0.01 = 0.39
    const auto sol = solve_pide([](double x) { return x * x; }, 1.0, grid, steps, u,
                                TimeConvention::initial);
    // worst case constant sigma: u(1, 0) = sigma_max^2 T = 1
    CHECK(sol.at(1.0, 0.0) == Catch::Approx(1.0).epsilon(0.02));
    // the scheme is exact on quadratics away from the boundary influence cone
    CHECK(sol.at(1.0, 0.0) == Catch::Approx(1.0).margin(1e-8));
    // argmax picks the larger volatility at the center
    CHECK(u.triples[sol.argmax_at(steps - 1, 120)].volatility(0, 0) == 1.0);
}

TEST_CASE("solve_pide: affine payoff is invariant for drift-free sets with no jumps") {
    const auto u = vol_family(0.5, 1.0);
    const SpatialGrid grid{-12.0, 12.0, 201};
    const auto sol = solve_pide([](double x) { return x; }, 1.0, grid, 128, u,
                                TimeConvention::initial);
    for (double x : {-2.0, -0.6, 0.0, 1.2, 2.0})
        CHECK(sol.at(1.0, x) == Catch::Approx(x).margin(1e-12));
}

TEST_CASE("solve_pide: capped payoff under unit Poisson jumps") {
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 201};  // h = 0.05, atom lands on a node
    const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 400, u,
                                TimeConvention::initial);
    const double oracle = 2.0 - 3.0 * std::exp(-1.0);
    CHECK(oracle == Catch::Approx(poisson_min_cap_oracle(2.0, 1.0)).margin(1e-10));
    CHECK(sol.at(1.0, 0.0) == Catch::Approx(oracle).epsilon(0.02));
}

TEST_CASE("solve_pide enforces the CFL bound and finite payoffs") {
    const auto u = vol_family(0.5, 1.0);
    const SpatialGrid grid{-2.0, 2.0, 401};  // h = 0.01 -> needs dt <= 1e-4
    CHECK_THROWS_AS(
        solve_pide([](double x) { return x; }, 1.0, grid, 100, u, TimeConvention::initial),
        std::invalid_argument);
}

TEST_CASE("comparison principle, constant preservation, bound, Lipschitz") {
    UncertaintySet u = intensity_family();
    u.triples.push_back({JumpMeasure::zero(1), {0.0}, Mat::scalar(0.75)});
    const SpatialGrid grid{-6.0, 6.0, 121};
    const int steps = 200;

    const auto u1 = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, steps, u,
                               TimeConvention::initial);
    const auto u2 = solve_pide([](double x) { return std::min(x, 2.5); }, 1.0, grid, steps, u,
                               TimeConvention::initial);
    const auto uc = solve_pide([](double) { return 1.25; }, 1.0, grid, steps, u,
                               TimeConvention::initial);
    const auto us = solve_pide([](double x) { return std::min(x, 2.0) + std::min(x, 2.5); }, 1.0,
                               grid, steps, u, TimeConvention::initial);

    double max_violation = 0.0;
    double max_abs = 0.0;
    double max_subadd = 0.0;
    for (std::size_t i = 0; i < u1.values.size(); ++i) {
        max_violation = std::max(max_violation, u1.values[i] - u2.values[i]);
        max_abs = std::max(max_abs, std::abs(u1.values[i]));
        max_subadd = std::max(max_subadd, us.values[i] - (u1.values[i] + u2.values[i]));
        CHECK(uc.values[i] == 1.25);
    }
    CHECK(max_violation <= 0.0);        // phi1 <= phi2 pointwise => u1 <= u2, exactly
    CHECK(max_abs <= 6.0 + 1e-12);      // bounded by max |phi| over the domain
    CHECK(max_subadd <= 1e-12);         // discrete sub-additivity

    // every time slice stays 1-Lipschitz
    const double h = grid.h();
    for (int k = 0; k <= steps; ++k) {
        const auto slice = u1.level(k);
        for (int j = 0; j + 1 < grid.nodes; ++j)
            CHECK(std::abs(slice[static_cast<std::size_t>(j) + 1] - slice[static_cast<std::size_t>(j)]) <=
                  h * (1.0 + 1e-12));
    }
}

TEST_CASE("grid refinement on the Poisson fixture: observed order at least 0.8") {
    const auto u = poisson_singleton();
    const double oracle = poisson_min_cap_oracle(2.0, 1.0);
    auto error_at = [&](int nodes, int steps) {
        const SpatialGrid grid{-4.0, 6.0, nodes};
        const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, steps, u,
                                    TimeConvention::initial);
        return std::abs(sol.at(1.0, 0.0) - oracle);
    };
    const double coarse = error_at(101, 100);
    const double fine = error_at(201, 200);
    CHECK(fine < coarse);
    CHECK(std::log2(coarse / fine) >= 0.8);
}

TEST_CASE("terminal convention is the time reversal of the initial one") {
    const auto u = intensity_family();
    const SpatialGrid grid{-4.0, 6.0, 101};
    const auto a = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 100, u,
                              TimeConvention::initial);
    const auto b = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 100, u,
                              TimeConvention::terminal);
    CHECK(a.at(1.0, 0.0) == b.at(0.0, 0.0));
    CHECK(a.at(0.25, 0.5) == b.at(0.75, 0.5));
}

TEST_CASE("dynamic programming residual on singleton and family fixtures") {
    const SpatialGrid grid{-4.0, 6.0, 101};  // h = 0.1
    const std::vector<std::pair<double, double>> panel = {
        {0.2, -0.5}, {0.2, 0.0}, {0.2, 1.0}, {0.5, 0.0}, {0.5, 0.5}};

    SECTION("singleton: classical tower property") {
        const auto u = poisson_singleton();
        const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 200, u,
                                    TimeConvention::terminal);
        const std::vector<ControlPath> controls = {ControlPath::constant(0, 1)};
        const auto rep = check_dpp(sol, 0.1, u, controls, panel, 20000, 71, 8, 1.0);
        CHECK(rep.pass);
    }
    SECTION("intensity family at two step sizes") {
        const auto u = intensity_family();
        const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 200, u,
                                    TimeConvention::terminal);
        const std::vector<ControlPath> controls = {ControlPath::constant(0, 1),
                                                   ControlPath::constant(1, 1)};
        for (double h : {0.1, 0.2}) {
            const auto rep = check_dpp(sol, h, u, controls, panel, 20000, 72, 8, 1.0);
            CHECK(rep.pass);
        }
    }
    SECTION("one-shot horizon: rhs equals a direct estimate of u") {
        const auto u = poisson_singleton();
        const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 200, u,
                                    TimeConvention::terminal);
        const std::vector<ControlPath> controls = {ControlPath::constant(0, 1)};
        const std::vector<std::pair<double, double>> origin = {{0.0, 0.0}};
        const auto rep = check_dpp(sol, 1.0, u, controls, origin, 40000, 73, 16, 1.0);
        CHECK(rep.pass);
        CHECK(rep.rows[0].rhs ==
              Catch::Approx(2.0 - 3.0 * std::exp(-1.0)).margin(3.0 * rep.rows[0].std_error + 0.02));
    }
}

TEST_CASE("dpp rejects misaligned inputs") {
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 101};
    const auto sol = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, 200, u,
                                TimeConvention::terminal);
    const std::vector<ControlPath> controls = {ControlPath::constant(0, 1)};
    const std::vector<std::pair<double, double>> panel = {{0.2, 0.0}};
    CHECK_THROWS_AS(check_dpp(sol, 0.0713, u, controls, panel, 100, 1, 4, 1.0),
                    std::invalid_argument);
}

TEST_CASE("viscosity residual: exact for affine and constant, first order for quadratic") {
    const SpatialGrid grid{-12.0, 12.0, 241};
    const auto u = vol_family(0.5, 1.0);
    const std::vector<std::pair<double, double>> panel = {{0.5, 0.0}, {0.5, 1.0}, {0.25, -1.0}};

    const auto affine = solve_pide([](double x) { return x; }, 1.0, grid, 256, u,
                                   TimeConvention::initial);
    CHECK(viscosity_residual(affine, u, panel).max_residual <= 1e-10);

    const auto constant = solve_pide([](double) { return 2.0; }, 1.0, grid, 256, u,
                                     TimeConvention::initial);
    CHECK(viscosity_residual(constant, u, panel).max_residual <= 1e-12);

    const auto quad = solve_pide([](double x) { return x * x; }, 1.0, grid, 256, u,
                                 TimeConvention::initial);
    const double tol = 5.0 * (1.0 / 256.0 + grid.h());
    CHECK(viscosity_residual(quad, u, panel).max_residual <= tol);
}

TEST_CASE("argmax feedback control recovers the solved value by Monte Carlo") {
    // concave payoff: low volatility is worst-case optimal
    const auto u = vol_family(0.5, 1.0);
    const SpatialGrid grid{-12.0, 12.0, 241};
    const auto sol = solve_pide([](double x) { return std::min(x, 0.5); }, 1.0, grid, 256, u,
                                TimeConvention::terminal);
    // closed-form oracle: E[min(sigma W_1, K)] = -(sigma pdf(K/sigma) - K (1 - cdf(K/sigma)))
    auto oracle = [](double sigma, double cap) {
        return -(sigma * testsupport::normal_pdf(cap / sigma) -
                 cap * (1.0 - testsupport::normal_cdf(cap / sigma)));
    };
    const double expected = std::max(oracle(0.5, 0.5), oracle(1.0, 0.5));
    CHECK(sol.at(0.0, 0.0) == Catch::Approx(expected).margin(0.02));

    const TimeGrid sim{0.0, 1.0, 256};
    std::vector<ControlPath> controls = {ControlPath::constant(0, sim.steps),
                                         ControlPath::constant(1, sim.steps),
                                         feedback_from_argmax(sol)};
    const auto xi = CylinderFunctional::terminal(
        {1.0}, [](double x) { return std::min(x, 0.5); }, 0.5, 1.0);
    const auto est = estimate_upper_expectation(xi, u, controls, sim, 40000, 929);
    CHECK(std::abs(est.value - sol.at(0.0, 0.0)) <= 3.0 * est.std_error + 0.02);
}
