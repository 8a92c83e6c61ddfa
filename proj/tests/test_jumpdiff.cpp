#include <catch2/catch_amalgamated.hpp>

#include "glevy/glevy.hpp"

#include "support/stats.hpp"

using namespace glevy;

namespace {

UncertaintySet poisson_singleton() {
    return singleton_set(JumpMeasure::single_atom(1.0, 1.0), {0.0}, Mat::scalar(0.0));
}

UncertaintySet intensity_family() {
    FamilyDescriptor f;
    f.base_measure = JumpMeasure::single_atom(1.0, 1.0);
    f.intensity = FamilyDescriptor::Interval{0.5, 1.0};
    return expand_family(f, 2);
}

// dY = -Y ds
SdeSpec linear_decay() {
    SdeSpec s;
    s.drift = [](double, std::span<const double> y, std::span<double> out) { out[0] = -y[0]; };
    s.lipschitz = {1.0, 0.0, 0.0, 0.0};
    return s;
}

// doubling at every jump: K(t, y, z) = y
SdeSpec doubling_jump() {
    SdeSpec s;
    s.jump = [](double, std::span<const double> y, std::span<const double>, std::span<double> out) {
        out[0] = y[0];
    };
    s.lipschitz = {0.0, 0.0, 0.0, 1.0};
    return s;
}

}  // namespace

TEST_CASE("euler: linear decay against the exponential oracle, with order") {
    const auto u = singleton_set(JumpMeasure::zero(1), {0.0}, Mat::scalar(0.0));
    const auto spec = linear_decay();
    const double y0 = 1.0;
    auto terminal_error = [&](int steps) {
        const TimeGrid grid{0.0, 1.0, steps};
        const auto path = simulate(u, ControlPath::constant(0, steps), grid, 1);
        const auto y = euler_sde(spec, std::span<const double>(&y0, 1), path);
        return std::abs(y.back() - std::exp(-1.0));
    };
    const double e128 = terminal_error(128);
    const double e256 = terminal_error(256);
    CHECK(e128 <= 1.0 / 128.0);
    CHECK(std::log2(e128 / e256) >= 0.8);
}

TEST_CASE("euler: doubling fixture has mean e over Poisson jumps") {
    const auto u = poisson_singleton();
    const TimeGrid grid{0.0, 1.0, 64};
    const auto maps = transport_maps(u);
    const auto control = ControlPath::constant(0, grid.steps);
    const auto spec = doubling_jump();
    const double y0 = 1.0;

    const long n = 100000;
    double sum = 0.0;
    ScenarioPath path;
    for (long r = 0; r < n; ++r) {
        Rng rng = replicate_stream(515, static_cast<std::uint64_t>(r));
        const DriverNoise noise = draw_noise(grid, 1, rng);
        simulate_into(path, u, maps, control, grid, noise, 515);
        sum += euler_sde(spec, std::span<const double>(&y0, 1), path).back();
    }
    const double mean = sum / static_cast<double>(n);
    // oracles: E[2^N] = e^lambda, Var = e^(3 lambda) - e^(2 lambda) for lambda = 1
    const double expected = std::exp(1.0);
    const double sd = std::sqrt(std::exp(3.0) - std::exp(2.0));
    CHECK(std::abs(mean - expected) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("euler: zero coefficients freeze the state") {
    const auto u = poisson_singleton();
    const TimeGrid grid{0.0, 1.0, 16};
    const auto path = simulate(u, ControlPath::constant(0, grid.steps), grid, 2);
    SdeSpec spec;  // all zero
    const double y0 = 0.37;
    const auto y = euler_sde(spec, std::span<const double>(&y0, 1), path);
    for (double v : y) CHECK(v == 0.37);
}

TEST_CASE("euler: jumps compound sequentially within one step") {
    // two unit jumps landing in the same grid step must double twice
    ScenarioPath p;
    p.grid = TimeGrid{0.0, 1.0, 2};
    p.dimension = 1;
    p.values.assign(3, 0.0);
    p.drift_part.assign(3, 0.0);
    p.diff_part.assign(3, 0.0);
    p.jump_part.assign(3, 0.0);
    p.qv.assign(3, 0.0);
    p.jumps.push_back({0.2, 0.3, Vec{1.0}, 0});
    p.jumps.push_back({0.4, 0.6, Vec{1.0}, 0});
    const auto spec = doubling_jump();
    const double y0 = 1.0;
    const auto y = euler_sde(spec, std::span<const double>(&y0, 1), p);
    CHECK(y.back() == 4.0);
}

TEST_CASE("lipschitz spot checks flag a broken declaration") {
    SdeSpec ok = linear_decay();
    CHECK(check_lipschitz(ok, 50, 99).empty());
    SdeSpec bad = linear_decay();
    bad.lipschitz.drift = 0.5;  // drift is 1-Lipschitz, declaration is wrong
    CHECK_FALSE(check_lipschitz(bad, 50, 99).empty());
}

TEST_CASE("picard: contraction ratio on the linear fixture") {
    const auto u = singleton_set(JumpMeasure::zero(1), {0.0}, Mat::scalar(0.0));
    const TimeGrid grid{0.0, 1.0, 128};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps)};
    const double y0 = 1.0;
    PicardOptions opts;
    opts.start = Vec{0.0};  // start away from the solution
    const auto diag = picard_sde(linear_decay(), std::span<const double>(&y0, 1), u, controls,
                                 grid, 4, 6, 11, opts);
    REQUIRE(diag.rows.size() == 6);
    CHECK_FALSE(diag.diverged);
    for (std::size_t k = 1; k < diag.rows.size(); ++k) {
        if (diag.rows[k].distance < 1e-24) break;  // below resolvable scale
        CHECK(diag.rows[k].ratio <= 0.5);
    }
}

TEST_CASE("picard: jump-coupled fixture still contracts") {
    const auto u = intensity_family();
    const TimeGrid grid{0.0, 1.0, 64};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps),
                                               ControlPath::constant(1, grid.steps)};
    SdeSpec spec = linear_decay();
    spec.jump = [](double, std::span<const double> y, std::span<const double>, std::span<double> out) {
        out[0] = 0.2 * y[0];
    };
    spec.lipschitz.jump = 0.2;
    const double y0 = 1.0;
    PicardOptions opts;
    opts.start = Vec{0.0};
    const auto diag =
        picard_sde(spec, std::span<const double>(&y0, 1), u, controls, grid, 500, 6, 13, opts);
    CHECK_FALSE(diag.diverged);
    CHECK(diag.rows[2].ratio <= 0.5 + 0.05);
}

TEST_CASE("picard: two starts meet at the same fixed point") {
    const auto u = intensity_family();
    const TimeGrid grid{0.0, 1.0, 64};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps),
                                               ControlPath::constant(1, grid.steps)};
    SdeSpec spec = linear_decay();
    spec.jump = [](double, std::span<const double> y, std::span<const double>, std::span<double> out) {
        out[0] = 0.1 * y[0];
    };
    spec.lipschitz.jump = 0.1;
    const double y0 = 1.0;
    PicardOptions opts;
    opts.start = Vec{0.0};
    opts.second_start = Vec{5.0};
    const auto diag =
        picard_sde(spec, std::span<const double>(&y0, 1), u, controls, grid, 300, 8, 17, opts);
    CHECK(diag.cross_gap <= 2.0 * (diag.last_distance + diag.last_distance_b) + 1e-12);
}

TEST_CASE("picard: all-zero coefficients collapse after one application") {
    const auto u = poisson_singleton();
    const TimeGrid grid{0.0, 1.0, 16};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps)};
    SdeSpec spec;  // Lambda maps everything to the constant y0 path
    const double y0 = 2.0;
    PicardOptions opts;
    opts.start = Vec{0.0};
    const auto diag =
        picard_sde(spec, std::span<const double>(&y0, 1), u, controls, grid, 50, 3, 19, opts);
    CHECK(diag.rows[0].distance > 0.0);
    CHECK(diag.rows[1].distance == 0.0);
}

TEST_CASE("sde upper expectation: doubling fixture and monotone control families") {
    const auto u = poisson_singleton();
    const TimeGrid grid{0.0, 1.0, 64};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps)};
    const double y0 = 1.0;
    auto first = [](std::span<const double> y) { return y[0]; };
    const auto est = sde_upper_expectation(doubling_jump(), std::span<const double>(&y0, 1), first,
                                           u, controls, grid, 100000, 21);
    CHECK(std::abs(est.value - std::exp(1.0)) <= 3.0 * est.std_error);

    // constant payoff is exact
    auto constant = [](std::span<const double>) { return 4.5; };
    const auto est_c = sde_upper_expectation(doubling_jump(), std::span<const double>(&y0, 1),
                                             constant, u, controls, grid, 1000, 3);
    CHECK(est_c.value == 4.5);

    // enlarging the family never decreases the value (shared seeds)
    const auto fam = intensity_family();
    const std::vector<ControlPath> small = {ControlPath::constant(0, grid.steps)};
    const std::vector<ControlPath> large = {ControlPath::constant(0, grid.steps),
                                            ControlPath::constant(1, grid.steps)};
    const auto a = sde_upper_expectation(doubling_jump(), std::span<const double>(&y0, 1), first,
                                         fam, small, grid, 20000, 23);
    const auto b = sde_upper_expectation(doubling_jump(), std::span<const double>(&y0, 1), first,
                                         fam, large, grid, 20000, 23);
    CHECK(b.value >= a.value);
}

TEST_CASE("bsde: constant terminal data with zero generators stays constant") {
    BsdeSpec spec;
    spec.terminal = [](double) { return 1.5; };
    spec.horizon = 1.0;
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 101};
    const auto sol = solve_bsde(spec, u, grid, 128);
    for (double v : sol.values) CHECK(v == 1.5);
}

TEST_CASE("bsde: zero generators reproduce the terminal-convention pide solve") {
    const auto u = intensity_family();
    const SpatialGrid grid{-4.0, 6.0, 201};
    const int steps = 256;
    BsdeSpec spec;
    spec.terminal = [](double x) { return std::min(x, 2.0); };
    spec.horizon = 1.0;
    const auto b = solve_bsde(spec, u, grid, steps);
    const auto p = solve_pide([](double x) { return std::min(x, 2.0); }, 1.0, grid, steps, u,
                              TimeConvention::terminal);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < b.values.size(); ++i)
        max_diff = std::max(max_diff, std::abs(b.values[i] - p.values[i]));
    CHECK(max_diff <= 1e-10);
}

TEST_CASE("bsde: linear generator against the exponential oracle") {
    // Y_t = E[1 - int_t^T Y_s ds | .] has the deterministic solution e^{-(T-t)}
    BsdeSpec spec;
    spec.terminal = [](double) { return 1.0; };
    spec.gen_ds = [](double, double y) { return -y; };
    spec.lipschitz_ds = 1.0;
    spec.horizon = 1.0;
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 101};
    const int steps = 256;
    const auto sol = solve_bsde(spec, u, grid, steps);
    const double y0 = sol.at(0.0, 0.0);
    CHECK(std::abs(y0 - std::exp(-1.0)) <= 1.5 / steps);
}

TEST_CASE("bsde: guards for dt versus the generator Lipschitz constant") {
    BsdeSpec spec;
    spec.terminal = [](double) { return 1.0; };
    spec.gen_ds = [](double, double y) { return -40.0 * y; };
    spec.lipschitz_ds = 40.0;
    spec.horizon = 1.0;
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 101};
    CHECK_THROWS_AS(solve_bsde(spec, u, grid, 64), std::invalid_argument);
}

TEST_CASE("fbsde: constant data is constant along every scenario") {
    FbsdeSpec spec;
    spec.terminal = [](double) { return 2.5; };
    spec.horizon = 1.0;
    spec.fwd_jump = [](double, double z) { return z; };
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 101};
    FbsdeOptions opts;
    opts.sim_grid = TimeGrid{0.0, 1.0, 64};
    opts.samples = 200;
    opts.seed = 3;
    opts.sample_points = 5;
    opts.recompute_h = 0.125;
    const std::vector<ControlPath> controls = {ControlPath::constant(0, 64)};
    const auto res = solve_fbsde(spec, u, grid, 128, controls, opts);
    CHECK(res.max_residual <= 1e-12);
    for (const auto& s : res.samples) CHECK(s.y_grid == 2.5);
}

TEST_CASE("fbsde: canonical Poisson forward recovers the capped-payoff value") {
    FbsdeSpec spec;
    spec.terminal = [](double x) { return std::min(x, 2.0); };
    spec.horizon = 1.0;
    spec.fwd_jump = [](double, double z) { return z; };
    const auto u = poisson_singleton();
    const SpatialGrid grid{-4.0, 6.0, 201};
    FbsdeOptions opts;
    opts.sim_grid = TimeGrid{0.0, 1.0, 128};
    opts.samples = 4000;
    opts.seed = 5;
    opts.sample_points = 20;
    opts.recompute_h = 0.125;
    opts.recompute_sub_steps = 8;
    const std::vector<ControlPath> controls = {ControlPath::constant(0, 128)};
    const auto res = solve_fbsde(spec, u, grid, 256, controls, opts);
    CHECK(res.value.at(0.0, 0.0) == Catch::Approx(2.0 - 3.0 * std::exp(-1.0)).epsilon(0.02));
    CHECK(res.pass);
}

TEST_CASE("fbsde: linear generator fixture passes the recomputation check") {
    FbsdeSpec spec;
    spec.terminal = [](double x) { return std::min(x, 2.0); };
    spec.gen_ds = [](double, double y) { return -y; };
    spec.horizon = 1.0;
    spec.fwd_jump = [](double, double z) { return z; };
    spec.lipschitz = 1.0;
    const auto u = intensity_family();
    const SpatialGrid grid{-4.0, 6.0, 201};
    FbsdeOptions opts;
    opts.sim_grid = TimeGrid{0.0, 1.0, 128};
    opts.samples = 4000;
    opts.seed = 7;
    opts.sample_points = 20;
    opts.recompute_h = 0.125;
    opts.recompute_sub_steps = 8;
    const std::vector<ControlPath> controls = {ControlPath::constant(0, 128),
                                               ControlPath::constant(1, 128)};
    const auto res = solve_fbsde(spec, u, grid, 256, controls, opts);
    CHECK(res.pass);
}

TEST_CASE("drift-free guards on the sde layer") {
    UncertaintySet u;
    u.dimension = 1;
    u.triples.push_back({JumpMeasure::single_atom(1.0, 1.0), {0.5}, Mat::scalar(0.0)});
    const TimeGrid grid{0.0, 1.0, 16};
    const std::vector<ControlPath> controls = {ControlPath::constant(0, grid.steps)};
    const double y0 = 1.0;
    auto first = [](std::span<const double> y) { return y[0]; };
    CHECK_THROWS_AS(sde_upper_expectation(doubling_jump(), std::span<const double>(&y0, 1), first,
                                          u, controls, grid, 100, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(picard_sde(linear_decay(), std::span<const double>(&y0, 1), u, controls, grid,
                               10, 3, 1),
                    std::invalid_argument);
}
