#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glevy/pide.hpp"
#include "glevy/scenario.hpp"
#include "glevy/sublinear.hpp"

namespace glevy {

// Coefficients of the jump-diffusion dY = b ds + h : d<B> + sigma . dB + K dL.
// Empty std::function slots mean identically zero. Declared Lipschitz
// constants are contracts, spot-checked by check_lipschitz.
struct SdeSpec {
    int n = 1;  // state dimension
    int d = 1;  // driver dimension
    std::function<void(double, std::span<const double>, std::span<double>)> drift;      // -> n
    std::function<void(double, std::span<const double>, std::span<double>)> qv_coef;    // -> n*d*d
    std::function<void(double, std::span<const double>, std::span<double>)> diffusion;  // -> n*d
    std::function<void(double, std::span<const double>, std::span<const double>, std::span<double>)>
        jump;  // (t, y, z) -> n
    struct Lipschitz {
        double drift = 0.0, qv = 0.0, diffusion = 0.0, jump = 0.0;
        double max() const { return std::max({drift, qv, diffusion, jump}); }
    } lipschitz;
};

// Samples coefficient pairs in [-radius, radius]^n and reports any pair
// breaking the declared Lipschitz bounds.
inline std::vector<std::string> check_lipschitz(const SdeSpec& spec, int pairs,
                                                std::uint64_t seed, double radius = 5.0) {
    std::vector<std::string> problems;
    Rng rng(mix64(seed));
    const double t = 0.3;
    Vec x(static_cast<std::size_t>(spec.n)), y(static_cast<std::size_t>(spec.n));
    Vec fx, fy;
    Vec z(static_cast<std::size_t>(spec.d), 0.5);
    auto probe = [&](const char* name, double bound, int out_dim, auto&& eval) {
        fx.assign(static_cast<std::size_t>(out_dim), 0.0);
        fy.assign(static_cast<std::size_t>(out_dim), 0.0);
        eval(x, fx);
        eval(y, fy);
        double dist = 0.0;
        for (int i = 0; i < out_dim; ++i) {
            const double dd = fx[static_cast<std::size_t>(i)] - fy[static_cast<std::size_t>(i)];
            dist += dd * dd;
        }
        double dxy = 0.0;
        for (int i = 0; i < spec.n; ++i) {
            const double dd = x[static_cast<std::size_t>(i)] - y[static_cast<std::size_t>(i)];
            dxy += dd * dd;
        }
        if (std::sqrt(dist) > bound * std::sqrt(dxy) * (1.0 + 1e-9))
            problems.push_back(std::string(name) + " breaks its declared Lipschitz bound");
    };
    for (int p = 0; p < pairs; ++p) {
        for (auto& v : x) v = radius * (2.0 * rng.uniform01() - 1.0);
        for (auto& v : y) v = radius * (2.0 * rng.uniform01() - 1.0);
        if (spec.drift)
            probe("drift", spec.lipschitz.drift, spec.n,
                  [&](const Vec& in, Vec& out) { spec.drift(t, in, out); });
        if (spec.qv_coef)
            probe("qv coefficient", spec.lipschitz.qv, spec.n * spec.d * spec.d,
                  [&](const Vec& in, Vec& out) { spec.qv_coef(t, in, out); });
        if (spec.diffusion)
            probe("diffusion", spec.lipschitz.diffusion, spec.n * spec.d,
                  [&](const Vec& in, Vec& out) { spec.diffusion(t, in, out); });
        if (spec.jump)
            probe("jump", spec.lipschitz.jump, spec.n,
                  [&](const Vec& in, Vec& out) { spec.jump(t, in, z, out); });
    }
    return problems;
}

// Left-point Euler solution along one scenario: the continuous increment uses
// the state at the step's left node; jumps then apply sequentially at their
// arrival times on the running state, so jump compounding inside a step is
// exact. Returns the flattened (steps+1) x n state path.
inline std::vector<double> euler_sde(const SdeSpec& spec, std::span<const double> y0,
                                     const ScenarioPath& path) {
    if (static_cast<int>(y0.size()) != spec.n)
        throw std::invalid_argument("euler_sde: initial state size mismatch");
    if (spec.d != path.dimension)
        throw std::invalid_argument("euler_sde: driver dimension mismatch");
    const int n = spec.n;
    const int d = spec.d;
    const double dt = path.grid.dt();
    std::vector<double> out(static_cast<std::size_t>(path.grid.steps + 1) * n);
    Vec y(y0.begin(), y0.end());
    Vec b(static_cast<std::size_t>(n)), hq(static_cast<std::size_t>(n) * d * d),
        sg(static_cast<std::size_t>(n) * d), kv(static_cast<std::size_t>(n));
    std::copy(y.begin(), y.end(), out.begin());
    std::size_t jump_cursor = 0;

    for (int k = 0; k < path.grid.steps; ++k) {
        const double t = path.grid.node(k);
        const auto qa = path.qv_at(k);
        const auto qb = path.qv_at(k + 1);
        const auto ba = path.diffusion(k);
        const auto bb = path.diffusion(k + 1);
        Vec y_left = y;
        if (spec.drift) {
            spec.drift(t, y_left, b);
            for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] += b[static_cast<std::size_t>(i)] * dt;
        }
        if (spec.qv_coef) {
            spec.qv_coef(t, y_left, hq);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int q = 0; q < d * d; ++q)
                    acc += hq[static_cast<std::size_t>(i) * d * d + static_cast<std::size_t>(q)] *
                           (qb[static_cast<std::size_t>(q)] - qa[static_cast<std::size_t>(q)]);
                y[static_cast<std::size_t>(i)] += acc;
            }
        }
        if (spec.diffusion) {
            spec.diffusion(t, y_left, sg);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int q = 0; q < d; ++q)
                    acc += sg[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(q)] *
                           (bb[static_cast<std::size_t>(q)] - ba[static_cast<std::size_t>(q)]);
                y[static_cast<std::size_t>(i)] += acc;
            }
        }
        const double t_right = path.grid.node(k + 1);
        while (jump_cursor < path.jumps.size() && path.jumps[jump_cursor].time <= t_right) {
            const auto& j = path.jumps[jump_cursor];
            ++jump_cursor;
            if (!j.real() || !spec.jump) continue;
            spec.jump(j.time, y, j.size, kv);
            for (int i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] += kv[static_cast<std::size_t>(i)];
        }
        std::copy(y.begin(), y.end(), out.begin() + static_cast<std::size_t>(k + 1) * n);
    }
    return out;
}

struct PicardOptions {
    double weight_c = 2.0;            // exponential weight in the iterate norm
    std::optional<Vec> start;         // constant start process (defaults to y0)
    std::optional<Vec> second_start;  // when set, a second run for the uniqueness check
};

struct PicardDiagnostics {
    struct Row {
        int k = 0;            // distance between iterates k and k+1
        double distance = 0.0;
        double ratio = 0.0;   // distance_k / distance_{k-1}, 0 for the first row
    };
    std::vector<Row> rows;
    bool diverged = false;    // ratio > 1 for 3 consecutive iterations
    double weight_c = 0.0;
    double last_distance = 0.0;
    double last_distance_b = 0.0;  // second run, when requested
    double cross_gap = 0.0;        // weighted distance between the two final iterates
};

namespace jd_detail {

// One application of the solution map: next(t) = y0 + integrals of the
// coefficients evaluated along the previous iterate (left node values).
inline void apply_solution_map(const SdeSpec& spec, std::span<const double> y0,
                               const ScenarioPath& path, std::span<const double> prev,
                               std::span<double> next) {
    const int n = spec.n;
    const int d = spec.d;
    const double dt = path.grid.dt();
    Vec b(static_cast<std::size_t>(n)), hq(static_cast<std::size_t>(n) * d * d),
        sg(static_cast<std::size_t>(n) * d), kv(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) next[static_cast<std::size_t>(i)] = y0[static_cast<std::size_t>(i)];
    std::size_t jump_cursor = 0;
    for (int k = 0; k < path.grid.steps; ++k) {
        const double t = path.grid.node(k);
        const std::span<const double> y_prev =
            prev.subspan(static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n));
        const auto qa = path.qv_at(k);
        const auto qb = path.qv_at(k + 1);
        const auto ba = path.diffusion(k);
        const auto bb = path.diffusion(k + 1);
        for (int i = 0; i < n; ++i)
            next[static_cast<std::size_t>(k + 1) * n + static_cast<std::size_t>(i)] =
                next[static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)];
        double* row = next.data() + static_cast<std::size_t>(k + 1) * n;
        if (spec.drift) {
            spec.drift(t, y_prev, b);
            for (int i = 0; i < n; ++i) row[i] += b[static_cast<std::size_t>(i)] * dt;
        }
        if (spec.qv_coef) {
            spec.qv_coef(t, y_prev, hq);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int q = 0; q < d * d; ++q)
                    acc += hq[static_cast<std::size_t>(i) * d * d + static_cast<std::size_t>(q)] *
                           (qb[static_cast<std::size_t>(q)] - qa[static_cast<std::size_t>(q)]);
                row[i] += acc;
            }
        }
        if (spec.diffusion) {
            spec.diffusion(t, y_prev, sg);
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int q = 0; q < d; ++q)
                    acc += sg[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(q)] *
                           (bb[static_cast<std::size_t>(q)] - ba[static_cast<std::size_t>(q)]);
                row[i] += acc;
            }
        }
        const double t_right = path.grid.node(k + 1);
        while (jump_cursor < path.jumps.size() && path.jumps[jump_cursor].time <= t_right) {
            const auto& j = path.jumps[jump_cursor];
            ++jump_cursor;
            if (!j.real() || !spec.jump) continue;
            spec.jump(j.time, y_prev, j.size, kv);
            for (int i = 0; i < n; ++i) row[i] += kv[static_cast<std::size_t>(i)];
        }
    }
}

}  // namespace jd_detail

// Measured contraction of the solution map: iterates Y^(k+1) = Lambda(Y^(k))
// pathwise on a fixed scenario ensemble and reports the weighted-norm
// distance between successive iterates and its decay ratio.
inline PicardDiagnostics picard_sde(const SdeSpec& spec, std::span<const double> y0,
                                    const UncertaintySet& u,
                                    const std::vector<ControlPath>& controls,
                                    const TimeGrid& grid, long samples, int iterations,
                                    std::uint64_t seed, const PicardOptions& opts = {}) {
    if (iterations < 2) throw std::invalid_argument("picard_sde: needs at least 2 iterations");
    if (controls.empty()) throw std::invalid_argument("picard_sde: empty control family");
    require_drift_free(u, "picard_sde");
    const auto maps = transport_maps(u);
    const int n = spec.n;
    const std::size_t nc = controls.size();
    const std::size_t nr = static_cast<std::size_t>(samples);
    const std::size_t path_len = static_cast<std::size_t>(grid.steps + 1) * n;

    // fixed scenario ensemble, one noise bundle per replicate shared by controls
    std::vector<ScenarioPath> paths(nc * nr);
    for (std::size_t r = 0; r < nr; ++r) {
        Rng rng = replicate_stream(seed, r);
        const DriverNoise noise = draw_noise(grid, u.dimension, rng);
        for (std::size_t c = 0; c < nc; ++c)
            simulate_into(paths[c * nr + r], u, maps, controls[c], grid, noise, seed);
    }

    const Vec start_a = opts.start.value_or(Vec(y0.begin(), y0.end()));
    if (static_cast<int>(start_a.size()) != n)
        throw std::invalid_argument("picard_sde: start process dimension mismatch");

    // weighted norm between two iterate ensembles:
    // sum over nodes of dt * e^(-2C t) * max over controls of mean |diff|^2
    const double dt = grid.dt();
    auto weighted_distance = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double total = 0.0;
        for (int k = 0; k <= grid.steps; ++k) {
            double best = 0.0;
            for (std::size_t c = 0; c < nc; ++c) {
                double mean = 0.0;
                for (std::size_t r = 0; r < nr; ++r) {
                    const std::size_t off = (c * nr + r) * path_len + static_cast<std::size_t>(k) * n;
                    double d2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dd = a[off + static_cast<std::size_t>(i)] -
                                          b[off + static_cast<std::size_t>(i)];
                        d2 += dd * dd;
                    }
                    mean += d2;
                }
                mean /= static_cast<double>(nr);
                best = std::max(best, mean);
            }
            const double t = grid.node(k);
            total += dt * std::exp(-2.0 * opts.weight_c * (t - grid.t0)) * best;
        }
        return total;
    };

    auto run = [&](const Vec& start, std::vector<PicardDiagnostics::Row>* rows,
                   std::vector<double>& final_iterate) {
        std::vector<double> cur(nc * nr * path_len), next(cur.size());
        for (std::size_t p = 0; p < nc * nr; ++p)
            for (int k = 0; k <= grid.steps; ++k)
                for (int i = 0; i < n; ++i)
                    cur[p * path_len + static_cast<std::size_t>(k) * n + static_cast<std::size_t>(i)] =
                        start[static_cast<std::size_t>(i)];
        double prev_distance = -1.0;
        int climb = 0;
        bool diverged = false;
        double last = 0.0;
        for (int it = 0; it < iterations; ++it) {
            for (std::size_t c = 0; c < nc; ++c)
                for (std::size_t r = 0; r < nr; ++r) {
                    const std::size_t p = c * nr + r;
                    jd_detail::apply_solution_map(
                        spec, y0, paths[p],
                        std::span<const double>(cur.data() + p * path_len, path_len),
                        std::span<double>(next.data() + p * path_len, path_len));
                }
            const double dist = weighted_distance(cur, next);
            if (rows) {
                PicardDiagnostics::Row row;
                row.k = it;
                row.distance = dist;
                row.ratio = prev_distance > 0.0 ? dist / prev_distance : 0.0;
                if (prev_distance > 0.0 && row.ratio > 1.0) {
                    if (++climb >= 3) diverged = true;
                } else {
                    climb = 0;
                }
                rows->push_back(row);
            }
            prev_distance = dist;
            last = dist;
            std::swap(cur, next);
        }
        final_iterate = cur;
        return std::pair<double, bool>(last, diverged);
    };

    PicardDiagnostics diag;
    diag.weight_c = opts.weight_c;
    std::vector<double> final_a, final_b;
    auto [last_a, diverged] = run(start_a, &diag.rows, final_a);
    diag.last_distance = last_a;
    diag.diverged = diverged;
    if (opts.second_start) {
        auto [last_b, div_b] = run(*opts.second_start, nullptr, final_b);
        diag.last_distance_b = last_b;
        diag.cross_gap = weighted_distance(final_a, final_b);
    }
    return diag;
}

// Worst-case expectation of a terminal payoff of the SDE state.
inline Estimate sde_upper_expectation(const SdeSpec& spec, std::span<const double> y0,
                                      const std::function<double(std::span<const double>)>& payoff,
                                      const UncertaintySet& u,
                                      const std::vector<ControlPath>& controls,
                                      const TimeGrid& grid, long samples, std::uint64_t seed,
                                      int workers = 1) {
    require_drift_free(u, "sde_upper_expectation");
    Vec y0v(y0.begin(), y0.end());
    PathFunctional f = [&spec, y0v, &payoff](const ScenarioPath& path) {
        const auto y = euler_sde(spec, y0v, path);
        return payoff(std::span<const double>(y.data() + y.size() - spec.n,
                                              static_cast<std::size_t>(spec.n)));
    };
    return estimate_upper_expectation(f, u, controls, grid, samples, seed, workers);
}

// Markovian backward equation: terminal data Phi(X_T), generators b(s, y) and
// h(s, y) entering through ds and d<B>.
struct BsdeSpec {
    ScalarFn terminal;
    std::function<double(double, double)> gen_ds;  // b(s, y)
    std::function<double(double, double)> gen_qv;  // h(s, y), contracted with Q Q^T
    double horizon = 1.0;
    double lipschitz_ds = 0.0;
    double lipschitz_qv = 0.0;
};

namespace jd_detail {

inline constexpr int kInnerIterations = 5;
inline constexpr double kInnerTol = 1e-10;

// Shared backward induction for BSDE-type equations on a state grid. The
// per-step value is the fixed point of
//   y = max over triples [ next(x) + dt (A_triple next (x) + gen(t, x, y, q_triple)) ]
// resolved by at most kInnerIterations applications.
template <typename GeneratorAt, typename GenTerms>
GridFunction backward_induction(const ScalarFn& terminal, double horizon, const SpatialGrid& grid,
                                int steps, std::size_t n_triples, const GeneratorAt& generator_at,
                                const GenTerms& gen_terms, int workers) {
    GridFunction out;
    out.grid = grid;
    out.convention = TimeConvention::terminal;
    out.horizon = horizon;
    out.time_steps = steps;
    out.values.assign(static_cast<std::size_t>(steps + 1) * grid.nodes, 0.0);
    out.argmax.assign(static_cast<std::size_t>(steps) * grid.nodes, 0);
    for (int j = 0; j < grid.nodes; ++j)
        out.values[static_cast<std::size_t>(j)] = terminal(grid.x(j));
    const double dt = horizon / steps;

    for (int k = 0; k < steps; ++k) {
        const std::span<const double> cur = out.level(k);
        double* next = out.values.data() + static_cast<std::size_t>(k + 1) * grid.nodes;
        int* amax = out.argmax.data() + static_cast<std::size_t>(k) * grid.nodes;
        const double t = horizon - (k + 1) * dt;  // time of the level being computed
        parallel_for(static_cast<std::size_t>(grid.nodes), workers,
                     [&](std::size_t lo, std::size_t hi) {
            for (std::size_t j = lo; j < hi; ++j) {
                double y = cur[j];
                bool converged = false;
                double best = 0.0;
                int best_i = 0;
                for (int m = 0; m < kInnerIterations; ++m) {
                    best = -std::numeric_limits<double>::infinity();
                    best_i = 0;
                    for (std::size_t i = 0; i < n_triples; ++i) {
                        const double g = generator_at(cur, static_cast<int>(j), i);
                        const double cand = cur[j] + dt * (g + gen_terms(t, static_cast<int>(j), y, i));
                        if (cand > best) {
                            best = cand;
                            best_i = static_cast<int>(i);
                        }
                    }
                    if (std::abs(best - y) <= kInnerTol) {
                        y = best;
                        converged = true;
                        break;
                    }
                    y = best;
                }
                if (!converged)
                    throw std::runtime_error(
                        "backward induction: inner fixed point did not converge; "
                        "dt is too large for the generator Lipschitz constant");
                next[j] = y;
                amax[j] = best_i;
            }
        });
    }
    return out;
}

}  // namespace jd_detail

// Backward solver for the Markovian equation over the driver state (d = 1).
// With zero generators this reproduces solve_pide in terminal convention
// step for step.
inline GridFunction solve_bsde(const BsdeSpec& spec, const UncertaintySet& u,
                               const SpatialGrid& grid, int steps, int workers = 1) {
    require_drift_free(u, "solve_bsde");
    const auto violations = validate(u);
    if (!violations.empty())
        throw std::invalid_argument("solve_bsde: invalid uncertainty set: " + violations[0].message);
    const auto prepared = pide_detail::prepare(u, grid);
    const double dt = spec.horizon / steps;
    if (dt * pide_detail::cfl_rate(u, grid) > 1.0 + kDeterministicTol)
        throw std::invalid_argument("solve_bsde: CFL bound violated");
    const double max_q = u.max_diffusion_trace();
    const double lip = spec.lipschitz_ds + spec.lipschitz_qv * max_q;
    if (lip * dt >= 0.5)
        throw std::invalid_argument("solve_bsde: generator Lipschitz constant times dt must stay below 1/2");

    auto generator_at = [&prepared, &grid](std::span<const double> cur, int j, std::size_t i) {
        return pide_detail::generator_value(cur, grid, j, prepared[i]);
    };
    auto gen_terms = [&spec, &prepared](double t, int, double y, std::size_t i) {
        double v = 0.0;
        if (spec.gen_ds) v += spec.gen_ds(t, y);
        if (spec.gen_qv) v += spec.gen_qv(t, y) * prepared[i].diffusion;
        return v;
    };
    return jd_detail::backward_induction(spec.terminal, spec.horizon, grid, steps,
                                         prepared.size(), generator_at, gen_terms, workers);
}

// Decoupled forward-backward pair: deterministic scalar forward coefficients,
// backward generators f(x, y), g(x, y).
struct FbsdeSpec {
    ScalarFn fwd_drift;                            // b(x)
    ScalarFn fwd_qv;                               // h(x)
    ScalarFn fwd_diff;                             // sigma(x)
    std::function<double(double, double)> fwd_jump;  // K(x, z), z scalar
    ScalarFn terminal;                             // Phi(x)
    std::function<double(double, double)> gen_ds;  // f(x, y)
    std::function<double(double, double)> gen_qv;  // g(x, y)
    double horizon = 1.0;
    double lipschitz = 1.0;  // max over all coefficients and generators

    SdeSpec forward_sde() const {
        SdeSpec s;
        s.n = 1;
        s.d = 1;
        if (fwd_drift)
            s.drift = [f = fwd_drift](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
        if (fwd_qv)
            s.qv_coef = [f = fwd_qv](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
        if (fwd_diff)
            s.diffusion = [f = fwd_diff](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
        if (fwd_jump)
            s.jump = [f = fwd_jump](double, std::span<const double> y, std::span<const double> z,
                                    std::span<double> out) { out[0] = f(y[0], z[0]); };
        s.lipschitz = {lipschitz, lipschitz, lipschitz, lipschitz};
        return s;
    }
};

struct FbsdeOptions {
    TimeGrid sim_grid;          // forward simulation grid (same horizon)
    long samples = 1000;        // replicates for the recomputation estimate
    std::uint64_t seed = 1;
    int sample_points = 20;     // (s, X_s) points checked
    int recompute_sub_steps = 16;
    double recompute_h = 0.1;   // DPP-style step, multiple of the solver dt
    double tolerance_c = 1.0;   // grid-error constant in the pass tolerance
};

struct FbsdeResult {
    GridFunction value;  // y(s, x), terminal convention
    struct Sample {
        double s = 0.0, x = 0.0;
        double y_grid = 0.0;       // y(s, x)
        double y_recomputed = 0.0; // one-step re-estimate from (s, x)
        double std_error = 0.0;
        double residual = 0.0;
    };
    std::vector<Sample> samples;
    double max_residual = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

inline FbsdeResult solve_fbsde(const FbsdeSpec& spec, const UncertaintySet& u,
                               const SpatialGrid& grid, int steps,
                               const std::vector<ControlPath>& controls,
                               const FbsdeOptions& opts) {
    require_drift_free(u, "solve_fbsde");
    if (controls.empty()) throw std::invalid_argument("solve_fbsde: empty control family");
    const auto violations = validate(u);
    if (!violations.empty())
        throw std::invalid_argument("solve_fbsde: invalid uncertainty set: " + violations[0].message);
    if (u.dimension != 1) throw std::invalid_argument("solve_fbsde: requires d = 1");

    // forward generator data per (triple, node)
    const int nodes = grid.nodes;
    const std::size_t nt = u.triples.size();
    std::vector<double> q_triple(nt, 0.0);
    for (std::size_t i = 0; i < nt; ++i) {
        const auto& vol = u.triples[i].volatility;
        q_triple[i] = vol.rows > 0 ? vol(0, 0) * vol(0, 0) : 0.0;
    }
    const double h = grid.h();
    std::vector<double> drift_eff(nt * static_cast<std::size_t>(nodes), 0.0);
    std::vector<double> diff_eff(nt * static_cast<std::size_t>(nodes), 0.0);
    // jump targets x_j + K(x_j, atom) per triple/atom/node
    struct JumpTable {
        std::vector<double> weight;   // per atom
        std::vector<double> target;   // atom-major: [atom][node]
    };
    std::vector<JumpTable> jumps(nt);
    double cfl = 0.0;
    for (std::size_t i = 0; i < nt; ++i) {
        const auto& tri = u.triples[i];
        double max_drift = 0.0, max_diff = 0.0;
        for (int j = 0; j < nodes; ++j) {
            const double x = grid.x(j);
            const double b = spec.fwd_drift ? spec.fwd_drift(x) : 0.0;
            const double hv = spec.fwd_qv ? spec.fwd_qv(x) : 0.0;
            const double sg = spec.fwd_diff ? spec.fwd_diff(x) : 0.0;
            drift_eff[i * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(j)] =
                b + hv * q_triple[i];
            diff_eff[i * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(j)] =
                sg * sg * q_triple[i];
            max_drift = std::max(max_drift, std::abs(b + hv * q_triple[i]));
            max_diff = std::max(max_diff, sg * sg * q_triple[i]);
        }
        jumps[i].weight.reserve(tri.measure.atoms.size());
        for (const auto& atom : tri.measure.atoms) {
            jumps[i].weight.push_back(atom.weight);
            for (int j = 0; j < nodes; ++j) {
                const double x = grid.x(j);
                const double kz = spec.fwd_jump ? spec.fwd_jump(x, atom.location[0]) : atom.location[0];
                jumps[i].target.push_back(x + kz);
            }
        }
        cfl = std::max(cfl, tri.measure.total_mass() + max_drift / h + max_diff / (h * h));
    }
    const double dt = spec.horizon / steps;
    if (dt * cfl > 1.0 + kDeterministicTol)
        throw std::invalid_argument("solve_fbsde: CFL bound violated for the forward generator");
    const double h_steps = opts.recompute_h / dt;
    if (!nearly_equal(h_steps, std::llround(h_steps)))
        throw std::invalid_argument("solve_fbsde: recompute_h must be a multiple of the solver dt");
    const double gen_lip = spec.lipschitz * (1.0 + u.max_diffusion_trace());
    if (gen_lip * dt >= 0.5)
        throw std::invalid_argument("solve_fbsde: generator Lipschitz constant times dt must stay below 1/2");

    auto generator_at = [&](std::span<const double> cur, int j, std::size_t i) {
        const double uj = cur[static_cast<std::size_t>(j)];
        double g = 0.0;
        const auto& jt = jumps[i];
        const std::size_t n_atoms = jt.weight.size();
        for (std::size_t a = 0; a < n_atoms; ++a) {
            const double target = jt.target[a * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(j)];
            g += jt.weight[a] * (slice_value(cur, grid, target) - uj);
        }
        const double mu = drift_eff[i * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(j)];
        if (mu > 0.0)
            g += mu * (pide_detail::clamped(cur, j + 1) - uj) / h;
        else if (mu < 0.0)
            g += mu * (uj - pide_detail::clamped(cur, j - 1)) / h;
        const double a2 = diff_eff[i * static_cast<std::size_t>(nodes) + static_cast<std::size_t>(j)];
        if (a2 != 0.0)
            g += 0.5 * a2 * (pide_detail::clamped(cur, j + 1) - 2.0 * uj + pide_detail::clamped(cur, j - 1)) /
                 (h * h);
        return g;
    };
    auto gen_terms = [&](double, int j, double y, std::size_t i) {
        const double x = grid.x(j);
        double v = 0.0;
        if (spec.gen_ds) v += spec.gen_ds(x, y);
        if (spec.gen_qv) v += spec.gen_qv(x, y) * q_triple[i];
        return v;
    };

    FbsdeResult result;
    result.value = jd_detail::backward_induction(spec.terminal, spec.horizon, grid, steps, nt,
                                                 generator_at, gen_terms, 1);

    // forward simulation and one-step recomputation at sampled (s, X_s)
    const SdeSpec fwd = spec.forward_sde();
    const auto maps = transport_maps(u);
    const TimeGrid& sim = opts.sim_grid;
    ScenarioPath scratch;
    const double x0 = 0.0;

    const int points = std::max(1, opts.sample_points);
    std::vector<double> per_rep(static_cast<std::size_t>(opts.samples));
    for (int pt = 0; pt < points; ++pt) {
        // spread sample points over paths and times; state read from a fresh forward path
        Rng rng = replicate_stream(opts.seed ^ 0xF00DULL, static_cast<std::uint64_t>(pt));
        const DriverNoise noise = draw_noise(sim, 1, rng);
        const ControlPath& ctrl = controls[static_cast<std::size_t>(pt) % controls.size()];
        simulate_into(scratch, u, maps, ctrl, sim, noise, opts.seed);
        const auto fwd_path = euler_sde(fwd, std::span<const double>(&x0, 1), scratch);

        const double frac = 0.15 + 0.6 * static_cast<double>(pt) / std::max(1, points - 1);
        double s = sim.t0 + frac * (spec.horizon - sim.t0);
        // align s to a solver level and keep room for the recomputation step
        const double solver_dt = result.value.dt();
        s = std::min(std::floor(s / solver_dt) * solver_dt, spec.horizon - opts.recompute_h);
        const int sim_node = static_cast<int>(std::llround((s - sim.t0) / sim.dt()));
        const double x = fwd_path[static_cast<std::size_t>(std::clamp(sim_node, 0, sim.steps))];

        const double y_grid = result.value.at(s, x);
        const TimeGrid sub{s, s + opts.recompute_h, opts.recompute_sub_steps};
        double best = -std::numeric_limits<double>::infinity();
        double best_se = 0.0;
        for (const auto& control : controls) {
            ControlPath local = control;
            if (!local.is_feedback())
                local.deterministic.assign(static_cast<std::size_t>(sub.steps),
                                           local.deterministic.empty() ? 0 : local.deterministic[0]);
            for (long r = 0; r < opts.samples; ++r) {
                Rng rr = replicate_stream(opts.seed, static_cast<std::uint64_t>(r));
                const DriverNoise nn = draw_noise(sub, 1, rr);
                simulate_into(scratch, u, maps, local, sub, nn, opts.seed);
                const auto sub_path = euler_sde(fwd, std::span<const double>(&x, 1), scratch);
                // generator terms accumulated along the sub-path, left point
                double acc = 0.0;
                for (int k = 0; k < sub.steps; ++k) {
                    const double xr = sub_path[static_cast<std::size_t>(k)];
                    const double yr = result.value.at(
                        std::min(std::round((sub.node(k) - 0.0) / solver_dt) * solver_dt,
                                 spec.horizon),
                        xr);
                    if (spec.gen_ds) acc += spec.gen_ds(xr, yr) * sub.dt();
                    if (spec.gen_qv) {
                        const auto qa = scratch.qv_at(k);
                        const auto qb = scratch.qv_at(k + 1);
                        acc += spec.gen_qv(xr, yr) * (qb[0] - qa[0]);
                    }
                }
                per_rep[static_cast<std::size_t>(r)] =
                    result.value.at(s + opts.recompute_h,
                                    sub_path[static_cast<std::size_t>(sub.steps)]) +
                    acc;
            }
            const auto ms = mean_and_std_error(per_rep);
            if (ms.mean > best) {
                best = ms.mean;
                best_se = ms.std_error;
            }
        }
        FbsdeResult::Sample sample;
        sample.s = s;
        sample.x = x;
        sample.y_grid = y_grid;
        sample.y_recomputed = best;
        sample.std_error = best_se;
        sample.residual = std::abs(y_grid - best);
        result.samples.push_back(sample);
        result.max_residual = std::max(result.max_residual, sample.residual);
    }
    double max_se = 0.0;
    for (const auto& s : result.samples) max_se = std::max(max_se, s.std_error);
    result.tolerance = 3.0 * max_se +
                       opts.tolerance_c * (result.value.dt() + grid.h() + opts.recompute_h * opts.recompute_h);
    result.pass = result.max_residual <= result.tolerance;
    return result;
}

}  // namespace glevy
