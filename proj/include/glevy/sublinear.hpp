#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glevy/functional.hpp"
#include "glevy/pide.hpp"
#include "glevy/scenario.hpp"

namespace glevy {

namespace sub_detail {

// Deterministic streaming moments: replicates are summed sequentially inside
// fixed blocks of kBlock, block sums are combined pairwise. The tree shape
// depends only on the sample count, never on worker layout. Exact-constant
// detection keeps constant functionals and power-of-two scalings bit-exact.
inline constexpr long kBlock = 1024;

struct CellStats {
    double mean = 0.0;
    double std_error = 0.0;
    double min_v = std::numeric_limits<double>::infinity();
    double max_v = -std::numeric_limits<double>::infinity();
};

struct BatchStats {
    std::vector<CellStats> per_control;
    int argmax = 0;
    const CellStats& best() const { return per_control[static_cast<std::size_t>(argmax)]; }
};

// Evaluates every functional on every control with common random numbers:
// replicate r draws one noise bundle, all controls are simulated on it, all
// functionals read each simulated path.
inline std::vector<BatchStats> upper_batch(const std::vector<PathFunctional>& functionals,
                                           const UncertaintySet& u,
                                           const std::vector<ControlPath>& controls,
                                           const TimeGrid& grid, long samples, std::uint64_t seed,
                                           int workers = 1) {
    if (controls.empty()) throw std::invalid_argument("upper expectation: empty control family");
    if (samples < 2) throw std::invalid_argument("upper expectation: needs at least 2 samples");
    const auto violations = validate(u);
    if (!violations.empty())
        throw std::invalid_argument("upper expectation: invalid uncertainty set: " +
                                    violations[0].message);
    const auto maps = transport_maps(u);
    const std::size_t nf = functionals.size();
    const std::size_t nc = controls.size();
    const std::size_t n_blocks = static_cast<std::size_t>((samples + kBlock - 1) / kBlock);

    std::vector<double> block_sum(nf * nc * n_blocks, 0.0);
    std::vector<double> block_sq(nf * nc * n_blocks, 0.0);
    std::vector<double> cell_min(nf * nc, std::numeric_limits<double>::infinity());
    std::vector<double> cell_max(nf * nc, -std::numeric_limits<double>::infinity());
    std::vector<double> chunk_min(nf * nc * static_cast<std::size_t>(std::max(workers, 1)));
    std::vector<double> chunk_max(nf * nc * static_cast<std::size_t>(std::max(workers, 1)));

    // chunks aligned to block boundaries so each block is written by one worker
    const long per_worker_blocks =
        static_cast<long>((n_blocks + static_cast<std::size_t>(std::max(workers, 1)) - 1) /
                          static_cast<std::size_t>(std::max(workers, 1)));
    const long chunk_len = per_worker_blocks * kBlock;
    const int used_workers = static_cast<int>((samples + chunk_len - 1) / chunk_len);

    parallel_for(static_cast<std::size_t>(used_workers), used_workers,
                 [&](std::size_t wlo, std::size_t whi) {
        ScenarioPath path;
        for (std::size_t w = wlo; w < whi; ++w) {
            const long r_lo = static_cast<long>(w) * chunk_len;
            const long r_hi = std::min(samples, r_lo + chunk_len);
            double* cmin = chunk_min.data() + w * nf * nc;
            double* cmax = chunk_max.data() + w * nf * nc;
            std::fill(cmin, cmin + nf * nc, std::numeric_limits<double>::infinity());
            std::fill(cmax, cmax + nf * nc, -std::numeric_limits<double>::infinity());
            for (long r = r_lo; r < r_hi; ++r) {
                Rng rng = replicate_stream(seed, static_cast<std::uint64_t>(r));
                const DriverNoise noise = draw_noise(grid, u.dimension, rng);
                const std::size_t blk = static_cast<std::size_t>(r / kBlock);
                for (std::size_t c = 0; c < nc; ++c) {
                    simulate_into(path, u, maps, controls[c], grid, noise, seed);
                    for (std::size_t f = 0; f < nf; ++f) {
                        const double v = functionals[f](path);
                        const std::size_t cell = f * nc + c;
                        block_sum[cell * n_blocks + blk] += v;
                        block_sq[cell * n_blocks + blk] += v * v;
                        cmin[cell] = std::min(cmin[cell], v);
                        cmax[cell] = std::max(cmax[cell], v);
                    }
                }
            }
        }
    });
    for (int w = 0; w < used_workers; ++w)
        for (std::size_t cell = 0; cell < nf * nc; ++cell) {
            cell_min[cell] = std::min(cell_min[cell], chunk_min[static_cast<std::size_t>(w) * nf * nc + cell]);
            cell_max[cell] = std::max(cell_max[cell], chunk_max[static_cast<std::size_t>(w) * nf * nc + cell]);
        }

    std::vector<BatchStats> out(nf);
    const double n = static_cast<double>(samples);
    for (std::size_t f = 0; f < nf; ++f) {
        out[f].per_control.resize(nc);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < nc; ++c) {
            const std::size_t cell = f * nc + c;
            CellStats& s = out[f].per_control[c];
            s.min_v = cell_min[cell];
            s.max_v = cell_max[cell];
            if (s.min_v == s.max_v) {
                s.mean = s.min_v;  // exact for constant samples
                s.std_error = 0.0;
            } else {
                const std::span<const double> sums(block_sum.data() + cell * n_blocks, n_blocks);
                const std::span<const double> sqs(block_sq.data() + cell * n_blocks, n_blocks);
                s.mean = pairwise_sum(sums) / n;
                const double var =
                    std::max(0.0, (pairwise_sum(sqs) - n * s.mean * s.mean) / (n - 1.0));
                s.std_error = std::sqrt(var / n);
            }
            if (s.mean > best) {
                best = s.mean;
                out[f].argmax = static_cast<int>(c);
            }
        }
    }
    return out;
}

inline Estimate to_estimate(const BatchStats& b, const std::vector<ControlPath>& controls,
                            long samples, std::uint64_t seed) {
    Estimate e;
    e.value = b.best().mean;
    e.std_error = b.best().std_error;
    e.samples = samples;
    e.argmax_index = b.argmax;
    e.argmax_control = controls[static_cast<std::size_t>(b.argmax)].id;
    e.seed = seed;
    return e;
}

}  // namespace sub_detail

// Upper expectation of an arbitrary path functional over a finite control
// family: a Monte Carlo lower bound for the supremum, tight when the family
// contains the argmax control.
inline Estimate estimate_upper_expectation(const PathFunctional& functional,
                                           const UncertaintySet& u,
                                           const std::vector<ControlPath>& controls,
                                           const TimeGrid& grid, long samples, std::uint64_t seed,
                                           int workers = 1) {
    const auto stats =
        sub_detail::upper_batch({functional}, u, controls, grid, samples, seed, workers);
    return sub_detail::to_estimate(stats[0], controls, samples, seed);
}

inline Estimate estimate_upper_expectation(const CylinderFunctional& xi, const UncertaintySet& u,
                                           const std::vector<ControlPath>& controls,
                                           const TimeGrid& grid, long samples, std::uint64_t seed,
                                           int workers = 1) {
    for (double t : xi.times) grid.index_of(t);  // reject times off the grid
    PathFunctional f = [&xi](const ScenarioPath& p) { return evaluate_on_path(xi, p); };
    return estimate_upper_expectation(f, u, controls, grid, samples, seed, workers);
}

struct PideConfig {
    SpatialGrid grid;
    // Stepping rate in steps per unit time: a stage of duration s gets
    // ceil(time_steps_per_unit * s) steps, so equal durations always step
    // identically no matter which cylinder they sit in.
    int time_steps_per_unit = 100;
};

namespace sub_detail {

// Backward recursion over the cylinder times: each stage removes the last
// increment by a PIDE solve over its duration, parameterized by the earlier
// increments on the spatial grid. Returns the stage table with `target_args`
// arguments (flat, nodes^target_args values); an empty table means the
// recursion went all the way to the scalar value, stored in `scalar`.
struct StageTable {
    int args = 0;
    std::vector<double> flat;
    double scalar = 0.0;
};

inline StageTable cylinder_recursion(const CylinderFunctional& xi, const UncertaintySet& u,
                                     const PideConfig& cfg, int target_args) {
    if (u.dimension != 1)
        throw std::invalid_argument("evaluate_cylinder: requires d = 1");
    const int n = static_cast<int>(xi.times.size());
    if (n < 1 || n > 3)
        throw std::invalid_argument("evaluate_cylinder: supports 1 to 3 cylinder times");
    const auto& grid = cfg.grid;
    const std::size_t nodes = static_cast<std::size_t>(grid.nodes);

    auto stage_steps = [&](double duration) {
        return std::max(1, static_cast<int>(std::ceil(cfg.time_steps_per_unit * duration)));
    };

    // One expectation over the last argument of `eval`, for every combination
    // of the remaining arguments on the grid.
    auto solve_stage = [&](int args_in, const std::function<double(std::span<const double>)>& eval,
                           double duration) {
        StageTable table;
        table.args = args_in - 1;
        const std::size_t outer =
            table.args == 0 ? 1 : static_cast<std::size_t>(std::pow(static_cast<double>(nodes),
                                                                    table.args));
        table.flat.resize(std::max<std::size_t>(outer, 1));
        std::vector<double> point(static_cast<std::size_t>(args_in));
        std::vector<double> initial(nodes);
        for (std::size_t m = 0; m < outer; ++m) {
            std::size_t rem = m;
            for (int a = table.args - 1; a >= 0; --a) {
                point[static_cast<std::size_t>(a)] = grid.x(static_cast<int>(rem % nodes));
                rem /= nodes;
            }
            double value;
            if (duration <= 0.0) {
                point[static_cast<std::size_t>(args_in - 1)] = 0.0;
                value = eval(point);
            } else {
                ScalarFn phi = [&](double z) {
                    point[static_cast<std::size_t>(args_in - 1)] = z;
                    return eval(point);
                };
                const GridFunction sol = solve_pide(phi, duration, grid, stage_steps(duration), u,
                                                    TimeConvention::initial);
                value = slice_value(sol.level(sol.time_steps), grid, 0.0);
            }
            table.flat[m] = value;
        }
        if (table.args == 0) table.scalar = table.flat[0];
        return table;
    };

    StageTable table;
    int args = n;
    for (int stage = n; stage > target_args; --stage) {
        const double duration =
            xi.times[static_cast<std::size_t>(stage - 1)] - (stage >= 2 ? xi.times[static_cast<std::size_t>(stage - 2)] : 0.0);
        std::function<double(std::span<const double>)> eval;
        if (stage == n) {
            eval = xi.phi;
        } else {
            // interpolate the previous table in its last argument, exact at nodes
            const StageTable prev = std::move(table);
            eval = [prev, grid, nodes](std::span<const double> pt) {
                std::size_t base = 0;
                for (int a = 0; a + 1 < prev.args; ++a) {
                    const double pos =
                        (pt[static_cast<std::size_t>(a)] - grid.x_min) / grid.h();
                    const long j = std::clamp<long>(std::llround(pos), 0, static_cast<long>(nodes) - 1);
                    base = base * nodes + static_cast<std::size_t>(j);
                }
                const double z = pt[static_cast<std::size_t>(prev.args - 1)];
                const std::span<const double> row(prev.flat.data() + base * nodes, nodes);
                return slice_value(row, grid, z);
            };
        }
        table = solve_stage(args, eval, duration);
        args = table.args;
    }
    if (target_args == n) {
        // no expectation taken; wrap phi itself
        table.args = n;
        table.flat.clear();
    }
    return table;
}

}  // namespace sub_detail

// E[xi] through the iterated one-step construction (d = 1, up to 3 times).
inline double evaluate_cylinder(const CylinderFunctional& xi, const UncertaintySet& u,
                                const PideConfig& cfg) {
    const auto table = sub_detail::cylinder_recursion(xi, u, cfg, 0);
    return table.scalar;
}

// Conditional expectation at one of the cylinder's own times: the function of
// the first observed increments produced by the same recursion. t must equal
// some t_i (or 0, giving the constant full expectation).
inline std::function<double(std::span<const double>)> conditional_expectation(
    const CylinderFunctional& xi, double t, const UncertaintySet& u, const PideConfig& cfg) {
    const int n = static_cast<int>(xi.times.size());
    int stage = -1;
    if (t == 0.0) {
        stage = 0;
    } else {
        for (int i = 0; i < n; ++i)
            if (nearly_equal(xi.times[static_cast<std::size_t>(i)], t)) stage = i + 1;
    }
    if (stage < 0)
        throw std::invalid_argument("conditional_expectation: t is not a cylinder time");
    if (stage == n) {
        auto phi = xi.phi;
        return [phi](std::span<const double> xs) { return phi(xs); };
    }
    if (stage == 0) {
        const double value = evaluate_cylinder(xi, u, cfg);
        return [value](std::span<const double>) { return value; };
    }
    auto table = sub_detail::cylinder_recursion(xi, u, cfg, stage);
    const SpatialGrid grid = cfg.grid;
    const std::size_t nodes = static_cast<std::size_t>(grid.nodes);
    return [table = std::move(table), grid, nodes](std::span<const double> xs) {
        if (static_cast<int>(xs.size()) != table.args)
            throw std::invalid_argument("conditional expectation: wrong argument count");
        // multilinear in the last argument, nearest-node in the leading ones
        std::size_t base = 0;
        for (int a = 0; a + 1 < table.args; ++a) {
            const double pos = (xs[static_cast<std::size_t>(a)] - grid.x_min) / grid.h();
            const long j = std::clamp<long>(std::llround(pos), 0, static_cast<long>(nodes) - 1);
            base = base * nodes + static_cast<std::size_t>(j);
        }
        const std::span<const double> row(table.flat.data() + base * nodes, nodes);
        return slice_value(row, grid, xs[static_cast<std::size_t>(table.args - 1)]);
    };
}

// Capacity of a path event: worst-case probability over the control family,
// with the binomial standard error of the argmax control.
inline Estimate estimate_capacity(const EventPredicate& event, const UncertaintySet& u,
                                  const std::vector<ControlPath>& controls, const TimeGrid& grid,
                                  long samples, std::uint64_t seed, int workers = 1) {
    PathFunctional f = [&event](const ScenarioPath& p) { return event.holds(p) ? 1.0 : 0.0; };
    const auto stats = sub_detail::upper_batch({f}, u, controls, grid, samples, seed, workers);
    Estimate e = sub_detail::to_estimate(stats[0], controls, samples, seed);
    e.std_error = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(samples));
    return e;
}

// Per-pair verdicts for the sublinear-expectation axioms, evaluated with
// common random numbers across operands and controls.
struct AxiomPairReport {
    std::string x_id, y_id;
    double lambda = 2.0;
    bool monotone_applicable = false;  // X >= Y held pointwise on every sample
    bool monotone_pass = true;
    bool constant_applicable = false;  // at least one operand sampled constant
    bool constant_pass = true;
    bool subadditive_pass = true;
    bool homogeneous_pass = true;
    double est_x = 0.0, est_y = 0.0, est_diff = 0.0, est_scaled = 0.0;
    bool pass() const {
        return monotone_pass && constant_pass && subadditive_pass && homogeneous_pass;
    }
};

struct AxiomReport {
    std::vector<AxiomPairReport> pairs;
    int failures = 0;
    bool all_pass() const { return failures == 0; }
};

inline bool is_power_of_two(double x) {
    if (x == 0.0) return true;
    int exp = 0;
    return std::frexp(x, &exp) == 0.5;
}

inline AxiomReport axiom_check(
    const std::vector<std::pair<CylinderFunctional, CylinderFunctional>>& pairs,
    std::span<const double> lambdas, const UncertaintySet& u,
    const std::vector<ControlPath>& controls, const TimeGrid& grid, long samples,
    std::uint64_t seed, int workers = 1) {
    std::vector<PathFunctional> fs;
    fs.reserve(pairs.size() * 4);
    std::vector<double> lam(pairs.size(), 2.0);
    for (std::size_t i = 0; i < pairs.size() && i < lambdas.size(); ++i) {
        if (lambdas[i] < 0.0) throw std::invalid_argument("axiom_check: lambda must be >= 0");
        lam[i] = lambdas[i];
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [x, y] = pairs[i];
        const double l = lam[i];
        fs.emplace_back([&x](const ScenarioPath& p) { return evaluate_on_path(x, p); });
        fs.emplace_back([&y](const ScenarioPath& p) { return evaluate_on_path(y, p); });
        fs.emplace_back([&x, &y](const ScenarioPath& p) {
            return evaluate_on_path(x, p) - evaluate_on_path(y, p);
        });
        fs.emplace_back([&x, l](const ScenarioPath& p) { return l * evaluate_on_path(x, p); });
    }
    const auto stats = sub_detail::upper_batch(fs, u, controls, grid, samples, seed, workers);

    AxiomReport report;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& sx = stats[4 * i];
        const auto& sy = stats[4 * i + 1];
        const auto& sd = stats[4 * i + 2];
        const auto& sl = stats[4 * i + 3];
        AxiomPairReport r;
        r.x_id = pairs[i].first.id;
        r.y_id = pairs[i].second.id;
        r.lambda = lam[i];
        r.est_x = sx.best().mean;
        r.est_y = sy.best().mean;
        r.est_diff = sd.best().mean;
        r.est_scaled = sl.best().mean;

        double min_gap = std::numeric_limits<double>::infinity();
        for (const auto& c : sd.per_control) min_gap = std::min(min_gap, c.min_v);
        r.monotone_applicable = min_gap >= 0.0;
        if (r.monotone_applicable) r.monotone_pass = r.est_x >= r.est_y;

        auto check_constant = [&](const sub_detail::BatchStats& s, double est) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (const auto& c : s.per_control) {
                lo = std::min(lo, c.min_v);
                hi = std::max(hi, c.max_v);
            }
            if (lo == hi) {
                r.constant_applicable = true;
                if (est != lo) r.constant_pass = false;
            }
        };
        check_constant(sx, r.est_x);
        check_constant(sy, r.est_y);

        const double combined_se =
            sx.best().std_error + sy.best().std_error + sd.best().std_error;
        const double cushion =
            kDeterministicTol * std::max({1.0, std::abs(r.est_x), std::abs(r.est_y)});
        r.subadditive_pass = r.est_x - r.est_y <= r.est_diff + 3.0 * combined_se + cushion;

        if (is_power_of_two(r.lambda)) {
            r.homogeneous_pass = r.est_scaled == r.lambda * r.est_x;
        } else {
            r.homogeneous_pass = std::abs(r.est_scaled - r.lambda * r.est_x) <=
                                 kDeterministicTol * std::max(1.0, std::abs(r.lambda * r.est_x));
        }
        if (!r.pass()) ++report.failures;
        report.pairs.push_back(std::move(r));
    }
    return report;
}

}  // namespace glevy
