#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "glevy/core.hpp"
#include "glevy/functional.hpp"
#include "glevy/uncertainty.hpp"

namespace glevy {

using ScalarFn = std::function<double(double)>;

struct SpatialGrid {
    double x_min = -1.0;
    double x_max = 1.0;
    int nodes = 3;

    double h() const { return (x_max - x_min) / (nodes - 1); }
    double x(int j) const { return x_min + (x_max - x_min) * static_cast<double>(j) / (nodes - 1); }
    bool valid() const { return x_max > x_min && nodes >= 3; }
};

// Slice lookup with linear interpolation off-node and constant extension
// beyond the truncated domain. Keeps every stencil weight nonnegative, so the
// scheme built on it stays monotone.
inline double slice_value(std::span<const double> slice, const SpatialGrid& grid, double x) {
    if (x <= grid.x_min) return slice.front();
    if (x >= grid.x_max) return slice.back();
    const double pos = (x - grid.x_min) / grid.h();
    int j = static_cast<int>(pos);
    if (j >= grid.nodes - 1) j = grid.nodes - 2;
    const double frac = pos - j;
    return slice[static_cast<std::size_t>(j)] * (1.0 - frac) +
           slice[static_cast<std::size_t>(j) + 1] * frac;
}

enum class TimeConvention { initial, terminal };

// Discretized u on a truncated domain. Levels are stored in duration order:
// level 0 holds phi, level k holds the solution after k steps. Under the
// initial convention level k is time k*dt; under the terminal convention it
// is time T - k*dt (so level `steps` is time 0).
struct GridFunction {
    SpatialGrid grid;
    TimeConvention convention = TimeConvention::initial;
    double horizon = 1.0;  // T
    int time_steps = 1;
    std::vector<double> values;  // (steps+1) x nodes
    std::vector<int> argmax;     // steps x nodes: maximizing triple for the step level k -> k+1

    double dt() const { return horizon / time_steps; }
    double level_time(int k) const {
        const double s = horizon * static_cast<double>(k) / time_steps;
        return convention == TimeConvention::initial ? s : horizon - s;
    }
    int level_of(double t) const {
        const double s = convention == TimeConvention::initial ? t : horizon - t;
        const int k = static_cast<int>(std::llround(s / dt()));
        if (k < 0 || k > time_steps || !nearly_equal(level_time(k), t))
            throw std::invalid_argument("GridFunction: time is not a stored level");
        return k;
    }
    std::span<const double> level(int k) const {
        return {values.data() + static_cast<std::size_t>(k) * grid.nodes,
                static_cast<std::size_t>(grid.nodes)};
    }
    double at(double t, double x) const { return slice_value(level(level_of(t)), grid, x); }
    int argmax_at(int step, int node) const {
        return argmax[static_cast<std::size_t>(step) * grid.nodes + static_cast<std::size_t>(node)];
    }
};

namespace pide_detail {

// Per-triple data with jump targets pre-resolved against the grid: an atom at
// offset z always lands `shift` cells plus `frac` to the right of the node.
struct PreparedTriple {
    double mass = 0.0;
    double drift = 0.0;      // p (d = 1)
    double diffusion = 0.0;  // Q Q^T (d = 1)
    struct PreparedAtom {
        double weight;
        long shift;
        double frac;
    };
    std::vector<PreparedAtom> atoms;
};

inline std::vector<PreparedTriple> prepare(const UncertaintySet& u, const SpatialGrid& grid) {
    if (u.dimension != 1)
        throw std::invalid_argument("pide: spatial solver supports d = 1 only");
    std::vector<PreparedTriple> out;
    out.reserve(u.triples.size());
    for (const auto& t : u.triples) {
        PreparedTriple p;
        p.mass = t.measure.total_mass();
        p.drift = t.drift.empty() ? 0.0 : t.drift[0];
        p.diffusion = t.volatility.rows > 0 ? t.volatility(0, 0) * t.volatility(0, 0) : 0.0;
        for (const auto& a : t.measure.atoms) {
            const double cells = a.location[0] / grid.h();
            const double fl = std::floor(cells);
            p.atoms.push_back({a.weight, static_cast<long>(fl), cells - fl});
        }
        out.push_back(std::move(p));
    }
    return out;
}

inline double clamped(std::span<const double> slice, long j) {
    if (j < 0) return slice.front();
    if (j >= static_cast<long>(slice.size())) return slice.back();
    return slice[static_cast<std::size_t>(j)];
}

// Nonlocal term + upwind drift + central diffusion at one node.
inline double generator_value(std::span<const double> slice, const SpatialGrid& grid, int node,
                              const PreparedTriple& p) {
    const double h = grid.h();
    const double uj = slice[static_cast<std::size_t>(node)];
    double g = 0.0;
    for (const auto& a : p.atoms) {
        const long base = node + a.shift;
        const double target = a.frac == 0.0
                                  ? clamped(slice, base)
                                  : clamped(slice, base) * (1.0 - a.frac) + clamped(slice, base + 1) * a.frac;
        g += a.weight * (target - uj);
    }
    if (p.drift > 0.0)
        g += p.drift * (clamped(slice, node + 1) - uj) / h;
    else if (p.drift < 0.0)
        g += p.drift * (uj - clamped(slice, node - 1)) / h;
    if (p.diffusion != 0.0)
        g += 0.5 * p.diffusion *
             (clamped(slice, node + 1) - 2.0 * uj + clamped(slice, node - 1)) / (h * h);
    return g;
}

inline double cfl_rate(const UncertaintySet& u, const SpatialGrid& grid) {
    const double h = grid.h();
    return u.max_mass() + u.max_drift_norm() / h + u.max_diffusion_trace() / (h * h);
}

}  // namespace pide_detail

// Generator of the worst-case dynamics applied to one time slice at one
// interior node, for a single (v, p, Q) triple.
inline double apply_generator(std::span<const double> slice, const SpatialGrid& grid, int node,
                              const Triple& triple) {
    UncertaintySet u;
    u.dimension = 1;
    u.triples.push_back(triple);
    const auto prepared = pide_detail::prepare(u, grid);
    return pide_detail::generator_value(slice, grid, node, prepared[0]);
}

// Explicit monotone stepping of u' = max over triples of the generator.
// Every node evolves; lookups beyond the domain use constant extension.
inline GridFunction solve_pide(const ScalarFn& phi, double horizon, const SpatialGrid& grid,
                               int time_steps, const UncertaintySet& u, TimeConvention convention,
                               int workers = 1) {
    if (!grid.valid()) throw std::invalid_argument("solve_pide: invalid spatial grid");
    if (time_steps < 1) throw std::invalid_argument("solve_pide: time_steps < 1");
    const auto violations = validate(u);
    if (!violations.empty())
        throw std::invalid_argument("solve_pide: invalid uncertainty set: " + violations[0].message);
    const auto prepared = pide_detail::prepare(u, grid);
    const double dt = horizon / time_steps;
    if (dt * pide_detail::cfl_rate(u, grid) > 1.0 + kDeterministicTol)
        throw std::invalid_argument("solve_pide: CFL bound violated; shrink dt or refine h");

    GridFunction out;
    out.grid = grid;
    out.convention = convention;
    out.horizon = horizon;
    out.time_steps = time_steps;
    out.values.assign(static_cast<std::size_t>(time_steps + 1) * grid.nodes, 0.0);
    out.argmax.assign(static_cast<std::size_t>(time_steps) * grid.nodes, 0);

    for (int j = 0; j < grid.nodes; ++j) {
        const double v = phi(grid.x(j));
        if (!std::isfinite(v)) throw std::invalid_argument("solve_pide: phi not finite on domain");
        out.values[static_cast<std::size_t>(j)] = v;
    }

    for (int k = 0; k < time_steps; ++k) {
        const std::span<const double> cur = out.level(k);
        double* next = out.values.data() + static_cast<std::size_t>(k + 1) * grid.nodes;
        int* amax = out.argmax.data() + static_cast<std::size_t>(k) * grid.nodes;
        parallel_for(static_cast<std::size_t>(grid.nodes), workers,
                     [&](std::size_t lo, std::size_t hi) {
                         for (std::size_t j = lo; j < hi; ++j) {
                             double best = -std::numeric_limits<double>::infinity();
                             int best_i = 0;
                             for (std::size_t i = 0; i < prepared.size(); ++i) {
                                 const double g = pide_detail::generator_value(
                                     cur, grid, static_cast<int>(j), prepared[i]);
                                 if (g > best) {
                                     best = g;
                                     best_i = static_cast<int>(i);
                                 }
                             }
                             next[j] = cur[j] + dt * best;
                             amax[j] = best_i;
                         }
                     });
    }
    return out;
}

// Feedback control reading the argmax field of a terminal-convention solve:
// at simulation time t the rule picks the triple that maximized the step of
// the value function covering [t, t+dt], at the nearest spatial node.
inline ControlPath feedback_from_argmax(const GridFunction& u, std::string id = "pide_feedback") {
    if (u.convention != TimeConvention::terminal)
        throw std::invalid_argument("feedback_from_argmax: needs a terminal-convention solve");
    ControlPath c;
    c.id = std::move(id);
    c.feedback = [u](double t, std::span<const double> state) {
        const double s = u.horizon - t;  // duration remaining
        int step = static_cast<int>(std::llround(s / u.dt())) - 1;
        step = std::clamp(step, 0, u.time_steps - 1);
        const double pos = (state[0] - u.grid.x_min) / u.grid.h();
        int node = static_cast<int>(std::llround(pos));
        node = std::clamp(node, 0, u.grid.nodes - 1);
        return u.argmax_at(step, node);
    };
    return c;
}

struct DppReport {
    struct Row {
        double t = 0.0, x = 0.0;
        double lhs = 0.0;       // u(t, x)
        double rhs = 0.0;       // max over controls of MC mean of u(t+h, x + increment)
        double residual = 0.0;  // |lhs - rhs|
        double std_error = 0.0;
    };
    std::vector<Row> rows;
    double max_residual = 0.0;
    double mean_residual = 0.0;
    double max_std_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// One-step dynamic programming residual over a panel of (t, x) points. The
// right-hand side re-simulates the controlled increment over [t, t+h] with
// `sub_steps` Euler steps and common random numbers across controls.
inline DppReport check_dpp(const GridFunction& u, double h, const UncertaintySet& uset,
                           const std::vector<ControlPath>& controls,
                           std::span<const std::pair<double, double>> panel, long samples,
                           std::uint64_t seed, int sub_steps, double tolerance_c) {
    if (u.convention != TimeConvention::terminal)
        throw std::invalid_argument("check_dpp: needs a terminal-convention solve");
    if (controls.empty()) throw std::invalid_argument("check_dpp: empty control family");
    const double steps_per_h = h / u.dt();
    if (!nearly_equal(steps_per_h, std::llround(steps_per_h)))
        throw std::invalid_argument("check_dpp: h must be a multiple of the solver dt");

    const auto maps = transport_maps(uset);
    DppReport rep;
    std::vector<double> per_rep(static_cast<std::size_t>(samples));
    ScenarioPath scratch;

    for (const auto& [t, x] : panel) {
        const double lhs = u.at(t, x);
        const TimeGrid sub{t, t + h, sub_steps};
        double best = -std::numeric_limits<double>::infinity();
        double best_se = 0.0;
        for (const auto& control : controls) {
            ControlPath local = control;
            if (!local.is_feedback())
                local.deterministic.assign(static_cast<std::size_t>(sub_steps),
                                           local.deterministic.empty() ? 0 : local.deterministic[0]);
            for (long r = 0; r < samples; ++r) {
                Rng rng = replicate_stream(seed, static_cast<std::uint64_t>(r));
                const DriverNoise noise = draw_noise(sub, uset.dimension, rng);
                simulate_into(scratch, uset, maps, local, sub, noise, seed);
                per_rep[static_cast<std::size_t>(r)] =
                    u.at(t + h, x + scratch.terminal_scalar());
            }
            const auto ms = mean_and_std_error(per_rep);
            if (ms.mean > best) {
                best = ms.mean;
                best_se = ms.std_error;
            }
        }
        DppReport::Row row;
        row.t = t;
        row.x = x;
        row.lhs = lhs;
        row.rhs = best;
        row.residual = std::abs(lhs - best);
        row.std_error = best_se;
        rep.rows.push_back(row);
        rep.max_residual = std::max(rep.max_residual, row.residual);
        rep.mean_residual += row.residual;
        rep.max_std_error = std::max(rep.max_std_error, row.std_error);
    }
    if (!rep.rows.empty()) rep.mean_residual /= static_cast<double>(rep.rows.size());
    rep.tolerance = 3.0 * rep.max_std_error + tolerance_c * (h * h + u.grid.h());
    rep.pass = rep.max_residual <= rep.tolerance;
    return rep;
}

struct ViscosityReport {
    struct Row {
        double t = 0.0, x = 0.0, residual = 0.0;
    };
    std::vector<Row> rows;
    double max_residual = 0.0;
};

// Interior residual |du/dt - max generator| with a centered difference in
// time; a consistency check on the solved field, first-order in (dt, h).
inline ViscosityReport viscosity_residual(const GridFunction& u, const UncertaintySet& uset,
                                          std::span<const std::pair<double, double>> panel) {
    const auto prepared = pide_detail::prepare(uset, u.grid);
    ViscosityReport rep;
    for (const auto& [t, x] : panel) {
        const int k = u.level_of(t);
        if (k < 1 || k > u.time_steps - 1)
            throw std::invalid_argument("viscosity_residual: need an interior time level");
        const double pos = (x - u.grid.x_min) / u.grid.h();
        const int j = static_cast<int>(std::llround(pos));
        if (j < 1 || j > u.grid.nodes - 2 || !nearly_equal(u.grid.x(j), x))
            throw std::invalid_argument("viscosity_residual: need an interior grid node");
        // duration derivative: forward in duration = backward in terminal time
        const double duds =
            (u.level(k + 1)[static_cast<std::size_t>(j)] - u.level(k - 1)[static_cast<std::size_t>(j)]) /
            (2.0 * u.dt());
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& p : prepared)
            best = std::max(best, pide_detail::generator_value(u.level(k), u.grid, j, p));
        const double res = std::abs(duds - best);
        rep.rows.push_back({t, x, res});
        rep.max_residual = std::max(rep.max_residual, res);
    }
    return rep;
}

}  // namespace glevy
