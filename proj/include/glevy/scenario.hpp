#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "glevy/core.hpp"
#include "glevy/rng.hpp"
#include "glevy/uncertainty.hpp"

namespace glevy {

struct TimeGrid {
    double t0 = 0.0;
    double horizon = 1.0;  // T
    int steps = 1;

    double dt() const { return (horizon - t0) / steps; }
    double node(int k) const { return t0 + (horizon - t0) * static_cast<double>(k) / steps; }
    // Index of a node time; throws on off-node times.
    int index_of(double t) const {
        const double pos = (t - t0) / dt();
        const int k = static_cast<int>(std::llround(pos));
        if (k < 0 || k > steps || !nearly_equal(node(k), t))
            throw std::invalid_argument("TimeGrid: time is not a grid node");
        return k;
    }
    bool valid() const { return horizon > t0 && steps >= 1; }
};

// Admissible control: a triple index per grid step (deterministic mode) or a
// rule (time, pre-jump state) -> triple index (feedback mode). The rule is
// read at the left endpoint of every step, so it is predictable by
// construction.
struct ControlPath {
    std::string id;
    std::vector<int> deterministic;  // size == grid.steps when used
    std::function<int(double, std::span<const double>)> feedback;

    static ControlPath constant(int triple_index, int steps, std::string name = {}) {
        ControlPath c;
        c.id = name.empty() ? ("const_" + std::to_string(triple_index)) : std::move(name);
        c.deterministic.assign(static_cast<std::size_t>(steps), triple_index);
        return c;
    }
    bool is_feedback() const { return static_cast<bool>(feedback); }
};

struct JumpRecord {
    double time = 0.0;
    double mark = 0.0;  // in (0,1]
    Vec size;           // g_v(mark); zero vector when the mark lands in the residual cell
    int step = 0;       // grid step containing the arrival
    bool real() const {
        for (double s : size)
            if (s != 0.0) return true;
        return false;
    }
};

// One simulated trajectory. Node values follow the cadlag convention (the
// node carries the post-jump state); the drift / diffusion / jump components
// are stored separately and sum to `values` exactly.
struct ScenarioPath {
    TimeGrid grid;
    int dimension = 1;
    std::uint64_t seed = 0;

    // flattened (steps+1) x d
    std::vector<double> values, drift_part, diff_part, jump_part;
    // flattened (steps+1) x d x d, accumulated Q Q^T dt
    std::vector<double> qv;
    std::vector<JumpRecord> jumps;

    std::span<const double> value(int k) const {
        return {values.data() + static_cast<std::size_t>(k) * dimension,
                static_cast<std::size_t>(dimension)};
    }
    std::span<const double> diffusion(int k) const {
        return {diff_part.data() + static_cast<std::size_t>(k) * dimension,
                static_cast<std::size_t>(dimension)};
    }
    std::span<const double> qv_at(int k) const {
        return {qv.data() + static_cast<std::size_t>(k) * dimension * dimension,
                static_cast<std::size_t>(dimension) * dimension};
    }
    double terminal_scalar() const { return values[static_cast<std::size_t>(grid.steps) * dimension]; }
};

// Control-independent driving randomness for one replicate: unit-rate Poisson
// arrival times with uniform marks, then one standard normal d-vector per
// grid step. Generating the noise up front gives common random numbers across
// every control evaluated on the replicate.
struct DriverNoise {
    std::vector<std::pair<double, double>> arrivals;  // (time, mark), time in (t0, T]
    std::vector<double> normals;                      // steps * d
};

inline DriverNoise draw_noise(const TimeGrid& grid, int dimension, Rng& rng) {
    DriverNoise n;
    double t = grid.t0 + rng.exponential();
    while (t <= grid.horizon) {
        n.arrivals.emplace_back(t, rng.uniform01());
        t += rng.exponential();
    }
    n.normals.resize(static_cast<std::size_t>(grid.steps) * dimension);
    for (double& z : n.normals) z = rng.normal();
    return n;
}

// Simulates the controlled integral from the pre-drawn noise. Buffers in
// `path` are reused across calls.
inline void simulate_into(ScenarioPath& path, const UncertaintySet& u,
                          const std::vector<TransportMap>& maps, const ControlPath& control,
                          const TimeGrid& grid, const DriverNoise& noise, std::uint64_t seed) {
    if (!grid.valid()) throw std::invalid_argument("simulate: invalid time grid");
    if (u.triples.empty()) throw std::invalid_argument("simulate: empty uncertainty set");
    if (!control.is_feedback() &&
        control.deterministic.size() != static_cast<std::size_t>(grid.steps))
        throw std::invalid_argument("simulate: control length does not match grid");

    const int d = u.dimension;
    const int n_triples = static_cast<int>(u.triples.size());
    path.grid = grid;
    path.dimension = d;
    path.seed = seed;
    const std::size_t nd = static_cast<std::size_t>(grid.steps + 1) * d;
    path.values.assign(nd, 0.0);
    path.drift_part.assign(nd, 0.0);
    path.diff_part.assign(nd, 0.0);
    path.jump_part.assign(nd, 0.0);
    path.qv.assign(nd * static_cast<std::size_t>(d), 0.0);
    path.jumps.clear();

    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    std::size_t arrival_cursor = 0;
    Vec jump_size(static_cast<std::size_t>(d));

    for (int k = 0; k < grid.steps; ++k) {
        const std::size_t row = static_cast<std::size_t>(k) * d;
        const std::size_t next = row + static_cast<std::size_t>(d);
        const double t_left = grid.node(k);

        int idx = control.is_feedback()
                      ? control.feedback(t_left, std::span<const double>(path.values.data() + row,
                                                                         static_cast<std::size_t>(d)))
                      : control.deterministic[static_cast<std::size_t>(k)];
        if (idx < 0 || idx >= n_triples)
            throw std::out_of_range("simulate: control selected triple index " +
                                    std::to_string(idx) + " out of range");
        const Triple& tri = u.triples[static_cast<std::size_t>(idx)];
        const TransportMap& map = maps[static_cast<std::size_t>(idx)];

        // continuous part: p dt + Q dW
        for (int i = 0; i < d; ++i) {
            path.drift_part[next + static_cast<std::size_t>(i)] =
                path.drift_part[row + static_cast<std::size_t>(i)] +
                tri.drift[static_cast<std::size_t>(i)] * dt;
            double diff = 0.0;
            for (int j = 0; j < d; ++j)
                diff += tri.volatility(i, j) *
                        noise.normals[static_cast<std::size_t>(k) * d + static_cast<std::size_t>(j)];
            path.diff_part[next + static_cast<std::size_t>(i)] =
                path.diff_part[row + static_cast<std::size_t>(i)] + sqrt_dt * diff;
        }

        // jump part: arrivals in ]t_k, t_{k+1}] mapped through the selected measure
        const double t_right = grid.node(k + 1);
        for (int i = 0; i < d; ++i)
            path.jump_part[next + static_cast<std::size_t>(i)] =
                path.jump_part[row + static_cast<std::size_t>(i)];
        while (arrival_cursor < noise.arrivals.size() &&
               noise.arrivals[arrival_cursor].first <= t_right) {
            const auto& [at, mark] = noise.arrivals[arrival_cursor];
            map.apply(mark, jump_size);
            for (int i = 0; i < d; ++i)
                path.jump_part[next + static_cast<std::size_t>(i)] +=
                    jump_size[static_cast<std::size_t>(i)];
            path.jumps.push_back({at, mark, jump_size, k});
            ++arrival_cursor;
        }

        // quadratic variation: qv += Q Q^T dt
        const std::size_t qrow = static_cast<std::size_t>(k) * d * d;
        const std::size_t qnext = qrow + static_cast<std::size_t>(d) * d;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) {
                double qq = 0.0;
                for (int l = 0; l < d; ++l) qq += tri.volatility(i, l) * tri.volatility(j, l);
                path.qv[qnext + static_cast<std::size_t>(i) * d + j] =
                    path.qv[qrow + static_cast<std::size_t>(i) * d + j] + qq * dt;
            }

        for (int i = 0; i < d; ++i)
            path.values[next + static_cast<std::size_t>(i)] =
                path.drift_part[next + static_cast<std::size_t>(i)] +
                path.diff_part[next + static_cast<std::size_t>(i)] +
                path.jump_part[next + static_cast<std::size_t>(i)];
    }
}

inline ScenarioPath simulate(const UncertaintySet& u, const ControlPath& control,
                             const TimeGrid& grid, std::uint64_t seed) {
    const auto maps = transport_maps(u);
    Rng rng = replicate_stream(seed, 0);
    const DriverNoise noise = draw_noise(grid, u.dimension, rng);
    ScenarioPath path;
    simulate_into(path, u, maps, control, grid, noise, seed);
    return path;
}

inline Vec increment(const ScenarioPath& path, double s, double t) {
    const int ks = path.grid.index_of(s);
    const int kt = path.grid.index_of(t);
    if (ks >= kt) throw std::invalid_argument("increment: requires s < t");
    Vec out(static_cast<std::size_t>(path.dimension));
    const auto vs = path.value(ks);
    const auto vt = path.value(kt);
    for (int i = 0; i < path.dimension; ++i)
        out[static_cast<std::size_t>(i)] = vt[static_cast<std::size_t>(i)] - vs[static_cast<std::size_t>(i)];
    return out;
}

inline Mat quadratic_variation(const ScenarioPath& path, double t) {
    const int k = path.grid.index_of(t);
    Mat m(path.dimension, path.dimension);
    const auto q = path.qv_at(k);
    for (std::size_t i = 0; i < q.size(); ++i) m.a[i] = q[i];
    return m;
}

// CSV export: time, value components, qv components, jump flag (1 when a real
// jump landed in the step ending at the node).
inline void write_path_csv(const ScenarioPath& path, std::ostream& os) {
    const int d = path.dimension;
    os << "time";
    for (int i = 0; i < d; ++i) os << ",value_" << i;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) os << ",qv_" << i << "_" << j;
    os << ",jump\n";
    std::vector<int> jump_flag(static_cast<std::size_t>(path.grid.steps + 1), 0);
    for (const auto& j : path.jumps)
        if (j.real()) jump_flag[static_cast<std::size_t>(j.step) + 1] = 1;
    char buf[64];
    for (int k = 0; k <= path.grid.steps; ++k) {
        std::snprintf(buf, sizeof buf, "%.12g", path.grid.node(k));
        os << buf;
        const auto v = path.value(k);
        for (int i = 0; i < d; ++i) {
            std::snprintf(buf, sizeof buf, "%.12g", v[static_cast<std::size_t>(i)]);
            os << ',' << buf;
        }
        const auto q = path.qv_at(k);
        for (std::size_t i = 0; i < q.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.12g", q[i]);
            os << ',' << buf;
        }
        os << ',' << jump_flag[static_cast<std::size_t>(k)] << '\n';
    }
}

}  // namespace glevy
