#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glevy/functional.hpp"
#include "glevy/scenario.hpp"
#include "glevy/sublinear.hpp"

namespace glevy {

// Simple integrand K(u, z) = sum_{k,l} F_{k,l} 1_{]t_k, t_{k+1}]}(u) psi_l(z):
// piecewise-constant in time over the partition, kernels with disjoint
// supports vanishing at the origin, coefficients reading only increments up
// to the cell's left endpoint.
struct SimpleIntegrand {
    std::string id;
    std::vector<double> partition;  // t_1 < ... < t_n within [0, T]
    struct Kernel {
        std::function<double(std::span<const double>)> psi;  // R^d -> R, psi(0) = 0
    };
    std::vector<Kernel> kernels;
    // coeffs[cell][kernel], cell k covers ]partition[k], partition[k+1]]
    std::vector<std::vector<CylinderFunctional>> coeffs;

    int cells() const { return static_cast<int>(partition.size()) - 1; }
    int cell_of(double u) const {  // -1 when u is outside every cell
        for (int k = 0; k < cells(); ++k)
            if (u > partition[static_cast<std::size_t>(k)] &&
                u <= partition[static_cast<std::size_t>(k) + 1])
                return k;
        return -1;
    }
    double eval_cell(int cell, std::span<const double> z, const ScenarioPath& path) const {
        double v = 0.0;
        for (std::size_t l = 0; l < kernels.size(); ++l) {
            const auto& f = coeffs[static_cast<std::size_t>(cell)][l];
            const double coeff = f.times.empty() ? f.phi({}) : evaluate_on_path(f, path);
            if (coeff != 0.0) v += coeff * kernels[l].psi(z);
        }
        return v;
    }
    double eval(double u, std::span<const double> z, const ScenarioPath& path) const {
        const int k = cell_of(u);
        return k < 0 ? 0.0 : eval_cell(k, z, path);
    }

    // Deterministic kernel on one cell; the workhorse for fixtures.
    static SimpleIntegrand deterministic(std::vector<double> partition,
                                         std::function<double(std::span<const double>)> psi,
                                         std::string id = "k") {
        SimpleIntegrand K;
        K.id = std::move(id);
        K.partition = std::move(partition);
        K.kernels.push_back({std::move(psi)});
        const int n_cells = K.cells();
        for (int k = 0; k < n_cells; ++k) {
            CylinderFunctional one = CylinderFunctional::constant(1.0, K.partition.front());
            one.times.clear();  // no path dependence at all
            K.coeffs.push_back({std::move(one)});
        }
        return K;
    }
};

// Structural diagnostics: psi_l(0) = 0, pairwise-disjoint supports on the
// sample points, adapted coefficients. Empty result means no finding.
inline std::vector<std::string> check_simple_integrand(const SimpleIntegrand& K, int dimension,
                                                       std::span<const Vec> sample_points) {
    std::vector<std::string> problems;
    if (K.partition.size() < 2) problems.push_back("partition needs at least two times");
    for (std::size_t i = 1; i < K.partition.size(); ++i)
        if (K.partition[i] <= K.partition[i - 1])
            problems.push_back("partition times not increasing");
    const Vec origin(static_cast<std::size_t>(dimension), 0.0);
    for (std::size_t l = 0; l < K.kernels.size(); ++l)
        if (K.kernels[l].psi(origin) != 0.0)
            problems.push_back("kernel " + std::to_string(l) + " does not vanish at the origin");
    for (const auto& z : sample_points) {
        int live = 0;
        for (const auto& k : K.kernels)
            if (k.psi(z) != 0.0) ++live;
        if (live > 1) problems.push_back("kernel supports overlap at a sample point");
    }
    if (static_cast<int>(K.coeffs.size()) != K.cells())
        problems.push_back("coefficient table does not match the partition");
    for (std::size_t k = 0; k < K.coeffs.size(); ++k) {
        if (K.coeffs[k].size() != K.kernels.size()) {
            problems.push_back("coefficient row " + std::to_string(k) + " has wrong width");
            continue;
        }
        for (const auto& f : K.coeffs[k])
            if (!f.times.empty() && f.times.back() > K.partition[k] + kDeterministicTol)
                problems.push_back("coefficient on cell " + std::to_string(k) +
                                   " reads increments past the cell start");
    }
    return problems;
}

// Jump random measure count: number of realized jumps in ]t, s] with size in
// the set. Zero-size arrivals are thinning artifacts, not jumps.
inline int jump_measure_count(const ScenarioPath& path, double t, double s,
                              const std::function<bool(std::span<const double>)>& in_set) {
    if (!(t < s)) throw std::invalid_argument("jump_measure_count: needs t < s");
    int n = 0;
    for (const auto& j : path.jumps)
        if (j.time > t && j.time <= s && j.real() && in_set(j.size)) ++n;
    return n;
}

// Pathwise jump integral: sum of K(u, jump size) over realized jumps in ]s, t].
inline double ito_jump_integral(const SimpleIntegrand& K, const ScenarioPath& path, double s,
                                double t) {
    double sum = 0.0;
    for (const auto& j : path.jumps)
        if (j.time > s && j.time <= t && j.real()) sum += K.eval(j.time, j.size, path);
    return sum;
}

// Same integral for an arbitrary pathwise kernel (the computable stand-in for
// completed integrands).
using PathKernel = std::function<double(double, std::span<const double>, const ScenarioPath&)>;

inline double ito_jump_integral(const PathKernel& K, const ScenarioPath& path, double s, double t) {
    double sum = 0.0;
    for (const auto& j : path.jumps)
        if (j.time > s && j.time <= t && j.real()) sum += K(j.time, j.size, path);
    return sum;
}

namespace stoch_detail {

// Pathwise value of int_0^T sup_v int |K(u,z)|^p v(dz) du: the inner
// integral is an exact atom sum per measure, the time integral an exact sum
// over partition cells (K is piecewise constant in u).
inline double sup_measure_time_integral(const SimpleIntegrand& K, const UncertaintySet& u, int p,
                                        const ScenarioPath& path) {
    double total = 0.0;
    for (int cell = 0; cell < K.cells(); ++cell) {
        double sup = 0.0;
        for (const auto& triple : u.triples) {
            double inner = 0.0;
            for (const auto& atom : triple.measure.atoms) {
                const double kv = K.eval_cell(cell, atom.location, path);
                inner += atom.weight * (p == 1 ? std::abs(kv) : kv * kv);
            }
            sup = std::max(sup, inner);
        }
        total += (K.partition[static_cast<std::size_t>(cell) + 1] -
                  K.partition[static_cast<std::size_t>(cell)]) *
                 sup;
    }
    return total;
}

}  // namespace stoch_detail

struct NormEstimate {
    double norm = 0.0;           // the H^p norm estimate
    double power_value = 0.0;    // upper expectation of the p-th power integrand
    double power_std_error = 0.0;
    int p = 2;
    std::string argmax_control;
};

inline NormEstimate integrand_norm_estimate(const SimpleIntegrand& K, int p,
                                            const UncertaintySet& u,
                                            const std::vector<ControlPath>& controls,
                                            const TimeGrid& grid, long samples,
                                            std::uint64_t seed, int workers = 1) {
    if (p != 1 && p != 2) throw std::invalid_argument("integrand_norm: p must be 1 or 2");
    require_drift_free(u, "integrand_norm");
    PathFunctional f = [&](const ScenarioPath& path) {
        return stoch_detail::sup_measure_time_integral(K, u, p, path);
    };
    const Estimate e = estimate_upper_expectation(f, u, controls, grid, samples, seed, workers);
    NormEstimate ne;
    ne.p = p;
    ne.power_value = e.value;
    ne.power_std_error = e.std_error;
    ne.norm = p == 1 ? e.value : std::sqrt(std::max(e.value, 0.0));
    ne.argmax_control = e.argmax_control;
    return ne;
}

inline double integrand_norm(const SimpleIntegrand& K, int p, const UncertaintySet& u,
                             const std::vector<ControlPath>& controls, const TimeGrid& grid,
                             long samples, std::uint64_t seed, int workers = 1) {
    return integrand_norm_estimate(K, p, u, controls, grid, samples, seed, workers).norm;
}

// Continuity of the jump integral in the p = 2 norm: checks
// E[(I(K))^2] <= 2(T+1) * norm_2(K)^2 up to Monte Carlo noise, both sides
// estimated on shared paths.
struct ContinuityCheck {
    double lhs = 0.0;           // upper expectation of the squared integral
    double lhs_std_error = 0.0;
    double norm_sq = 0.0;       // upper expectation of the squared-norm integrand
    double norm_sq_std_error = 0.0;
    double c_t = 0.0;           // 2(T+1)
    double rhs = 0.0;           // c_t * norm_sq
    double slack = 0.0;         // rhs + 3 se_combined - lhs  (>= 0 means pass)
    bool pass = false;
};

inline ContinuityCheck continuity_bound_check(const SimpleIntegrand& K, const UncertaintySet& u,
                                              const std::vector<ControlPath>& controls,
                                              const TimeGrid& grid, long samples,
                                              std::uint64_t seed, int workers = 1) {
    require_drift_free(u, "continuity_bound_check");
    const double s0 = grid.t0;
    const double t1 = grid.horizon;
    std::vector<PathFunctional> fs;
    fs.emplace_back([&](const ScenarioPath& path) {
        const double v = ito_jump_integral(K, path, s0, t1);
        return v * v;
    });
    fs.emplace_back([&](const ScenarioPath& path) {
        return stoch_detail::sup_measure_time_integral(K, u, 2, path);
    });
    const auto stats = sub_detail::upper_batch(fs, u, controls, grid, samples, seed, workers);
    ContinuityCheck c;
    c.lhs = stats[0].best().mean;
    c.lhs_std_error = stats[0].best().std_error;
    c.norm_sq = stats[1].best().mean;
    c.norm_sq_std_error = stats[1].best().std_error;
    c.c_t = 2.0 * ((t1 - s0) + 1.0);
    c.rhs = c.c_t * c.norm_sq;
    const double combined = c.lhs_std_error + c.c_t * c.norm_sq_std_error;
    c.slack = c.rhs + 3.0 * combined - c.lhs;
    c.pass = c.slack >= 0.0;
    return c;
}

// Elementary process: piecewise-constant on its own partition with adapted
// cylinder coefficients; scalar, vector or symmetric-matrix valued.
struct ElementaryProcess {
    enum class Space { scalar, vector, matrix };
    std::string id;
    Space space = Space::scalar;
    int dimension = 1;              // d for vector (d) and matrix (d*d) values
    std::vector<double> times;      // partition t_0 < ... < t_m
    // coeffs[k][component] on ]times[k], times[k+1]]
    std::vector<std::vector<CylinderFunctional>> coeffs;

    int components() const {
        switch (space) {
            case Space::scalar: return 1;
            case Space::vector: return dimension;
            case Space::matrix: return dimension * dimension;
        }
        return 1;
    }
    // value at the left endpoint of a step starting at time t (0 outside)
    void eval(double t, const ScenarioPath& path, std::span<double> out) const {
        for (auto& o : out) o = 0.0;
        for (std::size_t k = 0; k + 1 < times.size(); ++k) {
            if (t >= times[k] && t < times[k + 1]) {
                for (int c = 0; c < components(); ++c) {
                    const auto& f = coeffs[k][static_cast<std::size_t>(c)];
                    out[static_cast<std::size_t>(c)] =
                        f.times.empty() ? f.phi({}) : evaluate_on_path(f, path);
                }
                return;
            }
        }
    }

    static ElementaryProcess constant_scalar(double v, double t0, double t1,
                                             std::string id = "const") {
        ElementaryProcess e;
        e.id = std::move(id);
        e.space = Space::scalar;
        e.times = {t0, t1};
        CylinderFunctional c = CylinderFunctional::constant(v, t0);
        c.times.clear();
        e.coeffs.push_back({std::move(c)});
        return e;
    }
};

// Left-point sums along the scenario grid. dB increments are the increments
// of the Brownian component of the path; ds uses the grid spacing; the
// matrix integral contracts against qv increments.
inline double db_integral(const ElementaryProcess& z, const ScenarioPath& path) {
    if (z.space != ElementaryProcess::Space::vector || z.dimension != path.dimension)
        throw std::invalid_argument("db_integral: integrand must be vector-valued over the driver");
    const int d = path.dimension;
    std::vector<double> val(static_cast<std::size_t>(d), 0.0);
    double sum = 0.0;
    for (int k = 0; k < path.grid.steps; ++k) {
        z.eval(path.grid.node(k), path, val);
        const auto a = path.diffusion(k);
        const auto b = path.diffusion(k + 1);
        for (int i = 0; i < d; ++i)
            sum += val[static_cast<std::size_t>(i)] *
                   (b[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)]);
    }
    return sum;
}

inline double ds_integral(const ElementaryProcess& eta, const ScenarioPath& path) {
    if (eta.space != ElementaryProcess::Space::scalar)
        throw std::invalid_argument("ds_integral: integrand must be scalar");
    double sum = 0.0;
    double val = 0.0;
    const double dt = path.grid.dt();
    for (int k = 0; k < path.grid.steps; ++k) {
        eta.eval(path.grid.node(k), path, {&val, 1});
        sum += val * dt;
    }
    return sum;
}

inline double qv_integral(const ElementaryProcess& eta, const ScenarioPath& path) {
    if (eta.space != ElementaryProcess::Space::matrix)
        throw std::invalid_argument("qv_integral: integrand must be matrix-valued");
    const int d = path.dimension;
    std::vector<double> val(static_cast<std::size_t>(d) * d, 0.0);
    double sum = 0.0;
    for (int k = 0; k < path.grid.steps; ++k) {
        eta.eval(path.grid.node(k), path, val);
        const auto a = path.qv_at(k);
        const auto b = path.qv_at(k + 1);
        for (std::size_t i = 0; i < val.size(); ++i) sum += val[i] * (b[i] - a[i]);
    }
    return sum;
}

// f in C^2_b with explicit first and second derivatives, over R^m.
struct SmoothFunction {
    std::function<double(std::span<const double>)> f;
    std::function<void(std::span<const double>, std::span<double>)> grad;   // m values
    std::function<void(std::span<const double>, std::span<double>)> hess;   // m*m values
};

// Components of an m-dimensional jump-Ito process: per component a ds
// integrand, a d(qv) integrand, a dB integrand and a jump kernel.
struct ItoLevyComponents {
    int m = 1;  // state dimension
    int d = 1;  // driver dimension
    Vec y0;
    std::vector<ElementaryProcess> alpha;  // scalar, size m
    std::vector<ElementaryProcess> beta;   // matrix, size m
    std::vector<ElementaryProcess> zvec;   // vector, size m
    std::vector<PathKernel> jump;          // size m (empty kernels mean zero)
};

// Builds Y along the path and returns |f(Y_T) - f(Y_0) - (all right side
// integrals)| with every integral evaluated on the same discrete path:
// left-point sums for the continuous terms, exact per-jump increments for
// the jump term (continuous increment applied first within a step, then the
// step's jumps in arrival order).
inline double ito_formula_residual(const SmoothFunction& fn, const ItoLevyComponents& comps,
                                   const ScenarioPath& path) {
    const int m = comps.m;
    const int d = path.dimension;
    if (comps.d != d) throw std::invalid_argument("ito_formula_residual: dimension mismatch");
    if (static_cast<int>(comps.y0.size()) != m)
        throw std::invalid_argument("ito_formula_residual: y0 size mismatch");

    Vec y = comps.y0;
    Vec y_next(y), grad(static_cast<std::size_t>(m)), hess(static_cast<std::size_t>(m) * m);
    Vec a_val(1), b_val(static_cast<std::size_t>(d) * d), z_val(static_cast<std::size_t>(d));
    std::vector<Vec> z_rows(static_cast<std::size_t>(m), Vec(static_cast<std::size_t>(d)));
    Vec jump_vec(static_cast<std::size_t>(m));
    const double f0 = fn.f(y);
    const double dt = path.grid.dt();

    double rhs = 0.0;
    std::size_t jump_cursor = 0;

    for (int k = 0; k < path.grid.steps; ++k) {
        const double t_left = path.grid.node(k);
        const double t_right = path.grid.node(k + 1);
        const auto qa = path.qv_at(k);
        const auto qb = path.qv_at(k + 1);
        const auto ba = path.diffusion(k);
        const auto bb = path.diffusion(k + 1);

        fn.grad(y, grad);
        fn.hess(y, hess);

        // continuous increment and its first/second order right side terms
        for (int i = 0; i < m; ++i) {
            double dy = 0.0;
            if (i < static_cast<int>(comps.alpha.size()) && !comps.alpha[static_cast<std::size_t>(i)].times.empty()) {
                comps.alpha[static_cast<std::size_t>(i)].eval(t_left, path, a_val);
                dy += a_val[0] * dt;
                rhs += grad[static_cast<std::size_t>(i)] * a_val[0] * dt;
            }
            if (i < static_cast<int>(comps.beta.size()) && !comps.beta[static_cast<std::size_t>(i)].times.empty()) {
                comps.beta[static_cast<std::size_t>(i)].eval(t_left, path, b_val);
                double contracted = 0.0;
                for (std::size_t q = 0; q < b_val.size(); ++q) contracted += b_val[q] * (qb[q] - qa[q]);
                dy += contracted;
                rhs += grad[static_cast<std::size_t>(i)] * contracted;
            }
            auto& zr = z_rows[static_cast<std::size_t>(i)];
            std::fill(zr.begin(), zr.end(), 0.0);
            if (i < static_cast<int>(comps.zvec.size()) && !comps.zvec[static_cast<std::size_t>(i)].times.empty()) {
                comps.zvec[static_cast<std::size_t>(i)].eval(t_left, path, zr);
                double zdb = 0.0;
                for (int q = 0; q < d; ++q)
                    zdb += zr[static_cast<std::size_t>(q)] *
                           (bb[static_cast<std::size_t>(q)] - ba[static_cast<std::size_t>(q)]);
                dy += zdb;
                rhs += grad[static_cast<std::size_t>(i)] * zdb;
            }
            y_next[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] + dy;
        }
        // 1/2 sum_ij f_ij (Z_i Z_j^T : dqv)
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                const double fij = hess[static_cast<std::size_t>(i) * m + static_cast<std::size_t>(j)];
                if (fij == 0.0) continue;
                double zz = 0.0;
                for (int q = 0; q < d; ++q)
                    for (int r = 0; r < d; ++r)
                        zz += z_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(q)] *
                              z_rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] *
                              (qb[static_cast<std::size_t>(q) * d + static_cast<std::size_t>(r)] -
                               qa[static_cast<std::size_t>(q) * d + static_cast<std::size_t>(r)]);
                rhs += 0.5 * fij * zz;
            }
        y = y_next;

        // jumps inside ]t_k, t_{k+1}] in arrival order
        while (jump_cursor < path.jumps.size() && path.jumps[jump_cursor].time <= t_right) {
            const auto& j = path.jumps[jump_cursor];
            ++jump_cursor;
            if (!j.real()) continue;
            for (int i = 0; i < m; ++i)
                jump_vec[static_cast<std::size_t>(i)] =
                    (i < static_cast<int>(comps.jump.size()) && comps.jump[static_cast<std::size_t>(i)])
                        ? comps.jump[static_cast<std::size_t>(i)](j.time, j.size, path)
                        : 0.0;
            const double before = fn.f(y);
            for (int i = 0; i < m; ++i) y[static_cast<std::size_t>(i)] += jump_vec[static_cast<std::size_t>(i)];
            rhs += fn.f(y) - before;
        }
    }
    return std::abs(fn.f(y) - f0 - rhs);
}

}  // namespace glevy
