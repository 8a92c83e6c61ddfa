#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glevy/scenario.hpp"

namespace glevy {

// Cylinder functional xi = phi(X_{t1}, X_{t2}-X_{t1}, ...) with a declared
// bound and Lipschitz constant. phi receives the n increments flattened to
// n*d doubles.
struct CylinderFunctional {
    std::string id;
    std::vector<double> times;  // increasing, within the simulation horizon
    std::function<double(std::span<const double>)> phi;
    double bound = 0.0;
    double lipschitz = 0.0;

    static CylinderFunctional constant(double c, double at_time) {
        CylinderFunctional f;
        f.id = "const";
        f.times = {at_time};
        f.phi = [c](std::span<const double>) { return c; };
        f.bound = std::abs(c);
        f.lipschitz = 0.0;
        return f;
    }
    // phi applied to the terminal value X_{t_n} = sum of increments (d = 1).
    static CylinderFunctional terminal(std::vector<double> times,
                                       std::function<double(double)> payoff, double bound,
                                       double lipschitz, std::string id = "terminal") {
        CylinderFunctional f;
        f.id = std::move(id);
        f.times = std::move(times);
        f.phi = [p = std::move(payoff)](std::span<const double> incs) {
            double s = 0.0;
            for (double x : incs) s += x;
            return p(s);
        };
        f.bound = bound;
        f.lipschitz = lipschitz;
        return f;
    }
    CylinderFunctional scaled(double lambda, std::string new_id = {}) const {
        CylinderFunctional f = *this;
        f.id = new_id.empty() ? id + "_scaled" : std::move(new_id);
        f.phi = [base = phi, lambda](std::span<const double> incs) { return lambda * base(incs); };
        f.bound = std::abs(lambda) * bound;
        f.lipschitz = std::abs(lambda) * lipschitz;
        return f;
    }
};

// Increments of the path at the functional's times, flattened.
inline void cylinder_increments(const CylinderFunctional& f, const ScenarioPath& path,
                                std::vector<double>& out) {
    const int d = path.dimension;
    out.assign(f.times.size() * static_cast<std::size_t>(d), 0.0);
    int prev = path.grid.index_of(path.grid.t0);
    for (std::size_t i = 0; i < f.times.size(); ++i) {
        const int k = path.grid.index_of(f.times[i]);
        const auto va = path.value(prev);
        const auto vb = path.value(k);
        for (int c = 0; c < d; ++c)
            out[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(c)] =
                vb[static_cast<std::size_t>(c)] - va[static_cast<std::size_t>(c)];
        prev = k;
    }
}

inline double evaluate_on_path(const CylinderFunctional& f, const ScenarioPath& path) {
    std::vector<double> incs;
    cylinder_increments(f, path, incs);
    return f.phi(incs);
}

// Monte Carlo estimate of an upper expectation: value, its standard error,
// and which control attained the maximum.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    long samples = 0;
    int argmax_index = -1;
    std::string argmax_control;
    std::uint64_t seed = 0;
};

// Path-measurable event, deterministic given the path.
struct EventPredicate {
    std::string id;
    std::function<bool(const ScenarioPath&)> holds;
};

using PathFunctional = std::function<double(const ScenarioPath&)>;

}  // namespace glevy
