#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "glevy/core.hpp"

namespace glevy {

// Tolerance for deterministic identities (mass normalization, pushforward
// bookkeeping). Statistical assertions elsewhere use 3 standard errors.
inline constexpr double kDeterministicTol = 1e-12;

// Finite discrete jump measure on R^d minus the origin: a list of weighted
// atoms. Total mass is normalized to at most 1 (unit-intensity convention);
// the missing mass is the "no jump" thinning cell of the transport map.
struct JumpMeasure {
    int dimension = 1;
    struct Atom {
        Vec location;   // in R^d, never the origin
        double weight;  // nonnegative
    };
    std::vector<Atom> atoms;

    double total_mass() const {
        double m = 0.0;
        for (const auto& a : atoms) m += a.weight;
        return m;
    }
    double first_abs_moment() const {
        double m = 0.0;
        for (const auto& a : atoms) m += a.weight * norm2(a.location);
        return m;
    }
    // mass of {z : lo_i < z_i <= hi_i for all i}
    double box_mass(std::span<const double> lo, std::span<const double> hi) const {
        double m = 0.0;
        for (const auto& a : atoms) {
            bool inside = true;
            for (int i = 0; i < dimension && inside; ++i) {
                const double z = a.location[static_cast<std::size_t>(i)];
                inside = lo[static_cast<std::size_t>(i)] < z && z <= hi[static_cast<std::size_t>(i)];
            }
            if (inside) m += a.weight;
        }
        return m;
    }

    static JumpMeasure zero(int d) { return JumpMeasure{d, {}}; }
    static JumpMeasure single_atom(double location, double weight) {
        return JumpMeasure{1, {{Vec{location}, weight}}};
    }
    JumpMeasure scaled(double c) const {
        JumpMeasure v = *this;
        for (auto& a : v.atoms) a.weight *= c;
        return v;
    }
};

// Piecewise-constant map g from the unit mark interval (0,1] into R^d with
// g(0) = 0. Cell k is ]breakpoints[k-1], breakpoints[k]] and carries
// values[k]; marks beyond the last breakpoint land in the residual cell and
// map to the origin (no jump).
struct TransportMap {
    int dimension = 1;
    std::vector<double> breakpoints;  // strictly increasing, last <= 1
    std::vector<Vec> values;          // one per cell

    void apply(double mark, std::span<double> out) const {
        for (int i = 0; i < dimension; ++i) out[static_cast<std::size_t>(i)] = 0.0;
        if (mark <= 0.0) return;
        double lo = 0.0;
        for (std::size_t k = 0; k < breakpoints.size(); ++k) {
            if (mark > lo && mark <= breakpoints[k]) {
                for (int i = 0; i < dimension; ++i)
                    out[static_cast<std::size_t>(i)] = values[k][static_cast<std::size_t>(i)];
                return;
            }
            lo = breakpoints[k];
        }
    }
    Vec apply(double mark) const {
        Vec out(static_cast<std::size_t>(dimension), 0.0);
        apply(mark, out);
        return out;
    }
};

// One admissible model: jump measure, drift, volatility matrix.
struct Triple {
    JumpMeasure measure;
    Vec drift;       // p in R^d
    Mat volatility;  // Q, d x d
};

struct Violation {
    int triple_index = -1;  // -1 for set-level findings
    std::string message;
};

// Finite family of (v, p, Q) triples sharing one dimension. The reference
// mark measure is fixed: uniform on the unit interval.
struct UncertaintySet {
    int dimension = 1;
    std::vector<Triple> triples;

    bool drift_free() const {
        for (const auto& t : triples)
            for (double p : t.drift)
                if (p != 0.0) return false;
        return true;
    }
    double max_mass() const {
        double m = 0.0;
        for (const auto& t : triples) m = std::max(m, t.measure.total_mass());
        return m;
    }
    double max_drift_norm() const {
        double m = 0.0;
        for (const auto& t : triples) m = std::max(m, norm2(t.drift));
        return m;
    }
    double max_diffusion_trace() const {  // max over triples of tr(Q Q^T)
        double m = 0.0;
        for (const auto& t : triples) m = std::max(m, trace(t.volatility * t.volatility.transposed()));
        return m;
    }
    double max_jump_reach() const {
        double m = 0.0;
        for (const auto& t : triples)
            for (const auto& a : t.measure.atoms) m = std::max(m, norm2(a.location));
        return m;
    }
};

inline std::vector<Violation> validate(const UncertaintySet& u) {
    std::vector<Violation> out;
    if (u.triples.empty()) {
        out.push_back({-1, "uncertainty set is empty"});
        return out;
    }
    double sup = 0.0;
    for (std::size_t i = 0; i < u.triples.size(); ++i) {
        const auto& t = u.triples[i];
        const int idx = static_cast<int>(i);
        if (t.measure.dimension != u.dimension)
            out.push_back({idx, "jump measure dimension mismatch"});
        if (static_cast<int>(t.drift.size()) != u.dimension)
            out.push_back({idx, "drift dimension mismatch"});
        if (t.volatility.rows != u.dimension || t.volatility.cols != u.dimension)
            out.push_back({idx, "volatility matrix shape mismatch"});
        for (const auto& a : t.measure.atoms) {
            if (static_cast<int>(a.location.size()) != u.dimension) {
                out.push_back({idx, "atom dimension mismatch"});
                continue;
            }
            if (norm2(a.location) == 0.0) out.push_back({idx, "atom at origin"});
            if (a.weight < 0.0) out.push_back({idx, "negative atom weight"});
            if (!std::isfinite(a.weight) || !std::isfinite(norm2(a.location)))
                out.push_back({idx, "non-finite atom"});
        }
        if (t.measure.total_mass() > 1.0 + kDeterministicTol)
            out.push_back({idx, "mass exceeds normalized lambda=1"});
        const double moment = t.measure.first_abs_moment();
        if (!std::isfinite(moment)) out.push_back({idx, "first absolute moment not finite"});
        sup = std::max(sup, moment + norm2(t.drift) + trace(t.volatility * t.volatility.transposed()));
    }
    if (!std::isfinite(sup)) out.push_back({-1, "boundedness functional not finite"});
    return out;
}

// Inverse-CDF construction on the unit mark interval: cells are laid out in
// stored atom order, residual mass last and mapped to the origin. This is the
// canonical representative; no other selection is supported.
inline TransportMap build_transport_map(const JumpMeasure& v) {
    const double mass = v.total_mass();
    if (mass > 1.0 + kDeterministicTol)
        throw std::invalid_argument("build_transport_map: total weight exceeds 1");
    for (const auto& a : v.atoms) {
        if (a.weight < 0.0) throw std::invalid_argument("build_transport_map: negative weight");
        if (norm2(a.location) == 0.0)
            throw std::invalid_argument("build_transport_map: atom at origin");
    }
    TransportMap g;
    g.dimension = v.dimension;
    double cum = 0.0;
    for (const auto& a : v.atoms) {
        if (a.weight == 0.0) continue;
        cum = std::min(cum + a.weight, 1.0);
        g.breakpoints.push_back(cum);
        g.values.push_back(a.location);
    }
    return g;
}

inline std::vector<TransportMap> transport_maps(const UncertaintySet& u) {
    std::vector<TransportMap> maps;
    maps.reserve(u.triples.size());
    for (const auto& t : u.triples) maps.push_back(build_transport_map(t.measure));
    return maps;
}

// Interval-parameterized family: a base triple plus optional intervals for a
// jump-intensity scale and a scalar volatility (d = 1 for the sigma knob).
// Expansion takes the tensor grid with `resolution` points per free
// parameter, endpoints included.
struct FamilyDescriptor {
    int dimension = 1;
    JumpMeasure base_measure;  // scaled by the intensity parameter
    Vec drift;                 // fixed
    Mat volatility;            // base Q; overridden by sigma when present
    struct Interval {
        double lo = 0.0, hi = 0.0;
    };
    std::optional<Interval> intensity;
    std::optional<Interval> sigma;  // Q = sigma * I, requires dimension == 1
};

inline std::vector<double> interval_grid(double lo, double hi, int resolution) {
    if (hi < lo) throw std::invalid_argument("expand_family: empty interval");
    if (resolution < 2) throw std::invalid_argument("expand_family: resolution < 2");
    if (hi == lo) return {lo};
    std::vector<double> xs(static_cast<std::size_t>(resolution));
    for (int i = 0; i < resolution; ++i)
        xs[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / (resolution - 1);
    return xs;
}

inline UncertaintySet expand_family(const FamilyDescriptor& f, int resolution) {
    if (!f.intensity && !f.sigma)
        throw std::invalid_argument("expand_family: no free parameter declared");
    if (f.sigma && f.dimension != 1)
        throw std::invalid_argument("expand_family: sigma interval requires d = 1");
    std::vector<double> cs = f.intensity
                                 ? interval_grid(f.intensity->lo, f.intensity->hi, resolution)
                                 : std::vector<double>{1.0};
    std::vector<double> ss;
    if (f.sigma) ss = interval_grid(f.sigma->lo, f.sigma->hi, resolution);

    UncertaintySet u;
    u.dimension = f.dimension;
    Vec drift = f.drift;
    if (drift.empty()) drift.assign(static_cast<std::size_t>(f.dimension), 0.0);
    Mat q = f.volatility;
    if (q.rows == 0) q = Mat(f.dimension, f.dimension);
    for (double c : cs) {
        if (f.sigma) {
            for (double s : ss) {
                Mat qs = Mat(1, 1);
                qs(0, 0) = s;
                u.triples.push_back({f.base_measure.scaled(c), drift, qs});
            }
        } else {
            u.triples.push_back({f.base_measure.scaled(c), drift, q});
        }
    }
    return u;
}

// The integration and diffusion layers work over drift-free sets only.
inline void require_drift_free(const UncertaintySet& u, const char* who) {
    if (!u.drift_free())
        throw std::invalid_argument(std::string(who) + ": requires a drift-free uncertainty set");
}

inline UncertaintySet singleton_set(const JumpMeasure& v, Vec drift, Mat q) {
    UncertaintySet u;
    u.dimension = v.dimension;
    u.triples.push_back({v, std::move(drift), std::move(q)});
    return u;
}

}  // namespace glevy
