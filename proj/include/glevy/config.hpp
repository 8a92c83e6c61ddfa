#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "glevy/functional.hpp"
#include "glevy/jumpdiff.hpp"
#include "glevy/stochint.hpp"
#include "glevy/uncertainty.hpp"

namespace glevy {

using Json = nlohmann::json;

// All findings from one load attempt; thrown as a unit so the CLI can print
// every problem at once.
struct ConfigError : std::runtime_error {
    std::vector<std::string> problems;
    explicit ConfigError(std::vector<std::string> ps)
        : std::runtime_error(ps.empty() ? "config error" : ps.front()), problems(std::move(ps)) {}
};

namespace cfg_detail {

class Collector {
public:
    void add(const std::string& context, const std::string& message) {
        problems_.push_back(context + ": " + message);
    }
    bool ok() const { return problems_.empty(); }
    void raise_if_any() const {
        if (!problems_.empty()) throw ConfigError(problems_);
    }
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

// unknown keys are configuration errors, not typo traps
inline void check_keys(const Json& node, const std::set<std::string>& allowed,
                       const std::string& context, Collector& errors) {
    if (!node.is_object()) {
        errors.add(context, "expected an object");
        return;
    }
    for (const auto& [key, _] : node.items())
        if (!allowed.count(key)) errors.add(context, "unknown key '" + key + "'");
}

inline double number_or(const Json& node, const char* key, double fallback) {
    return node.contains(key) ? node.at(key).get<double>() : fallback;
}

}  // namespace cfg_detail

// Named scalar payoff applied to the sum of increments (default) or to one
// increment of the cylinder.
struct FunctionalDef {
    std::string id;
    std::vector<double> times;
    ScalarFn payoff;      // payoff on the scalar argument, scale already folded in
    int increment = 0;    // 0 = sum of all increments, i >= 1 = i-th increment
    double bound = 0.0;
    double lipschitz = 0.0;

    CylinderFunctional build() const {
        CylinderFunctional f;
        f.id = id;
        f.times = times;
        f.bound = bound;
        f.lipschitz = lipschitz;
        const int inc = increment;
        f.phi = [p = payoff, inc](std::span<const double> incs) {
            if (inc >= 1) return p(incs[static_cast<std::size_t>(inc - 1)]);
            double s = 0.0;
            for (double x : incs) s += x;
            return p(s);
        };
        return f;
    }
};

struct ExperimentConfig {
    std::string output_dir = "out";
    bool wall_clock = false;
    std::map<std::string, UncertaintySet> sets;
    std::map<std::string, TimeGrid> time_grids;
    std::map<std::string, SpatialGrid> spatial_grids;
    std::map<std::string, FunctionalDef> functionals;
    std::map<std::string, Json> sde_specs;    // validated coefficient blocks
    std::map<std::string, Json> integrands;   // validated integrand blocks
    std::vector<Json> experiments;            // validated experiment blocks
};

namespace cfg_detail {

inline const std::set<std::string> kKinds = {
    "expectation", "pide",       "dpp",  "capacity", "axioms", "ito-integral",
    "ito-formula", "continuity-bound", "sde", "picard",   "bsde",   "fbsde"};

inline ScalarFn parse_payoff(const Json& node, const std::string& context, Collector& errors) {
    if (!node.is_object() || !node.contains("type")) {
        errors.add(context, "payoff needs a 'type'");
        return [](double) { return 0.0; };
    }
    const std::string type = node.at("type").get<std::string>();
    if (type == "min_cap") {
        check_keys(node, {"type", "cap"}, context, errors);
        const double cap = number_or(node, "cap", 0.0);
        return [cap](double x) { return std::min(x, cap); };
    }
    if (type == "max_floor") {
        check_keys(node, {"type", "floor"}, context, errors);
        const double floor_v = number_or(node, "floor", 0.0);
        return [floor_v](double x) { return std::max(x, floor_v); };
    }
    if (type == "clip") {
        check_keys(node, {"type", "lo", "hi"}, context, errors);
        const double lo = number_or(node, "lo", -1.0);
        const double hi = number_or(node, "hi", 1.0);
        if (hi < lo) errors.add(context, "clip needs lo <= hi");
        return [lo, hi](double x) { return std::clamp(x, lo, hi); };
    }
    if (type == "identity") {
        check_keys(node, {"type"}, context, errors);
        return [](double x) { return x; };
    }
    if (type == "square") {
        check_keys(node, {"type"}, context, errors);
        return [](double x) { return x * x; };
    }
    if (type == "abs") {
        check_keys(node, {"type"}, context, errors);
        return [](double x) { return std::abs(x); };
    }
    if (type == "constant") {
        check_keys(node, {"type", "value"}, context, errors);
        const double v = number_or(node, "value", 0.0);
        return [v](double) { return v; };
    }
    if (type == "cos") {
        check_keys(node, {"type", "freq", "scale"}, context, errors);
        const double w = number_or(node, "freq", 1.0);
        const double s = number_or(node, "scale", 1.0);
        return [w, s](double x) { return s * std::cos(w * x); };
    }
    errors.add(context, "unknown payoff type '" + type + "'");
    return [](double) { return 0.0; };
}

inline JumpMeasure parse_atoms(const Json& rows, int dimension, const std::string& context,
                               Collector& errors) {
    JumpMeasure v;
    v.dimension = dimension;
    if (!rows.is_array()) {
        errors.add(context, "atoms must be an array of [location..., weight] rows");
        return v;
    }
    for (const auto& row : rows) {
        if (!row.is_array() || static_cast<int>(row.size()) != dimension + 1) {
            errors.add(context, "atom row must hold " + std::to_string(dimension) +
                                    " location entries plus a weight");
            continue;
        }
        JumpMeasure::Atom atom;
        for (int i = 0; i < dimension; ++i)
            atom.location.push_back(row.at(static_cast<std::size_t>(i)).get<double>());
        atom.weight = row.at(static_cast<std::size_t>(dimension)).get<double>();
        v.atoms.push_back(std::move(atom));
    }
    return v;
}

inline UncertaintySet parse_uncertainty_set(const Json& node, const std::string& context,
                                            Collector& errors) {
    check_keys(node, {"dimension", "triples", "family"}, context, errors);
    const int d = node.contains("dimension") ? node.at("dimension").get<int>() : 1;
    UncertaintySet u;
    u.dimension = d;
    if (node.contains("triples") == node.contains("family")) {
        errors.add(context, "declare exactly one of 'triples' or 'family'");
        return u;
    }
    if (node.contains("triples")) {
        for (const auto& t : node.at("triples")) {
            check_keys(t, {"atoms", "p", "Q"}, context + ".triple", errors);
            Triple triple;
            triple.measure = t.contains("atoms")
                                 ? parse_atoms(t.at("atoms"), d, context + ".atoms", errors)
                                 : JumpMeasure::zero(d);
            triple.drift.assign(static_cast<std::size_t>(d), 0.0);
            if (t.contains("p")) {
                const auto& p = t.at("p");
                if (!p.is_array() || static_cast<int>(p.size()) != d)
                    errors.add(context, "'p' must be a vector of length " + std::to_string(d));
                else
                    for (int i = 0; i < d; ++i) triple.drift[static_cast<std::size_t>(i)] = p.at(i).get<double>();
            }
            triple.volatility = Mat(d, d);
            if (t.contains("Q")) {
                const auto& q = t.at("Q");
                if (!q.is_array() || static_cast<int>(q.size()) != d)
                    errors.add(context, "'Q' must be a " + std::to_string(d) + "-row matrix");
                else
                    for (int i = 0; i < d; ++i)
                        for (int j = 0; j < d; ++j)
                            triple.volatility(i, j) = q.at(i).at(j).get<double>();
            }
            u.triples.push_back(std::move(triple));
        }
    } else {
        const auto& fam = node.at("family");
        check_keys(fam, {"atoms", "p", "Q", "intensity", "sigma", "resolution"}, context + ".family",
                   errors);
        FamilyDescriptor f;
        f.dimension = d;
        f.base_measure =
            fam.contains("atoms") ? parse_atoms(fam.at("atoms"), d, context, errors) : JumpMeasure::zero(d);
        if (fam.contains("p"))
            for (const auto& x : fam.at("p")) f.drift.push_back(x.get<double>());
        if (fam.contains("intensity")) {
            const auto& iv = fam.at("intensity");
            f.intensity = FamilyDescriptor::Interval{iv.at(0).get<double>(), iv.at(1).get<double>()};
        }
        if (fam.contains("sigma")) {
            const auto& iv = fam.at("sigma");
            f.sigma = FamilyDescriptor::Interval{iv.at(0).get<double>(), iv.at(1).get<double>()};
        }
        const int resolution = fam.contains("resolution") ? fam.at("resolution").get<int>() : 2;
        try {
            u = expand_family(f, resolution);
        } catch (const std::exception& e) {
            errors.add(context, e.what());
        }
    }
    for (const auto& violation : validate(u))
        errors.add(context + (violation.triple_index >= 0
                                  ? ".triple[" + std::to_string(violation.triple_index) + "]"
                                  : ""),
                   violation.message);
    return u;
}

inline FunctionalDef parse_functional(const std::string& id, const Json& node,
                                      const std::map<std::string, FunctionalDef>& known,
                                      const std::string& context, Collector& errors) {
    FunctionalDef def;
    def.id = id;
    if (node.contains("base")) {
        check_keys(node, {"base", "scale"}, context, errors);
        const std::string base = node.at("base").get<std::string>();
        const auto it = known.find(base);
        if (it == known.end()) {
            errors.add(context, "unknown base functional '" + base + "'");
            return def;
        }
        def = it->second;
        def.id = id;
        const double scale = number_or(node, "scale", 1.0);
        def.payoff = [p = def.payoff, scale](double x) { return scale * p(x); };
        def.bound *= std::abs(scale);
        def.lipschitz *= std::abs(scale);
        return def;
    }
    check_keys(node, {"times", "payoff", "arg", "bound", "lipschitz"}, context, errors);
    if (!node.contains("times") || !node.contains("payoff")) {
        errors.add(context, "functional needs 'times' and 'payoff'");
        return def;
    }
    for (const auto& t : node.at("times")) def.times.push_back(t.get<double>());
    for (std::size_t i = 1; i < def.times.size(); ++i)
        if (def.times[i] <= def.times[i - 1]) errors.add(context, "times must increase");
    def.payoff = parse_payoff(node.at("payoff"), context + ".payoff", errors);
    if (node.contains("arg")) {
        const auto& arg = node.at("arg");
        if (arg.is_string() && arg.get<std::string>() == "sum") {
            def.increment = 0;
        } else if (arg.is_object() && arg.contains("increment")) {
            def.increment = arg.at("increment").get<int>();
            if (def.increment < 1 || def.increment > static_cast<int>(def.times.size()))
                errors.add(context, "'arg.increment' out of range");
        } else {
            errors.add(context, "'arg' must be \"sum\" or {\"increment\": i}");
        }
    }
    def.bound = number_or(node, "bound", 1.0);
    def.lipschitz = number_or(node, "lipschitz", 1.0);
    return def;
}

inline void validate_sde_coef(const Json& node, const std::string& context, Collector& errors) {
    if (!node.is_object() || !node.contains("type")) {
        errors.add(context, "coefficient needs a 'type'");
        return;
    }
    const std::string type = node.at("type").get<std::string>();
    if (type == "zero") {
        check_keys(node, {"type"}, context, errors);
    } else if (type == "constant") {
        check_keys(node, {"type", "value"}, context, errors);
    } else if (type == "linear") {
        check_keys(node, {"type", "rate"}, context, errors);
    } else if (type == "affine") {
        check_keys(node, {"type", "rate", "shift"}, context, errors);
    } else if (type == "table") {
        check_keys(node, {"type", "xs", "ys"}, context, errors);
        if (!node.contains("xs") || !node.contains("ys") ||
            node.at("xs").size() != node.at("ys").size() || node.at("xs").size() < 2)
            errors.add(context, "table needs matching xs/ys with at least two points");
    } else if (type == "state" || type == "z") {
        check_keys(node, {"type", "scale"}, context, errors);
    } else {
        errors.add(context, "unknown coefficient type '" + type + "'");
    }
}

inline void validate_sde_spec(const Json& node, const std::string& context, Collector& errors) {
    check_keys(node, {"b", "h", "sigma", "K", "lipschitz"}, context, errors);
    for (const char* key : {"b", "h", "sigma", "K"})
        if (node.contains(key)) validate_sde_coef(node.at(key), context + "." + key, errors);
    if (node.contains("lipschitz") && !node.at("lipschitz").is_number())
        errors.add(context, "'lipschitz' must be a number");
}

inline void validate_integrand(const Json& node, const ExperimentConfig& cfg,
                               const std::string& context, Collector& errors) {
    check_keys(node, {"partition", "kernels", "coeffs"}, context, errors);
    if (!node.contains("partition") || node.at("partition").size() < 2)
        errors.add(context, "integrand needs a partition with at least two times");
    if (!node.contains("kernels") || node.at("kernels").empty())
        errors.add(context, "integrand needs at least one kernel");
    else
        for (const auto& k : node.at("kernels")) {
            if (!k.contains("type")) {
                errors.add(context, "kernel needs a 'type'");
                continue;
            }
            const std::string type = k.at("type").get<std::string>();
            if (type == "identity" || type == "square")
                check_keys(k, {"type", "scale"}, context, errors);
            else if (type == "bump")
                check_keys(k, {"type", "center", "halfwidth", "scale"}, context, errors);
            else
                errors.add(context, "unknown kernel type '" + type + "'");
        }
    if (node.contains("coeffs")) {
        const std::size_t cells = node.at("partition").size() - 1;
        if (node.at("coeffs").size() != cells)
            errors.add(context, "coeffs must hold one row per partition cell");
        for (const auto& row : node.at("coeffs"))
            for (const auto& c : row) {
                if (c.is_string()) {
                    if (!cfg.functionals.count(c.get<std::string>()))
                        errors.add(context, "unknown coefficient functional '" +
                                                c.get<std::string>() + "'");
                } else if (!(c.is_object() && c.contains("constant"))) {
                    errors.add(context, "coefficient must be a functional id or {\"constant\": v}");
                }
            }
    }
}

inline void require_ref(const ExperimentConfig& cfg, const Json& node, const char* key,
                        const char* table, const std::string& context, Collector& errors) {
    if (!node.contains(key)) {
        errors.add(context, std::string("missing '") + key + "'");
        return;
    }
    const std::string id = node.at(key).get<std::string>();
    bool found = false;
    if (std::string(table) == "sets") found = cfg.sets.count(id) > 0;
    if (std::string(table) == "time_grids") found = cfg.time_grids.count(id) > 0;
    if (std::string(table) == "spatial_grids") found = cfg.spatial_grids.count(id) > 0;
    if (std::string(table) == "functionals") found = cfg.functionals.count(id) > 0;
    if (std::string(table) == "sde_specs") found = cfg.sde_specs.count(id) > 0;
    if (std::string(table) == "integrands") found = cfg.integrands.count(id) > 0;
    if (!found)
        errors.add(context, std::string("unknown ") + table + " reference '" + id + "'");
}

inline void validate_controls(const Json& node, const ExperimentConfig& cfg,
                              const std::string& set_id, const std::string& context,
                              Collector& errors) {
    check_keys(node, {"constants", "pide_feedback"}, context, errors);
    const auto set_it = cfg.sets.find(set_id);
    const std::size_t n_triples = set_it != cfg.sets.end() ? set_it->second.triples.size() : 0;
    if (node.contains("constants")) {
        const auto& c = node.at("constants");
        if (c.is_string()) {
            if (c.get<std::string>() != "all")
                errors.add(context, "'constants' must be \"all\" or an index array");
        } else if (c.is_array()) {
            for (const auto& idx : c)
                if (idx.get<long>() < 0 || idx.get<long>() >= static_cast<long>(n_triples))
                    errors.add(context, "constant control index out of range");
        } else {
            errors.add(context, "'constants' must be \"all\" or an index array");
        }
    }
    if (node.contains("pide_feedback")) {
        const auto& fb = node.at("pide_feedback");
        check_keys(fb, {"spatial_grid", "steps"}, context + ".pide_feedback", errors);
        require_ref(cfg, fb, "spatial_grid", "spatial_grids", context + ".pide_feedback", errors);
        if (!fb.contains("steps")) errors.add(context + ".pide_feedback", "missing 'steps'");
    }
}

inline void validate_tolerance(const Json& node, const std::string& context, Collector& errors) {
    check_keys(node, {"sigma", "abs", "rel", "combine"}, context, errors);
    if (node.contains("combine")) {
        const std::string c = node.at("combine").get<std::string>();
        if (c != "sum" && c != "max") errors.add(context, "'combine' must be \"sum\" or \"max\"");
    }
}

inline void validate_event(const Json& node, const std::string& context, Collector& errors) {
    if (!node.contains("type")) {
        errors.add(context, "event needs a 'type'");
        return;
    }
    const std::string type = node.at("type").get<std::string>();
    if (type == "no_jump_by")
        check_keys(node, {"type", "time"}, context, errors);
    else if (type == "two_jumps_within")
        check_keys(node, {"type", "window"}, context, errors);
    else if (type == "never")
        check_keys(node, {"type"}, context, errors);
    else if (type == "at_least_jumps")
        check_keys(node, {"type", "count", "by"}, context, errors);
    else
        errors.add(context, "unknown event type '" + type + "'");
}

inline void validate_experiment(const Json& node, const ExperimentConfig& cfg, Collector& errors) {
    if (!node.contains("id") || !node.contains("kind")) {
        errors.add("experiment", "needs 'id' and 'kind'");
        return;
    }
    const std::string id = node.at("id").get<std::string>();
    const std::string kind = node.at("kind").get<std::string>();
    const std::string ctx = "experiment '" + id + "'";
    if (!kKinds.count(kind)) {
        errors.add(ctx, "unknown experiment kind '" + kind + "'");
        return;
    }
    if (!node.contains("seed")) errors.add(ctx, "missing explicit 'seed'");

    auto tol = [&](const char* key = "tolerance") {
        if (node.contains(key)) validate_tolerance(node.at(key), ctx + ".tolerance", errors);
    };

    if (kind == "expectation") {
        check_keys(node,
                   {"id", "kind", "seed", "set", "grid", "functional", "samples", "controls",
                    "method", "pide_grid", "pide_steps_per_unit", "expected", "tolerance",
                    "export_paths"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "functional", "functionals", ctx, errors);
        const std::string method =
            node.contains("method") ? node.at("method").get<std::string>() : "mc";
        if (method == "mc") {
            require_ref(cfg, node, "grid", "time_grids", ctx, errors);
            if (!node.contains("samples")) errors.add(ctx, "missing 'samples'");
            if (node.contains("controls"))
                validate_controls(node.at("controls"), cfg,
                                  node.contains("set") ? node.at("set").get<std::string>() : "",
                                  ctx + ".controls", errors);
        } else if (method == "cylinder") {
            require_ref(cfg, node, "pide_grid", "spatial_grids", ctx, errors);
            if (!node.contains("pide_steps_per_unit"))
                errors.add(ctx, "missing 'pide_steps_per_unit'");
        } else {
            errors.add(ctx, "method must be \"mc\" or \"cylinder\"");
        }
        tol();
    } else if (kind == "pide") {
        check_keys(node,
                   {"id", "kind", "seed", "set", "spatial_grid", "steps", "horizon", "payoff",
                    "convention", "eval", "expected", "tolerance"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "spatial_grid", "spatial_grids", ctx, errors);
        if (node.contains("payoff")) parse_payoff(node.at("payoff"), ctx + ".payoff", errors);
        else errors.add(ctx, "missing 'payoff'");
        if (!node.contains("steps")) errors.add(ctx, "missing 'steps'");
        tol();
    } else if (kind == "dpp") {
        check_keys(node,
                   {"id", "kind", "seed", "set", "spatial_grid", "steps", "horizon", "payoff",
                    "h", "panel", "samples", "sub_steps", "tolerance_c"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "spatial_grid", "spatial_grids", ctx, errors);
        if (node.contains("payoff")) parse_payoff(node.at("payoff"), ctx + ".payoff", errors);
        for (const char* key : {"steps", "h", "panel", "samples"})
            if (!node.contains(key)) errors.add(ctx, std::string("missing '") + key + "'");
    } else if (kind == "capacity") {
        check_keys(node,
                   {"id", "kind", "seed", "set", "grid", "event", "samples", "controls",
                    "expected", "compare", "tolerance"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        if (node.contains("event")) validate_event(node.at("event"), ctx + ".event", errors);
        else errors.add(ctx, "missing 'event'");
        if (node.contains("compare")) {
            const std::string c = node.at("compare").get<std::string>();
            if (c != "abs" && c != "le") errors.add(ctx, "compare must be \"abs\" or \"le\"");
        }
        tol();
    } else if (kind == "axioms") {
        check_keys(node,
                   {"id", "kind", "seed", "set", "grid", "samples", "functionals", "pairs",
                    "lambdas"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        if (!node.contains("pairs")) errors.add(ctx, "missing 'pairs'");
        if (node.contains("pairs"))
            for (const auto& pr : node.at("pairs")) {
                if (!pr.is_array() || pr.size() != 2) {
                    errors.add(ctx, "each pair must name two functionals");
                    continue;
                }
                for (const auto& f : pr)
                    if (!cfg.functionals.count(f.get<std::string>()))
                        errors.add(ctx, "unknown functional '" + f.get<std::string>() + "'");
            }
    } else if (kind == "ito-integral") {
        check_keys(node, {"id", "kind", "seed", "set", "grid", "integrand", "replicates",
                          "control_index", "tolerance"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        require_ref(cfg, node, "integrand", "integrands", ctx, errors);
    } else if (kind == "ito-formula") {
        check_keys(node, {"id", "kind", "seed", "set", "fixture", "steps", "seeds", "mode",
                          "tolerance_abs", "band"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "";
        if (mode != "exact" && mode != "halving")
            errors.add(ctx, "mode must be \"exact\" or \"halving\"");
        if (!node.contains("fixture")) errors.add(ctx, "missing 'fixture'");
        else {
            const std::string fx = node.at("fixture").get<std::string>();
            if (fx != "pure_jump_square" && fx != "affine_mixed" && fx != "drift_qv_square")
                errors.add(ctx, "unknown fixture '" + fx + "'");
        }
        if (!node.contains("steps")) errors.add(ctx, "missing 'steps'");
    } else if (kind == "continuity-bound") {
        check_keys(node, {"id", "kind", "seed", "sets", "grid", "samples", "corpus_size"},
                   ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        if (!node.contains("sets") || !node.at("sets").is_array() || node.at("sets").empty())
            errors.add(ctx, "needs a nonempty 'sets' array");
        else
            for (const auto& s : node.at("sets"))
                if (!cfg.sets.count(s.get<std::string>()))
                    errors.add(ctx, "unknown sets reference '" + s.get<std::string>() + "'");
        if (!node.contains("corpus_size")) errors.add(ctx, "missing 'corpus_size'");
    } else if (kind == "sde") {
        check_keys(node, {"id", "kind", "seed", "set", "grid", "spec", "mode", "y0", "samples",
                          "expected", "tolerance", "payoff", "min_order", "error_c"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        require_ref(cfg, node, "spec", "sde_specs", ctx, errors);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "";
        if (mode != "ode_error" && mode != "strong_order" && mode != "terminal_mean")
            errors.add(ctx, "mode must be ode_error, strong_order or terminal_mean");
        tol();
    } else if (kind == "picard") {
        check_keys(node, {"id", "kind", "seed", "set", "grid", "spec", "samples", "iterations",
                          "weight_c", "y0", "start", "second_start", "mode", "ratio_bound"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "grid", "time_grids", ctx, errors);
        require_ref(cfg, node, "spec", "sde_specs", ctx, errors);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "ratio";
        if (mode != "ratio" && mode != "uniqueness")
            errors.add(ctx, "mode must be \"ratio\" or \"uniqueness\"");
    } else if (kind == "bsde") {
        check_keys(node, {"id", "kind", "seed", "set", "spatial_grid", "steps", "horizon",
                          "terminal", "gen_ds", "gen_qv", "lipschitz", "mode", "eval", "expected",
                          "tolerance"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "spatial_grid", "spatial_grids", ctx, errors);
        if (node.contains("terminal")) parse_payoff(node.at("terminal"), ctx + ".terminal", errors);
        else errors.add(ctx, "missing 'terminal'");
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "";
        if (mode != "match_pide" && mode != "value")
            errors.add(ctx, "mode must be \"match_pide\" or \"value\"");
        tol();
    } else if (kind == "fbsde") {
        check_keys(node, {"id", "kind", "seed", "set", "spatial_grid", "steps", "horizon",
                          "terminal", "forward", "gen_ds", "gen_qv", "lipschitz", "sim_grid",
                          "samples", "sample_points", "recompute_h", "sub_steps", "tolerance_c",
                          "eval", "expected", "tolerance", "mode"},
                   ctx, errors);
        require_ref(cfg, node, "set", "sets", ctx, errors);
        require_ref(cfg, node, "spatial_grid", "spatial_grids", ctx, errors);
        require_ref(cfg, node, "sim_grid", "time_grids", ctx, errors);
        if (node.contains("terminal")) parse_payoff(node.at("terminal"), ctx + ".terminal", errors);
        else errors.add(ctx, "missing 'terminal'");
        if (node.contains("forward")) validate_sde_spec(node.at("forward"), ctx + ".forward", errors);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "recompute";
        if (mode != "recompute" && mode != "value")
            errors.add(ctx, "mode must be \"recompute\" or \"value\"");
        tol();
    }
}

}  // namespace cfg_detail

inline ExperimentConfig load_config_json(const Json& root) {
    cfg_detail::Collector errors;
    ExperimentConfig cfg;
    cfg_detail::check_keys(root,
                           {"output_dir", "wall_clock", "uncertainty_sets", "time_grids",
                            "spatial_grids", "functionals", "sde_specs", "integrands",
                            "experiments"},
                           "config", errors);
    if (root.contains("output_dir")) cfg.output_dir = root.at("output_dir").get<std::string>();
    if (root.contains("wall_clock")) cfg.wall_clock = root.at("wall_clock").get<bool>();

    if (root.contains("uncertainty_sets"))
        for (const auto& [id, node] : root.at("uncertainty_sets").items())
            cfg.sets[id] = cfg_detail::parse_uncertainty_set(node, "uncertainty_sets." + id, errors);

    if (root.contains("time_grids"))
        for (const auto& [id, node] : root.at("time_grids").items()) {
            cfg_detail::check_keys(node, {"t0", "T", "steps"}, "time_grids." + id, errors);
            TimeGrid g{cfg_detail::number_or(node, "t0", 0.0), cfg_detail::number_or(node, "T", 1.0),
                       node.contains("steps") ? node.at("steps").get<int>() : 1};
            if (!g.valid()) errors.add("time_grids." + id, "needs T > t0 and steps >= 1");
            cfg.time_grids[id] = g;
        }

    if (root.contains("spatial_grids"))
        for (const auto& [id, node] : root.at("spatial_grids").items()) {
            cfg_detail::check_keys(node, {"x_min", "x_max", "nodes"}, "spatial_grids." + id, errors);
            SpatialGrid g{cfg_detail::number_or(node, "x_min", -1.0),
                          cfg_detail::number_or(node, "x_max", 1.0),
                          node.contains("nodes") ? node.at("nodes").get<int>() : 3};
            if (!g.valid()) errors.add("spatial_grids." + id, "needs x_max > x_min and nodes >= 3");
            cfg.spatial_grids[id] = g;
        }

    if (root.contains("functionals"))
        for (const auto& [id, node] : root.at("functionals").items())
            cfg.functionals[id] = cfg_detail::parse_functional(id, node, cfg.functionals,
                                                               "functionals." + id, errors);

    if (root.contains("sde_specs"))
        for (const auto& [id, node] : root.at("sde_specs").items()) {
            cfg_detail::validate_sde_spec(node, "sde_specs." + id, errors);
            cfg.sde_specs[id] = node;
        }

    if (root.contains("integrands"))
        for (const auto& [id, node] : root.at("integrands").items()) {
            cfg_detail::validate_integrand(node, cfg, "integrands." + id, errors);
            cfg.integrands[id] = node;
        }

    if (root.contains("experiments")) {
        std::set<std::string> seen_ids;
        for (const auto& node : root.at("experiments")) {
            cfg_detail::validate_experiment(node, cfg, errors);
            if (node.contains("id")) {
                const std::string id = node.at("id").get<std::string>();
                if (!seen_ids.insert(id).second)
                    errors.add("experiment '" + id + "'", "duplicate experiment id");
            }
            cfg.experiments.push_back(node);
        }
    }

    errors.raise_if_any();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError({"cannot open config file: " + path});
    Json root;
    try {
        root = Json::parse(is, nullptr, true, true);  // with line info, allow comments
    } catch (const Json::parse_error& e) {
        throw ConfigError({std::string("parse error: ") + e.what()});
    }
    return load_config_json(root);
}

}  // namespace glevy
