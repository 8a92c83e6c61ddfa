#pragma once

#include <chrono>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "glevy/config.hpp"
#include "glevy/csv.hpp"

namespace glevy {

struct RunReport {
    struct Row {
        std::string id, kind;
        double value = 0.0;
        double std_error = 0.0;
        double tolerance = 0.0;
        bool pass = true;
        double seconds = 0.0;
        std::string detail_csv;  // empty when the kind has no detail table
        std::vector<std::pair<std::string, std::string>> extra_files;
    };
    std::vector<Row> rows;
    bool all_pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return true;
    }
};

namespace run_detail {

struct Tolerance {
    double sigma = 0.0;
    double abs = 0.0;
    double rel = 0.0;
    bool combine_max = false;
    double at(double se, double scale = 0.0) const {
        const double stat = sigma * se;
        const double det = abs + rel * std::abs(scale);
        return combine_max ? std::max(stat, det) : stat + det;
    }
};

inline Tolerance parse_tolerance(const Json& node) {
    Tolerance t;
    if (node.contains("tolerance")) {
        const auto& tol = node.at("tolerance");
        t.sigma = cfg_detail::number_or(tol, "sigma", 0.0);
        t.abs = cfg_detail::number_or(tol, "abs", 0.0);
        t.rel = cfg_detail::number_or(tol, "rel", 0.0);
        if (tol.contains("combine")) t.combine_max = tol.at("combine").get<std::string>() == "max";
    }
    return t;
}

inline std::vector<ControlPath> build_controls(const ExperimentConfig& cfg, const Json& node,
                                               const UncertaintySet& u, const TimeGrid& grid,
                                               const FunctionalDef* fdef) {
    std::vector<ControlPath> controls;
    bool all_constants = true;
    const Json* spec = node.contains("controls") ? &node.at("controls") : nullptr;
    if (spec && spec->contains("constants")) {
        const auto& c = spec->at("constants");
        if (c.is_array()) {
            all_constants = false;
            for (const auto& idx : c) {
                const int i = idx.get<int>();
                controls.push_back(ControlPath::constant(i, grid.steps,
                                                         "const_" + std::to_string(i)));
            }
        }
    }
    if (all_constants)
        for (std::size_t i = 0; i < u.triples.size(); ++i)
            controls.push_back(
                ControlPath::constant(static_cast<int>(i), grid.steps, "const_" + std::to_string(i)));
    if (spec && spec->contains("pide_feedback")) {
        if (!fdef || fdef->times.size() != 1 || fdef->increment != 0 ||
            !nearly_equal(fdef->times[0], grid.horizon))
            throw std::invalid_argument(
                "pide_feedback control needs a single-time terminal functional at the grid horizon");
        const auto& fb = spec->at("pide_feedback");
        const SpatialGrid& sg = cfg.spatial_grids.at(fb.at("spatial_grid").get<std::string>());
        const int steps = fb.at("steps").get<int>();
        const GridFunction sol =
            solve_pide(fdef->payoff, grid.horizon, sg, steps, u, TimeConvention::terminal);
        controls.push_back(feedback_from_argmax(sol));
    }
    return controls;
}

inline EventPredicate build_event(const Json& node) {
    const std::string type = node.at("type").get<std::string>();
    if (type == "no_jump_by") {
        const double t = node.at("time").get<double>();
        return {"no_jump_by", [t](const ScenarioPath& p) {
                    for (const auto& j : p.jumps)
                        if (j.real() && j.time <= t) return false;
                    return true;
                }};
    }
    if (type == "two_jumps_within") {
        const double w = node.at("window").get<double>();
        return {"two_jumps_within", [w](const ScenarioPath& p) {
                    double prev = -1e300;
                    for (const auto& j : p.jumps) {
                        if (!j.real()) continue;
                        if (j.time - prev < w) return true;
                        prev = j.time;
                    }
                    return false;
                }};
    }
    if (type == "at_least_jumps") {
        const long count = node.at("count").get<long>();
        const double by = cfg_detail::number_or(node, "by", 1e300);
        return {"at_least_jumps", [count, by](const ScenarioPath& p) {
                    long n = 0;
                    for (const auto& j : p.jumps)
                        if (j.real() && j.time <= by) ++n;
                    return n >= count;
                }};
    }
    return {"never", [](const ScenarioPath&) { return false; }};
}

inline ScalarFn build_scalar_coef(const Json& node) {
    const std::string type = node.at("type").get<std::string>();
    if (type == "zero") return nullptr;
    if (type == "constant") {
        const double v = node.at("value").get<double>();
        return [v](double) { return v; };
    }
    if (type == "linear") {
        const double r = node.at("rate").get<double>();
        return [r](double y) { return r * y; };
    }
    if (type == "affine") {
        const double r = cfg_detail::number_or(node, "rate", 0.0);
        const double s = cfg_detail::number_or(node, "shift", 0.0);
        return [r, s](double y) { return r * y + s; };
    }
    if (type == "table") {
        std::vector<double> xs, ys;
        for (const auto& x : node.at("xs")) xs.push_back(x.get<double>());
        for (const auto& y : node.at("ys")) ys.push_back(y.get<double>());
        return [xs, ys](double v) {
            if (v <= xs.front()) return ys.front();
            if (v >= xs.back()) return ys.back();
            const auto it = std::upper_bound(xs.begin(), xs.end(), v);
            const std::size_t j = static_cast<std::size_t>(it - xs.begin());
            const double w = (v - xs[j - 1]) / (xs[j] - xs[j - 1]);
            return ys[j - 1] * (1.0 - w) + ys[j] * w;
        };
    }
    throw std::invalid_argument("unsupported scalar coefficient type '" + type + "'");
}

inline SdeSpec build_sde_spec(const Json& node) {
    SdeSpec s;
    const double lip = cfg_detail::number_or(node, "lipschitz", 1.0);
    s.lipschitz = {lip, lip, lip, lip};
    if (node.contains("b")) {
        if (auto f = build_scalar_coef(node.at("b")))
            s.drift = [f](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
    }
    if (node.contains("h")) {
        if (auto f = build_scalar_coef(node.at("h")))
            s.qv_coef = [f](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
    }
    if (node.contains("sigma")) {
        if (auto f = build_scalar_coef(node.at("sigma")))
            s.diffusion = [f](double, std::span<const double> y, std::span<double> out) {
                out[0] = f(y[0]);
            };
    }
    if (node.contains("K")) {
        const auto& k = node.at("K");
        const std::string type = k.at("type").get<std::string>();
        const double scale = cfg_detail::number_or(k, "scale", 1.0);
        if (type == "state")
            s.jump = [scale](double, std::span<const double> y, std::span<const double>,
                             std::span<double> out) { out[0] = scale * y[0]; };
        else if (type == "z")
            s.jump = [scale](double, std::span<const double>, std::span<const double> z,
                             std::span<double> out) { out[0] = scale * z[0]; };
        else if (type != "zero")
            throw std::invalid_argument("unsupported jump coefficient type '" + type + "'");
    }
    return s;
}

inline std::function<double(double, double)> build_gen(const Json& node, const char* key) {
    if (!node.contains(key)) return nullptr;
    const auto& g = node.at(key);
    const std::string type = g.at("type").get<std::string>();
    if (type == "zero") return nullptr;
    if (type == "constant") {
        const double v = g.at("value").get<double>();
        return [v](double, double) { return v; };
    }
    if (type == "linear") {
        const double r = g.at("rate").get<double>();
        return [r](double, double y) { return r * y; };
    }
    throw std::invalid_argument(std::string("unsupported generator type for '") + key + "'");
}

inline SimpleIntegrand build_integrand(const std::string& id, const Json& node,
                                       const ExperimentConfig& cfg) {
    SimpleIntegrand K;
    K.id = id;
    for (const auto& t : node.at("partition")) K.partition.push_back(t.get<double>());
    for (const auto& k : node.at("kernels")) {
        const std::string type = k.at("type").get<std::string>();
        const double scale = cfg_detail::number_or(k, "scale", 1.0);
        if (type == "identity") {
            K.kernels.push_back({[scale](std::span<const double> z) { return scale * z[0]; }});
        } else if (type == "square") {
            K.kernels.push_back({[scale](std::span<const double> z) { return scale * z[0] * z[0]; }});
        } else {
            const double c = cfg_detail::number_or(k, "center", 1.0);
            const double w = cfg_detail::number_or(k, "halfwidth", 0.5);
            K.kernels.push_back({[scale, c, w](std::span<const double> z) {
                return scale * std::max(0.0, 1.0 - std::abs(z[0] - c) / w);
            }});
        }
    }
    for (const auto& row : node.at("coeffs")) {
        std::vector<CylinderFunctional> cell;
        for (const auto& c : row) {
            if (c.is_string()) {
                cell.push_back(cfg.functionals.at(c.get<std::string>()).build());
            } else {
                CylinderFunctional f = CylinderFunctional::constant(c.at("constant").get<double>(), 0.0);
                f.times.clear();
                cell.push_back(std::move(f));
            }
        }
        K.coeffs.push_back(std::move(cell));
    }
    return K;
}

// randomized corpus shared by the continuity-bound experiment: bump kernels
// with disjoint supports over a two-cell partition, capped path coefficients
inline SimpleIntegrand corpus_integrand(int index, std::uint64_t master_seed, const TimeGrid& grid) {
    Rng gen(mix64(master_seed ^ mix64(static_cast<std::uint64_t>(index))));
    const double mid =
        std::round((0.2 + 0.6 * gen.uniform01()) * grid.steps) / grid.steps * (grid.horizon - grid.t0) +
        grid.t0;
    const double a1 = 2.0 * gen.uniform01() - 1.0;
    const double a2 = 2.0 * gen.uniform01() - 1.0;
    const double center = gen.uniform01() > 0.5 ? 1.0 : -0.5;
    SimpleIntegrand K;
    K.id = "corpus_" + std::to_string(index);
    K.partition = {grid.t0, mid, grid.horizon};
    K.kernels.push_back({[center, a1](std::span<const double> z) {
        return a1 * std::max(0.0, 1.0 - std::abs(z[0] - center) / 0.4);
    }});
    CylinderFunctional c1 = CylinderFunctional::constant(1.0, grid.t0);
    c1.times.clear();
    CylinderFunctional c2 = CylinderFunctional::terminal(
        {mid}, [a2](double x) { return std::clamp(a2 * x, -2.0, 2.0); }, 2.0, std::abs(a2), "coef");
    K.coeffs.push_back({c1});
    K.coeffs.push_back({c2});
    return K;
}

inline ItoLevyComponents build_fixture(const std::string& fixture, double horizon) {
    auto constant_process = [horizon](ElementaryProcess::Space space, double v) {
        ElementaryProcess e;
        e.space = space;
        e.dimension = 1;
        e.times = {0.0, horizon};
        CylinderFunctional c = CylinderFunctional::constant(v, 0.0);
        c.times.clear();
        e.coeffs.push_back({c});
        return e;
    };
    ItoLevyComponents comps;
    comps.m = 1;
    comps.d = 1;
    comps.y0 = {0.0};
    if (fixture == "pure_jump_square") {
        comps.jump.push_back(
            [](double, std::span<const double> z, const ScenarioPath&) { return z[0]; });
    } else if (fixture == "affine_mixed") {
        comps.y0 = {0.4};
        comps.alpha.push_back(constant_process(ElementaryProcess::Space::scalar, 0.7));
        comps.beta.push_back(constant_process(ElementaryProcess::Space::matrix, 0.3));
        comps.zvec.push_back(constant_process(ElementaryProcess::Space::vector, 1.2));
        comps.jump.push_back(
            [](double, std::span<const double> z, const ScenarioPath&) { return 0.5 * z[0]; });
    } else {  // drift_qv_square
        comps.y0 = {0.2};
        comps.alpha.push_back(constant_process(ElementaryProcess::Space::scalar, 0.9));
        comps.beta.push_back(constant_process(ElementaryProcess::Space::matrix, 0.4));
    }
    return comps;
}

inline SmoothFunction fixture_function(const std::string& fixture) {
    SmoothFunction f;
    if (fixture == "affine_mixed") {
        f.f = [](std::span<const double> y) { return 1.7 * y[0] - 0.3; };
        f.grad = [](std::span<const double>, std::span<double> g) { g[0] = 1.7; };
        f.hess = [](std::span<const double>, std::span<double> h) { h[0] = 0.0; };
    } else {
        f.f = [](std::span<const double> y) { return y[0] * y[0]; };
        f.grad = [](std::span<const double> y, std::span<double> g) { g[0] = 2.0 * y[0]; };
        f.hess = [](std::span<const double>, std::span<double> h) { h[0] = 2.0; };
    }
    return f;
}

}  // namespace run_detail

inline RunReport::Row run_experiment(const ExperimentConfig& cfg, const Json& node, int workers) {
    using namespace run_detail;
    RunReport::Row row;
    row.id = node.at("id").get<std::string>();
    row.kind = node.at("kind").get<std::string>();
    const std::uint64_t seed = node.at("seed").get<std::uint64_t>();
    const Tolerance tol = parse_tolerance(node);

    auto set_of = [&]() -> const UncertaintySet& { return cfg.sets.at(node.at("set").get<std::string>()); };
    auto grid_of = [&]() { return cfg.time_grids.at(node.at("grid").get<std::string>()); };
    auto sgrid_of = [&]() { return cfg.spatial_grids.at(node.at("spatial_grid").get<std::string>()); };

    auto grade_abs = [&](double value, double se) {
        row.value = value;
        row.std_error = se;
        if (node.contains("expected")) {
            const double expected = node.at("expected").get<double>();
            row.tolerance = tol.at(se, expected);
            const std::string compare =
                node.contains("compare") ? node.at("compare").get<std::string>() : "abs";
            row.pass = compare == "le" ? value <= expected + row.tolerance
                                       : std::abs(value - expected) <= row.tolerance;
        }
    };

    if (row.kind == "expectation") {
        const auto& u = set_of();
        const auto& fdef = cfg.functionals.at(node.at("functional").get<std::string>());
        const std::string method =
            node.contains("method") ? node.at("method").get<std::string>() : "mc";
        if (method == "cylinder") {
            PideConfig pc{cfg.spatial_grids.at(node.at("pide_grid").get<std::string>()),
                          node.at("pide_steps_per_unit").get<int>()};
            grade_abs(evaluate_cylinder(fdef.build(), u, pc), 0.0);
        } else {
            const TimeGrid grid = grid_of();
            const long samples = node.at("samples").get<long>();
            const auto controls = build_controls(cfg, node, u, grid, &fdef);
            const CylinderFunctional xi = fdef.build();
            PathFunctional pf = [&xi](const ScenarioPath& p) { return evaluate_on_path(xi, p); };
            const auto stats =
                sub_detail::upper_batch({pf}, u, controls, grid, samples, seed, workers);
            const Estimate est = sub_detail::to_estimate(stats[0], controls, samples, seed);
            grade_abs(est.value, est.std_error);

            CsvBuilder detail;
            detail.cell("experiment").cell("functional").cell("control").cell("value")
                .cell("std_error").cell("samples").cell("seed").endrow();
            for (std::size_t c = 0; c < controls.size(); ++c) {
                const auto& s = stats[0].per_control[c];
                detail.cell(row.id).cell(fdef.id).cell(controls[c].id).cell(s.mean)
                    .cell(s.std_error).cell(samples).cell(static_cast<long>(seed)).endrow();
            }
            row.detail_csv = detail.str();

            if (node.contains("export_paths")) {
                const int n_paths = node.at("export_paths").get<int>();
                const auto maps = transport_maps(u);
                const auto& ctrl = controls[static_cast<std::size_t>(est.argmax_index)];
                ScenarioPath path;
                for (int r = 0; r < n_paths; ++r) {
                    Rng rng = replicate_stream(seed, static_cast<std::uint64_t>(r));
                    const DriverNoise noise = draw_noise(grid, u.dimension, rng);
                    simulate_into(path, u, maps, ctrl, grid, noise, seed);
                    std::ostringstream os;
                    write_path_csv(path, os);
                    row.extra_files.emplace_back(row.id + "_path_" + std::to_string(r) + ".csv",
                                                 os.str());
                }
            }
        }
    } else if (row.kind == "pide") {
        const auto& u = set_of();
        const SpatialGrid sgrid = sgrid_of();
        const int steps = node.at("steps").get<int>();
        const double horizon = cfg_detail::number_or(node, "horizon", 1.0);
        cfg_detail::Collector scratch;
        const ScalarFn payoff = cfg_detail::parse_payoff(node.at("payoff"), "payoff", scratch);
        const TimeConvention convention =
            node.contains("convention") && node.at("convention").get<std::string>() == "terminal"
                ? TimeConvention::terminal
                : TimeConvention::initial;
        const GridFunction sol = solve_pide(payoff, horizon, sgrid, steps, u, convention, workers);
        const double eval_t = node.contains("eval")
                                  ? cfg_detail::number_or(node.at("eval"), "t", horizon)
                                  : (convention == TimeConvention::initial ? horizon : 0.0);
        const double eval_x =
            node.contains("eval") ? cfg_detail::number_or(node.at("eval"), "x", 0.0) : 0.0;
        grade_abs(sol.at(eval_t, eval_x), 0.0);

        CsvBuilder detail;
        detail.cell("t").cell("x").cell("u").cell("argmax_triple").endrow();
        for (int k = 0; k <= sol.time_steps; ++k)
            for (int j = 0; j < sgrid.nodes; ++j)
                detail.cell(sol.level_time(k))
                    .cell(sgrid.x(j))
                    .cell(sol.level(k)[static_cast<std::size_t>(j)])
                    .cell(k > 0 ? sol.argmax_at(k - 1, j) : -1)
                    .endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "dpp") {
        const auto& u = set_of();
        const SpatialGrid sgrid = sgrid_of();
        const int steps = node.at("steps").get<int>();
        const double horizon = cfg_detail::number_or(node, "horizon", 1.0);
        cfg_detail::Collector scratch;
        const ScalarFn payoff = cfg_detail::parse_payoff(node.at("payoff"), "payoff", scratch);
        const GridFunction sol =
            solve_pide(payoff, horizon, sgrid, steps, u, TimeConvention::terminal, workers);
        std::vector<ControlPath> controls;
        for (std::size_t i = 0; i < u.triples.size(); ++i)
            controls.push_back(ControlPath::constant(static_cast<int>(i), 1));
        std::vector<std::pair<double, double>> panel;
        for (const auto& p : node.at("panel"))
            panel.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        const auto rep = check_dpp(sol, node.at("h").get<double>(), u, controls, panel,
                                   node.at("samples").get<long>(), seed,
                                   node.contains("sub_steps") ? node.at("sub_steps").get<int>() : 8,
                                   cfg_detail::number_or(node, "tolerance_c", 1.0));
        row.value = rep.max_residual;
        row.std_error = rep.max_std_error;
        row.tolerance = rep.tolerance;
        row.pass = rep.pass;
        CsvBuilder detail;
        detail.cell("t").cell("x").cell("lhs").cell("rhs").cell("residual").cell("std_error").endrow();
        for (const auto& r : rep.rows)
            detail.cell(r.t).cell(r.x).cell(r.lhs).cell(r.rhs).cell(r.residual).cell(r.std_error).endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "capacity") {
        const auto& u = set_of();
        const TimeGrid grid = grid_of();
        const auto controls = build_controls(cfg, node, u, grid, nullptr);
        const EventPredicate event = build_event(node.at("event"));
        const Estimate est = estimate_capacity(event, u, controls, grid,
                                               node.at("samples").get<long>(), seed, workers);
        grade_abs(est.value, est.std_error);
        CsvBuilder detail;
        detail.cell("event").cell("argmax_control").cell("value").cell("std_error").endrow();
        detail.cell(event.id).cell(est.argmax_control).cell(est.value).cell(est.std_error).endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "axioms") {
        const auto& u = set_of();
        const TimeGrid grid = grid_of();
        std::vector<ControlPath> controls;
        for (std::size_t i = 0; i < u.triples.size(); ++i)
            controls.push_back(ControlPath::constant(static_cast<int>(i), grid.steps));
        std::vector<std::pair<CylinderFunctional, CylinderFunctional>> pairs;
        for (const auto& pr : node.at("pairs"))
            pairs.emplace_back(cfg.functionals.at(pr.at(0).get<std::string>()).build(),
                               cfg.functionals.at(pr.at(1).get<std::string>()).build());
        std::vector<double> lambdas;
        if (node.contains("lambdas"))
            for (const auto& l : node.at("lambdas")) lambdas.push_back(l.get<double>());
        const auto rep = axiom_check(pairs, lambdas, u, controls, grid,
                                     node.at("samples").get<long>(), seed, workers);
        row.value = rep.failures;
        row.tolerance = 0.0;
        row.pass = rep.all_pass();
        CsvBuilder detail;
        detail.cell("x").cell("y").cell("lambda").cell("est_x").cell("est_y").cell("est_diff")
            .cell("est_scaled").cell("monotone_applicable").cell("monotone_pass")
            .cell("constant_applicable").cell("constant_pass").cell("subadditive_pass")
            .cell("homogeneous_pass").endrow();
        for (const auto& p : rep.pairs)
            detail.cell(p.x_id).cell(p.y_id).cell(p.lambda).cell(p.est_x).cell(p.est_y)
                .cell(p.est_diff).cell(p.est_scaled).cell(p.monotone_applicable)
                .cell(p.monotone_pass).cell(p.constant_applicable).cell(p.constant_pass)
                .cell(p.subadditive_pass).cell(p.homogeneous_pass).endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "ito-integral") {
        const auto& u = set_of();
        const TimeGrid grid = grid_of();
        const auto K = build_integrand(node.at("integrand").get<std::string>(),
                                       cfg.integrands.at(node.at("integrand").get<std::string>()), cfg);
        const int control_index =
            node.contains("control_index") ? node.at("control_index").get<int>() : 0;
        const long replicates =
            node.contains("replicates") ? node.at("replicates").get<long>() : 100;
        const auto maps = transport_maps(u);
        const auto control = ControlPath::constant(control_index, grid.steps);
        const double mid = grid.node(grid.steps / 2);
        double worst = 0.0;
        ScenarioPath path;
        CsvBuilder detail;
        detail.cell("replicate").cell("integral").cell("oracle").cell("difference").endrow();
        for (long r = 0; r < replicates; ++r) {
            Rng rng = replicate_stream(seed, static_cast<std::uint64_t>(r));
            const DriverNoise noise = draw_noise(grid, u.dimension, rng);
            simulate_into(path, u, maps, control, grid, noise, seed);
            const double lib = ito_jump_integral(K, path, grid.t0, grid.horizon);
            // independent direct re-walk of the ledger
            double oracle = 0.0;
            for (const auto& j : path.jumps)
                if (j.real() && j.time > grid.t0 && j.time <= grid.horizon)
                    oracle += K.eval(j.time, j.size, path);
            const double additivity = std::abs(lib - ito_jump_integral(K, path, grid.t0, mid) -
                                               ito_jump_integral(K, path, mid, grid.horizon));
            worst = std::max({worst, std::abs(lib - oracle), additivity});
            detail.cell(r).cell(lib).cell(oracle).cell(std::abs(lib - oracle)).endrow();
        }
        row.value = worst;
        row.tolerance = tol.abs > 0.0 ? tol.abs : 1e-12;
        row.pass = worst <= row.tolerance;
        row.detail_csv = detail.str();
    } else if (row.kind == "ito-formula") {
        const auto& u = set_of();
        const std::string fixture = node.at("fixture").get<std::string>();
        const std::string mode = node.at("mode").get<std::string>();
        const int steps = node.at("steps").get<int>();
        const int seeds = node.contains("seeds") ? node.at("seeds").get<int>() : 100;
        const SmoothFunction fn = fixture_function(fixture);
        auto rms_at = [&](int n_steps) {
            const TimeGrid grid{0.0, 1.0, n_steps};
            const ItoLevyComponents comps = build_fixture(fixture, 1.0);
            const auto control = ControlPath::constant(0, n_steps);
            const auto maps = transport_maps(u);
            double acc = 0.0, worst = 0.0;
            ScenarioPath path;
            for (int r = 0; r < seeds; ++r) {
                Rng rng = replicate_stream(seed, static_cast<std::uint64_t>(r));
                const DriverNoise noise = draw_noise(grid, u.dimension, rng);
                simulate_into(path, u, maps, control, grid, noise, seed);
                const double res = ito_formula_residual(fn, comps, path);
                acc += res * res;
                worst = std::max(worst, res);
            }
            return std::pair<double, double>(std::sqrt(acc / seeds), worst);
        };
        CsvBuilder detail;
        detail.cell("steps").cell("rms_residual").cell("max_residual").endrow();
        if (mode == "exact") {
            const auto [rms, worst] = rms_at(steps);
            detail.cell(steps).cell(rms).cell(worst).endrow();
            row.value = worst;
            row.tolerance = cfg_detail::number_or(node, "tolerance_abs", 1e-10);
            row.pass = worst <= row.tolerance;
        } else {
            const auto [coarse, cw] = rms_at(steps);
            const auto [fine, fw] = rms_at(2 * steps);
            detail.cell(steps).cell(coarse).cell(cw).endrow();
            detail.cell(2 * steps).cell(fine).cell(fw).endrow();
            const double ratio = fine / coarse;
            row.value = ratio;
            const double lo = node.contains("band") ? node.at("band").at(0).get<double>() : 0.375;
            const double hi = node.contains("band") ? node.at("band").at(1).get<double>() : 0.625;
            row.tolerance = hi;
            row.pass = ratio >= lo && ratio <= hi;
        }
        row.detail_csv = detail.str();
    } else if (row.kind == "continuity-bound") {
        const TimeGrid grid = grid_of();
        const long samples = node.at("samples").get<long>();
        const int corpus_size = node.at("corpus_size").get<int>();
        long violations = 0;
        CsvBuilder detail;
        detail.cell("integrand").cell("set").cell("lhs").cell("lhs_std_error").cell("norm_sq")
            .cell("rhs").cell("slack").cell("pass").endrow();
        for (int i = 0; i < corpus_size; ++i) {
            const SimpleIntegrand K = corpus_integrand(i, seed, grid);
            for (const auto& set_id : node.at("sets")) {
                const auto& u = cfg.sets.at(set_id.get<std::string>());
                std::vector<ControlPath> controls;
                for (std::size_t c = 0; c < u.triples.size(); ++c)
                    controls.push_back(ControlPath::constant(static_cast<int>(c), grid.steps));
                const auto res = continuity_bound_check(
                    K, u, controls, grid, samples, mix64(seed ^ static_cast<std::uint64_t>(i)),
                    workers);
                if (!res.pass) ++violations;
                detail.cell(K.id).cell(set_id.get<std::string>()).cell(res.lhs)
                    .cell(res.lhs_std_error).cell(res.norm_sq).cell(res.rhs).cell(res.slack)
                    .cell(res.pass).endrow();
            }
        }
        row.value = static_cast<double>(violations);
        row.tolerance = 0.0;
        row.pass = violations == 0;
        row.detail_csv = detail.str();
    } else if (row.kind == "sde") {
        const auto& u = set_of();
        const TimeGrid grid = grid_of();
        const SdeSpec spec = build_sde_spec(cfg.sde_specs.at(node.at("spec").get<std::string>()));
        const double y0 = cfg_detail::number_or(node, "y0", 1.0);
        const std::string mode = node.at("mode").get<std::string>();
        if (mode == "ode_error") {
            const auto path = simulate(u, ControlPath::constant(0, grid.steps), grid, seed);
            const auto y = euler_sde(spec, std::span<const double>(&y0, 1), path);
            const double expected = node.at("expected").get<double>();
            row.value = std::abs(y.back() - expected);
            row.tolerance = cfg_detail::number_or(node, "error_c", 1.0) * grid.dt();
            row.pass = row.value <= row.tolerance;
        } else if (mode == "strong_order") {
            const double expected = node.at("expected").get<double>();
            auto error_at = [&](int steps) {
                const TimeGrid g{grid.t0, grid.horizon, steps};
                const auto path = simulate(u, ControlPath::constant(0, steps), g, seed);
                const auto y = euler_sde(spec, std::span<const double>(&y0, 1), path);
                return std::abs(y.back() - expected);
            };
            const double coarse = error_at(grid.steps);
            const double fine = error_at(2 * grid.steps);
            row.value = std::log2(coarse / fine);
            row.tolerance = cfg_detail::number_or(node, "min_order", 0.8);
            row.pass = row.value >= row.tolerance;
            CsvBuilder detail;
            detail.cell("steps").cell("error").endrow();
            detail.cell(grid.steps).cell(coarse).endrow();
            detail.cell(2 * grid.steps).cell(fine).endrow();
            row.detail_csv = detail.str();
        } else {  // terminal_mean
            cfg_detail::Collector scratch;
            const ScalarFn payoff = node.contains("payoff")
                                        ? cfg_detail::parse_payoff(node.at("payoff"), "payoff", scratch)
                                        : ScalarFn([](double y) { return y; });
            std::vector<ControlPath> controls;
            for (std::size_t i = 0; i < u.triples.size(); ++i)
                controls.push_back(ControlPath::constant(static_cast<int>(i), grid.steps));
            const auto est = sde_upper_expectation(
                spec, std::span<const double>(&y0, 1),
                [&payoff](std::span<const double> y) { return payoff(y[0]); }, u, controls, grid,
                node.at("samples").get<long>(), seed, workers);
            grade_abs(est.value, est.std_error);
        }
    } else if (row.kind == "picard") {
        const auto& u = set_of();
        const TimeGrid grid = grid_of();
        const SdeSpec spec = build_sde_spec(cfg.sde_specs.at(node.at("spec").get<std::string>()));
        const double y0 = cfg_detail::number_or(node, "y0", 1.0);
        PicardOptions opts;
        opts.weight_c = cfg_detail::number_or(node, "weight_c", 2.0);
        if (node.contains("start")) opts.start = Vec{node.at("start").get<double>()};
        if (node.contains("second_start"))
            opts.second_start = Vec{node.at("second_start").get<double>()};
        std::vector<ControlPath> controls;
        for (std::size_t i = 0; i < u.triples.size(); ++i)
            controls.push_back(ControlPath::constant(static_cast<int>(i), grid.steps));
        const auto diag = picard_sde(spec, std::span<const double>(&y0, 1), u, controls, grid,
                                     node.at("samples").get<long>(),
                                     node.contains("iterations") ? node.at("iterations").get<int>() : 6,
                                     seed, opts);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "ratio";
        if (mode == "uniqueness") {
            row.value = diag.cross_gap;
            row.tolerance = 2.0 * (diag.last_distance + diag.last_distance_b) + kDeterministicTol;
            row.pass = diag.cross_gap <= row.tolerance;
        } else {
            double worst_ratio = 0.0;
            for (std::size_t k = 1; k < diag.rows.size(); ++k) {
                if (diag.rows[k - 1].distance <= 1e-24) break;
                worst_ratio = std::max(worst_ratio, diag.rows[k].ratio);
            }
            row.value = worst_ratio;
            row.tolerance = cfg_detail::number_or(node, "ratio_bound", 0.5);
            row.pass = !diag.diverged && worst_ratio <= row.tolerance;
        }
        CsvBuilder detail;
        detail.cell("k").cell("distance").cell("ratio").endrow();
        for (const auto& r : diag.rows) detail.cell(r.k).cell(r.distance).cell(r.ratio).endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "bsde") {
        const auto& u = set_of();
        const SpatialGrid sgrid = sgrid_of();
        const int steps = node.at("steps").get<int>();
        cfg_detail::Collector scratch;
        BsdeSpec spec;
        spec.terminal = cfg_detail::parse_payoff(node.at("terminal"), "terminal", scratch);
        spec.gen_ds = build_gen(node, "gen_ds");
        spec.gen_qv = build_gen(node, "gen_qv");
        spec.horizon = cfg_detail::number_or(node, "horizon", 1.0);
        spec.lipschitz_ds = spec.gen_ds ? cfg_detail::number_or(node, "lipschitz", 1.0) : 0.0;
        spec.lipschitz_qv = spec.gen_qv ? cfg_detail::number_or(node, "lipschitz", 1.0) : 0.0;
        const GridFunction sol = solve_bsde(spec, u, sgrid, steps, workers);
        const std::string mode = node.at("mode").get<std::string>();
        if (mode == "match_pide") {
            const GridFunction ref = solve_pide(spec.terminal, spec.horizon, sgrid, steps, u,
                                                TimeConvention::terminal, workers);
            double worst = 0.0;
            for (std::size_t i = 0; i < sol.values.size(); ++i)
                worst = std::max(worst, std::abs(sol.values[i] - ref.values[i]));
            row.value = worst;
            row.tolerance = tol.abs > 0.0 ? tol.abs : 1e-10;
            row.pass = worst <= row.tolerance;
        } else {
            const double eval_t = cfg_detail::number_or(node.at("eval"), "t", 0.0);
            const double eval_x = cfg_detail::number_or(node.at("eval"), "x", 0.0);
            grade_abs(sol.at(eval_t, eval_x), 0.0);
        }
        CsvBuilder detail;
        detail.cell("t").cell("x").cell("y").cell("argmax_triple").endrow();
        for (int k = 0; k <= sol.time_steps; ++k)
            for (int j = 0; j < sgrid.nodes; ++j)
                detail.cell(sol.level_time(k)).cell(sgrid.x(j))
                    .cell(sol.level(k)[static_cast<std::size_t>(j)])
                    .cell(k > 0 ? sol.argmax_at(k - 1, j) : -1).endrow();
        row.detail_csv = detail.str();
    } else if (row.kind == "fbsde") {
        const auto& u = set_of();
        const SpatialGrid sgrid = sgrid_of();
        cfg_detail::Collector scratch;
        FbsdeSpec spec;
        spec.terminal = cfg_detail::parse_payoff(node.at("terminal"), "terminal", scratch);
        spec.horizon = cfg_detail::number_or(node, "horizon", 1.0);
        spec.lipschitz = cfg_detail::number_or(node, "lipschitz", 1.0);
        if (node.contains("forward")) {
            const auto& fwd = node.at("forward");
            if (fwd.contains("b")) spec.fwd_drift = build_scalar_coef(fwd.at("b"));
            if (fwd.contains("h")) spec.fwd_qv = build_scalar_coef(fwd.at("h"));
            if (fwd.contains("sigma")) spec.fwd_diff = build_scalar_coef(fwd.at("sigma"));
            if (fwd.contains("K")) {
                const auto& k = fwd.at("K");
                const std::string type = k.at("type").get<std::string>();
                const double scale = cfg_detail::number_or(k, "scale", 1.0);
                if (type == "z")
                    spec.fwd_jump = [scale](double, double z) { return scale * z; };
                else if (type == "state")
                    spec.fwd_jump = [scale](double x, double) { return scale * x; };
            }
        }
        if (!spec.fwd_jump) spec.fwd_jump = [](double, double z) { return z; };
        spec.gen_ds = build_gen(node, "gen_ds");
        spec.gen_qv = build_gen(node, "gen_qv");
        FbsdeOptions opts;
        opts.sim_grid = cfg.time_grids.at(node.at("sim_grid").get<std::string>());
        opts.samples = node.at("samples").get<long>();
        opts.seed = seed;
        opts.sample_points = cfg_detail::number_or(node, "sample_points", 20);
        opts.recompute_h = cfg_detail::number_or(node, "recompute_h", 0.125);
        opts.recompute_sub_steps = cfg_detail::number_or(node, "sub_steps", 8);
        opts.tolerance_c = cfg_detail::number_or(node, "tolerance_c", 1.0);
        std::vector<ControlPath> controls;
        for (std::size_t i = 0; i < u.triples.size(); ++i)
            controls.push_back(ControlPath::constant(static_cast<int>(i), opts.sim_grid.steps));
        const auto res = solve_fbsde(spec, u, sgrid, node.at("steps").get<int>(), controls, opts);
        const std::string mode = node.contains("mode") ? node.at("mode").get<std::string>() : "recompute";
        if (mode == "value") {
            const double eval_t = cfg_detail::number_or(node.at("eval"), "t", 0.0);
            const double eval_x = cfg_detail::number_or(node.at("eval"), "x", 0.0);
            grade_abs(res.value.at(eval_t, eval_x), 0.0);
        } else {
            row.value = res.max_residual;
            row.tolerance = res.tolerance;
            row.pass = res.pass;
        }
        CsvBuilder detail;
        detail.cell("s").cell("x").cell("y_grid").cell("y_recomputed").cell("std_error")
            .cell("residual").endrow();
        for (const auto& s : res.samples)
            detail.cell(s.s).cell(s.x).cell(s.y_grid).cell(s.y_recomputed).cell(s.std_error)
                .cell(s.residual).endrow();
        row.detail_csv = detail.str();
    }
    return row;
}

// Executes experiments in declared order. Identical (config, seeds) produce
// identical reports; wall time enters the report only when the config asks
// for it.
inline RunReport run(const ExperimentConfig& cfg, int workers = 1,
                     const std::string& only_id = {}) {
    RunReport report;
    for (const auto& node : cfg.experiments) {
        const std::string id = node.at("id").get<std::string>();
        if (!only_id.empty() && id != only_id) continue;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            report.rows.push_back(run_experiment(cfg, node, workers));
        } catch (const std::exception& e) {
            throw std::runtime_error("experiment '" + id + "': " + e.what());
        }
        if (cfg.wall_clock) {
            const auto t1 = std::chrono::steady_clock::now();
            report.rows.back().seconds = std::chrono::duration<double>(t1 - t0).count();
        }
    }
    return report;
}

// Writes summary.csv plus one detail file per experiment that produced one.
inline std::vector<std::filesystem::path> emit_csv(const RunReport& report,
                                                   const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<fs::path> written;

    CsvBuilder summary;
    summary.cell("experiment_id").cell("kind").cell("value").cell("std_error").cell("tolerance")
        .cell("pass").cell("seconds").endrow();
    for (const auto& row : report.rows)
        summary.cell(row.id).cell(row.kind).cell(row.value).cell(row.std_error)
            .cell(row.tolerance).cell(row.pass).cell(row.seconds).endrow();
    const fs::path summary_path = fs::path(dir) / "summary.csv";
    write_text_file(summary_path, summary.str());
    written.push_back(summary_path);

    for (const auto& row : report.rows) {
        if (!row.detail_csv.empty()) {
            const fs::path p = fs::path(dir) / (row.id + "_detail.csv");
            write_text_file(p, row.detail_csv);
            written.push_back(p);
        }
        for (const auto& [name, content] : row.extra_files) {
            const fs::path p = fs::path(dir) / name;
            write_text_file(p, content);
            written.push_back(p);
        }
    }
    return written;
}

}  // namespace glevy
