// Acceptance suite: drives the CLI on the acceptance config, checks every
// criterion at its declared tolerance and prints one pass/fail line each.
// Usage: glevy_acceptance <path-to-glevy_cli> <path-to-acceptance-config>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct SummaryRow {
    double value = 0.0;
    double std_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::map<std::string, SummaryRow> parse_summary(const fs::path& file) {
    std::map<std::string, SummaryRow> rows;
    std::ifstream is(file);
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string id, kind, value, se, tol, pass, seconds;
        std::getline(ss, id, ',');
        std::getline(ss, kind, ',');
        std::getline(ss, value, ',');
        std::getline(ss, se, ',');
        std::getline(ss, tol, ',');
        std::getline(ss, pass, ',');
        std::getline(ss, seconds, ',');
        rows[id] = {std::stod(value), std::stod(se), std::stod(tol), pass == "1"};
    }
    return rows;
}

int failures = 0;

void report(int criterion, const std::string& name, bool ok, const std::string& detail) {
    std::printf("[%s] criterion %2d: %-34s %s\n", ok ? "PASS" : "FAIL", criterion, name.c_str(),
                detail.c_str());
    if (!ok) ++failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

bool rows_pass(const std::map<std::string, SummaryRow>& rows,
               const std::vector<std::string>& ids) {
    for (const auto& id : ids) {
        const auto it = rows.find(id);
        if (it == rows.end() || !it->second.pass) return false;
    }
    return true;
}

bool identical_trees(const fs::path& a, const fs::path& b, std::string& why) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) {
        why = "file lists differ";
        return false;
    }
    for (const auto& rel : fa)
        if (slurp(a / rel) != slurp(b / rel)) {
            why = "bytes differ in " + rel.string();
            return false;
        }
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <glevy_cli> <acceptance-config>\n", argv[0]);
        return 2;
    }
    const std::string cli = argv[1];
    const std::string config = argv[2];
    const fs::path dir_a = fs::temp_directory_path() / "glevy_acceptance_a";
    const fs::path dir_b = fs::temp_directory_path() / "glevy_acceptance_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    const auto t0 = std::chrono::steady_clock::now();
    const int rc_a =
        std::system((cli + " " + config + " -o " + dir_a.string() + " -v 0").c_str());
    const auto t1 = std::chrono::steady_clock::now();
    const int rc_b =
        std::system((cli + " " + config + " -o " + dir_b.string() + " -v 0").c_str());
    const double seconds = std::chrono::duration<double>(t1 - t0).count();

    if (rc_a != 0 || rc_b != 0)
        std::printf("note: CLI exited nonzero (%d, %d); at least one experiment failed\n", rc_a,
                    rc_b);
    const auto rows = parse_summary(dir_a / "summary.csv");
    if (rows.empty()) {
        std::fprintf(stderr, "no summary rows found under %s\n", dir_a.string().c_str());
        return 2;
    }

    // 1. representation cross-check: solver, Monte Carlo, iterated construction
    {
        const double oracle = 2.0 - 3.0 * std::exp(-1.0);
        bool ok = rows_pass(rows, {"a1_pide", "a1_mc", "a1_cylinder"});
        for (const std::string id : {"a1_pide", "a1_mc", "a1_cylinder"}) {
            const auto& r = rows.at(id);
            const double tol = std::max(3.0 * r.std_error, 0.02 * oracle);
            ok = ok && std::abs(r.value - oracle) <= tol;
        }
        report(1, "representation cross-check",  ok,
               "pide=" + fmt(rows.at("a1_pide").value) + " mc=" + fmt(rows.at("a1_mc").value) +
                   " cylinder=" + fmt(rows.at("a1_cylinder").value) + " oracle=" + fmt(oracle));
    }
    // 2. worst-case volatility, solver vs feedback Monte Carlo
    {
        const auto& pide = rows.at("a2_pide");
        const auto& mc = rows.at("a2_mc_feedback");
        bool ok = rows_pass(rows, {"a2_pide", "a2_mc_feedback"});
        ok = ok && std::abs(pide.value - 1.0) <= 0.02;
        ok = ok && std::abs(mc.value - pide.value) <= 3.0 * mc.std_error + 1e-4;
        report(2, "volatility degenerate check", ok,
               "pide=" + fmt(pide.value) + " mc=" + fmt(mc.value));
    }
    // 3. dynamic programming residuals, decreasing under refinement
    {
        bool ok = rows_pass(rows, {"a3_dpp_h1_coarse", "a3_dpp_h2_coarse", "a3_dpp_h1_fine",
                                   "a3_dpp_h2_fine"});
        ok = ok && rows.at("a3_dpp_h1_fine").value < rows.at("a3_dpp_h1_coarse").value;
        ok = ok && rows.at("a3_dpp_h2_fine").value < rows.at("a3_dpp_h2_coarse").value;
        report(3, "dynamic programming principle", ok,
               "h=0.1: " + fmt(rows.at("a3_dpp_h1_coarse").value) + " -> " +
                   fmt(rows.at("a3_dpp_h1_fine").value) + "; h=0.2: " +
                   fmt(rows.at("a3_dpp_h2_coarse").value) + " -> " +
                   fmt(rows.at("a3_dpp_h2_fine").value));
    }
    // 4. sublinear-expectation axioms on the functional corpus
    {
        const auto& r = rows.at("a4_axioms");
        report(4, "sublinear expectation axioms", r.pass && r.value == 0.0,
               fmt(r.value) + " failing checks");
    }
    // 5. capacity estimates
    {
        const auto& v = rows.at("a5_void");
        bool ok = rows_pass(rows, {"a5_void", "a5_close_m4", "a5_close_m8"});
        ok = ok && std::abs(v.value - std::exp(-0.5)) <= 3.0 * v.std_error;
        report(5, "capacity estimates", ok,
               "void=" + fmt(v.value) + " close(m=4)=" + fmt(rows.at("a5_close_m4").value) +
                   " close(m=8)=" + fmt(rows.at("a5_close_m8").value));
    }
    // 6. continuity bound of the jump integral on the randomized corpus
    {
        const auto& r = rows.at("a6_continuity");
        report(6, "jump integral continuity bound", r.pass && r.value == 0.0,
               fmt(r.value) + " violations over the corpus");
    }
    // 7. jump-diffusion calculus identities
    {
        bool ok = rows_pass(rows, {"a7_jump_exact", "a7_affine_exact", "a7_halving"});
        const double ratio = rows.at("a7_halving").value;
        ok = ok && ratio >= 0.375 && ratio <= 0.625;
        report(7, "pathwise change-of-variable checks", ok,
               "max|residual|=" + fmt(rows.at("a7_jump_exact").value) +
                   " halving ratio=" + fmt(ratio));
    }
    // 8. SDE existence machinery
    {
        bool ok = rows_pass(rows, {"a8_picard", "a8_unique", "a8_euler_err", "a8_euler_order",
                                   "a8_doubling"});
        ok = ok && rows.at("a8_picard").value <= 0.5;
        ok = ok && rows.at("a8_euler_order").value >= 0.8;
        ok = ok && std::abs(rows.at("a8_doubling").value - std::exp(1.0)) <=
                       3.0 * rows.at("a8_doubling").std_error;
        report(8, "SDE solution machinery", ok,
               "picard ratio=" + fmt(rows.at("a8_picard").value) +
                   " euler order=" + fmt(rows.at("a8_euler_order").value) +
                   " doubling mean=" + fmt(rows.at("a8_doubling").value));
    }
    // 9. backward equations
    {
        bool ok = rows_pass(rows, {"a9_bsde_match", "a9_bsde_linear", "a9_fbsde_value",
                                   "a9_fbsde_recompute"});
        ok = ok && rows.at("a9_bsde_match").value <= 1e-10;
        ok = ok && std::abs(rows.at("a9_bsde_linear").value - std::exp(-1.0)) <= 0.006;
        report(9, "backward equations", ok,
               "bsde-pide gap=" + fmt(rows.at("a9_bsde_match").value) +
                   " linear value=" + fmt(rows.at("a9_bsde_linear").value) +
                   " fbsde residual=" + fmt(rows.at("a9_fbsde_recompute").value));
    }
    // 10. byte-identical reruns
    {
        std::string why;
        const bool ok = identical_trees(dir_a, dir_b, why);
        report(10, "byte-identical reruns", ok, ok ? "all files identical" : why);
    }

    const bool cli_ok = rc_a == 0 && rc_b == 0;
    if (!cli_ok) {
        std::printf("[FAIL] CLI exit-status contract (expected 0, got %d and %d)\n", rc_a, rc_b);
        ++failures;
    }
    std::printf("acceptance wall time: %.1f s (budget 900 s)\n", seconds);
    if (seconds > 900.0) {
        std::printf("[FAIL] runtime budget exceeded\n");
        ++failures;
    }

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    if (failures == 0) {
        std::printf("all acceptance criteria satisfied\n");
        return 0;
    }
    std::printf("%d criteria failed\n", failures);
    return 1;
}
