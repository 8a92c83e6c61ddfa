// Experiment runner: loads a config file, executes the declared experiments
// and writes the CSV report. Exit status: 0 when every experiment passes its
// declared tolerance, 1 when any fails, 2 on configuration errors.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "glevy/config.hpp"
#include "glevy/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"worst-case expectation laboratory for jump-diffusion uncertainty"};

    std::string config_path;
    std::string output_dir;
    std::string only_id;
    int workers = 1;
    int verbosity = 1;
    app.add_option("config", config_path, "experiment config file (JSON)")->required();
    app.add_option("-o,--output-dir", output_dir, "override the config output directory");
    app.add_option("-w,--workers", workers, "worker threads (default 1)")->check(CLI::PositiveNumber);
    app.add_option("-e,--experiment", only_id, "run a single experiment by id");
    app.add_option("-v,--verbosity", verbosity, "0 = quiet, 1 = summary, 2 = per-row");

    CLI11_PARSE(app, argc, argv);

    glevy::ExperimentConfig cfg;
    try {
        cfg = glevy::load_config(config_path);
    } catch (const glevy::ConfigError& e) {
        for (const auto& p : e.problems) std::cerr << "config error: " << p << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    if (!output_dir.empty()) cfg.output_dir = output_dir;

    try {
        const glevy::RunReport report = glevy::run(cfg, workers, only_id);
        const auto files = glevy::emit_csv(report, cfg.output_dir);
        if (verbosity >= 2)
            for (const auto& row : report.rows)
                std::printf("%-28s %-16s value=%-14.8g tol=%-12.6g %s\n", row.id.c_str(),
                            row.kind.c_str(), row.value, row.tolerance,
                            row.pass ? "pass" : "FAIL");
        if (verbosity >= 1) {
            long failed = 0;
            for (const auto& row : report.rows)
                if (!row.pass) ++failed;
            std::printf("%zu experiments, %ld failed; %zu files written to %s\n",
                        report.rows.size(), failed, files.size(), cfg.output_dir.c_str());
        }
        return report.all_pass() ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "run error: " << e.what() << "\n";
        return 2;
    }
}
