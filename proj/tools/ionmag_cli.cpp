// ionmag: run a named simulation scenario and write its CSV outputs.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ionmag/cli/config.hpp"
#include "ionmag/cli/scenarios.hpp"

namespace fs = std::filesystem;
using namespace ionmag;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

// Writes every file or none: anything written before a failure is removed.
void write_outputs(const fs::path& dir, const std::vector<cli::OutputFile>& files) {
    std::vector<fs::path> written;
    try {
        fs::create_directories(dir);
        for (const auto& f : files) {
            const fs::path path = dir / f.name;
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            written.push_back(path);
            out << f.content;
            out.close();
            if (!out) {
                throw std::runtime_error("cannot write " + path.string());
            }
        }
    } catch (...) {
        std::error_code ec;
        for (const auto& p : written) {
            fs::remove(p, ec);
        }
        throw;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-ion transport magnetometry simulator"};
    std::string config_path;
    std::string scenario;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--scenario", scenario, "fig2-gradient-scan | fig3a-running-mean | fig3b-allan | calibrate | selftest");
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides echo.seed)");
    app.add_option("--out", out_dir, "output directory")->capture_default_str();
    app.add_option("--override", overrides, "key.path=value, repeatable")->take_all()->allow_extra_args(false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    cli::Config cfg;
    try {
        auto doc = config_path.empty() ? cli::default_config() : cli::load_config_file(config_path);
        for (const auto& o : overrides) {
            cli::apply_override(doc, o);
        }
        if (seed_opt->count() > 0) {
            doc["echo"]["seed"] = seed;
        }
        if (!scenario.empty()) {
            doc["scenario"] = scenario;
        }
        cfg = cli::build_config(doc);
        if (cfg.scenario.empty()) {
            throw ConfigError("no scenario given (use --scenario or the 'scenario' config key)");
        }
        const auto& names = cli::scenario_names();
        if (std::find(names.begin(), names.end(), cfg.scenario) == names.end()) {
            // run_scenario reports the list of valid names
            cli::run_scenario(cfg.scenario, cfg);
        }
    } catch (const ConfigError& e) {
        std::cerr << "ionmag: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "ionmag: config: " << e.what() << "\n";
        return kConfigError;
    }

    try {
        auto result = cli::run_scenario(cfg.scenario, cfg);
        std::cout << result.summary;
        if (!result.passed) {
            std::cerr << "ionmag: " << cfg.scenario << " reported failures\n";
            return kRuntimeError;
        }
        result.files.push_back({"summary.txt", cli::provenance_line(cfg, cfg.scenario) + result.summary});
        write_outputs(out_dir, result.files);
        std::cout << "outputs written to " << fs::path(out_dir).string() << "\n";
    } catch (const ConvergenceError& e) {
        const auto& best = e.best_so_far();
        std::cerr << "ionmag: " << e.what() << " (best: I1 = " << best.i1 << " A, I2 = " << best.i2 << " A)\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "ionmag: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
