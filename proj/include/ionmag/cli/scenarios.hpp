#pragma once

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "../calibration.hpp"
#include "../coil_experiment.hpp"
#include "../estimation.hpp"
#include "../parallel.hpp"
#include "../random.hpp"
#include "../spin_physics.hpp"
#include "../trap_transport.hpp"
#include "config.hpp"

namespace ionmag::cli {

struct OutputFile {
    std::string name;
    std::string content;
};

struct ScenarioResult {
    std::vector<OutputFile> files;
    std::string summary;
    bool passed = true;  // false only when selftest has failing checks
};

// Child-stream tags below the master seed; one per scenario.
enum Stream : std::uint64_t { kFig2 = 1, kFig3a = 2, kFig3b = 3, kCalibrate = 4 };

/// Round-trip exact decimal; identical on every run and thread count.
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string num(std::uint64_t v) { return std::to_string(v); }

inline std::string brief(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string provenance_line(const Config& cfg, const std::string& scenario) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "# config_hash=%016" PRIx64 " seed=%" PRIu64 " scenario=%s\n", cfg.hash, cfg.seed,
                  scenario.c_str());
    return buf;
}

class CsvBuilder {
public:
    CsvBuilder(const Config& cfg, const std::string& scenario, const std::string& header)
        : text_(provenance_line(cfg, scenario) + header + "\n") {}

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            text_ += cells[i];
            text_ += i + 1 < cells.size() ? "," : "\n";
        }
    }
    const std::string& str() const { return text_; }

private:
    std::string text_;
};

struct Transport {
    double distance = 0.0;  // m, requested excursion
    double v2_peak = 0.0;
    Trajectory trajectory;
    double integral = 0.0;  // m s
    double adiabaticity = 0.0;
    std::vector<std::string> warnings;
};

inline Transport make_transport(const Config& cfg, double distance) {
    Transport t;
    t.distance = distance;
    TransportScenario s = cfg.transport;
    s.v2_peak = peak_voltage_for_displacement(s.v1, distance, cfg.table);
    t.v2_peak = s.v2_peak;
    auto result = compute_trajectory(s, cfg.table);
    t.trajectory = std::move(result.trajectory);
    t.integral = displacement_time_integral(t.trajectory);
    t.adiabaticity = result.adiabaticity;
    t.warnings = std::move(result.warnings);
    return t;
}

inline std::string warnings_text(const std::vector<Transport>& transports) {
    std::string out;
    for (const auto& t : transports) {
        for (const auto& w : t.warnings) {
            out += "warning (" + brief(t.distance / units::um) + " um): " + w + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

inline ScenarioResult run_gradient_scan(const Config& cfg) {
    const std::string name = "fig2-gradient-scan";
    const std::size_t nd = cfg.scan_distances.size();
    const std::size_t nc = cfg.scan_cases.size();

    std::vector<Transport> transports(nd);
    parallel_for(nd, cfg.threads, [&](std::size_t i) { transports[i] = make_transport(cfg, cfg.scan_distances[i]); });

    const auto angles = uniform_angles(cfg.angles);
    std::vector<EchoRecord> records(nc * nd);
    std::vector<PhaseEstimate> estimates(nc * nd);
    parallel_for(nc * nd, cfg.threads, [&](std::size_t j) {
        const std::size_t ci = j / nd;
        const std::size_t di = j % nd;
        const FieldModel field{cfg.field.b0, cfg.scan_cases[ci].gradient, 0.0};
        records[j] = run_echo_experiment(transports[di].trajectory, field, cfg.fringe, angles, cfg.n_per_angle,
                                         derive_key(cfg.seed, {kFig2, ci, di}));
        estimates[j] = fringe_phase_estimate(records[j]);
    });

    std::vector<std::size_t> order(nd);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return transports[a].integral < transports[b].integral; });

    CsvBuilder fringe_csv(cfg, name, "angle_rad,n,k,up_fraction,case,distance_um");
    CsvBuilder gradient_csv(cfg, name, "integral_um_ms,phase_rad,sigma_rad,case");
    CsvBuilder fit_csv(cfg, name,
                       "case,injected_T_per_m,gradient_T_per_m,gradient_se_T_per_m,slope_rad_per_um_ms,"
                       "slope_se_rad_per_um_ms,intercept_rad,intercept_se_rad,chi2");
    std::string summary = "fig2-gradient-scan: " + std::to_string(nc) + " cases x " + std::to_string(nd) +
                          " distances, " + std::to_string(cfg.angles) + " angles x " + std::to_string(cfg.n_per_angle) +
                          " interrogations\n";
    summary += warnings_text(transports);

    for (std::size_t ci = 0; ci < nc; ++ci) {
        const auto& gc = cfg.scan_cases[ci];
        std::vector<double> wrapped;
        for (std::size_t di : order) {
            wrapped.push_back(estimates[ci * nd + di].phase);
        }
        const auto unwrapped = unwrap_phases(wrapped);
        std::vector<GradientPoint> points;
        for (std::size_t k = 0; k < nd; ++k) {
            auto est = estimates[ci * nd + order[k]];
            est.phase = unwrapped[k];
            points.push_back({transports[order[k]].integral, est});
            gradient_csv.row({num(transports[order[k]].integral / units::um_ms), num(est.phase), num(est.sigma), gc.label});
        }
        for (std::size_t di = 0; di < nd; ++di) {
            for (const auto& p : records[ci * nd + di].points) {
                fringe_csv.row({num(p.angle), num(p.n), num(p.k), num(p.up_fraction()), gc.label,
                                num(cfg.scan_distances[di] / units::um)});
            }
        }
        const auto fit = gradient_fit(points);
        fit_csv.row({gc.label, num(gc.gradient), num(fit.gradient), num(fit.gradient_se), num(fit.slope_rad_per_um_ms()),
                     num(fit.slope_se * units::um_ms), num(fit.intercept), num(fit.intercept_se), num(fit.chi2)});
        summary += "  " + gc.label + ": injected " + brief(gc.gradient) + " T/m, fitted " + brief(fit.gradient) + " +- " +
                   brief(fit.gradient_se) + " T/m (slope " + brief(fit.slope_rad_per_um_ms()) + " rad/(um ms), " +
                   brief((fit.gradient - gc.gradient) / fit.gradient_se) + " SE from injected)\n";
    }
    const double lab = static_cast<double>(nc * nd * cfg.angles * cfg.n_per_angle) * cfg.seconds_per_cycle / 3.0;
    summary += "  simulated experiment time: " + brief(lab) + " s\n";

    return {{{"fringe.csv", fringe_csv.str()}, {"gradient.csv", gradient_csv.str()}, {"gradient_fit.csv", fit_csv.str()}},
            summary};
}

// ---------------------------------------------------------------------------

inline ScenarioResult run_running_mean(const Config& cfg) {
    const std::string name = "fig3a-running-mean";
    const Transport t = make_transport(cfg, cfg.running_distance);
    const double shifted_gradient = cfg.running_delta_b / cfg.running_distance;
    const std::size_t k = cfg.running_count;
    const auto angles = three_point_angles();
    const double cycle = static_cast<double>(cfg.n_per_angle) * cfg.seconds_per_cycle;

    std::vector<double> phases(2 * k);
    parallel_for(2 * k, cfg.threads, [&](std::size_t j) {
        const std::size_t series = j / k;
        const std::size_t i = j % k;
        const FieldModel field{cfg.field.b0, series == 0 ? shifted_gradient : 0.0, cfg.field.drift_rate};
        const double lab_time = static_cast<double>(j) * cycle;  // the reference series runs after the shifted one
        const auto rec = run_echo_experiment(t.trajectory, field, cfg.fringe, angles, cfg.n_per_angle,
                                             derive_key(cfg.seed, {kFig3a, series, i}), lab_time);
        phases[j] = three_point_estimate(rec).phase;
    });

    CsvBuilder csv(cfg, name, "series,index,phase_rad,mean_rad,error_rad,mean_rel_field,error_rel_field");
    std::string summary = "fig3a-running-mean: " + std::to_string(k) + " three-point estimates per series at " +
                          brief(cfg.running_distance / units::um) + " um, N = " + std::to_string(cfg.n_per_angle) + "\n";
    summary += warnings_text({t});
    std::vector<RunningMeanPoint> finals;
    for (std::size_t series = 0; series < 2; ++series) {
        const std::string label = series == 0 ? "shifted" : "reference";
        const std::span<const double> seq(phases.data() + series * k, k);
        const auto running = running_mean_series(seq, cfg.running_mode);
        for (std::size_t i = 0; i < k; ++i) {
            const double rel = phase_to_relative_field(running[i].mean, t.integral, cfg.running_distance, cfg.field.b0);
            const double rel_err =
                phase_to_relative_field(running[i].error, t.integral, cfg.running_distance, cfg.field.b0);
            csv.row({label, num(i + 1), num(seq[i]), num(running[i].mean), num(running[i].error), num(rel), num(rel_err)});
        }
        finals.push_back(running.back());
        summary += "  " + label + ": mean phase " + brief(running.back().mean) + " +- " + brief(running.back().error) +
                   " rad\n";
    }
    const double expected = PhysicalConstants::gyromagnetic * shifted_gradient * t.integral;
    const double combined = std::hypot(finals[0].error, finals[1].error);
    summary += "  expected phase for " + brief(cfg.running_delta_b / units::nT) + " nT: " + brief(expected) +
               " rad; separation " + brief(std::abs(finals[0].mean - finals[1].mean) / combined) + " sigma\n";
    summary += "  simulated experiment time: " + brief(static_cast<double>(2 * k) * cycle) + " s\n";
    return {{{"running_mean.csv", csv.str()}}, summary};
}

// ---------------------------------------------------------------------------

struct AllanRun {
    Transport transport;
    std::vector<double> estimates;
    AllanSeries allan;
};

inline AllanRun simulate_allan(const Config& cfg) {
    AllanRun run;
    run.transport = make_transport(cfg, cfg.allan_distance);
    const auto angles = three_point_angles();
    const double cycle = static_cast<double>(cfg.n_per_angle) * cfg.seconds_per_cycle;
    run.estimates.resize(cfg.allan_estimates);
    parallel_for(cfg.allan_estimates, cfg.threads, [&](std::size_t i) {
        const auto rec = run_echo_experiment(run.transport.trajectory, cfg.field, cfg.fringe, angles, cfg.n_per_angle,
                                             derive_key(cfg.seed, {kFig3b, i}), static_cast<double>(i) * cycle);
        run.estimates[i] = three_point_estimate(rec).phase;
    });
    const auto sizes = octave_sizes(run.estimates.size());
    run.allan = allan_deviation(run.estimates, sizes);
    return run;
}

inline ScenarioResult run_allan(const Config& cfg) {
    const std::string name = "fig3b-allan";
    const AllanRun run = simulate_allan(cfg);
    const auto& t = run.transport;
    const double phi0 = accumulated_phase(t.trajectory, cfg.field, 0.0);
    const FringeParams perfect{0.5, 0.5};
    auto rel = [&](double sigma) { return phase_to_relative_field(sigma, t.integral, cfg.allan_distance, cfg.field.b0); };

    CsvBuilder csv(cfg, name,
                   "n,sigma_rad,sigma_rel_field,interrogations,theory_rad,theory_rel_field,perfect_rad,perfect_rel_field");
    std::string summary = "fig3b-allan: " + std::to_string(run.estimates.size()) + " three-point estimates at " +
                          brief(cfg.allan_distance / units::um) + " um, N = " + std::to_string(cfg.n_per_angle) + "\n";
    summary += warnings_text({t});
    for (std::size_t i = 0; i < run.allan.sizes.size(); ++i) {
        const std::uint64_t interrogations = run.allan.sizes[i] * cfg.n_per_angle;
        const double sigma = run.allan.deviations[i];
        const double theory = shot_noise_sigma(cfg.fringe, phi0, static_cast<double>(interrogations));
        const double ideal = shot_noise_sigma(perfect, phi0, static_cast<double>(interrogations));
        csv.row({num(std::uint64_t{run.allan.sizes[i]}), num(sigma), num(rel(sigma)), num(interrogations), num(theory),
                 num(rel(theory)), num(ideal), num(rel(ideal))});
    }
    if (!run.allan.sizes.empty()) {
        const double first = run.allan.deviations.front() * std::sqrt(static_cast<double>(cfg.n_per_angle));
        summary += "  single-interrogation deviation " + brief(first) + " rad (theory " +
                   brief(shot_noise_sigma(cfg.fringe, phi0, 1.0)) + ")\n";
        summary += "  relative field at " + num(run.allan.sizes.back() * cfg.n_per_angle) +
                   " interrogations: " + brief(rel(run.allan.deviations.back())) + "\n";
    }
    const double lab = static_cast<double>(run.estimates.size() * cfg.n_per_angle) * cfg.seconds_per_cycle;
    summary += "  simulated experiment time: " + brief(lab) + " s\n";
    return {{{"allan.csv", csv.str()}}, summary};
}

// ---------------------------------------------------------------------------

inline ScenarioResult run_calibration(const Config& cfg) {
    const std::string name = "calibrate";
    const Transport t = make_transport(cfg, cfg.calibration_distance);
    const auto measure =
        shot_noise_experiment(cfg.coils, t.integral, cfg.fringe, cfg.calibration_n, derive_key(cfg.seed, {kCalibrate}));
    std::vector<CalibrationMeasurement> initial;
    for (auto [i1, i2] : cfg.initial_currents) {
        initial.push_back(measure(i1, i2));
    }
    const auto result = closed_loop_calibrate(measure, initial, cfg.calibration);

    CsvBuilder csv(cfg, name, "iteration,i1_A,i2_A,gradient_T_per_m,sigma");
    for (const auto& step : result.history) {
        const auto& m = step.measurement;
        csv.row({num(std::uint64_t{step.iteration}), num(m.i1), num(m.i2), num(m.gradient), num(m.gradient_sigma)});
    }
    const auto& last = result.final_measurement();
    const double residual = std::abs(cfg.coils.gradient(result.i1, result.i2));
    const double floor = shot_noise_gradient_floor(t.integral, cfg.fringe, cfg.calibration_n);
    std::string summary = "calibrate: converged after " + std::to_string(result.iterations) + " iteration(s)\n";
    summary += warnings_text({t});
    summary += "  currents I1 = " + brief(result.i1) + " A, I2 = " + brief(result.i2) + " A, B0 = " +
               brief(cfg.coils.field(result.i1, result.i2) / units::mT) + " mT\n";
    summary += "  measured gradient " + brief(last.gradient) + " +- " + brief(last.gradient_sigma) +
               " T/m (true residual " + brief(residual) + " T/m, shot-noise floor " + brief(floor) + " T/m)\n";
    summary += "  coherence estimate (" + brief(cfg.separation / units::um) + " um pair): " +
               brief(coherence_estimate(residual, cfg.separation)) + " s at the true residual, " +
               brief(coherence_estimate(cfg.calibration.noise_sigmas * floor, cfg.separation)) +
               " s at the detection floor\n";
    return {{{"calibration.csv", csv.str()}}, summary};
}

// ---------------------------------------------------------------------------

struct SelfCheck {
    std::string name;
    double value = 0.0;
    double expected = 0.0;
    double tolerance = 0.0;
    bool passed() const { return std::abs(value - expected) <= tolerance; }
};

/// Fast oracle checks over every module with default parameters.
inline std::vector<SelfCheck> self_checks() {
    using units::um;
    std::vector<SelfCheck> checks;
    auto add = [&](std::string name, const std::function<double()>& f, double expected, double tol) {
        double v = std::nan("");
        try {
            v = f();
        } catch (const std::exception&) {
        }
        checks.push_back({std::move(name), v, expected, tol});
    };
    const auto table = make_synthetic_table({});
    const FringeParams realistic{0.31, 0.44};

    add("zeeman splitting at 0.7 mT (MHz)", [] { return zeeman_splitting(0.7 * units::mT) / 1e6; }, 19.5947, 1e-4);
    add("minimum with no transport voltage (um)",
        [&] { return find_minimum(-1.8625, 0.0, table, {-100 * um, 100 * um}) / um; }, 0.0, 1e-3);
    add("axial frequency at default V1 (MHz)",
        [&] { return axial_frequency(-1.8625, 0.0, table, 0.0) / 1e6; }, 1.35, 0.001);
    const auto traj = compute_trajectory(TransportScenario{}, table).trajectory;
    add("default transport excursion (um)", [&] { return traj.max_displacement() / um; }, 140.0, 0.01);
    add("default displacement-time integral (um ms)",
        [&] { return displacement_time_integral(traj) / units::um_ms; }, 38.736, 0.005);
    add("sine trajectory integral / (2dT/pi)",
        [] {
            Trajectory s;
            const double d = 100 * um;
            const double T = 400 * units::us;
            for (int k = 0; k <= 256; ++k) {
                s.times.push_back(T * k / 256.0);
                s.positions.push_back(d * std::sin(pi * k / 256.0));
            }
            return displacement_time_integral(s) / (2.0 * d * T / pi);
        },
        1.0, 1e-6);
    add("shot-noise constant at A1 = 0.31, A2 = 0.44 (rad)", [&] { return shot_noise_sigma(realistic, 0.0, 1.0); }, 1.81,
        0.04);
    add("shot-noise constant at perfect contrast (rad)", [] { return shot_noise_sigma({0.5, 0.5}, 0.0, 1.0); }, 1.0,
        1e-12);
    add("three-point signal at zero phase", [] { return three_point_signal(0.75, 0.44, 0.13); }, 0.5, 1e-15);
    add("three-point round trip, max error (rad)",
        [&] {
            double worst = 0.0;
            for (double phi = -1.5; phi <= 1.5; phi += 0.01) {
                const double s = three_point_signal(echo_probability(0, phi, realistic),
                                                    echo_probability(pi / 2, phi, realistic),
                                                    echo_probability(pi, phi, realistic));
                worst = std::max(worst, std::abs(phase_from_signal(s) - phi));
            }
            return worst;
        },
        0.0, 1e-12);
    add("three-point signal affine invariance",
        [] { return three_point_signal(2.5 * 0.71 - 0.3, 2.5 * 0.38 - 0.3, 2.5 * 0.16 - 0.3) -
                    three_point_signal(0.71, 0.38, 0.16); },
        0.0, 1e-12);
    add("noiseless fringe fit phase (rad)",
        [&] {
            std::vector<FringeSample> samples;
            for (double a : uniform_angles(100)) {
                samples.push_back({a, 200.0, echo_probability(a, 0.3, realistic)});
            }
            return fit_fringe(samples).phase;
        },
        0.3, 1e-12);
    add("two-point gradient fit (T/m)",
        [] {
            const double g = 1e-3;
            std::vector<GradientPoint> pts;
            for (double x : {1e-8, 3e-8}) {
                pts.push_back({x, {PhysicalConstants::gyromagnetic * g * x, 0.01, EstimateMethod::FringeFit, 0}});
            }
            return gradient_fit(pts).gradient;
        },
        1e-3, 1e-15);
    add("Allan sizes kept for 10 estimates", [] {
        const std::vector<double> v(10, 0.0);
        const std::vector<std::size_t> sizes{1, 5, 6};
        return static_cast<double>(allan_deviation(v, sizes).sizes.size());
    }, 2.0, 0.0);
    add("relative field for 7 nT over 19 um",
        [&] {
            TransportScenario s;
            s.v2_peak = peak_voltage_for_displacement(s.v1, 19 * um, table);
            const auto t19 = compute_trajectory(s, table).trajectory;
            const double phi = accumulated_phase(t19, {0.7e-3, 7e-9 / (19 * um)});
            return phase_to_relative_field(phi, displacement_time_integral(t19), 19 * um, 0.7e-3);
        },
        1e-5, 1e-9);
    add("seeded sampler reproducible",
        [] { return static_cast<double>(simulate_interrogations(0.37, 1000, 77)) -
                    static_cast<double>(simulate_interrogations(0.37, 1000, 77)); },
        0.0, 0.0);
    const CoilModel coils = coil_model_with_root(1.660, 2.122, 0.7 * units::mT, 2.5e-4);
    const std::vector<CalibrationMeasurement> initial{
        {3.0, 1.0, coils.gradient(3.0, 1.0), 1e-6, coils.field(3.0, 1.0)},
        {1.9, 1.9, coils.gradient(1.9, 1.9), 1e-6, coils.field(1.9, 1.9)}};
    add("zero-gradient coil 1 current (A)",
        [&] { return solve_zero_gradient(fit_coil_model(initial), 0.7 * units::mT).i1; }, 1.660, 1e-9);
    add("zero-gradient coil 2 current (A)",
        [&] { return solve_zero_gradient(fit_coil_model(initial), 0.7 * units::mT).i2; }, 2.122, 1e-9);
    add("symmetric coils current difference (A)",
        [] {
            const auto c = solve_zero_gradient(CoilModel{0, 3e-4, -3e-4, 0, 2e-4, 2e-4}, 0.7 * units::mT);
            return c.i1 - c.i2;
        },
        0.0, 1e-12);
    add("closed loop iterations, linear noiseless",
        [&] {
            return static_cast<double>(
                closed_loop_calibrate(noiseless_experiment({coils, 0.0}), initial).iterations);
        },
        1.0, 0.0);
    add("coherence at 1.4 uT/m over 4 um (s)", [] { return coherence_estimate(1.4 * units::uT, 4 * um); }, 1.0, 0.05);
    return checks;
}

inline ScenarioResult run_selftest(const Config& cfg) {
    const auto checks = self_checks();
    CsvBuilder csv(cfg, "selftest", "check,passed,value,expected,tolerance");
    ScenarioResult result;
    std::size_t failures = 0;
    char line[256];
    for (const auto& c : checks) {
        const bool ok = c.passed();
        failures += ok ? 0 : 1;
        std::snprintf(line, sizeof line, "  %-4s %-52s %.10g\n", ok ? "PASS" : "FAIL", c.name.c_str(), c.value);
        result.summary += line;
        csv.row({"\"" + c.name + "\"", ok ? "1" : "0", num(c.value), num(c.expected), num(c.tolerance)});
    }
    result.summary = "selftest: " + std::to_string(checks.size() - failures) + "/" + std::to_string(checks.size()) +
                     " checks passed\n" + result.summary;
    result.passed = failures == 0;
    result.files.push_back({"selftest.csv", csv.str()});
    return result;
}

/// Dispatch by name. Unknown names are configuration errors.
inline ScenarioResult run_scenario(const std::string& name, const Config& cfg) {
    if (name == "fig2-gradient-scan") {
        return run_gradient_scan(cfg);
    }
    if (name == "fig3a-running-mean") {
        return run_running_mean(cfg);
    }
    if (name == "fig3b-allan") {
        return run_allan(cfg);
    }
    if (name == "calibrate") {
        return run_calibration(cfg);
    }
    if (name == "selftest") {
        return run_selftest(cfg);
    }
    std::string known;
    for (const auto& n : scenario_names()) {
        known += (known.empty() ? "" : ", ") + n;
    }
    throw ConfigError("unknown scenario '" + name + "' (expected one of: " + known + ")");
}

}  // namespace ionmag::cli
