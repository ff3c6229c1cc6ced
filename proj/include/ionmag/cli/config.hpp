#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "../calibration.hpp"
#include "../coil_experiment.hpp"
#include "../constants.hpp"
#include "../errors.hpp"
#include "../estimation.hpp"
#include "../spin_physics.hpp"
#include "../trap_transport.hpp"

namespace ionmag::cli {

using nlohmann::json;

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"fig2-gradient-scan", "fig3a-running-mean", "fig3b-allan", "calibrate",
                                                "selftest"};
    return names;
}

/// Every recognised key with its default. Files and overrides may only set
/// keys that appear here; a null default accepts a string.
inline json default_config() {
    const CoilModel coils = coil_model_with_root(1.660, 2.122, 0.7 * units::mT, 2.5e-4);
    return json{
        {"scenario", ""},
        {"threads", 0},
        {"trap",
         {{"v1", -1.8625},
          {"v2_peak", -2.2324},
          {"duration_us", 400.0},
          {"samples", 256},
          {"shape_file", nullptr},
          {"synthetic", {{"pitch_um", 250.0}, {"width_um", 250.0}, {"centers_um", json::array()}, {"spacing_um", 2.0}}}}},
        {"field", {{"b0_mT", 0.7}, {"gradient_mT_per_m", 0.0}, {"drift_nT_per_s", 0.0}}},
        {"fringe", {{"a1", 0.31}, {"a2", 0.44}}},
        {"echo", {{"angles", 100}, {"n_per_angle", 200}, {"seed", 1}}},
        {"coils",
         {{"a1", coils.a1},
          {"a2", coils.a2},
          {"b1", coils.b1},
          {"b2", coils.b2},
          {"ambient", {{"a0", 0.0}, {"b0", 0.0}}},
          {"quadratic_per_A", 0.0}}},
        {"scan",
         {{"distances_um", {17.5, 35.0, 52.5, 70.0, 87.5, 105.0, 122.5, 140.0}},
          {"cases",
           {{{"label", "3A-1A"}, {"i1_A", 3.0}, {"i2_A", 1.0}},
            {{"label", "1.9A-1.9A"}, {"i1_A", 1.9}, {"i2_A", 1.9}},
            {{"label", "1.66A-2.122A"}, {"i1_A", 1.660}, {"i2_A", 2.122}}}}}},
        {"running", {{"distance_um", 19.0}, {"delta_b_nT", 7.0}, {"count", 100}, {"error_mode", "standard-error"}}},
        {"allan", {{"distance_um", 19.0}, {"estimates", 4096}, {"seconds_per_cycle", 0.015}}},
        {"calibration",
         {{"tolerance_T_per_m", 1e-6},
          {"max_iter", 10},
          {"noise_sigmas", 2.0},
          {"assume_no_ambient", true},
          {"initial_currents_A", {{3.0, 1.0}, {1.9, 1.9}}},
          {"distance_um", 19.0},
          {"n_per_angle", 10000},
          {"separation_um", 4.0}}},
    };
}

namespace detail {

inline bool compatible(const json& def, const json& value) {
    if (def.is_null()) {
        return value.is_string() || value.is_null();
    }
    if (def.is_number()) {
        return value.is_number();
    }
    return def.type() == value.type();
}

inline void merge_into(json& target, const json& patch, const json& defaults, const std::string& prefix) {
    if (!patch.is_object()) {
        throw ConfigError("config: expected an object at '" + (prefix.empty() ? std::string("<root>") : prefix) + "'");
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) {
            throw ConfigError("config: unknown key '" + path + "'");
        }
        const json& def = defaults.at(key);
        if (!compatible(def, value)) {
            throw ConfigError("config: key '" + path + "' expects " + std::string(def.is_null() ? "string" : def.type_name()) +
                              ", got " + value.type_name());
        }
        if (def.is_object()) {
            merge_into(target[key], value, def, path);
        } else {
            target[key] = value;
        }
    }
}

inline json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return json(text);  // bare words are strings
    }
}

}  // namespace detail

/// Merge a parsed config document onto the defaults. Relative shape-file
/// paths are resolved against `base_dir`.
inline json merge_config(const json& base, const json& file, const std::filesystem::path& base_dir = {}) {
    json merged = base;
    detail::merge_into(merged, file, default_config(), "");
    const auto& shape = merged["trap"]["shape_file"];
    if (shape.is_string() && file.contains("trap") && file["trap"].contains("shape_file") && !base_dir.empty()) {
        const std::filesystem::path p(shape.get<std::string>());
        if (p.is_relative()) {
            merged["trap"]["shape_file"] = (base_dir / p).lexically_normal().string();
        }
    }
    return merged;
}

inline json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open '" + path + "'");
    }
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return merge_config(default_config(), doc, std::filesystem::path(path).parent_path());
}

/// Apply `key.path=value`. The value is read as JSON when it parses, else as
/// a string.
inline void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "': expected key=value");
    }
    const std::string key = assignment.substr(0, eq);
    json patch = detail::parse_value(assignment.substr(eq + 1));
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t dot; (dot = rest.find('.')) != std::string::npos; rest = rest.substr(dot + 1)) {
        parts.push_back(rest.substr(0, dot));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        patch = json{{*it, std::move(patch)}};
    }
    config = merge_config(config, patch);
}

/// FNV-1a over the canonical (key-sorted, compact) serialisation. The thread
/// count is left out: it cannot change any output.
inline std::uint64_t config_hash(const json& config) {
    json hashed = config;
    hashed.erase("threads");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : hashed.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct GradientCase {
    std::string label;
    double gradient = 0.0;  // T/m, injected
    std::optional<std::pair<double, double>> currents;
};

struct Config {
    std::string scenario;
    std::size_t threads = 0;
    std::uint64_t seed = 1;

    TransportScenario transport;
    ShapeFactorTable table = make_synthetic_table({});
    FieldModel field;
    FringeParams fringe;
    std::size_t angles = 100;
    std::uint64_t n_per_angle = 200;

    CoilPhysics coils;

    std::vector<double> scan_distances;  // m
    std::vector<GradientCase> scan_cases;

    double running_distance = 19.0 * units::um;
    double running_delta_b = 7.0 * units::nT;
    std::size_t running_count = 100;
    RunningErrorMode running_mode = RunningErrorMode::StandardError;

    double allan_distance = 19.0 * units::um;
    std::size_t allan_estimates = 4096;
    double seconds_per_cycle = 0.015;

    CalibrationOptions calibration;
    std::vector<std::pair<double, double>> initial_currents;
    double calibration_distance = 19.0 * units::um;
    std::uint64_t calibration_n = 10000;
    double separation = 4.0 * units::um;

    json canonical;
    std::uint64_t hash = 0;
};

namespace detail {

inline double number(const json& j, const char* path) {
    if (!j.is_number()) {
        throw ConfigError(std::string("config: '") + path + "' must be a number");
    }
    return j.get<double>();
}

inline std::uint64_t count(const json& j, const char* path, std::uint64_t min = 1) {
    if (!j.is_number_integer() || j.get<std::int64_t>() < static_cast<std::int64_t>(min)) {
        throw ConfigError(std::string("config: '") + path + "' must be an integer >= " + std::to_string(min));
    }
    return j.get<std::uint64_t>();
}

inline std::vector<double> numbers(const json& j, const char* path) {
    std::vector<double> out;
    for (const auto& v : j) {
        out.push_back(number(v, path));
    }
    return out;
}

inline std::pair<double, double> current_pair(const json& j, const char* path) {
    if (!j.is_array() || j.size() != 2) {
        throw ConfigError(std::string("config: '") + path + "' entries must be [I1, I2] pairs");
    }
    return {number(j[0], path), number(j[1], path)};
}

}  // namespace detail

/// Typed configuration; every module invariant is checked here, before any
/// scenario starts.
inline Config build_config(const json& merged) {
    using detail::count;
    using detail::number;
    Config c;
    c.canonical = merged;
    c.hash = config_hash(merged);
    c.scenario = merged["scenario"].get<std::string>();
    c.threads = count(merged["threads"], "threads", 0);
    c.seed = count(merged["echo"]["seed"], "echo.seed", 0);

    try {
        const auto& trap = merged["trap"];
        c.transport.v1 = number(trap["v1"], "trap.v1");
        c.transport.v2_peak = number(trap["v2_peak"], "trap.v2_peak");
        c.transport.duration = number(trap["duration_us"], "trap.duration_us") * units::us;
        c.transport.samples = count(trap["samples"], "trap.samples");
        c.transport.validate();
        if (trap["shape_file"].is_string()) {
            const auto path = trap["shape_file"].get<std::string>();
            if (!std::filesystem::exists(path)) {
                throw ConfigError("config: shape file '" + path + "' does not exist");
            }
            c.table = load_shape_factor_table(path);
        } else {
            const auto& syn = trap["synthetic"];
            SyntheticShapeModel model;
            model.pitch = number(syn["pitch_um"], "trap.synthetic.pitch_um") * units::um;
            model.width = number(syn["width_um"], "trap.synthetic.width_um") * units::um;
            model.spacing = number(syn["spacing_um"], "trap.synthetic.spacing_um") * units::um;
            const auto centers = detail::numbers(syn["centers_um"], "trap.synthetic.centers_um");
            if (centers.empty()) {
                model.centers = {0.0, model.pitch};
            } else {
                model.centers.clear();
                for (double x : centers) {
                    model.centers.push_back(x * units::um);
                }
            }
            c.table = make_synthetic_table(model);
        }

        const auto& field = merged["field"];
        c.field.b0 = number(field["b0_mT"], "field.b0_mT") * units::mT;
        c.field.gradient = number(field["gradient_mT_per_m"], "field.gradient_mT_per_m") * units::mT;
        c.field.drift_rate = number(field["drift_nT_per_s"], "field.drift_nT_per_s") * units::nT;

        c.fringe.contrast = number(merged["fringe"]["a1"], "fringe.a1");
        c.fringe.offset = number(merged["fringe"]["a2"], "fringe.a2");
        c.fringe.validate();
        c.angles = count(merged["echo"]["angles"], "echo.angles", 4);
        c.n_per_angle = count(merged["echo"]["n_per_angle"], "echo.n_per_angle");

        const auto& coils = merged["coils"];
        c.coils.linear.a1 = number(coils["a1"], "coils.a1");
        c.coils.linear.a2 = number(coils["a2"], "coils.a2");
        c.coils.linear.b1 = number(coils["b1"], "coils.b1");
        c.coils.linear.b2 = number(coils["b2"], "coils.b2");
        c.coils.linear.a0 = number(coils["ambient"]["a0"], "coils.ambient.a0");
        c.coils.linear.b0 = number(coils["ambient"]["b0"], "coils.ambient.b0");
        c.coils.quadratic = number(coils["quadratic_per_A"], "coils.quadratic_per_A");
        c.coils.linear.validate();

        const double reach = std::abs(c.table.center(1) - c.table.center(0));
        auto check_distance = [&](double d, const std::string& what) {
            if (!(d > 0.0) || d >= reach) {
                throw ConfigError("config: " + what + " must lie strictly between 0 and the segment separation");
            }
            return d;
        };

        const auto& scan = merged["scan"];
        for (double d : detail::numbers(scan["distances_um"], "scan.distances_um")) {
            c.scan_distances.push_back(check_distance(d * units::um, "scan.distances_um"));
        }
        if (c.scan_distances.size() < 2) {
            throw ConfigError("config: scan.distances_um needs at least two distances");
        }
        for (const auto& item : scan["cases"]) {
            if (!item.is_object()) {
                throw ConfigError("config: scan.cases entries must be objects");
            }
            GradientCase gc;
            gc.label = item.value("label", "case" + std::to_string(c.scan_cases.size() + 1));
            const bool has_currents = item.contains("i1_A") || item.contains("i2_A");
            const bool has_gradient = item.contains("gradient_mT_per_m");
            if (has_currents == has_gradient) {
                throw ConfigError("config: scan case '" + gc.label + "' needs either i1_A/i2_A or gradient_mT_per_m");
            }
            for (const auto& [key, value] : item.items()) {
                if (key != "label" && key != "i1_A" && key != "i2_A" && key != "gradient_mT_per_m") {
                    throw ConfigError("config: unknown key 'scan.cases[]." + key + "'");
                }
            }
            if (has_currents) {
                const double i1 = number(item.value("i1_A", json(0.0)), "scan.cases[].i1_A");
                const double i2 = number(item.value("i2_A", json(0.0)), "scan.cases[].i2_A");
                CalibrationMeasurement{i1, i2, 0.0, 1.0, 0.0}.validate();
                gc.currents = {i1, i2};
                gc.gradient = c.coils.gradient(i1, i2);
            } else {
                gc.gradient = number(item["gradient_mT_per_m"], "scan.cases[].gradient_mT_per_m") * units::mT;
            }
            c.scan_cases.push_back(gc);
        }
        if (c.scan_cases.empty()) {
            throw ConfigError("config: scan.cases must not be empty");
        }

        const auto& running = merged["running"];
        c.running_distance = check_distance(number(running["distance_um"], "running.distance_um") * units::um,
                                            "running.distance_um");
        c.running_delta_b = number(running["delta_b_nT"], "running.delta_b_nT") * units::nT;
        c.running_count = count(running["count"], "running.count", 2);
        const auto mode = running["error_mode"].get<std::string>();
        if (mode == "standard-error") {
            c.running_mode = RunningErrorMode::StandardError;
        } else if (mode == "previous-means") {
            c.running_mode = RunningErrorMode::PreviousMeansSpread;
        } else {
            throw ConfigError("config: running.error_mode must be 'standard-error' or 'previous-means'");
        }

        const auto& allan = merged["allan"];
        c.allan_distance = check_distance(number(allan["distance_um"], "allan.distance_um") * units::um,
                                          "allan.distance_um");
        c.allan_estimates = count(allan["estimates"], "allan.estimates", 2);
        c.seconds_per_cycle = number(allan["seconds_per_cycle"], "allan.seconds_per_cycle");
        if (!(c.seconds_per_cycle > 0.0)) {
            throw ConfigError("config: allan.seconds_per_cycle must be positive");
        }

        const auto& cal = merged["calibration"];
        c.calibration.target_b0 = c.field.b0;
        c.calibration.tolerance = number(cal["tolerance_T_per_m"], "calibration.tolerance_T_per_m");
        if (!(c.calibration.tolerance > 0.0)) {
            throw ConfigError("config: calibration.tolerance_T_per_m must be positive");
        }
        c.calibration.max_iterations = count(cal["max_iter"], "calibration.max_iter");
        c.calibration.noise_sigmas = number(cal["noise_sigmas"], "calibration.noise_sigmas");
        c.calibration.assume_no_ambient = cal["assume_no_ambient"].get<bool>();
        for (const auto& pair : cal["initial_currents_A"]) {
            c.initial_currents.push_back(detail::current_pair(pair, "calibration.initial_currents_A"));
            CalibrationMeasurement{c.initial_currents.back().first, c.initial_currents.back().second, 0.0, 1.0, 0.0}
                .validate();
        }
        if (c.initial_currents.size() < (c.calibration.assume_no_ambient ? 2u : 3u)) {
            throw ConfigError("config: calibration.initial_currents_A has too few measurements for the coil model");
        }
        c.calibration_distance = check_distance(number(cal["distance_um"], "calibration.distance_um") * units::um,
                                                "calibration.distance_um");
        c.calibration_n = count(cal["n_per_angle"], "calibration.n_per_angle");
        c.separation = number(cal["separation_um"], "calibration.separation_um") * units::um;
        if (!(c.separation > 0.0)) {
            throw ConfigError("config: calibration.separation_um must be positive");
        }

        double max_distance = 0.0;
        for (double d : c.scan_distances) {
            max_distance = std::max(max_distance, d);
        }
        c.field.validate(max_distance);
        for (const auto& gc : c.scan_cases) {
            FieldModel{c.field.b0, gc.gradient, 0.0}.validate(max_distance);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        // module invariants surface as configuration errors before any run
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

}  // namespace ionmag::cli
