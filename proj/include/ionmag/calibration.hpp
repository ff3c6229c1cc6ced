#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "linalg.hpp"

namespace ionmag {

/// Gradient and offset field as linear functions of the two coil currents:
///   g(I) = a0 + a1 I1 + a2 I2      (T/m)
///   B(I) = b0 + b1 I1 + b2 I2      (T)
struct CoilModel {
    double a0 = 0.0;
    double a1 = 0.0;
    double a2 = 0.0;
    double b0 = 0.0;
    double b1 = 0.0;
    double b2 = 0.0;

    double gradient(double i1, double i2) const { return a0 + a1 * i1 + a2 * i2; }
    double field(double i1, double i2) const { return b0 + b1 * i1 + b2 * i2; }
    double determinant() const { return a1 * b2 - a2 * b1; }

    void validate() const {
        if (a1 == 0.0 && a2 == 0.0) {
            throw InvariantError("coil model: gradient does not depend on the currents");
        }
        const double scale = std::hypot(a1, a2) * std::hypot(b1, b2);
        if (!(std::abs(determinant()) > 1e-12 * scale)) {
            throw RankError("coil model: gradient and field responses are parallel, currents are not solvable");
        }
    }
};

struct CalibrationMeasurement {
    double i1 = 0.0;  // A
    double i2 = 0.0;  // A
    double gradient = 0.0;        // T/m
    double gradient_sigma = 1.0;  // T/m
    double b0 = 0.0;              // T

    void validate() const {
        if (i1 < 0.0 || i2 < 0.0) {
            throw InvariantError("calibration measurement: currents must be non-negative");
        }
        if (!(gradient_sigma > 0.0)) {
            throw InvariantError("calibration measurement: gradient uncertainty must be positive");
        }
    }
};

/// Least-squares coil model from measured gradients (weighted by 1/sigma^2)
/// and offset fields. Without ambient terms a0 = b0 = 0 and two measurements
/// determine the model exactly.
inline CoilModel fit_coil_model(std::span<const CalibrationMeasurement> measurements, bool assume_no_ambient = true) {
    const std::size_t params = assume_no_ambient ? 2 : 3;
    if (measurements.size() < params) {
        throw RankError("fit_coil_model: need at least " + std::to_string(params) + " measurements");
    }
    linalg::Matrix design(measurements.size(), params);
    std::vector<double> grad(measurements.size());
    std::vector<double> field(measurements.size());
    std::vector<double> grad_w(measurements.size());
    std::vector<double> field_w(measurements.size(), 1.0);
    for (std::size_t i = 0; i < measurements.size(); ++i) {
        const auto& m = measurements[i];
        m.validate();
        std::size_t c = 0;
        if (!assume_no_ambient) {
            design(i, c++) = 1.0;
        }
        design(i, c++) = m.i1;
        design(i, c++) = m.i2;
        grad[i] = m.gradient;
        field[i] = m.b0;
        grad_w[i] = 1.0 / (m.gradient_sigma * m.gradient_sigma);
    }
    const auto g = linalg::weighted_least_squares(design, grad, grad_w);
    const auto b = linalg::weighted_least_squares(design, field, field_w);

    CoilModel model;
    const std::size_t off = assume_no_ambient ? 0 : 1;
    if (!assume_no_ambient) {
        model.a0 = g.coefficients[0];
        model.b0 = b.coefficients[0];
    }
    model.a1 = g.coefficients[off];
    model.a2 = g.coefficients[off + 1];
    model.b1 = b.coefficients[off];
    model.b2 = b.coefficients[off + 1];
    return model;
}

struct CoilCurrents {
    double i1 = 0.0;
    double i2 = 0.0;
    bool reversed_polarity = false;  // a solution current came out negative
};

/// Currents with zero gradient and offset field `target_b0` (Cramer's rule).
inline CoilCurrents solve_zero_gradient(const CoilModel& model, double target_b0) {
    model.validate();
    const double det = model.determinant();
    const double rg = -model.a0;
    const double rb = target_b0 - model.b0;
    CoilCurrents c;
    c.i1 = (rg * model.b2 - model.a2 * rb) / det;
    c.i2 = (model.a1 * rb - rg * model.b1) / det;
    if (!std::isfinite(c.i1) || !std::isfinite(c.i2)) {
        throw RankError("solve_zero_gradient: singular coil system");
    }
    c.reversed_polarity = c.i1 < 0.0 || c.i2 < 0.0;
    return c;
}

struct CalibrationStep {
    std::size_t iteration = 0;  // 0 for the initial measurements
    CalibrationMeasurement measurement;
};

struct CalibrationOptions {
    double target_b0 = 0.7 * units::mT;
    double tolerance = 1e-6;  // T/m
    std::size_t max_iterations = 10;
    bool assume_no_ambient = true;
    // a measured gradient within this many of its own standard errors of zero
    // is indistinguishable from zero and also ends the loop
    double noise_sigmas = 2.0;
};

struct CalibrationResult {
    double i1 = 0.0;
    double i2 = 0.0;
    std::size_t iterations = 0;
    std::vector<CalibrationStep> history;
    CoilModel model;

    const CalibrationMeasurement& final_measurement() const { return history.back().measurement; }
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, CalibrationResult best) : std::runtime_error(what), best_(std::move(best)) {}
    const CalibrationResult& best_so_far() const { return best_; }

private:
    CalibrationResult best_;
};

using CoilExperiment = std::function<CalibrationMeasurement(double i1, double i2)>;

/// Automated extrapolate-measure loop: fit the coil model, solve for zero
/// gradient, measure there, and repeat. After each refit the model offsets are
/// re-anchored on the newest measurement, so slope errors from a non-linear
/// coil response shrink geometrically instead of biasing the root.
inline CalibrationResult closed_loop_calibrate(const CoilExperiment& experiment,
                                               std::span<const CalibrationMeasurement> initial,
                                               const CalibrationOptions& opt = {}) {
    if (!(opt.tolerance > 0.0)) {
        throw InvariantError("closed_loop_calibrate: tolerance must be positive");
    }
    std::vector<CalibrationMeasurement> all(initial.begin(), initial.end());
    CalibrationResult result;
    for (const auto& m : all) {
        result.history.push_back({0, m});
    }
    CoilModel model = fit_coil_model(all, opt.assume_no_ambient);

    CalibrationResult best;
    double best_abs = std::numeric_limits<double>::infinity();
    for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
        const auto currents = solve_zero_gradient(model, opt.target_b0);
        // the power supplies cannot reverse; clamp and let the next refit correct
        const double i1 = std::max(currents.i1, 0.0);
        const double i2 = std::max(currents.i2, 0.0);
        auto meas = experiment(i1, i2);
        meas.i1 = i1;
        meas.i2 = i2;
        all.push_back(meas);
        result.history.push_back({it, meas});
        result.i1 = i1;
        result.i2 = i2;
        result.iterations = it;
        result.model = model;

        if (std::abs(meas.gradient) < best_abs) {
            best_abs = std::abs(meas.gradient);
            best = result;
        }
        const double threshold = std::max(opt.tolerance, opt.noise_sigmas * meas.gradient_sigma);
        if (std::abs(meas.gradient) <= threshold) {
            return result;
        }

        try {
            model = fit_coil_model(all, opt.assume_no_ambient);
        } catch (const RankError&) {
            // keep the previous slopes
        }
        model.a0 += meas.gradient - model.gradient(i1, i2);
        model.b0 += meas.b0 - model.field(i1, i2);
    }
    throw ConvergenceError("closed_loop_calibrate: gradient not below tolerance after " +
                               std::to_string(opt.max_iterations) + " iterations",
                           best);
}

enum class CoherenceMode { SingleIon, DfsPair };

/// Time for a 1 rad relative phase between two points `length` apart in a
/// gradient: hbar / (g_J mu_B * gradient * length). For a DFS pair `length`
/// is the ion separation; for a single ion it is the transport distance.
/// Zero gradient gives +infinity.
inline double coherence_estimate(double gradient, double length, CoherenceMode mode = CoherenceMode::DfsPair,
                                 double phase_threshold = 1.0) {
    if (gradient < 0.0) {
        throw DomainError("coherence_estimate: gradient magnitude must be non-negative");
    }
    if (!(length > 0.0)) {
        throw DomainError(mode == CoherenceMode::DfsPair ? "coherence_estimate: ion separation must be positive"
                                                         : "coherence_estimate: transport distance must be positive");
    }
    if (gradient == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return phase_threshold / (PhysicalConstants::gyromagnetic * gradient * length);
}

}  // namespace ionmag
