#pragma once

#include <cmath>
#include <cstdint>
#include <memory>

#include "calibration.hpp"
#include "estimation.hpp"
#include "random.hpp"
#include "spin_physics.hpp"

namespace ionmag {

/// "True" coil response used to drive simulated calibration runs. The linear
/// part is a CoilModel; `quadratic` adds a relative correction per ampere,
/// g = a0 + a1 I1 (1 + q I1) + a2 I2 (1 + q I2), and likewise for the field.
struct CoilPhysics {
    CoilModel linear;
    double quadratic = 0.0;  // 1/A

    double gradient(double i1, double i2) const {
        return linear.a0 + linear.a1 * i1 * (1.0 + quadratic * i1) + linear.a2 * i2 * (1.0 + quadratic * i2);
    }
    double field(double i1, double i2) const {
        return linear.b0 + linear.b1 * i1 * (1.0 + quadratic * i1) + linear.b2 * i2 * (1.0 + quadratic * i2);
    }
};

/// Model whose zero-gradient root at `target_b0` is (i1, i2), with no ambient
/// terms and equal field response of both coils. `a1` sets the gradient scale.
inline CoilModel coil_model_with_root(double i1, double i2, double target_b0, double a1) {
    if (!(i1 > 0.0) || !(i2 > 0.0)) {
        throw DomainError("coil_model_with_root: root currents must be positive");
    }
    CoilModel m;
    m.a1 = a1;
    m.a2 = -a1 * i1 / i2;
    m.b1 = target_b0 / (i1 + i2);
    m.b2 = m.b1;
    return m;
}

/// Measures the true gradient exactly; the reported uncertainty is nominal.
inline CoilExperiment noiseless_experiment(CoilPhysics physics, double nominal_sigma = 1e-12) {
    return [physics, nominal_sigma](double i1, double i2) {
        return CalibrationMeasurement{i1, i2, physics.gradient(i1, i2), nominal_sigma, physics.field(i1, i2)};
    };
}

/// Gradient measured through a three-point echo on a transport with
/// displacement-time integral `integral` (m s) and `n` interrogations per
/// angle. Successive calls draw from successive child streams of `seed`.
inline CoilExperiment shot_noise_experiment(CoilPhysics physics, double integral, FringeParams fringe, std::uint64_t n,
                                            std::uint64_t seed) {
    if (!(integral > 0.0)) {
        throw DomainError("shot_noise_experiment: displacement-time integral must be positive");
    }
    fringe.validate();
    auto calls = std::make_shared<std::uint64_t>(0);
    return [=](double i1, double i2) {
        const double scale = PhysicalConstants::gyromagnetic * integral;
        const double g = physics.gradient(i1, i2);
        const auto rec = sample_echo_record(g * scale, fringe, three_point_angles(), n, derive_key(seed, {(*calls)++}));
        const auto est = three_point_estimate(rec);
        return CalibrationMeasurement{i1, i2, est.phase / scale, est.sigma / scale, physics.field(i1, i2)};
    };
}

/// One-standard-error gradient resolution of a three-point measurement at
/// zero phase.
inline double shot_noise_gradient_floor(double integral, FringeParams fringe, std::uint64_t n) {
    return shot_noise_sigma(fringe, 0.0, static_cast<double>(n)) / (PhysicalConstants::gyromagnetic * integral);
}

}  // namespace ionmag
