#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "trap_transport.hpp"

namespace ionmag {

/// Splitting between the m_J = +1/2 and -1/2 ground-state sublevels, in Hz.
inline double zeeman_splitting(double field) {
    if (field < 0.0) {
        throw DomainError("zeeman_splitting: field magnitude must be non-negative");
    }
    return PhysicalConstants::g_j * PhysicalConstants::bohr_magneton * field / PhysicalConstants::planck;
}

/// Linear axial field B(x) = B0 + g (x - x_start).
///
/// `drift_rate` is a laboratory-time drift (T/s) of the field difference
/// between the transport start and the turning point; 0 disables it.
struct FieldModel {
    double b0 = 0.7 * units::mT;
    double gradient = 0.0;  // T/m
    double drift_rate = 0.0;

    void validate(double reach = 0.0) const {
        if (!(b0 > 0.0)) {
            throw InvariantError("field: B0 must be positive");
        }
        if (!(b0 - std::abs(gradient) * reach > 0.0)) {
            throw InvariantError("field: B0 + g x must stay positive over the reachable positions");
        }
    }

    double gradient_at(double lab_time, double excursion) const {
        if (drift_rate == 0.0 || excursion <= 0.0) {
            return gradient;
        }
        return gradient + drift_rate * lab_time / excursion;
    }
};

/// p(theta, phi) = A1 cos(theta + phi) + A2
struct FringeParams {
    double contrast = 0.31;  // A1
    double offset = 0.44;    // A2

    void validate() const {
        if (!(contrast > 0.0 && contrast <= 0.5)) {
            throw InvariantError("fringe: contrast A1 must lie in (0, 0.5]");
        }
        if (!(offset - contrast >= 0.0 && offset + contrast <= 1.0)) {
            throw InvariantError("fringe: A2 - A1 >= 0 and A2 + A1 <= 1 are required");
        }
    }
};

inline double echo_probability(double theta, double phi, const FringeParams& fringe) {
    const double p = fringe.contrast * std::cos(theta + phi) + fringe.offset;
    return std::clamp(p, 0.0, 1.0);
}

/// Echo phase from a transport through a linear gradient:
/// (g_J mu_B / hbar) * g * integral of (x(t) - x(0)) dt.
///
/// `lab_time` is when the shot is taken; it only matters when the field drifts.
inline double accumulated_phase(const Trajectory& traj, const FieldModel& field, double lab_time = 0.0) {
    const double g = field.gradient_at(lab_time, traj.max_displacement());
    return PhysicalConstants::gyromagnetic * g * displacement_time_integral(traj);
}

/// Spin-up count of N interrogations with up-probability p.
inline std::uint64_t simulate_interrogations(double p, std::uint64_t n, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw DomainError("simulate_interrogations: probability outside [0, 1]");
    }
    if (n == 0) {
        throw DomainError("simulate_interrogations: need at least one interrogation");
    }
    return sample_binomial(p, n, seed);
}

struct EchoPoint {
    double angle = 0.0;  // rad, phase of the final pi/2 pulse
    std::uint64_t n = 0;
    std::uint64_t k = 0;  // spin-up count

    double up_fraction() const { return static_cast<double>(k) / static_cast<double>(n); }
};

struct EchoRecord {
    std::uint64_t seed = 0;
    double simulated_phase = 0.0;  // rad, the phase that drove the sampler
    std::vector<EchoPoint> points;

    std::uint64_t total_interrogations() const {
        std::uint64_t total = 0;
        for (const auto& p : points) {
            total += p.n;
        }
        return total;
    }
};

/// `count` analysis angles uniformly spaced over [0, 2 pi).
inline std::vector<double> uniform_angles(std::size_t count) {
    std::vector<double> angles(count);
    for (std::size_t i = 0; i < count; ++i) {
        angles[i] = 2.0 * pi * static_cast<double>(i) / static_cast<double>(count);
    }
    return angles;
}

inline std::vector<double> three_point_angles() { return {0.0, pi / 2.0, pi}; }

/// Sample an echo record for a known echo phase. Angle i draws from the
/// stream derive_key(seed, {i}).
inline EchoRecord sample_echo_record(double phase, const FringeParams& fringe, std::span<const double> angles,
                                     std::uint64_t n_per_angle, std::uint64_t seed) {
    fringe.validate();
    EchoRecord record;
    record.seed = seed;
    record.simulated_phase = phase;
    record.points.reserve(angles.size());
    for (std::size_t i = 0; i < angles.size(); ++i) {
        const double p = echo_probability(angles[i], phase, fringe);
        const auto k = simulate_interrogations(p, n_per_angle, derive_key(seed, {i}));
        record.points.push_back({angles[i], n_per_angle, k});
    }
    return record;
}

/// Spin-echo experiment with the transport between the first pi/2 and the pi
/// pulse: phase from the trajectory, then N interrogations per analysis angle.
inline EchoRecord run_echo_experiment(const Trajectory& traj, const FieldModel& field, const FringeParams& fringe,
                                      std::span<const double> angles, std::uint64_t n_per_angle, std::uint64_t seed,
                                      double lab_time = 0.0) {
    return sample_echo_record(accumulated_phase(traj, field, lab_time), fringe, angles, n_per_angle, seed);
}

}  // namespace ionmag
