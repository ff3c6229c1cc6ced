#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "linalg.hpp"
#include "spin_physics.hpp"

namespace ionmag {

enum class EstimateMethod { FringeFit, ThreePoint };

inline const char* to_string(EstimateMethod m) { return m == EstimateMethod::FringeFit ? "fringe-fit" : "three-point"; }

struct PhaseEstimate {
    double phase = 0.0;  // rad
    double sigma = 0.0;  // rad
    EstimateMethod method = EstimateMethod::FringeFit;
    std::uint64_t interrogations = 0;
};

// ---------------------------------------------------------------------------
// fringe fit

/// One observed fringe point: the analysis angle, the number of
/// interrogations, and the measured spin-up fraction.
struct FringeSample {
    double angle = 0.0;
    double n = 1.0;
    double up_fraction = 0.0;
};

inline std::vector<FringeSample> fringe_samples(const EchoRecord& record) {
    std::vector<FringeSample> out;
    out.reserve(record.points.size());
    for (const auto& p : record.points) {
        out.push_back({p.angle, static_cast<double>(p.n), p.up_fraction()});
    }
    return out;
}

struct FringeFit {
    double contrast = 0.0;  // A1
    double offset = 0.0;    // A2
    double phase = 0.0;     // rad, in (-pi, pi]
    double phase_sigma = 0.0;
    // covariance of (A1 cos phi, -A1 sin phi, A2), the linear coefficients
    std::array<std::array<double, 3>, 3> covariance{};
};

namespace detail {
// Binomial variance of an observed fraction, with the fraction kept at least
// half a count away from 0 and 1 so no point gets infinite weight.
inline double fraction_variance(double f, double n) {
    const double edge = 0.5 / n;
    const double q = std::clamp(f, edge, 1.0 - edge);
    return q * (1.0 - q) / n;
}

inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * pi);
    return a < 0.0 ? a + 2.0 * pi : a;
}
}  // namespace detail

/// Linear least-squares fit of f(theta) = c cos(theta) + s sin(theta) + A2,
/// weighted by the binomial variance of each point. Returns the equivalent
/// A1 cos(theta + phi) + A2 parameters.
inline FringeFit fit_fringe(std::span<const FringeSample> samples) {
    std::vector<double> distinct;
    for (const auto& s : samples) {
        const double a = detail::wrap_angle(s.angle);
        if (std::none_of(distinct.begin(), distinct.end(), [&](double d) { return std::abs(d - a) < 1e-9; })) {
            distinct.push_back(a);
        }
    }
    if (distinct.size() < 4) {
        throw FitError("fit_fringe: need at least 4 distinct analysis angles");
    }
    std::sort(distinct.begin(), distinct.end());
    // largest circular gap must be below pi for the angles to span more than pi
    double gap = distinct.front() + 2.0 * pi - distinct.back();
    for (std::size_t i = 1; i < distinct.size(); ++i) {
        gap = std::max(gap, distinct[i] - distinct[i - 1]);
    }
    if (gap >= pi) {
        throw FitError("fit_fringe: analysis angles must span more than pi");
    }

    linalg::Matrix design(samples.size(), 3);
    std::vector<double> y(samples.size());
    std::vector<double> w(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        design(i, 0) = std::cos(samples[i].angle);
        design(i, 1) = std::sin(samples[i].angle);
        design(i, 2) = 1.0;
        y[i] = samples[i].up_fraction;
        w[i] = 1.0 / detail::fraction_variance(samples[i].up_fraction, samples[i].n);
    }
    const auto ls = linalg::weighted_least_squares(design, y, w);

    const double c = ls.coefficients[0];
    const double s = ls.coefficients[1];
    FringeFit fit;
    fit.contrast = std::hypot(c, s);
    fit.offset = ls.coefficients[2];
    if (fit.contrast < 1e-9) {
        throw FitError("fit_fringe: fringe has no contrast, phase undefined");
    }
    fit.phase = std::atan2(-s, c);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            fit.covariance[a][b] = ls.covariance(a, b);
        }
    }
    const double a2 = fit.contrast * fit.contrast;
    const double jc = s / a2;
    const double js = -c / a2;
    const auto& cov = fit.covariance;
    fit.phase_sigma = std::sqrt(jc * jc * cov[0][0] + 2.0 * jc * js * cov[0][1] + js * js * cov[1][1]);
    return fit;
}

inline FringeFit fit_fringe(const EchoRecord& record) {
    const auto samples = fringe_samples(record);
    return fit_fringe(std::span<const FringeSample>(samples));
}

inline PhaseEstimate fringe_phase_estimate(const EchoRecord& record) {
    const auto fit = fit_fringe(record);
    return {fit.phase, fit.phase_sigma, EstimateMethod::FringeFit, record.total_interrogations()};
}

// ---------------------------------------------------------------------------
// three-point estimator

inline constexpr double contrast_collapse_epsilon = 1e-6;

/// S = (p(pi/2) - p(pi)) / (p(0) - p(pi)); unchanged by any affine map of the
/// three probabilities.
inline double three_point_signal(double p0, double p_half, double p_pi) {
    const double denom = p0 - p_pi;
    if (std::abs(denom) < contrast_collapse_epsilon) {
        throw ContrastCollapseError("three_point_signal: p(0) and p(pi) coincide, contrast collapsed");
    }
    return (p_half - p_pi) / denom;
}

inline double phase_from_signal(double signal) { return std::atan(1.0 - 2.0 * signal); }

/// d phi / d p for p(0), p(pi/2), p(pi), from the chain rule through S.
inline std::array<double, 3> three_point_partials(double p0, double p_half, double p_pi) {
    const double signal = three_point_signal(p0, p_half, p_pi);
    const double denom = p0 - p_pi;
    const double u = 1.0 - 2.0 * signal;
    const double dphi_ds = -2.0 / (1.0 + u * u);
    return {dphi_ds * -(p_half - p_pi) / (denom * denom), dphi_ds / denom,
            dphi_ds * (p_half - p0) / (denom * denom)};
}

/// Propagated phase error of the three-point estimator for probabilities p_i
/// measured n_i times each.
inline double three_point_sigma(std::array<double, 3> p, std::array<double, 3> n) {
    const auto d = three_point_partials(p[0], p[1], p[2]);
    double var = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
            throw DomainError("three_point_sigma: probability outside [0, 1]");
        }
        var += d[i] * d[i] * p[i] * (1.0 - p[i]) / n[i];
    }
    if (!(var > 0.0)) {
        throw DegenerateVarianceError("three_point_sigma: every projection is deterministic, variance vanishes");
    }
    return std::sqrt(var);
}

/// Quantum projection noise limit of the three-point phase estimate with N
/// interrogations per analysis angle.
inline double shot_noise_sigma(const FringeParams& fringe, double phi, double n) {
    fringe.validate();
    if (!(n >= 1.0)) {
        throw DomainError("shot_noise_sigma: need N >= 1");
    }
    const std::array<double, 3> p{echo_probability(0.0, phi, fringe), echo_probability(pi / 2.0, phi, fringe),
                                  echo_probability(pi, phi, fringe)};
    return three_point_sigma(p, {n, n, n});
}

/// Three-point phase estimate from a record holding the angles 0, pi/2 and pi.
inline PhaseEstimate three_point_estimate(const EchoRecord& record) {
    const std::array<double, 3> targets{0.0, pi / 2.0, pi};
    std::array<const EchoPoint*, 3> found{};
    for (const auto& p : record.points) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (std::abs(detail::wrap_angle(p.angle) - targets[i]) < 1e-9) {
                found[i] = &p;
            }
        }
    }
    if (std::any_of(found.begin(), found.end(), [](const EchoPoint* p) { return p == nullptr; })) {
        throw FitError("three_point_estimate: record lacks one of the angles 0, pi/2, pi");
    }
    std::array<double, 3> f{};
    std::array<double, 3> n{};
    std::array<double, 3> q{};
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        f[i] = found[i]->up_fraction();
        n[i] = static_cast<double>(found[i]->n);
        const double edge = 0.5 / n[i];
        q[i] = std::clamp(f[i], edge, 1.0 - edge);
        total += found[i]->n;
    }
    const double phase = phase_from_signal(three_point_signal(f[0], f[1], f[2]));
    // plug-in error at the observed fractions
    const auto d = three_point_partials(f[0], f[1], f[2]);
    double var = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        var += d[i] * d[i] * q[i] * (1.0 - q[i]) / n[i];
    }
    return {phase, std::sqrt(var), EstimateMethod::ThreePoint, total};
}

// ---------------------------------------------------------------------------
// gradient regression

/// Remove 2 pi jumps between consecutive phases (in the given order).
inline std::vector<double> unwrap_phases(std::span<const double> phases) {
    std::vector<double> out(phases.begin(), phases.end());
    for (std::size_t i = 1; i < out.size(); ++i) {
        const double jump = out[i] - out[i - 1];
        out[i] -= 2.0 * pi * std::round(jump / (2.0 * pi));
    }
    return out;
}

struct GradientPoint {
    double integral = 0.0;  // m s, displacement-time integral
    PhaseEstimate estimate;
};

struct GradientFit {
    double slope = 0.0;  // rad / (m s)
    double slope_se = 0.0;
    double intercept = 0.0;  // rad
    double intercept_se = 0.0;
    double gradient = 0.0;  // T/m
    double gradient_se = 0.0;
    double chi2 = 0.0;
    std::vector<double> residuals;  // rad

    double slope_rad_per_um_ms() const { return slope * units::um_ms; }
};

/// Weighted straight-line fit of phase against displacement-time integral;
/// the slope divided by g_J mu_B / hbar is the field gradient.
inline GradientFit gradient_fit(std::span<const GradientPoint> points) {
    if (points.size() < 2) {
        throw RankError("gradient_fit: need at least two points");
    }
    const auto [lo, hi] = std::minmax_element(points.begin(), points.end(), [](const auto& a, const auto& b) {
        return a.integral < b.integral;
    });
    if (!(hi->integral > lo->integral)) {
        throw RankError("gradient_fit: all displacement-time integrals are equal");
    }
    linalg::Matrix design(points.size(), 2);
    std::vector<double> y(points.size());
    std::vector<double> w(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!(points[i].estimate.sigma > 0.0)) {
            throw InvariantError("gradient_fit: phase uncertainties must be positive");
        }
        design(i, 0) = points[i].integral;
        design(i, 1) = 1.0;
        y[i] = points[i].estimate.phase;
        w[i] = 1.0 / (points[i].estimate.sigma * points[i].estimate.sigma);
    }
    const auto ls = linalg::weighted_least_squares(design, y, w);

    GradientFit fit;
    fit.slope = ls.coefficients[0];
    fit.intercept = ls.coefficients[1];
    fit.slope_se = std::sqrt(ls.covariance(0, 0));
    fit.intercept_se = std::sqrt(ls.covariance(1, 1));
    fit.gradient = fit.slope / PhysicalConstants::gyromagnetic;
    fit.gradient_se = fit.slope_se / PhysicalConstants::gyromagnetic;
    fit.chi2 = ls.chi2;
    fit.residuals.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        fit.residuals.push_back(y[i] - (fit.slope * points[i].integral + fit.intercept));
    }
    return fit;
}

// ---------------------------------------------------------------------------
// running means and Allan deviation

enum class RunningErrorMode {
    StandardError,      // sample standard deviation of the prefix / sqrt(k)
    PreviousMeansSpread // rms distance of the earlier running means from the latest one
};

struct RunningMeanPoint {
    double mean = 0.0;
    double error = 0.0;
};

inline std::vector<RunningMeanPoint> running_mean_series(std::span<const double> estimates,
                                                         RunningErrorMode mode = RunningErrorMode::StandardError) {
    if (estimates.empty()) {
        throw DomainError("running_mean_series: empty sequence");
    }
    std::vector<RunningMeanPoint> out;
    out.reserve(estimates.size());
    // Welford accumulation
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const double k = static_cast<double>(i + 1);
        const double delta = estimates[i] - mean;
        mean += delta / k;
        m2 += delta * (estimates[i] - mean);

        double error = 0.0;
        if (i > 0) {
            if (mode == RunningErrorMode::StandardError) {
                error = std::sqrt(m2 / (k - 1.0)) / std::sqrt(k);
            } else {
                double acc = 0.0;
                for (std::size_t j = 0; j < i; ++j) {
                    const double d = out[j].mean - mean;
                    acc += d * d;
                }
                error = std::sqrt(acc / static_cast<double>(i));
            }
        }
        out.push_back({mean, error});
    }
    return out;
}

struct AllanSeries {
    std::vector<std::size_t> sizes;
    std::vector<double> deviations;
    std::vector<std::size_t> omitted;  // requested sizes with fewer than two blocks
    std::size_t estimate_count = 0;
};

/// Non-overlapping Allan deviation of a sequence of estimates for each block size n:
/// sqrt(mean of squared successive block-mean differences / 2).
inline AllanSeries allan_deviation(std::span<const double> estimates, std::span<const std::size_t> sizes) {
    AllanSeries out;
    out.estimate_count = estimates.size();
    for (std::size_t n : sizes) {
        if (n == 0 || estimates.size() < 2 * n) {
            out.omitted.push_back(n);
            continue;
        }
        const std::size_t blocks = estimates.size() / n;
        std::vector<double> means(blocks);
        for (std::size_t b = 0; b < blocks; ++b) {
            const auto first = estimates.begin() + static_cast<std::ptrdiff_t>(b * n);
            means[b] = std::accumulate(first, first + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
        }
        double acc = 0.0;
        for (std::size_t b = 1; b < blocks; ++b) {
            const double d = means[b] - means[b - 1];
            acc += d * d;
        }
        out.sizes.push_back(n);
        out.deviations.push_back(std::sqrt(acc / (2.0 * static_cast<double>(blocks - 1))));
    }
    return out;
}

/// Relative standard error of a non-overlapping Allan deviation over `blocks`
/// blocks of white noise. Neighbouring block differences share a block, which
/// inflates the variance of their mean square by 3/2.
inline double allan_relative_error(std::size_t blocks) {
    if (blocks < 2) {
        throw DomainError("allan_relative_error: need at least two blocks");
    }
    return std::sqrt(3.0 / (4.0 * static_cast<double>(blocks - 1)));
}

/// Block sizes 1, 2, 4, ... not exceeding half the sequence length.
inline std::vector<std::size_t> octave_sizes(std::size_t estimate_count) {
    std::vector<std::size_t> sizes;
    for (std::size_t n = 1; 2 * n <= estimate_count; n *= 2) {
        sizes.push_back(n);
    }
    return sizes;
}

/// Relative field difference dB / B0 implied by a phase measured with a
/// transport of displacement-time integral `integral` (m s) over `probe_distance` (m).
inline double phase_to_relative_field(double phi, double integral, double probe_distance, double b0) {
    if (!(integral > 0.0)) {
        throw DomainError("phase_to_relative_field: displacement-time integral must be positive");
    }
    if (!(b0 > 0.0) || !(probe_distance > 0.0)) {
        throw DomainError("phase_to_relative_field: B0 and probe distance must be positive");
    }
    const double effective_time = integral / probe_distance;
    const double delta_b = phi / PhysicalConstants::gyromagnetic / effective_time;
    return delta_b / b0;
}

}  // namespace ionmag
