#include "ionmag/estimation.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "test_support.hpp"

namespace ionmag {
namespace {

using units::um;

const FringeParams kRealistic{0.31, 0.44};

std::vector<FringeSample> noiseless_fringe(const FringeParams& f, double phi, std::vector<double> angles,
                                           double n = 200.0) {
    std::vector<FringeSample> out;
    for (double a : angles) {
        out.push_back({a, n, echo_probability(a, phi, f)});
    }
    return out;
}

double sample_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) {
        mean += x;
    }
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) {
        acc += (x - mean) * (x - mean);
    }
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------

TEST(FitFringeTest, NoiselessRoundTrip) {
    const auto samples = noiseless_fringe(kRealistic, 0.3, uniform_angles(100));
    const auto fit = fit_fringe(samples);
    EXPECT_NEAR(fit.contrast, 0.31, 1e-12);
    EXPECT_NEAR(fit.offset, 0.44, 1e-12);
    EXPECT_NEAR(fit.phase, 0.3, 1e-12);
    EXPECT_GT(fit.phase_sigma, 0.0);
}

TEST(FitFringeTest, PhaseSpreadMatchesShotNoise) {
    const auto angles = uniform_angles(100);
    std::vector<double> phases;
    double reported = 0.0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        const auto rec = sample_echo_record(0.3, kRealistic, angles, 200, derive_key(1234, {s}));
        const auto fit = fit_fringe(rec);
        phases.push_back(fit.phase);
        reported += fit.phase_sigma / 500.0;
    }
    const double spread = sample_std(phases);
    EXPECT_NEAR(spread / 0.016, 1.0, 0.10);
    EXPECT_NEAR(reported / spread, 1.0, 0.10);
}

TEST(FitFringeTest, ConstantDataIsDegenerate) {
    EchoRecord rec;
    for (double a : uniform_angles(20)) {
        rec.points.push_back({a, 200, 200});
    }
    EXPECT_THROW(fit_fringe(rec), FitError);
}

TEST(FitFringeTest, DegenerateAnglesRejected) {
    std::vector<FringeSample> two_angles;
    for (int i = 0; i < 10; ++i) {
        two_angles.push_back({i % 2 == 0 ? 0.0 : pi, 100.0, i % 2 == 0 ? 0.7 : 0.2});
    }
    EXPECT_THROW(fit_fringe(two_angles), FitError);
    // four angles crowded into less than pi
    EXPECT_THROW(fit_fringe(noiseless_fringe(kRealistic, 0.1, {0.0, 0.5, 1.0, 1.5})), FitError);
}

// ---------------------------------------------------------------------------

TEST(ThreePointTest, SignalAtZeroPhase) { EXPECT_NEAR(three_point_signal(0.75, 0.44, 0.13), 0.5, 1e-15); }

TEST(ThreePointTest, SignalAtQuarterPi) {
    const double ph = echo_probability(pi / 2, pi / 4, kRealistic);
    const double pp = echo_probability(pi, pi / 4, kRealistic);
    EXPECT_NEAR(ph, 0.2208, 1e-4);
    EXPECT_NEAR(pp, 0.2208, 1e-4);
    EXPECT_NEAR(three_point_signal(echo_probability(0, pi / 4, kRealistic), ph, pp), 0.0, 1e-15);
    EXPECT_NEAR(phase_from_signal(0.0), pi / 4, 1e-15);
}

TEST(ThreePointTest, ContrastCollapse) {
    EXPECT_THROW(three_point_signal(0.4, 0.3, 0.4), ContrastCollapseError);
    EXPECT_THROW(three_point_signal(0.4, 0.3, 0.4 + 5e-7), ContrastCollapseError);
}

TEST(ThreePointTest, PhaseFromSignal) {
    EXPECT_EQ(phase_from_signal(0.5), 0.0);
    EXPECT_NEAR(phase_from_signal(0.0), pi / 4, 1e-15);
    for (double s = -50.0; s < 50.0; s += 0.7) {
        EXPECT_GT(phase_from_signal(s), -pi / 2);
        EXPECT_LT(phase_from_signal(s), pi / 2);
    }
}

TEST(ThreePointTest, RoundTripIdentity) {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> phase(-1.5, 1.5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int f = 0; f < 20; ++f) {
        const double a1 = 0.05 + 0.45 * unit(gen);
        const double a2 = a1 + (1.0 - 2.0 * a1) * unit(gen);
        const FringeParams fringe{a1, a2};
        for (int i = 0; i < 50; ++i) {
            const double phi = phase(gen);
            const double s = three_point_signal(echo_probability(0, phi, fringe), echo_probability(pi / 2, phi, fringe),
                                                echo_probability(pi, phi, fringe));
            EXPECT_NEAR(phase_from_signal(s), phi, 1e-12);
        }
    }
}

TEST(ThreePointTest, SignalInvariantUnderAffineMaps) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double p0 = unit(gen), ph = unit(gen), pp = unit(gen);
        if (std::abs(p0 - pp) < 0.05) {
            continue;
        }
        const double a = (unit(gen) < 0.5 ? -1.0 : 1.0) * (0.1 + 3.0 * unit(gen));
        const double b = 4.0 * unit(gen) - 2.0;
        EXPECT_NEAR(three_point_signal(a * p0 + b, a * ph + b, a * pp + b), three_point_signal(p0, ph, pp), 1e-12);
    }
}

TEST(ShotNoiseTest, RealisticContrast) {
    const double k = shot_noise_sigma(kRealistic, 0.0, 1.0);
    EXPECT_NEAR(k, 1.8292, 1e-4);
    EXPECT_NEAR(k, 1.81, 0.04);
    EXPECT_NEAR(shot_noise_sigma(kRealistic, 0.0, 400.0), k / 20.0, 1e-15);
}

TEST(ShotNoiseTest, PerfectContrast) {
    EXPECT_NEAR(shot_noise_sigma(FringeParams{0.5, 0.5}, 0.0, 1.0), 1.0, 1e-15);
}

TEST(ShotNoiseTest, PartialsMatchFiniteDifferences) {
    const double p0 = 0.71, ph = 0.38, pp = 0.16;
    const auto d = three_point_partials(p0, ph, pp);
    auto phi = [](double a, double b, double c) { return phase_from_signal(three_point_signal(a, b, c)); };
    const double h = 1e-6;
    EXPECT_NEAR(d[0], (phi(p0 + h, ph, pp) - phi(p0 - h, ph, pp)) / (2 * h), 1e-7);
    EXPECT_NEAR(d[1], (phi(p0, ph + h, pp) - phi(p0, ph - h, pp)) / (2 * h), 1e-7);
    EXPECT_NEAR(d[2], (phi(p0, ph, pp + h) - phi(p0, ph, pp - h)) / (2 * h), 1e-7);
}

TEST(ShotNoiseTest, DegenerateCases) {
    EXPECT_THROW(shot_noise_sigma(kRealistic, 0.0, 0.5), DomainError);
    // perfect contrast at phi = pi/2: p(0) = p(pi)
    EXPECT_THROW(shot_noise_sigma(FringeParams{0.5, 0.5}, pi / 2, 10.0), ContrastCollapseError);
    EXPECT_THROW(three_point_sigma({1.0, 1.0, 0.0}, {10, 10, 10}), DegenerateVarianceError);
}

TEST(ShotNoiseTest, MonteCarloAgreement) {
    const auto angles = three_point_angles();
    std::vector<double> est;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        est.push_back(three_point_estimate(sample_echo_record(0.0, kRealistic, angles, 200, derive_key(8, {s}))).phase);
    }
    EXPECT_NEAR(sample_std(est) / shot_noise_sigma(kRealistic, 0.0, 200.0), 1.0, 0.05);
}

TEST(ShotNoiseTest, ScalingIsIndependentOfN) {
    const auto angles = three_point_angles();
    const double theory = shot_noise_sigma(kRealistic, 0.0, 1.0);
    for (std::uint64_t n : {50u, 200u, 1000u}) {
        std::vector<double> est;
        for (std::uint64_t s = 0; s < 3000; ++s) {
            est.push_back(three_point_estimate(sample_echo_record(0.0, kRealistic, angles, n, derive_key(n, {s}))).phase);
        }
        EXPECT_NEAR(sample_std(est) * std::sqrt(static_cast<double>(n)) / theory, 1.0, 0.07) << "N = " << n;
    }
}

TEST(ThreePointTest, EstimateFromRecord) {
    const auto rec = sample_echo_record(0.2, kRealistic, three_point_angles(), 10000, 99);
    const auto est = three_point_estimate(rec);
    EXPECT_EQ(est.method, EstimateMethod::ThreePoint);
    EXPECT_EQ(est.interrogations, 30000u);
    EXPECT_NEAR(est.sigma, shot_noise_sigma(kRealistic, 0.2, 10000), 0.1 * est.sigma);
    EXPECT_NEAR(est.phase, 0.2, 5.0 * est.sigma);

    EchoRecord missing;
    missing.points = {{0.0, 10, 5}, {pi, 10, 2}};
    EXPECT_THROW(three_point_estimate(missing), FitError);
}

TEST(EstimatorEquivalenceTest, FringeFitMatchesThreePointOnNoiselessData) {
    std::vector<double> angles{0.0, pi / 4, pi / 2, 3 * pi / 4, pi, 5 * pi / 4, 3 * pi / 2, 7 * pi / 4};
    for (double phi = -pi / 2 + 0.01; phi < pi / 2 - 0.01; phi += 0.013) {
        const auto samples = noiseless_fringe(kRealistic, phi, angles);
        const double fringe = fit_fringe(samples).phase;
        const double three = phase_from_signal(three_point_signal(samples[0].up_fraction, samples[2].up_fraction,
                                                                  samples[4].up_fraction));
        EXPECT_NEAR(fringe, three, 1e-9) << phi;
    }
}

// ---------------------------------------------------------------------------

TEST(UnwrapTest, RemovesJumps) {
    const std::vector<double> wrapped{0.1, 2.0, -2.5, -0.6, 1.3};
    const auto u = unwrap_phases(wrapped);
    EXPECT_NEAR(u[2], -2.5 + 2 * pi, 1e-15);
    EXPECT_NEAR(u[3], -0.6 + 2 * pi, 1e-15);
    EXPECT_NEAR(u[4], 1.3 + 2 * pi, 1e-15);
}

TEST(GradientFitTest, TwoExactPoints) {
    const double g = 1e-3;
    std::vector<GradientPoint> pts;
    for (double integral : {10.0 * units::um_ms, 30.0 * units::um_ms}) {
        pts.push_back({integral, {PhysicalConstants::gyromagnetic * g * integral, 0.01, EstimateMethod::FringeFit, 0}});
    }
    const auto fit = gradient_fit(pts);
    EXPECT_NEAR(fit.gradient / g, 1.0, 1e-12);
    EXPECT_NEAR(fit.intercept, 0.0, 1e-12);
    EXPECT_NEAR(fit.slope_rad_per_um_ms(), PhysicalConstants::gyromagnetic * g * units::um_ms, 1e-12);
}

TEST(GradientFitTest, EqualSigmasReduceToOrdinaryRegression) {
    std::vector<GradientPoint> pts;
    std::vector<double> xs{1.0, 2.5, 4.0, 7.0, 8.5};
    std::vector<double> ys{0.2, 0.41, 0.55, 1.02, 1.18};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        pts.push_back({xs[i] * units::um_ms, {ys[i], 0.05, EstimateMethod::FringeFit, 0}});
    }
    // closed-form OLS
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i] / 5.0;
        my += ys[i] / 5.0;
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    const auto fit = gradient_fit(pts);
    EXPECT_NEAR(fit.slope_rad_per_um_ms(), sxy / sxx, 1e-12);
    EXPECT_NEAR(fit.intercept, my - sxy / sxx * mx, 1e-12);
    EXPECT_NEAR(fit.slope_se * units::um_ms, 0.05 / std::sqrt(sxx), 1e-12);
    double mean_residual = 0.0;
    for (double r : fit.residuals) {
        mean_residual += r / 5.0;
    }
    EXPECT_NEAR(mean_residual, 0.0, 1e-12);
}

TEST(GradientFitTest, RankErrors) {
    std::vector<GradientPoint> same{{1e-8, {0.1, 0.01, EstimateMethod::FringeFit, 0}},
                                    {1e-8, {0.2, 0.01, EstimateMethod::FringeFit, 0}}};
    EXPECT_THROW(gradient_fit(same), RankError);
    std::vector<GradientPoint> one{{1e-8, {0.1, 0.01, EstimateMethod::FringeFit, 0}}};
    EXPECT_THROW(gradient_fit(one), RankError);
}

TEST(GradientFitTest, ZeroGradientConsistentWithZero) {
    const auto angles = uniform_angles(100);
    std::vector<GradientPoint> pts;
    for (int i = 1; i <= 8; ++i) {
        const double integral = 4.5 * i * units::um_ms;
        const auto rec = sample_echo_record(0.0, kRealistic, angles, 200, derive_key(4, {std::uint64_t(i)}));
        pts.push_back({integral, fringe_phase_estimate(rec)});
    }
    const auto fit = gradient_fit(pts);
    EXPECT_LT(std::abs(fit.gradient), 3.0 * fit.gradient_se);
    // chi2 with 6 dof far below a broken-linearity value
    EXPECT_LT(fit.chi2, 25.0);
}

// ---------------------------------------------------------------------------

TEST(RunningMeanTest, ConstantSequence) {
    const std::vector<double> v(10, 0.7);
    for (auto mode : {RunningErrorMode::StandardError, RunningErrorMode::PreviousMeansSpread}) {
        for (const auto& p : running_mean_series(v, mode)) {
            EXPECT_NEAR(p.mean, 0.7, 1e-15);
            EXPECT_NEAR(p.error, 0.0, 1e-15);
        }
    }
    EXPECT_THROW(running_mean_series(std::vector<double>{}), DomainError);
}

TEST(RunningMeanTest, MatchesDirectPrefixStatistics) {
    std::mt19937_64 gen(1);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> v(50);
    for (double& x : v) {
        x = noise(gen);
    }
    const auto series = running_mean_series(v);
    for (std::size_t k = 2; k <= v.size(); k += 7) {
        std::vector<double> prefix(v.begin(), v.begin() + static_cast<long>(k));
        double mean = 0.0;
        for (double x : prefix) {
            mean += x / static_cast<double>(k);
        }
        EXPECT_NEAR(series[k - 1].mean, mean, 1e-12);
        EXPECT_NEAR(series[k - 1].error, sample_std(prefix) / std::sqrt(static_cast<double>(k)), 1e-12);
    }
}

TEST(RunningMeanTest, ErrorShrinksAsInverseSqrt) {
    // average the error bar over many independent sequences
    std::mt19937_64 gen(2);
    std::normal_distribution<double> noise(0.0, 1.0);
    double at_25 = 0.0, at_400 = 0.0;
    for (int r = 0; r < 200; ++r) {
        std::vector<double> v(400);
        for (double& x : v) {
            x = noise(gen);
        }
        const auto s = running_mean_series(v);
        at_25 += s[24].error / 200.0;
        at_400 += s[399].error / 200.0;
    }
    EXPECT_NEAR(at_25 / at_400, 4.0, 0.2);
}

TEST(RunningMeanTest, SmallFieldDifferenceSeparatesFromZero) {
    // 7 nT over 19 um against a zero-gradient reference, 100 points x 200 interrogations
    const auto table = make_synthetic_table({});
    TransportScenario s;
    s.v2_peak = peak_voltage_for_displacement(s.v1, 19.0 * um, table);
    const auto traj = compute_trajectory(s, table).trajectory;
    const FieldModel shifted{0.7e-3, 7e-9 / (19.0 * um)};
    const FieldModel flat{0.7e-3, 0.0};
    std::vector<double> a, b;
    for (std::uint64_t i = 0; i < 100; ++i) {
        a.push_back(three_point_estimate(
                        run_echo_experiment(traj, shifted, kRealistic, three_point_angles(), 200, derive_key(6, {0, i})))
                        .phase);
        b.push_back(three_point_estimate(
                        run_echo_experiment(traj, flat, kRealistic, three_point_angles(), 200, derive_key(6, {1, i})))
                        .phase);
    }
    const auto ra = running_mean_series(a).back();
    const auto rb = running_mean_series(b).back();
    EXPECT_GT(std::abs(ra.mean - rb.mean), 3.0 * std::max(ra.error, rb.error));
}

TEST(AllanTest, WhiteNoiseAtUnitBlock) {
    std::mt19937_64 gen(10);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::vector<double> v(20000);
    for (double& x : v) {
        x = noise(gen);
    }
    const std::vector<std::size_t> sizes{1, 4, 16};
    const auto a = allan_deviation(v, sizes);
    ASSERT_EQ(a.sizes.size(), 3u);
    EXPECT_NEAR(a.deviations[0] / 0.2, 1.0, 0.03);
    EXPECT_NEAR(a.deviations[1] / 0.1, 1.0, 0.05);
    EXPECT_NEAR(a.deviations[2] / 0.05, 1.0, 0.10);
}

TEST(AllanTest, HandComputedBlocks) {
    // blocks of 2: means 1, 3, 2 -> diffs 2, -1 -> sqrt((4 + 1) / 2 / 2)
    const std::vector<double> v{0.0, 2.0, 3.0, 3.0, 1.0, 3.0, 100.0};
    const std::vector<std::size_t> sizes{2};
    const auto a = allan_deviation(v, sizes);
    ASSERT_EQ(a.deviations.size(), 1u);
    EXPECT_NEAR(a.deviations[0], std::sqrt(5.0 / 4.0), 1e-15);
}

TEST(AllanTest, OmitsSizesWithoutTwoBlocks) {
    const std::vector<double> v(10, 1.0);
    const std::vector<std::size_t> sizes{1, 5, 6, 0};
    const auto a = allan_deviation(v, sizes);
    EXPECT_EQ(a.sizes, (std::vector<std::size_t>{1, 5}));
    EXPECT_EQ(a.omitted, (std::vector<std::size_t>{6, 0}));
    for (double d : a.deviations) {
        EXPECT_EQ(d, 0.0);
    }
    EXPECT_EQ(octave_sizes(10), (std::vector<std::size_t>{1, 2, 4}));
}

TEST(AllanTest, ShotNoiseSeriesFollowsTheory) {
    const auto angles = three_point_angles();
    std::vector<double> est;
    for (std::uint64_t s = 0; s < 4096; ++s) {
        est.push_back(three_point_estimate(sample_echo_record(0.0, kRealistic, angles, 200, derive_key(21, {s}))).phase);
    }
    const auto sizes = octave_sizes(est.size() / 16);
    const auto a = allan_deviation(est, sizes);
    for (std::size_t i = 0; i < a.sizes.size(); ++i) {
        const double n = static_cast<double>(a.sizes[i]);
        const double theory = shot_noise_sigma(kRealistic, 0.0, 200.0 * n);
        const double stat = allan_relative_error(4096 / a.sizes[i]);
        EXPECT_NEAR(a.deviations[i] / theory, 1.0, 3.0 * stat + 0.02) << "n = " << n;
    }
}

TEST(AllanTest, RelativeErrorMatchesWhiteNoiseSpread) {
    // spread of the n = 1 deviation over many independent 64-sample series
    std::mt19937_64 gen(13);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::vector<std::size_t> one{1};
    std::vector<double> devs;
    for (int r = 0; r < 4000; ++r) {
        std::vector<double> v(64);
        for (double& x : v) {
            x = noise(gen);
        }
        devs.push_back(allan_deviation(v, one).deviations[0]);
    }
    EXPECT_NEAR(sample_std(devs) / allan_relative_error(64), 1.0, 0.06);
    EXPECT_THROW(allan_relative_error(1), DomainError);
}

TEST(AllanTest, DriftLiftsLongBlocks) {
    std::mt19937_64 gen(12);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<double> v(4096);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = noise(gen) + 2e-4 * static_cast<double>(i);
    }
    const std::vector<std::size_t> sizes{1, 512};
    const auto a = allan_deviation(v, sizes);
    // white noise alone would give 0.1 / sqrt(512) = 0.0044 at n = 512
    EXPECT_GT(a.deviations[1], 5.0 * 0.1 / std::sqrt(512.0));
}

TEST(RelativeFieldTest, Values) {
    EXPECT_EQ(phase_to_relative_field(0.0, 5.0 * units::um_ms, 19.0 * um, 0.7e-3), 0.0);
    EXPECT_THROW(phase_to_relative_field(0.1, 0.0, 19.0 * um, 0.7e-3), DomainError);

    // 7 nT across a 19 um transport
    const auto table = make_synthetic_table({});
    TransportScenario s;
    s.v2_peak = peak_voltage_for_displacement(s.v1, 19.0 * um, table);
    const auto traj = compute_trajectory(s, table).trajectory;
    const double integral = displacement_time_integral(traj);
    const double phi = accumulated_phase(traj, {0.7e-3, 7e-9 / (19.0 * um)});
    EXPECT_NEAR(phase_to_relative_field(phi, integral, 19.0 * um, 0.7e-3), 1e-5, 1e-9);

    // shot-noise limit after 1e4 interrogations
    const double sigma = shot_noise_sigma(kRealistic, 0.0, 1e4);
    const double rel = phase_to_relative_field(sigma, integral, 19.0 * um, 0.7e-3);
    EXPECT_GT(rel, 5e-7 / 1.5);
    EXPECT_LT(rel, 5e-7 * 1.5);
}

}  // namespace
}  // namespace ionmag
