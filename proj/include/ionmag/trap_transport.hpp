#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "constants.hpp"
#include "errors.hpp"
#include "spline.hpp"

namespace ionmag {

/// Normalized shape factor of one trap segment sampled along the trap axis.
struct SegmentProfile {
    int id = 0;
    std::vector<double> positions;  // m, strictly increasing
    std::vector<double> values;     // dimensionless, in [0, 1]
};

/// Per-segment shape factors u_i(x), interpolated with not-a-knot cubic splines.
///
/// Segment 0 is the static trapping segment, segment 1 the neighbour that
/// carries the transport waveform. All segments must share one axial domain.
class ShapeFactorTable {
public:
    explicit ShapeFactorTable(std::vector<SegmentProfile> segments) : profiles_(std::move(segments)) {
        if (profiles_.size() < 2) {
            throw InvariantError("shape table: need the trapping segment and one transport segment");
        }
        constexpr double domain_tol = 1e-12;
        for (const auto& p : profiles_) {
            for (double v : p.values) {
                if (!(v >= 0.0 && v <= 1.0 + 1e-12)) {
                    throw InvariantError("shape table: segment " + std::to_string(p.id) +
                                         " has a value outside [0, 1]");
                }
            }
            splines_.emplace_back(p.positions, p.values);
            if (std::abs(splines_.back().front() - splines_.front().front()) > domain_tol ||
                std::abs(splines_.back().back() - splines_.front().back()) > domain_tol) {
                throw InvariantError("shape table: segments do not share a common axial domain");
            }
        }
    }

    std::size_t segment_count() const { return profiles_.size(); }
    const SegmentProfile& profile(std::size_t i) const { return profiles_.at(i); }
    const CubicSpline& shape(std::size_t i) const { return splines_.at(i); }

    double domain_begin() const { return splines_.front().front(); }
    double domain_end() const { return splines_.front().back(); }
    bool contains(double x) const { return x >= domain_begin() && x <= domain_end(); }

    // Sample position where the tabulated shape factor peaks.
    double center(std::size_t i) const {
        const auto& p = profiles_.at(i);
        auto it = std::max_element(p.values.begin(), p.values.end());
        return p.positions[static_cast<std::size_t>(it - p.values.begin())];
    }

    void require_in_domain(double x) const {
        if (!contains(x)) {
            std::ostringstream msg;
            msg << "position " << x / units::um << " um outside the shape-factor domain [" << domain_begin() / units::um
                << ", " << domain_end() / units::um << "] um";
            throw DomainError(msg.str());
        }
    }

private:
    std::vector<SegmentProfile> profiles_;
    std::vector<CubicSpline> splines_;
};

/// Parameters of the default synthetic shape model: one Gaussian bump per segment.
struct SyntheticShapeModel {
    double pitch = 250.0 * units::um;
    double width = 250.0 * units::um;
    std::vector<double> centers{0.0, 250.0 * units::um};
    double margin = 3.0;   // domain extends this many widths beyond the outer centers
    double spacing = 2.0 * units::um;
};

inline ShapeFactorTable make_synthetic_table(const SyntheticShapeModel& model) {
    if (model.centers.size() < 2) {
        throw InvariantError("synthetic shape model: need at least two segment centers");
    }
    if (!(model.width > 0.0) || !(model.spacing > 0.0) || !(model.pitch > 0.0)) {
        throw InvariantError("synthetic shape model: pitch, width and spacing must be positive");
    }
    // knots sit on a lattice through the first center, so every center is a knot
    const double origin = model.centers.front();
    const auto [lo_it, hi_it] = std::minmax_element(model.centers.begin(), model.centers.end());
    const auto first = static_cast<long>(std::floor((*lo_it - model.margin * model.width - origin) / model.spacing));
    const auto last = static_cast<long>(std::ceil((*hi_it + model.margin * model.width - origin) / model.spacing));

    std::vector<SegmentProfile> segments;
    for (std::size_t s = 0; s < model.centers.size(); ++s) {
        SegmentProfile p;
        p.id = static_cast<int>(s + 1);
        for (long i = first; i <= last; ++i) {
            const double x = origin + static_cast<double>(i) * model.spacing;
            const double z = (x - model.centers[s]) / model.width;
            p.positions.push_back(x);
            p.values.push_back(std::exp(-0.5 * z * z));
        }
        segments.push_back(std::move(p));
    }
    return ShapeFactorTable(std::move(segments));
}

/// Parse the plain-text shape-factor format: a `# segment <id>` header per
/// block followed by `position_um value` rows. Blank lines are ignored.
inline ShapeFactorTable parse_shape_factor_table(std::istream& in) {
    std::vector<SegmentProfile> segments;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            continue;
        }
        std::istringstream row(line.substr(first));
        if (line[first] == '#') {
            std::string hash, keyword;
            int id = 0;
            row >> hash >> keyword;
            if (keyword != "segment" || !(row >> id)) {
                throw ConfigError("shape file line " + std::to_string(line_no) + ": expected '# segment <id>'");
            }
            segments.push_back(SegmentProfile{id, {}, {}});
            continue;
        }
        if (segments.empty()) {
            throw ConfigError("shape file line " + std::to_string(line_no) + ": data before first segment header");
        }
        double pos_um = 0.0;
        double value = 0.0;
        if (!(row >> pos_um >> value)) {
            throw ConfigError("shape file line " + std::to_string(line_no) + ": expected 'position_um value'");
        }
        segments.back().positions.push_back(pos_um * units::um);
        segments.back().values.push_back(value);
    }
    return ShapeFactorTable(std::move(segments));
}

inline ShapeFactorTable load_shape_factor_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open shape file '" + path + "'");
    }
    return parse_shape_factor_table(in);
}

/// Electrostatic potential V1 u1(x) + V2 u2(x), in volts.
inline double potential_at(double x, double v1, double v2, const ShapeFactorTable& table) {
    table.require_in_domain(x);
    return v1 * table.shape(0)(x) + v2 * table.shape(1)(x);
}

inline double potential_slope(double x, double v1, double v2, const ShapeFactorTable& table) {
    table.require_in_domain(x);
    return v1 * table.shape(0).derivative(x) + v2 * table.shape(1).derivative(x);
}

struct Bracket {
    double lo;
    double hi;
};

/// Knobs of the potential-energy minimizer.
struct MinimizerOptions {
    double tolerance = 1e-4 * units::um;
    std::size_t scan_points = 256;
};

/// Position of the potential-energy minimum of a positive ion in [lo, hi].
///
/// The derivative of the potential is scanned for - to + sign changes; exactly
/// one is required, which is then refined by bisection to `tolerance`.
inline double find_minimum(double v1, double v2, const ShapeFactorTable& table, Bracket bracket,
                           const MinimizerOptions& opt = {}) {
    if (!(bracket.hi > bracket.lo)) {
        throw DomainError("find_minimum: empty bracket");
    }
    table.require_in_domain(bracket.lo);
    table.require_in_domain(bracket.hi);

    const std::size_t n = std::max<std::size_t>(opt.scan_points, 2);
    const double step = (bracket.hi - bracket.lo) / static_cast<double>(n);
    auto grid = [&](std::size_t i) { return i == n ? bracket.hi : bracket.lo + static_cast<double>(i) * step; };

    std::optional<Bracket> found;
    int minima = 0;
    double prev_x = grid(0);
    double prev_d = potential_slope(prev_x, v1, v2, table);
    for (std::size_t i = 1; i <= n; ++i) {
        const double x = grid(i);
        const double d = potential_slope(x, v1, v2, table);
        if (prev_d < 0.0 && d >= 0.0) {
            ++minima;
            found = Bracket{prev_x, x};
        }
        prev_x = x;
        prev_d = d;
    }
    if (minima == 0) {
        throw NoMinimumError("find_minimum: potential-energy slope has no sign change in the bracket");
    }
    if (minima > 1) {
        throw MultipleMinimaError("find_minimum: " + std::to_string(minima) +
                                  " minima in the bracket; narrow it around the wanted one");
    }

    double lo = found->lo;
    double hi = found->hi;
    while (hi - lo > opt.tolerance) {
        const double mid = 0.5 * (lo + hi);
        if (potential_slope(mid, v1, v2, table) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

/// Step of the curvature finite difference and its allowed Richardson disagreement.
struct CurvatureOptions {
    double step = 0.1 * units::um;
    double max_relative_change = 0.01;
};

/// d^2 V / dx^2 at x (V/m^2) from a central difference with one Richardson halving.
inline double potential_curvature(double v1, double v2, const ShapeFactorTable& table, double x,
                                  const CurvatureOptions& opt = {}) {
    auto v = [&](double p) { return potential_at(p, v1, v2, table); };
    auto central = [&](double h) { return (v(x + h) - 2.0 * v(x) + v(x - h)) / (h * h); };
    const double coarse = central(opt.step);
    const double fine = central(0.5 * opt.step);
    if (std::abs(coarse - fine) > opt.max_relative_change * std::abs(fine)) {
        throw ConsistencyError("curvature: finite-difference estimates disagree by more than " +
                               std::to_string(100.0 * opt.max_relative_change) + "%");
    }
    return (4.0 * fine - coarse) / 3.0;
}

/// Axial trap frequency omega / 2 pi in Hz at the minimum `x_min`.
inline double axial_frequency(double v1, double v2, const ShapeFactorTable& table, double x_min,
                              double mass = PhysicalConstants::mass_ca40,
                              double charge = PhysicalConstants::elementary_charge, const CurvatureOptions& opt = {}) {
    const double curvature = charge * potential_curvature(v1, v2, table, x_min, opt);
    if (!(curvature > 0.0)) {
        throw NotAMinimumError("axial_frequency: potential energy is not convex at the given position");
    }
    return std::sqrt(curvature / mass) / (2.0 * pi);
}

enum class WaveformKind { SineReturn };

struct TransportScenario {
    double v1 = -1.8625;       // V, static on the trapping segment
    double v2_peak = -2.2324;  // V, peak of the transport waveform
    double duration = 400.0 * units::us;
    std::size_t samples = 256;
    WaveformKind waveform = WaveformKind::SineReturn;

    void validate() const {
        if (!(duration > 0.0)) {
            throw InvariantError("transport: duration must be positive");
        }
        if (samples < 64) {
            throw InvariantError("transport: need at least 64 time samples");
        }
    }
};

/// V2(t) = V2_peak sin(pi t / T); exactly zero at both ends.
inline double waveform_voltage(double t, const TransportScenario& scenario) {
    const double T = scenario.duration;
    if (!(t >= 0.0 && t <= T)) {
        throw DomainError("waveform_voltage: t outside [0, T]");
    }
    const double s = t / T;
    // fold onto [0, 1/2] so sin(pi) never leaves a rounding residue at t = T
    return scenario.v2_peak * std::sin(pi * (s <= 0.5 ? s : 1.0 - s));
}

inline double adiabaticity_ratio(const TransportScenario& scenario, double axial_freq) {
    return scenario.duration * axial_freq;
}

struct Trajectory {
    std::vector<double> times;      // s
    std::vector<double> positions;  // m

    double start() const { return positions.front(); }
    double duration() const { return times.back() - times.front(); }

    double max_displacement() const {
        double m = 0.0;
        for (double x : positions) {
            m = std::max(m, std::abs(x - positions.front()));
        }
        return m;
    }
};

struct TrajectoryOptions {
    MinimizerOptions minimizer{};
    double bracket_half_width = 150.0 * units::um;
    double adiabaticity_threshold = 100.0;
};

struct TrajectoryResult {
    Trajectory trajectory;
    double axial_frequency = 0.0;  // Hz, at t = 0
    double adiabaticity = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {
inline Bracket clamp_bracket(const ShapeFactorTable& table, double center, double half_width) {
    return {std::max(table.domain_begin(), center - half_width), std::min(table.domain_end(), center + half_width)};
}
}  // namespace detail

/// Adiabatic trajectory: the ion sits at the instantaneous potential-energy
/// minimum at each of the M+1 uniform time samples, each search seeded by the
/// previous position.
inline TrajectoryResult compute_trajectory(const TransportScenario& scenario, const ShapeFactorTable& table,
                                           const TrajectoryOptions& opt = {}) {
    scenario.validate();
    TrajectoryResult result;
    const std::size_t m = scenario.samples;
    auto& traj = result.trajectory;
    traj.times.resize(m + 1);
    traj.positions.resize(m + 1);

    double seed = table.center(0);
    for (std::size_t k = 0; k <= m; ++k) {
        const double t = k == m ? scenario.duration
                                : scenario.duration * static_cast<double>(k) / static_cast<double>(m);
        const double v2 = waveform_voltage(t, scenario);
        const double x = find_minimum(scenario.v1, v2, table,
                                      detail::clamp_bracket(table, seed, opt.bracket_half_width), opt.minimizer);
        traj.times[k] = t;
        traj.positions[k] = x;
        seed = x;
    }

    if (std::abs(traj.positions.back() - traj.positions.front()) > opt.minimizer.tolerance) {
        throw ConsistencyError("compute_trajectory: ion does not return to its start position");
    }

    // the peak of the waveform sets the turning point
    const double turning = find_minimum(scenario.v1, scenario.v2_peak, table,
                                        detail::clamp_bracket(table, traj.positions[m / 2], opt.bracket_half_width),
                                        opt.minimizer);
    const double intended = std::abs(turning - traj.start());
    const double reached = traj.max_displacement();
    if (reached > intended + opt.minimizer.tolerance || (m % 2 == 0 && reached < intended - opt.minimizer.tolerance)) {
        throw ConsistencyError("compute_trajectory: maximum excursion does not match the waveform peak");
    }

    result.axial_frequency = axial_frequency(scenario.v1, 0.0, table, traj.start());
    result.adiabaticity = adiabaticity_ratio(scenario, result.axial_frequency);
    if (result.adiabaticity < opt.adiabaticity_threshold) {
        std::ostringstream msg;
        msg << "transport is not adiabatic: T * f_axial = " << result.adiabaticity << " < "
            << opt.adiabaticity_threshold;
        result.warnings.push_back(msg.str());
    }
    return result;
}

/// Integral of x(t) - x(0) over the trajectory, in m*s. Composite Simpson;
/// an odd interval count finishes with a 3/8 panel.
inline double displacement_time_integral(const Trajectory& traj) {
    const std::size_t n = traj.positions.size();
    if (n < 3 || traj.times.size() != n) {
        throw InvariantError("displacement_time_integral: need at least 3 samples");
    }
    const double x0 = traj.positions.front();
    auto f = [&](std::size_t i) { return traj.positions[i] - x0; };
    const std::size_t intervals = n - 1;
    const double h = traj.duration() / static_cast<double>(intervals);

    const std::size_t simpson_end = intervals % 2 == 0 ? intervals : intervals - 3;
    double sum = 0.0;
    if (simpson_end > 0) {
        double acc = f(0) + f(simpson_end);
        for (std::size_t i = 1; i < simpson_end; ++i) {
            acc += (i % 2 == 1 ? 4.0 : 2.0) * f(i);
        }
        sum += acc * h / 3.0;
    }
    if (simpson_end != intervals) {
        const std::size_t i = simpson_end;
        sum += 3.0 * h / 8.0 * (f(i) + 3.0 * f(i + 1) + 3.0 * f(i + 2) + f(i + 3));
    }
    return sum;
}

/// Waveform peak (same polarity as V1) that moves the ion `displacement`
/// toward the transport segment. Bisection on the peak magnitude.
inline double peak_voltage_for_displacement(double v1, double displacement, const ShapeFactorTable& table,
                                            const TrajectoryOptions& opt = {}) {
    const double start = table.center(0);
    const double reach = std::abs(table.center(1) - start);
    if (!(displacement >= 0.0) || displacement >= reach) {
        throw DomainError("peak_voltage_for_displacement: displacement must lie between the two segment centers");
    }
    const double polarity = v1 < 0.0 ? -1.0 : 1.0;
    const Bracket whole = detail::clamp_bracket(table, 0.5 * (start + table.center(1)), reach / 2.0 + opt.bracket_half_width);
    auto excursion = [&](double magnitude) {
        return std::abs(find_minimum(v1, polarity * magnitude, table, whole, opt.minimizer) -
                        find_minimum(v1, 0.0, table, whole, opt.minimizer));
    };
    double lo = 0.0;
    double hi = std::abs(v1);
    while (excursion(hi) < displacement) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e3 * std::abs(v1)) {
            throw NoMinimumError("peak_voltage_for_displacement: displacement not reachable");
        }
    }
    for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (excursion(mid) < displacement ? lo : hi) = mid;
    }
    return polarity * 0.5 * (lo + hi);
}

}  // namespace ionmag
