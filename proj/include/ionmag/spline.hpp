#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace ionmag {

/// Not-a-knot cubic spline through (x_i, y_i).
///
/// Not-a-knot end conditions reproduce any cubic polynomial exactly, so a
/// tabulated harmonic well keeps its exact curvature after interpolation.
/// Needs at least four knots with strictly increasing abscissae.
class CubicSpline {
public:
    CubicSpline() = default;

    CubicSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
        if (x_.size() != y_.size()) {
            throw InvariantError("spline: x and y sizes differ");
        }
        if (x_.size() < 4) {
            throw InvariantError("spline: need at least 4 samples, got " + std::to_string(x_.size()));
        }
        for (std::size_t i = 1; i < x_.size(); ++i) {
            if (!(x_[i] > x_[i - 1])) {
                throw InvariantError("spline: sample positions must be strictly increasing");
            }
        }
        solve_second_derivatives();
    }

    double front() const { return x_.front(); }
    double back() const { return x_.back(); }
    std::span<const double> knots() const { return x_; }
    std::span<const double> values() const { return y_; }

    bool contains(double x) const { return x >= x_.front() && x <= x_.back(); }

    double operator()(double x) const {
        const auto [i, a, b, h] = locate(x);
        return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
    }

    double derivative(double x) const {
        const auto [i, a, b, h] = locate(x);
        return (y_[i + 1] - y_[i]) / h + ((1.0 - 3.0 * a * a) * m_[i] + (3.0 * b * b - 1.0) * m_[i + 1]) * h / 6.0;
    }

    double second_derivative(double x) const {
        const auto [i, a, b, h] = locate(x);
        return a * m_[i] + b * m_[i + 1];
    }

private:
    struct Segment {
        std::size_t i;
        double a;  // weight of the left knot
        double b;  // weight of the right knot
        double h;
    };

    Segment locate(double x) const {
        if (!contains(x)) {
            throw DomainError("spline: x outside [" + std::to_string(x_.front()) + ", " + std::to_string(x_.back()) +
                              "]");
        }
        auto it = std::upper_bound(x_.begin(), x_.end(), x);
        std::size_t i = it == x_.begin() ? 0 : static_cast<std::size_t>(it - x_.begin()) - 1;
        i = std::min(i, x_.size() - 2);
        const double h = x_[i + 1] - x_[i];
        const double b = (x - x_[i]) / h;
        return {i, 1.0 - b, b, h};
    }

    // Second derivatives M_i. Interior rows are the usual C2 conditions; the
    // not-a-knot rows (third derivative continuous at x_1 and x_{n-2}) are
    // eliminated into the first and last interior rows, which leaves a
    // tridiagonal system in M_1 .. M_{n-2}.
    void solve_second_derivatives() {
        const std::size_t n = x_.size();
        std::vector<double> h(n - 1), d(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            d[i] = (y_[i + 1] - y_[i]) / h[i];
        }

        const std::size_t k = n - 2;
        std::vector<double> lower(k, 0.0), diag(k, 0.0), upper(k, 0.0), rhs(k, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
            const std::size_t i = r + 1;
            lower[r] = h[i - 1];
            diag[r] = 2.0 * (h[i - 1] + h[i]);
            upper[r] = h[i];
            rhs[r] = 6.0 * (d[i] - d[i - 1]);
        }
        // M_0 = ((h0 + h1) M_1 - h0 M_2) / h1
        diag[0] += h[0] * (h[0] + h[1]) / h[1];
        upper[0] -= h[0] * h[0] / h[1];
        lower[0] = 0.0;
        // M_{n-1} = ((h_{n-2} + h_{n-3}) M_{n-2} - h_{n-2} M_{n-3}) / h_{n-3}
        const double hl = h[n - 2];
        const double hp = h[n - 3];
        diag[k - 1] += hl * (hl + hp) / hp;
        lower[k - 1] -= hl * hl / hp;
        upper[k - 1] = 0.0;

        // Thomas algorithm
        for (std::size_t r = 1; r < k; ++r) {
            const double w = lower[r] / diag[r - 1];
            diag[r] -= w * upper[r - 1];
            rhs[r] -= w * rhs[r - 1];
        }
        std::vector<double> interior(k);
        interior[k - 1] = rhs[k - 1] / diag[k - 1];
        for (std::size_t r = k - 1; r-- > 0;) {
            interior[r] = (rhs[r] - upper[r] * interior[r + 1]) / diag[r];
        }

        m_.assign(n, 0.0);
        for (std::size_t r = 0; r < k; ++r) {
            m_[r + 1] = interior[r];
        }
        m_[0] = ((h[0] + h[1]) * m_[1] - h[0] * m_[2]) / h[1];
        m_[n - 1] = ((hl + hp) * m_[n - 2] - hl * m_[n - 3]) / hp;
    }

    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> m_;
};

}  // namespace ionmag
