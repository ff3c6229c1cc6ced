#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "errors.hpp"

namespace ionmag::linalg {

/// Small dense row-major matrix, enough for the 2- and 3-parameter fits here.
class Matrix {
public:
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> data_;
};

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting. Pivots below rel_tol * (largest entry) mean rank deficiency.
inline Matrix inverse(const Matrix& a, double rel_tol = 1e-12) {
    const std::size_t n = a.rows();
    Matrix work = a;
    Matrix inv(n, n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        inv(i, i) = 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            scale = std::max(scale, std::abs(a(i, j)));
        }
    }
    if (scale == 0.0) {
        throw RankError("matrix is identically zero");
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(work(r, col)) > std::abs(work(pivot, col))) {
                pivot = r;
            }
        }
        if (std::abs(work(pivot, col)) <= rel_tol * scale) {
            throw RankError("design matrix is rank deficient");
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(work(pivot, j), work(col, j));
                std::swap(inv(pivot, j), inv(col, j));
            }
        }
        const double d = work(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            work(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) {
                continue;
            }
            const double f = work(r, col);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < n; ++j) {
                work(r, j) -= f * work(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

struct LeastSquaresResult {
    std::vector<double> coefficients;
    Matrix covariance;  // (X^T W X)^-1
    double chi2 = 0.0;
};

/// Weighted linear least squares: minimize sum w_i (y_i - X_i beta)^2.
inline LeastSquaresResult weighted_least_squares(const Matrix& design, std::span<const double> y,
                                                 std::span<const double> weights) {
    const std::size_t n = design.rows();
    const std::size_t p = design.cols();
    if (n < p) {
        throw RankError("fewer observations than parameters");
    }
    Matrix normal(p, p);
    std::vector<double> rhs(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < p; ++a) {
            rhs[a] += weights[i] * design(i, a) * y[i];
            for (std::size_t b = 0; b < p; ++b) {
                normal(a, b) += weights[i] * design(i, a) * design(i, b);
            }
        }
    }
    // equilibrate so the rank test does not depend on column units
    std::vector<double> s(p);
    for (std::size_t a = 0; a < p; ++a) {
        s[a] = normal(a, a) > 0.0 ? 1.0 / std::sqrt(normal(a, a)) : 1.0;
    }
    Matrix scaled(p, p);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) {
            scaled(a, b) = normal(a, b) * s[a] * s[b];
        }
    }
    const Matrix scaled_inv = inverse(scaled, 1e-10);
    Matrix cov(p, p);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) {
            cov(a, b) = scaled_inv(a, b) * s[a] * s[b];
        }
    }
    std::vector<double> beta(p, 0.0);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = 0; b < p; ++b) {
            beta[a] += cov(a, b) * rhs[b];
        }
    }
    double chi2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (std::size_t a = 0; a < p; ++a) {
            fit += design(i, a) * beta[a];
        }
        chi2 += weights[i] * (y[i] - fit) * (y[i] - fit);
    }
    return {std::move(beta), std::move(cov), chi2};
}

}  // namespace ionmag::linalg
