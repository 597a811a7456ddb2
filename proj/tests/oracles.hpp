// Test-only oracles, kept independent of the library implementation paths
// they are used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace oracles {

// Two-sample Kolmogorov-Smirnov statistic sup |F_x - F_y|.
inline double ks_two_sample(std::vector<double> x, std::vector<double> y) {
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < x.size() && j < y.size()) {
        if (x[i] <= y[j])
            ++i;
        else
            ++j;
        d = std::max(d, std::abs(double(i) / double(x.size()) - double(j) / double(y.size())));
    }
    return d;
}

// Dense Gaussian elimination with partial pivoting; brute-force solver for
// normal equations, independent of Eigen's LDLT.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> A,
                                       std::vector<double> b) {
    const std::size_t n = A.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
        if (std::abs(A[piv][col]) < 1e-300) throw std::runtime_error("singular system");
        std::swap(A[piv], A[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = A[r][col] / A[col][col];
            for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
    return x;
}

// Composite trapezoid on a fixed fine grid; quadrature oracle for smooth
// integrands away from singularities.
template <typename Fn>
double trapezoid(Fn&& f, double a, double b, int n = 200000) {
    double acc = 0.5 * (f(a) + f(b));
    const double h = (b - a) / n;
    for (int i = 1; i < n; ++i) acc += f(a + h * i);
    return acc * h;
}

}  // namespace oracles
