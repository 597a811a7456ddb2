#pragma once

#include <cmath>
#include <functional>

namespace driftlab {

// Adaptive Simpson quadrature with absolute tolerance; standard recursive
// refinement with the 1/15 Richardson error estimate.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-10, int max_depth = 40) {
    std::function<double(double, double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole,
            double eps, int depth) -> double {
        const double mid = 0.5 * (lo + hi);
        const double lmid = 0.5 * (lo + mid), rmid = 0.5 * (mid + hi);
        const double flm = f(lmid), frm = f(rmid);
        const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
        const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
        if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
            return left + right + (left + right - whole) / 15.0;
        return rec(lo, mid, flo, flm, fmid, left, 0.5 * eps, depth - 1) +
               rec(mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth - 1);
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return rec(a, b, fa, fm, fb, whole, tol, max_depth);
}

}  // namespace driftlab
