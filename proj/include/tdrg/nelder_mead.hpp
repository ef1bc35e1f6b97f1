#pragma once

#include "tdrg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace tdrg {

struct SimplexOptions {
    int max_iterations = 500;
    double initial_step = 0.5;
    /// Stop once the spread of objective values and the simplex diameter
    /// both fall below these.
    double f_tolerance = 1e-13;
    double x_tolerance = 1e-11;
};

struct SimplexResult {
    Vector x;
    double f = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
};

/// Downhill simplex minimisation (standard reflection/expansion/contraction/
/// shrink coefficients 1, 2, 1/2, 1/2). NaN objective values count as +inf.
inline SimplexResult nelder_mead(const std::function<double(const Vector&)>& objective, const Vector& x0,
                                 const SimplexOptions& opts = {}) {
    const auto d = static_cast<int>(x0.size());
    SimplexResult out;
    auto eval = [&](const Vector& x) {
        ++out.evaluations;
        const double f = objective(x);
        return std::isnan(f) ? std::numeric_limits<double>::infinity() : f;
    };

    std::vector<Vector> pts(d + 1, x0);
    std::vector<double> fv(d + 1);
    for (int i = 0; i < d; ++i)
        pts[i + 1](i) += opts.initial_step;
    for (int i = 0; i <= d; ++i)
        fv[i] = eval(pts[i]);

    std::vector<int> order(d + 1);
    Vector centroid(d), xr(d), xe(d), xc(d);

    for (out.iterations = 0; out.iterations < opts.max_iterations; ++out.iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
        const int best = order.front(), worst = order.back(), second = order[d - 1];

        double diameter = 0.0;
        for (int i = 0; i <= d; ++i)
            diameter = std::max(diameter, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
        if (std::isfinite(fv[worst]) && fv[worst] - fv[best] <= opts.f_tolerance && diameter <= opts.x_tolerance)
            break;

        centroid.setZero();
        for (int i = 0; i <= d; ++i)
            if (i != worst)
                centroid += pts[i];
        centroid /= d;

        xr = centroid + (centroid - pts[worst]);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = eval(xe);
            if (fe < fr) {
                pts[worst] = xe;
                fv[worst] = fe;
            } else {
                pts[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            pts[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            pts[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (int i = 0; i <= d; ++i) {
            if (i == best)
                continue;
            pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
            fv[i] = eval(pts[i]);
        }
    }

    const auto it = std::min_element(fv.begin(), fv.end());
    out.f = *it;
    out.x = pts[static_cast<std::size_t>(it - fv.begin())];
    return out;
}

}  // namespace tdrg
