#pragma once

// 1D hierarchic basis (integrated Legendre) and Gauss-Legendre quadrature.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace fcmlat {

struct GaussRule {
    std::vector<double> points;  // on [-1, 1]
    std::vector<double> weights;
};

/// Legendre polynomials P_0..P_n at x.
inline std::vector<double> legendre_values(int n, double x) {
    std::vector<double> P(std::size_t(n) + 1);
    P[0] = 1.0;
    if (n >= 1) P[1] = x;
    for (int k = 2; k <= n; ++k) {
        P[k] = ((2.0 * k - 1.0) * x * P[k - 1] - (k - 1.0) * P[k - 2]) / k;
    }
    return P;
}

inline GaussRule gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: need at least one point");
    GaussRule rule;
    rule.points.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            const auto P = legendre_values(n, x);
            dp = n * (x * P[n] - P[n - 1]) / (x * x - 1.0);
            const double dx = P[n] / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const auto P = legendre_values(n, x);
        dp = n * (x * P[n] - P[n - 1]) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.points[i] = -x;
        rule.points[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.points[n / 2] = 0.0;
    return rule;
}

struct ShapeValues1D {
    std::vector<double> values;
    std::vector<double> derivatives; // d/dxi
};

/// Modes N_1 = (1-xi)/2, N_2 = (1+xi)/2 and, for k >= 3, the integrated
/// Legendre bubble of degree j = k-1:
///   N_k = (P_j - P_{j-2}) / sqrt(2(2j-1)),   N_k' = sqrt((2j-1)/2) P_{j-1}.
inline void shape_functions_1d(int order, double xi, double* values, double* derivatives) {
    if (order < 1) throw std::invalid_argument("shape_functions_1d: order must be >= 1");
    if (!(std::abs(xi) <= 1.0 + 1e-14)) {
        throw std::invalid_argument("shape_functions_1d: coordinate outside [-1, 1]");
    }
    values[0] = 0.5 * (1.0 - xi);
    values[1] = 0.5 * (1.0 + xi);
    derivatives[0] = -0.5;
    derivatives[1] = 0.5;
    if (order == 1) return;
    const auto P = legendre_values(order, xi);
    for (int k = 3; k <= order + 1; ++k) {
        const int j = k - 1;
        values[k - 1] = (P[j] - P[j - 2]) / std::sqrt(2.0 * (2.0 * j - 1.0));
        derivatives[k - 1] = std::sqrt((2.0 * j - 1.0) / 2.0) * P[j - 1];
    }
}

inline ShapeValues1D shape_functions_1d(int order, double xi) {
    ShapeValues1D out;
    out.values.resize(std::size_t(order < 1 ? 2 : order + 1));
    out.derivatives.resize(out.values.size());
    shape_functions_1d(order, xi, out.values.data(), out.derivatives.data());
    return out;
}

} // namespace fcmlat
