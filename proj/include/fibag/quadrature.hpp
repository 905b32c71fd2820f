#pragma once

// One-dimensional quadrature in log space.
//
// Integrands handled here are positive and can span hundreds of orders of
// magnitude, so every routine takes log f and returns log of the integral.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fibag/error.hpp"
#include "fibag/numeric.hpp"

namespace fibag::quad {

struct Rule {
    std::vector<double> nodes;
    std::vector<double> log_weights;
};

// Gauss-Laguerre rule for weight e^{-x} on [0, inf). Nodes from the Jacobi
// matrix eigenvalues, polished by Newton on L_n; weights from
// w_i = x_i / ((n+1)^2 L_{n+1}(x_i)^2), kept in log form so tiny tail
// weights keep full relative precision.
inline Rule gauss_laguerre(int n) {
    Mat jacobi = Mat::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        jacobi(k, k) = 2.0 * k + 1.0;
        if (k + 1 < n) {
            jacobi(k, k + 1) = k + 1.0;
            jacobi(k + 1, k) = k + 1.0;
        }
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi, Eigen::EigenvaluesOnly);
    const Vec& guess = eig.eigenvalues();

    // returns (L_n(x), L_{n-1}(x))
    auto laguerre = [](int order, double x) {
        double prev = 1.0;
        double cur = 1.0 - x;
        if (order == 0) return std::pair{1.0, 0.0};
        for (int k = 1; k < order; ++k) {
            const double next = ((2.0 * k + 1.0 - x) * cur - k * prev) / (k + 1.0);
            prev = cur;
            cur = next;
        }
        return std::pair{cur, prev};
    };

    Rule rule;
    rule.nodes.resize(n);
    rule.log_weights.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = guess(i);
        for (int it = 0; it < 8; ++it) {
            auto [ln, lnm1] = laguerre(n, x);
            const double deriv = n * (ln - lnm1) / x;
            const double step = ln / deriv;
            x -= step;
            if (std::abs(step) <= 1e-15 * x) break;
        }
        auto [ln1, ln] = laguerre(n + 1, x);
        (void)ln;
        rule.nodes[i] = x;
        rule.log_weights[i] = std::log(x) - 2.0 * std::log(n + 1.0) - 2.0 * std::log(std::abs(ln1));
    }
    return rule;
}

inline const Rule& laguerre_64() {
    static const Rule r = gauss_laguerre(64);
    return r;
}

inline const Rule& laguerre_96() {
    static const Rule r = gauss_laguerre(96);
    return r;
}

// log of sum_i w_i exp(log_h(x_i)), i.e. log int_0^inf e^{-x} h(x) dx.
template <typename LogH>
double laguerre_log_integral(const Rule& rule, LogH&& log_h) {
    std::vector<double> terms(rule.nodes.size());
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        terms[i] = rule.log_weights[i] + log_h(rule.nodes[i]);
    return log_sum_exp(terms);
}

struct AdaptiveResult {
    double log_value = 0.0;
    double rel_error = 0.0;
    int evaluations = 0;
};

// Adaptive bisected trapezoid for log int_a^b exp(log_f(x)) dx, with two
// Richardson levels per segment: trapezoids at h, h/2 and h/4 give two
// Simpson values, and a segment is accepted once those agree to within its
// share of rel_tol times the coarse total. Otherwise it is bisected.
template <typename LogF>
AdaptiveResult adaptive_trapezoid_log(LogF&& log_f, double a, double b, double rel_tol,
                                      int initial_segments = 64, int max_depth = 40) {
    AdaptiveResult out;
    const int m = initial_segments;
    const double width = (b - a) / m;
    std::vector<double> lf(2 * m + 1);
    double ref = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 2 * m; ++i) {
        lf[i] = log_f(a + 0.5 * width * i);
        ref = std::max(ref, lf[i]);
    }
    out.evaluations = 2 * m + 1;
    if (!std::isfinite(ref))
        throw Error(ErrorKind::QuadratureNotConverged, "integrand has no finite log value on grid");
    auto f = [&](double lv) { return std::exp(lv - ref); };

    double coarse = 0.0;
    for (int i = 0; i < m; ++i) coarse += width / 6.0 * (f(lf[2 * i]) + 4.0 * f(lf[2 * i + 1]) + f(lf[2 * i + 2]));
    const double abs_tol = rel_tol * coarse;

    double total = 0.0;
    double err = 0.0;
    struct Seg {
        double x0, x1, f0, fm, f1;
        int depth;
    };
    std::vector<Seg> stack;
    for (int i = m - 1; i >= 0; --i)
        stack.push_back({a + width * i, a + width * (i + 1), f(lf[2 * i]), f(lf[2 * i + 1]), f(lf[2 * i + 2]), 0});
    while (!stack.empty()) {
        const Seg s = stack.back();
        stack.pop_back();
        const double h = s.x1 - s.x0;
        const double xm = 0.5 * (s.x0 + s.x1);
        const double fq1 = std::exp(log_f(s.x0 + 0.25 * h) - ref);
        const double fq3 = std::exp(log_f(s.x0 + 0.75 * h) - ref);
        out.evaluations += 2;
        const double s1 = h / 6.0 * (s.f0 + 4.0 * s.fm + s.f1);
        const double s2 = h / 12.0 * (s.f0 + 4.0 * fq1 + 2.0 * s.fm + 4.0 * fq3 + s.f1);
        const double e = std::abs(s2 - s1) / 15.0;
        if (e <= abs_tol * (h / (b - a)) || s.depth >= max_depth) {
            total += s2 + (s2 - s1) / 15.0;
            err += e;
        } else {
            stack.push_back({xm, s.x1, s.fm, fq3, s.f1, s.depth + 1});
            stack.push_back({s.x0, xm, s.f0, fq1, s.fm, s.depth + 1});
        }
    }
    out.log_value = ref + std::log(total);
    out.rel_error = err / total;
    return out;
}

} // namespace fibag::quad
