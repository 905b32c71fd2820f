#pragma once

// Small numerical building blocks shared by the mechanistic and outcome layers:
// log-space accumulation, jittered Cholesky, and the random draws used by the
// samplers. Everything here is a pure function of its arguments (the RNG is
// passed in explicitly).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include "fibag/error.hpp"

namespace fibag {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kLn10 = 2.302585092994045684;
inline constexpr double kLn2Pi = 1.837877066409345484;

inline double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline double log_add_exp(double a, double b) {
    if (a < b) std::swap(a, b);
    if (!std::isfinite(b)) return a;
    return a + std::log1p(std::exp(b - a));
}

// Upper normal tail Q(x) = P(Z > x) and its logarithm, stable for large x.
inline double normal_upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

inline double log_normal_upper_tail(double x) {
    if (x < 30.0) return std::log(normal_upper_tail(x));
    // Asymptotic series: Q(x) ~ phi(x)/x * (1 - 1/x^2 + 3/x^4 - 15/x^6)
    const double x2 = x * x;
    const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    return -0.5 * x2 - 0.5 * kLn2Pi - std::log(x) + std::log(series);
}

inline double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (kLn2Pi + std::log(var) + d * d / var);
}

// Cholesky of a symmetric positive-definite matrix with escalating diagonal
// jitter. The first attempt is unjittered; later attempts add
// jitter_start, jitter_start*10, ... up to jitter_max.
struct JitteredCholesky {
    Eigen::LLT<Mat> llt;
    double jitter = 0.0;

    double log_det() const {
        const auto& L = llt.matrixLLT();
        double s = 0.0;
        for (Eigen::Index i = 0; i < L.rows(); ++i) s += std::log(L(i, i));
        return 2.0 * s;
    }
};

inline JitteredCholesky cholesky_with_jitter(const Mat& a, double jitter_start, double jitter_max) {
    JitteredCholesky out;
    out.llt.compute(a);
    if (out.llt.info() == Eigen::Success) return out;
    for (double j = jitter_start; j <= jitter_max * (1.0 + 1e-12); j *= 10.0) {
        Mat shifted = a;
        shifted.diagonal().array() += j;
        out.llt.compute(shifted);
        if (out.llt.info() == Eigen::Success) {
            out.jitter = j;
            return out;
        }
    }
    throw Error(ErrorKind::FactorizationFailure,
                "matrix of order " + std::to_string(a.rows()) +
                    " not positive definite after jitter " + std::to_string(jitter_max));
}

// ---------------------------------------------------------------------------
// Random streams

using Rng = std::mt19937_64;

// splitmix64 finaliser; used to derive independent per-task streams from a
// master seed so that parallel work is reproducible regardless of schedule.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t task) noexcept {
    return mix_seed(mix_seed(master) ^ (task * 0xd1b54a32d192ed03ULL + 1));
}

inline double draw_uniform(Rng& rng) {
    // (0,1) open interval
    return (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double draw_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline double draw_gamma(Rng& rng, double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(rng);
}

inline double draw_beta(Rng& rng, double a, double b) {
    const double x = draw_gamma(rng, a, 1.0);
    const double y = draw_gamma(rng, b, 1.0);
    if (x + y <= 0.0) return a / (a + b);
    return x / (x + y);
}

// Inverse-Gamma(shape, rate): density proportional to x^{-shape-1} exp(-rate/x).
inline double draw_inverse_gamma(Rng& rng, double shape, double rate) {
    return rate / draw_gamma(rng, shape, 1.0);
}

// Normal(mean, sd^2) truncated to (lower, +inf), by inverse CDF on the upper
// tail: x = Q^{-1}(u * Q(alpha)), with Q^{-1}(q) = sqrt(2) erfc^{-1}(2q).
inline double draw_truncated_normal_below(Rng& rng, double mean, double sd, double lower) {
    const double alpha = (lower - mean) / sd;
    const double u = draw_uniform(rng);
    const double log_q = log_normal_upper_tail(alpha);
    const double log_target = std::log(u) + log_q;
    double z;
    if (log_target > std::log(1e-300)) {
        const double q = std::exp(log_target);
        z = std::sqrt(2.0) * boost::math::erfc_inv(2.0 * q);
    } else {
        // Far tail: Z^2 - alpha^2 given Z > alpha is asymptotically Exp(1/2).
        z = std::sqrt(alpha * alpha - 2.0 * std::log(u));
    }
    z = std::max(z, alpha);
    return mean + sd * z;
}

} // namespace fibag
