#pragma once

// Mechanistic layer: log Bayes factors for "expression depends on upstream
// covariates" using a squared-exponential Gaussian process alternative
// against an intercept-only null.
//
// Model (per biomarker):
//   null:  y = mu 1 + e,          mu ~ N(0, tau^2 g/(1+g))
//   GP:    y = f + e,             f ~ N(0, tau^2 Kt),  Kt(u,v) = g exp(-|u-v|^2 / lambda^2)
//   e ~ N(0, tau^2 I), tau^2 ~ IG(nu0/2, nu0 tau0^2/2), lambda ~ Exp(lambda0)
// tau^2 is integrated analytically in both models; lambda numerically.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fibag/data_model.hpp"
#include "fibag/error.hpp"
#include "fibag/numeric.hpp"
#include "fibag/parallel.hpp"
#include "fibag/quadrature.hpp"

namespace fibag::gp {

struct GpHyperParams {
    double nu0 = 3.0;
    double tau0_sq = 1.0;
    double lambda0 = 1.0;
    std::optional<double> g; // defaults to n

    double g_for(Eigen::Index n) const { return g.value_or(static_cast<double>(n)); }

    void check() const {
        if (!(nu0 > 0.0) || !(tau0_sq > 0.0) || !(lambda0 > 0.0) || (g && !(*g > 0.0)))
            throw Error(ErrorKind::InvalidConfig, "GP hyperparameters must be strictly positive");
    }
};

struct QuadratureConfig {
    double rel_tol = 1e-6;          // accepted |I64/I96 - 1| before falling back
    double fallback_rel_tol = 1e-7; // adaptive trapezoid target
    double jitter_start = 1e-8;     // times g
    double jitter_max = 1e-4;       // times g
};

// Constants shared by the null and GP marginals for a given n.
struct LbfConstants {
    double b_n;   // (n + nu0)/2
    double a;     // nu0 tau0^2
    double c_n;   // n + 1 + 1/g, null-model precision for mu
    double log_norm; // -n/2 ln 2pi + alpha ln beta - lnGamma(alpha) + lnGamma(b_n)

    static LbfConstants make(Eigen::Index n, const GpHyperParams& h) {
        const double nn = static_cast<double>(n);
        const double g = h.g_for(n);
        const double alpha = 0.5 * h.nu0;
        const double beta = 0.5 * h.nu0 * h.tau0_sq;
        LbfConstants c;
        c.b_n = 0.5 * (nn + h.nu0);
        c.a = h.nu0 * h.tau0_sq;
        c.c_n = nn + 1.0 + 1.0 / g;
        c.log_norm = -0.5 * nn * kLn2Pi + alpha * std::log(beta) - std::lgamma(alpha) + std::lgamma(c.b_n);
        return c;
    }
};

// Kt = g exp(-|u-v|^2 / lambda^2). lambda = 0 is the limit g * [u == v].
inline Mat kernel_from_sqdist(const Mat& sqdist, double lambda, double g) {
    Mat k(sqdist.rows(), sqdist.cols());
    if (lambda == 0.0) {
        k = (sqdist.array() == 0.0).cast<double>() * g;
        return k;
    }
    const double inv = 1.0 / (lambda * lambda);
    k = g * (-sqdist.array() * inv).exp();
    return k;
}

inline Mat squared_distances(const Mat& x) {
    const auto n = x.rows();
    Mat d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = (x.row(i) - x.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    if (!d.allFinite()) throw Error(ErrorKind::NonFiniteDistance, "upstream design yields non-finite distances");
    return d;
}

inline Mat build_kernel(const Mat& x, double lambda, double g) {
    if (!(lambda > 0.0) || !(g > 0.0))
        throw Error(ErrorKind::InvalidConfig, "kernel needs lambda > 0 and g > 0");
    return kernel_from_sqdist(squared_distances(x), lambda, g);
}

// Natural-log marginal likelihood of the intercept-only null.
inline double log_marginal_null(const Vec& y, const GpHyperParams& hyper) {
    hyper.check();
    if (!y.allFinite()) throw Error(ErrorKind::NonFinite, "response has non-finite values");
    const auto n = y.size();
    const double g = hyper.g_for(n);
    const auto c = LbfConstants::make(n, hyper);
    const double sum = y.sum();
    const double quad = c.a + y.squaredNorm() - sum * sum / c.c_n;
    if (!(quad > 0.0))
        throw Error(ErrorKind::NonPositiveQuadForm, "a + sum y^2 - (sum y)^2 / c_n = " + std::to_string(quad));
    const double prior_scale = g / (1.0 + g);
    return c.log_norm - 0.5 * std::log(prior_scale * c.c_n) - c.b_n * std::log(0.5 * quad);
}

struct GpMarginal {
    double log_marginal = 0.0;
    double quad_error = 0.0; // relative error estimate of the lambda integral
    int nodes_used = 0;
    bool used_fallback = false;
};

// -1/2 ln|Kt + I| - b_n ln(a + y'(Kt + I)^{-1} y) at a given lambda.
class GpIntegrand {
public:
    GpIntegrand(const Vec& y, const Mat& x_up, const GpHyperParams& hyper, const QuadratureConfig& qc)
        : y_(y), sqdist_(squared_distances(x_up)), g_(hyper.g_for(y.size())),
          consts_(LbfConstants::make(y.size(), hyper)), qc_(qc) {}

    double operator()(double lambda) const {
        Mat s = kernel_from_sqdist(sqdist_, lambda, g_);
        s.diagonal().array() += 1.0;
        const auto chol = cholesky_with_jitter(s, qc_.jitter_start * g_, qc_.jitter_max * g_);
        const Vec w = chol.llt.matrixL().solve(y_);
        return -0.5 * chol.log_det() - consts_.b_n * std::log(consts_.a + w.squaredNorm());
    }

    const LbfConstants& constants() const { return consts_; }

private:
    Vec y_;
    Mat sqdist_;
    double g_;
    LbfConstants consts_;
    QuadratureConfig qc_;
};

inline GpMarginal log_marginal_gp(const Vec& y, const Mat& x_up, const GpHyperParams& hyper,
                                  const QuadratureConfig& qc = {}) {
    hyper.check();
    if (x_up.rows() != y.size() || x_up.cols() < 1)
        throw Error(ErrorKind::InvalidConfig, "upstream design must have n rows and at least one column");
    if (!y.allFinite()) throw Error(ErrorKind::NonFinite, "response has non-finite values");
    const GpIntegrand log_h(y, x_up, hyper, qc);
    const double lambda0 = hyper.lambda0;
    const auto& c = log_h.constants();

    // int_0^inf lambda0 e^{-lambda0 lambda} h(lambda) dlambda = int_0^inf e^{-u} h(u/lambda0) du
    auto at_u = [&](double u) { return log_h(u / lambda0); };
    const double l64 = quad::laguerre_log_integral(quad::laguerre_64(), at_u);
    const double l96 = quad::laguerre_log_integral(quad::laguerre_96(), at_u);

    GpMarginal out;
    out.nodes_used = 64 + 96;
    double log_integral = l96;
    out.quad_error = std::abs(std::expm1(l64 - l96));
    if (!(out.quad_error <= qc.rel_tol)) {
        auto integrand = [&](double lambda) { return std::log(lambda0) - lambda0 * lambda + log_h(lambda); };
        const auto r = quad::adaptive_trapezoid_log(integrand, 0.0, 50.0 / lambda0, qc.fallback_rel_tol);
        out.used_fallback = true;
        out.nodes_used += r.evaluations;
        out.quad_error = r.rel_error;
        log_integral = r.log_value;
        if (!(r.rel_error <= qc.rel_tol) || !std::isfinite(r.log_value))
            throw Error(ErrorKind::QuadratureNotConverged,
                        "lambda integral relative error " + std::to_string(r.rel_error));
    }
    out.log_marginal = c.log_norm + c.b_n * std::log(2.0) + log_integral;
    return out;
}

struct LbfResult {
    double lbf = 0.0; // base 10
    double log_marginal_alt = 0.0;
    double log_marginal_null = 0.0;
    double quad_error = 0.0;
    int nodes_used = 0;
    bool used_fallback = false;
};

inline LbfResult log_bayes_factor(const Vec& y, const Mat& x_up, const GpHyperParams& hyper,
                                  const QuadratureConfig& qc = {}) {
    const auto alt = log_marginal_gp(y, x_up, hyper, qc);
    LbfResult r;
    r.log_marginal_alt = alt.log_marginal;
    r.log_marginal_null = log_marginal_null(y, hyper);
    r.lbf = (r.log_marginal_alt - r.log_marginal_null) / kLn10;
    r.quad_error = alt.quad_error;
    r.nodes_used = alt.nodes_used;
    r.used_fallback = alt.used_fallback;
    if (!std::isfinite(r.lbf)) throw Error(ErrorKind::NonFinite, "log Bayes factor is not finite");
    return r;
}

// Linear alternative y = X beta + e with beta ~ N(0, g tau^2 (X'X)^{-1}) on
// column-centred X (the null's intercept absorbs the means). Closed form:
//   y | tau^2 ~ N(0, tau^2 (I + g P_X)),  |I + g P_X| = (1+g)^d.
inline double log_marginal_linear(const Vec& y, const Mat& x_up, const GpHyperParams& hyper) {
    hyper.check();
    const auto n = y.size();
    if (x_up.rows() != n || x_up.cols() < 1)
        throw Error(ErrorKind::InvalidConfig, "upstream design must have n rows and at least one column");
    const Mat xc = center_columns(x_up);
    const double g = hyper.g_for(n);
    Eigen::ColPivHouseholderQR<Mat> qr(xc);
    qr.setThreshold(1e-10);
    const auto d = xc.cols();
    if (qr.rank() < d || d >= n)
        throw Error(ErrorKind::SingularDesign, "centred upstream design is rank deficient");
    const Vec fitted = xc * qr.solve(y);
    const double proj = y.dot(fitted); // y' P_X y
    const auto c = LbfConstants::make(n, hyper);
    const double quad = c.a + y.squaredNorm() - g / (1.0 + g) * proj;
    return c.log_norm - 0.5 * static_cast<double>(d) * std::log1p(g) - c.b_n * std::log(0.5 * quad);
}

inline double log_bayes_factor_linear(const Vec& y, const Mat& x_up, const GpHyperParams& hyper) {
    return (log_marginal_linear(y, x_up, hyper) - log_marginal_null(y, hyper)) / kLn10;
}

// ---------------------------------------------------------------------------

enum class EvidenceClass { None, Substantial, Strong, Decisive };

constexpr std::string_view to_string(EvidenceClass c) noexcept {
    switch (c) {
    case EvidenceClass::None: return "none";
    case EvidenceClass::Substantial: return "substantial";
    case EvidenceClass::Strong: return "strong";
    case EvidenceClass::Decisive: return "decisive";
    }
    return "none";
}

inline EvidenceClass classify_evidence(double lbf) {
    if (!std::isfinite(lbf)) throw Error(ErrorKind::NonFinite, "lbf is not finite");
    if (lbf < 0.5) return EvidenceClass::None;
    if (lbf < 1.0) return EvidenceClass::Substantial;
    if (lbf < 2.0) return EvidenceClass::Strong;
    return EvidenceClass::Decisive;
}

enum class Axis { DriverGene, DriverProtein, CascadingProtein };

constexpr std::string_view to_string(Axis a) noexcept {
    switch (a) {
    case Axis::DriverGene: return "driver_gene";
    case Axis::DriverProtein: return "driver_protein";
    case Axis::CascadingProtein: return "cascading_protein";
    }
    return "";
}

inline std::optional<Axis> parse_axis(std::string_view s) {
    if (s == "driver_gene") return Axis::DriverGene;
    if (s == "driver_protein") return Axis::DriverProtein;
    if (s == "cascading_protein") return Axis::CascadingProtein;
    return std::nullopt;
}

struct MechanisticResult {
    std::string biomarker_id;
    Axis axis = Axis::DriverGene;
    double lbf = 0.0;
    EvidenceClass evidence = EvidenceClass::None;
    double quad_error = 0.0;
    int nodes_used = 0;
};

struct SuiteFailure {
    std::string biomarker_id;
    Axis axis;
    std::string message;
};

struct SuiteResult {
    std::vector<MechanisticResult> results; // sorted by (biomarker_id, axis)
    std::vector<SuiteFailure> failures;
};

inline SuiteResult run_mechanistic_suite(const OmicsDataset& ds, const BiomarkerMap& map,
                                         const GpHyperParams& hyper, const QuadratureConfig& qc = {},
                                         int jobs = 1) {
    if (!ds.genes.empty() && !columns_centered(ds.genes.values))
        throw Error(ErrorKind::InvalidConfig, "gene expression must be column-centred");
    if (!ds.proteins.empty() && !columns_centered(ds.proteins.values))
        throw Error(ErrorKind::InvalidConfig, "protein expression must be column-centred");

    struct Task {
        std::string id;
        Axis axis;
        Vec y;
        Mat x;
    };
    std::vector<Task> tasks;
    auto upstream_cols = [&](const std::vector<Eigen::Index>& cols) {
        Mat x(ds.n(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = ds.upstream.values.col(cols[k]);
        return x;
    };
    for (const auto& g : map.genes)
        tasks.push_back({g.id, Axis::DriverGene, ds.genes.values.col(g.column), upstream_cols(g.upstream)});
    for (const auto& p : map.proteins) {
        const Vec y = ds.proteins.values.col(p.column);
        Mat up = upstream_cols(p.upstream);
        tasks.push_back({p.id, Axis::DriverProtein, y, up});
        if (p.coding_gene) {
            Mat x(ds.n(), up.cols() + 1);
            x.col(0) = ds.genes.values.col(*p.coding_gene);
            x.rightCols(up.cols()) = up;
            tasks.push_back({p.id, Axis::CascadingProtein, y, std::move(x)});
        }
    }

    std::vector<std::optional<MechanisticResult>> slots(tasks.size());
    std::vector<std::string> errors(tasks.size());
    parallel_for(tasks.size(), jobs, [&](std::size_t i) {
        const auto& t = tasks[i];
        try {
            const auto r = log_bayes_factor(t.y, t.x, hyper, qc);
            slots[i] = MechanisticResult{t.id, t.axis, r.lbf, classify_evidence(r.lbf), r.quad_error, r.nodes_used};
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });

    SuiteResult out;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (slots[i]) out.results.push_back(*slots[i]);
        else out.failures.push_back({tasks[i].id, tasks[i].axis, errors[i]});
    }
    auto key = [](const auto& r) { return std::pair{r.biomarker_id, static_cast<int>(r.axis)}; };
    std::sort(out.results.begin(), out.results.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
    std::sort(out.failures.begin(), out.failures.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
    return out;
}

} // namespace fibag::gp
