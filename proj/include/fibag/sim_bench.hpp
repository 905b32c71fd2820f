#pragma once

// Simulation generators, ranking metrics and the benchmark harness.
//
// Simulation 1: p = 200 biomarkers, each with a single upstream covariate,
//   U_ij ~ N(0,1),  X_ij ~ N(xi_j U_ij, 1),  Y_i ~ N(beta' X_i, 1).
// Layout (covariate index ranges):
//   0..59    four evidence classes x 15 (None, Substantial, Strong, Decisive),
//            each split into Low / Medium / High effect bands of 5
//   60..64   Strong evidence, no effect
//   65..69   Decisive evidence, no effect
//   70..199  no evidence, no effect
//
// Nonlinear study: X ~ U(0,1)^5 and level l replaces the first l linear
// terms by their nonlinear counterparts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fibag/calibration.hpp"
#include "fibag/cbvs.hpp"
#include "fibag/data_model.hpp"
#include "fibag/error.hpp"
#include "fibag/gp_mechanistic.hpp"
#include "fibag/numeric.hpp"
#include "fibag/parallel.hpp"
#include "fibag/selection_fdr.hpp"

namespace fibag::sim {

using gp::EvidenceClass;

enum class EffectBand { None, Low, Medium, High };

struct Sim1Layout {
    static constexpr int p = 200;
    static constexpr int per_class = 15;
    static constexpr int per_band = 5;
    static constexpr int n_effects = 60;
    static constexpr int n_evidence = 70;

    static EvidenceClass evidence_of(int j) {
        if (j < 60) return static_cast<EvidenceClass>(j / per_class);
        if (j < 65) return EvidenceClass::Strong;
        if (j < 70) return EvidenceClass::Decisive;
        return EvidenceClass::None;
    }

    static EffectBand band_of(int j) {
        if (j >= 60) return EffectBand::None;
        return static_cast<EffectBand>(1 + (j % per_class) / per_band);
    }

    static std::string id(int j) { return "X" + std::to_string(j + 1); }
};

struct Sim1Truth {
    std::vector<double> xi;
    std::vector<double> beta;
    std::vector<EvidenceClass> evidence;
    std::vector<EffectBand> band;

    std::vector<int> active() const {
        std::vector<int> a(beta.size());
        for (std::size_t j = 0; j < beta.size(); ++j) a[j] = beta[j] != 0.0 ? 1 : 0;
        return a;
    }
};

// One xi per evidence class; index by static_cast<int>(EvidenceClass).
using ClassXi = std::array<double, 4>;

// Median-lbf bin targets per evidence class.
inline constexpr std::array<double, 4> kClassTargets{0.1, 0.75, 1.5, 3.0};

struct Sim1Data {
    OmicsDataset ds; // upstream U (raw), genes X (raw), continuous outcome
    BiomarkerMap map;
    Sim1Truth truth;
};

inline double draw_band_effect(Rng& rng, EffectBand b) {
    switch (b) {
    case EffectBand::None: return 0.0;
    case EffectBand::Low: return 0.2 * draw_uniform(rng);
    case EffectBand::Medium: return 0.4 + 0.2 * draw_uniform(rng);
    case EffectBand::High: return 0.9 + 0.2 * draw_uniform(rng);
    }
    return 0.0;
}

inline Sim1Data generate_sim1(Eigen::Index n, const ClassXi& xi, std::uint64_t seed) {
    if (n < 2) throw Error(ErrorKind::InvalidConfig, "simulation needs n >= 2");
    constexpr int p = Sim1Layout::p;
    Rng rng(seed);
    Sim1Data out;
    auto& t = out.truth;
    for (int j = 0; j < p; ++j) {
        t.evidence.push_back(Sim1Layout::evidence_of(j));
        t.band.push_back(Sim1Layout::band_of(j));
        t.xi.push_back(xi[static_cast<std::size_t>(t.evidence.back())]);
        t.beta.push_back(draw_band_effect(rng, t.band.back()));
    }
    Mat u(n, p), x(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) {
            u(i, j) = draw_normal(rng);
            x(i, j) = t.xi[static_cast<std::size_t>(j)] * u(i, j) + draw_normal(rng);
        }
    Vec beta = Eigen::Map<const Vec>(t.beta.data(), p);
    Vec y = x * beta;
    for (Eigen::Index i = 0; i < n; ++i) y(i) += draw_normal(rng);

    auto& ds = out.ds;
    for (Eigen::Index i = 0; i < n; ++i) ds.sample_ids.push_back("s" + std::to_string(i + 1));
    ds.upstream.values = std::move(u);
    ds.genes.values = std::move(x);
    for (int j = 0; j < p; ++j) {
        ds.upstream.column_ids.push_back("u:U" + std::to_string(j + 1));
        ds.upstream.platform.push_back("u");
        ds.genes.column_ids.push_back(Sim1Layout::id(j));
        ds.genes.platform.push_back("rna");
        out.map.genes.push_back({Sim1Layout::id(j), j, {j}});
    }
    ds.proteins.values.resize(n, 0);
    ds.covariates.values.resize(n, 0);
    ds.outcome = ContinuousOutcome{std::move(y)};
    return out;
}

// lbf of a centred copy of x on its single upstream column u.
inline double single_upstream_lbf(const Vec& x, const Vec& u, const gp::GpHyperParams& hyper) {
    const Vec xc = x.array() - x.mean();
    return gp::log_bayes_factor(xc, Mat(u), hyper).lbf;
}

// GP evidence for every simulated biomarker.
inline std::vector<double> sim1_gp_evidence(const Sim1Data& d, const gp::GpHyperParams& hyper, int jobs = 1) {
    std::vector<double> lbf(static_cast<std::size_t>(Sim1Layout::p));
    parallel_for(lbf.size(), jobs, [&](std::size_t j) {
        const auto c = static_cast<Eigen::Index>(j);
        lbf[j] = single_upstream_lbf(d.ds.genes.values.col(c), d.ds.upstream.values.col(c), hyper);
    });
    return lbf;
}

// Evidence fixed at each covariate's class target.
inline std::vector<double> sim1_target_evidence(const Sim1Truth& t) {
    std::vector<double> lbf;
    for (auto c : t.evidence) lbf.push_back(kClassTargets[static_cast<std::size_t>(c)]);
    return lbf;
}

// ---------------------------------------------------------------------------
// xi calibration

inline double median(std::vector<double> v) {
    if (v.empty()) throw Error(ErrorKind::EmptyInput, "median of an empty sample");
    std::sort(v.begin(), v.end());
    const auto m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Linear-interpolation quantile (type 7).
inline double quantile(std::vector<double> v, double prob) {
    if (v.empty()) throw Error(ErrorKind::EmptyInput, "quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double h = prob * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Monte Carlo median lbf at a given xi. Replicate r always uses the same
// stream, so the median moves smoothly with xi.
inline double median_lbf_at(double xi, Eigen::Index n, const gp::GpHyperParams& hyper, std::uint64_t seed,
                            int replicates = 50, int jobs = 1) {
    std::vector<double> lbf(static_cast<std::size_t>(replicates));
    parallel_for(lbf.size(), jobs, [&](std::size_t r) {
        Rng rng(derive_seed(seed, r));
        Vec u(n), x(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            u(i) = draw_normal(rng);
            x(i) = xi * u(i) + draw_normal(rng);
        }
        lbf[r] = single_upstream_lbf(x, u, hyper);
    });
    return median(lbf);
}

struct XiCalibration {
    ClassXi xi{};
    std::array<double, 4> median_lbf{};
    std::array<int, 4> probes{};
};

inline bool in_class_bin(double lbf, EvidenceClass c) { return gp::classify_evidence(lbf) == c; }

inline XiCalibration calibrate_xi(const std::array<double, 4>& targets, Eigen::Index n, const gp::GpHyperParams& hyper,
                                  std::uint64_t seed, int replicates = 50, int jobs = 1, double xi_max = 5.0) {
    XiCalibration out;
    out.xi[0] = 0.0;
    out.median_lbf[0] = median_lbf_at(0.0, n, hyper, seed, replicates, jobs);
    out.probes[0] = 1;
    for (int c = 1; c < 4; ++c) {
        const auto cls = static_cast<EvidenceClass>(c);
        double lo = 0.0, hi = xi_max;
        bool found = false;
        for (int it = 0; it < 60 && hi - lo > 1e-6 * xi_max; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double m = median_lbf_at(mid, n, hyper, seed, replicates, jobs);
            ++out.probes[static_cast<std::size_t>(c)];
            if (in_class_bin(m, cls)) {
                out.xi[static_cast<std::size_t>(c)] = mid;
                out.median_lbf[static_cast<std::size_t>(c)] = m;
                found = true;
                break;
            }
            (m < targets[static_cast<std::size_t>(c)] ? lo : hi) = mid;
        }
        if (!found)
            throw Error(ErrorKind::BisectionFailed, "no xi in [0, " + std::to_string(xi_max) + "] puts the median lbf in the " +
                                                        std::string(gp::to_string(cls)) + " bin");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinear study

struct NonlinearData {
    Mat x;   // n x 5, U(0,1)
    Vec y;   // centred outcome
    Vec mean;
    int level = 0;
};

inline constexpr std::array<double, 5> kNonlinearBeta{10.0, -15.0, 10.0, -8.0, 20.0};

inline double nonlinear_term(int j, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    switch (j) {
    case 0: return 10.0 * std::cos(x(0));
    case 1: return -15.0 * x(1) * x(1);
    case 2: return 10.0 * std::exp(-x(2)) * x(1);
    case 3: return -8.0 * std::sin(x(2)) * std::cos(x(3));
    case 4: return 20.0 * x(0) * x(4);
    }
    return 0.0;
}

inline NonlinearData generate_nonlinear(int level, Eigen::Index n, std::uint64_t seed, double noise_sd = 1.0) {
    if (level < 0 || level > 5) throw Error(ErrorKind::LevelOutOfRange, "nonlinearity level must be in 0..5");
    if (n < 10) throw Error(ErrorKind::InvalidConfig, "nonlinear study needs n >= 10");
    Rng rng(seed);
    NonlinearData d;
    d.level = level;
    d.x.resize(n, 5);
    d.mean.resize(n);
    d.y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < 5; ++j) d.x(i, j) = draw_uniform(rng);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = 0.0;
        for (int j = 0; j < 5; ++j)
            m += j < level ? nonlinear_term(j, d.x.row(i)) : kNonlinearBeta[static_cast<std::size_t>(j)] * d.x(i, j);
        d.mean(i) = m;
        d.y(i) = m + noise_sd * draw_normal(rng);
    }
    d.y.array() -= d.y.mean();
    return d;
}

struct NonlinearStudyRow {
    int level = 0;
    double median_gp = 0.0;
    double median_linear = 0.0;
    std::vector<double> gp_lbf;
    std::vector<double> linear_lbf;
};

inline std::vector<NonlinearStudyRow> nonlinear_study(const std::vector<int>& levels, Eigen::Index n, int replicates,
                                                      std::uint64_t seed, const gp::GpHyperParams& hyper, int jobs = 1) {
    std::vector<NonlinearStudyRow> rows;
    for (int l : levels) {
        NonlinearStudyRow row;
        row.level = l;
        row.gp_lbf.resize(static_cast<std::size_t>(replicates));
        row.linear_lbf.resize(static_cast<std::size_t>(replicates));
        parallel_for(static_cast<std::size_t>(replicates), jobs, [&](std::size_t r) {
            const auto d = generate_nonlinear(l, n, derive_seed(seed, r));
            row.gp_lbf[r] = gp::log_bayes_factor(d.y, d.x, hyper).lbf;
            row.linear_lbf[r] = gp::log_bayes_factor_linear(d.y, d.x, hyper);
        });
        row.median_gp = median(row.gp_lbf);
        row.median_linear = median(row.linear_lbf);
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Metrics

struct SimMetrics {
    double auc = 0.0;
    double auc20 = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
    double mcc = 0.0;
};

// Area under the ROC curve by the midrank statistic.
inline double auc_midrank(const std::vector<int>& truth, const std::vector<double>& score) {
    const std::size_t m = truth.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });
    std::vector<double> rank(m);
    for (std::size_t i = 0; i < m;) {
        std::size_t j = i;
        while (j + 1 < m && score[order[j + 1]] == score[order[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0, neg = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (truth[i]) {
            pos += 1.0;
            sum += rank[i];
        } else {
            neg += 1.0;
        }
    }
    return (sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

// Partial ROC area over FPR in [0, fpr_max], divided by fpr_max. Tied
// scores form a single diagonal ROC segment.
inline double partial_auc(const std::vector<int>& truth, const std::vector<double>& score, double fpr_max = 0.2) {
    const std::size_t m = truth.size();
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] > score[b]; });
    double pos = 0.0, neg = 0.0;
    for (int t : truth) (t ? pos : neg) += 1.0;
    double area = 0.0, fx = 0.0, ty = 0.0;
    for (std::size_t i = 0; i < m && fx < fpr_max;) {
        std::size_t j = i;
        double dp = 0.0, dn = 0.0;
        while (j < m && score[order[j]] == score[order[i]]) {
            (truth[order[j]] ? dp : dn) += 1.0;
            ++j;
        }
        const double nx = fx + dn / neg, ny = ty + dp / pos;
        if (nx <= fpr_max || nx == fx) {
            area += 0.5 * (nx - fx) * (ty + ny);
        } else {
            const double frac = (fpr_max - fx) / (nx - fx);
            const double cy = ty + frac * (ny - ty);
            area += 0.5 * (fpr_max - fx) * (ty + cy);
        }
        fx = nx;
        ty = ny;
        i = j;
    }
    return area / fpr_max;
}

inline SimMetrics compute_metrics(const std::vector<int>& truth, const std::vector<double>& pips,
                                  const std::vector<int>& selected) {
    if (truth.size() != pips.size() || truth.size() != selected.size())
        throw Error(ErrorKind::InvalidConfig, "truth, PIPs and selection differ in length");
    const auto positives = std::count(truth.begin(), truth.end(), 1);
    if (positives == 0 || positives == static_cast<long>(truth.size()))
        throw Error(ErrorKind::DegenerateTruth, "AUC needs at least one positive and one negative");
    SimMetrics m;
    m.auc = auc_midrank(truth, pips);
    m.auc20 = partial_auc(truth, pips, 0.2);
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) (selected[i] ? tp : fn) += 1.0;
        else (selected[i] ? fp : tn) += 1.0;
    }
    m.tpr = tp / (tp + fn);
    m.fpr = fp / (fp + tn);
    const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
    m.mcc = den > 0.0 ? (tp * tn - fp * fn) / den : 0.0;
    return m;
}

// P(Binom(n, 1/2) >= wins).
inline double sign_test_upper(int wins, int n) {
    double p = 0.0;
    for (int k = wins; k <= n; ++k)
        p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
    return std::min(p, 1.0);
}

// ---------------------------------------------------------------------------
// Benchmark

enum class Method { CbvsCalibrated, CbvsUncalibrated };

inline std::string_view to_string(Method m) {
    return m == Method::CbvsCalibrated ? "cbvs-calibrated" : "cbvs-uncalibrated";
}

enum class EvidenceSource {
    Gp,          // GP lbf of each simulated biomarker on its upstream covariate
    ClassTarget, // each covariate's class target lbf
};

struct Scenario {
    Eigen::Index n = 50;
    int replicates = 20;
    std::uint64_t seed = 1;
    std::vector<Method> methods{Method::CbvsCalibrated, Method::CbvsUncalibrated};
    double alpha = 0.1;
    fdr::Rule rule = fdr::Rule::PaperCumulativeSum;
    cbvs::CbvsConfig cbvs;
    EvidenceSource evidence = EvidenceSource::Gp;
    gp::GpHyperParams hyper;
    std::optional<ClassXi> xi; // calibrated at n when absent
    int jobs = 1;
};

struct MetricRow {
    Method method = Method::CbvsCalibrated;
    int replicate = 0;
    std::uint64_t seed = 0;
    SimMetrics metrics;
    std::size_t n_selected = 0;
};

struct MetricSummary {
    Method method = Method::CbvsCalibrated;
    SimMetrics median;
    SimMetrics iqr;
    int replicates = 0;
};

struct BenchmarkFailure {
    int replicate = 0;
    Method method = Method::CbvsCalibrated;
    std::string message;
};

struct BenchmarkResult {
    ClassXi xi{};
    std::vector<MetricRow> rows;          // sorted by (method, replicate)
    std::vector<MetricSummary> summaries; // one per method
    std::vector<BenchmarkFailure> failures;
};

inline std::vector<calib::CalibratedPrior> priors_from_lbf(const std::vector<double>& lbf) {
    std::vector<calib::CalibratedPrior> out;
    for (std::size_t j = 0; j < lbf.size(); ++j) out.push_back(calib::calibrate(lbf[j], {}, Sim1Layout::id(static_cast<int>(j))));
    return out;
}

inline BenchmarkResult run_benchmark(const Scenario& sc) {
    BenchmarkResult res;
    res.xi = sc.xi ? *sc.xi : calibrate_xi(kClassTargets, sc.n, sc.hyper, derive_seed(sc.seed, 0xC0FFEE), 50, sc.jobs).xi;

    const std::size_t nm = sc.methods.size();
    const std::size_t tasks = static_cast<std::size_t>(sc.replicates) * nm;
    std::vector<std::optional<MetricRow>> slots(tasks);
    std::vector<std::string> errors(tasks);
    // Evidence is shared by all methods of a replicate; compute per replicate.
    parallel_for(static_cast<std::size_t>(sc.replicates), sc.jobs, [&](std::size_t r) {
        const std::uint64_t seed = derive_seed(sc.seed, r + 1);
        std::vector<double> lbf;
        Sim1Data data;
        try {
            data = generate_sim1(sc.n, res.xi, seed);
            lbf = sc.evidence == EvidenceSource::Gp ? sim1_gp_evidence(data, sc.hyper) : sim1_target_evidence(data.truth);
        } catch (const Error& e) {
            for (std::size_t k = 0; k < nm; ++k) errors[r * nm + k] = e.what();
            return;
        }
        const auto truth = data.truth.active();
        for (std::size_t k = 0; k < nm; ++k) {
            try {
                const Method method = sc.methods[k];
                const auto priors = method == Method::CbvsCalibrated
                                        ? priors_from_lbf(lbf)
                                        : priors_from_lbf(std::vector<double>(lbf.size(), 0.0));
                auto cfg = sc.cbvs;
                cfg.seed = derive_seed(seed, 7);
                const auto fit = cbvs::fit(data.ds, priors, cfg);
                std::vector<double> pips(fit.pip.data(), fit.pip.data() + fit.pip.size());
                const auto sel = fdr::select_fdr(pips, sc.alpha, sc.rule);
                MetricRow row;
                row.method = method;
                row.replicate = static_cast<int>(r);
                row.seed = seed;
                row.metrics = compute_metrics(truth, pips, sel.selected_mask());
                row.n_selected = sel.j_star;
                slots[r * nm + k] = row;
            } catch (const Error& e) {
                errors[r * nm + k] = e.what();
            }
        }
    });

    for (std::size_t i = 0; i < tasks; ++i) {
        if (slots[i]) res.rows.push_back(*slots[i]);
        else res.failures.push_back({static_cast<int>(i / nm), sc.methods[i % nm], errors[i]});
    }
    std::stable_sort(res.rows.begin(), res.rows.end(), [](const MetricRow& a, const MetricRow& b) {
        return std::pair{static_cast<int>(a.method), a.replicate} < std::pair{static_cast<int>(b.method), b.replicate};
    });

    for (Method m : sc.methods) {
        std::array<std::vector<double>, 5> cols;
        for (const auto& row : res.rows) {
            if (row.method != m) continue;
            const auto& x = row.metrics;
            cols[0].push_back(x.auc);
            cols[1].push_back(x.auc20);
            cols[2].push_back(x.tpr);
            cols[3].push_back(x.fpr);
            cols[4].push_back(x.mcc);
        }
        MetricSummary s;
        s.method = m;
        s.replicates = static_cast<int>(cols[0].size());
        if (s.replicates > 0) {
            auto stat = [&](auto f) {
                return SimMetrics{f(cols[0]), f(cols[1]), f(cols[2]), f(cols[3]), f(cols[4])};
            };
            s.median = stat([](const auto& v) { return median(v); });
            s.iqr = stat([](const auto& v) { return quantile(v, 0.75) - quantile(v, 0.25); });
        }
        res.summaries.push_back(s);
    }
    return res;
}

// ---------------------------------------------------------------------------
// EMVS vs MCMC agreement

struct AgreementRow {
    int replicate = 0;
    double mean_sq_diff = 0.0; // over the p selectable coefficients, standardized scale
};

inline std::vector<AgreementRow> emvs_mcmc_agreement(Eigen::Index n, int replicates, std::uint64_t seed,
                                                     const ClassXi& xi, EvidenceSource source,
                                                     const cbvs::CbvsConfig& mcmc, const gp::GpHyperParams& hyper,
                                                     int jobs = 1) {
    std::vector<AgreementRow> rows(static_cast<std::size_t>(replicates));
    parallel_for(rows.size(), jobs, [&](std::size_t r) {
        const auto s = derive_seed(seed, r + 1);
        const auto data = generate_sim1(n, xi, s);
        const auto lbf = source == EvidenceSource::Gp ? sim1_gp_evidence(data, hyper) : sim1_target_evidence(data.truth);
        const auto priors = priors_from_lbf(lbf);
        auto mc = mcmc;
        mc.seed = derive_seed(s, 7);
        auto em = mcmc;
        em.algorithm = cbvs::Algorithm::Emvs;
        const auto a = cbvs::fit(data.ds, priors, mc);
        const auto b = cbvs::fit_emvs(data.ds, priors, em);
        const auto q = static_cast<Eigen::Index>(a.pip.size());
        rows[r] = {static_cast<int>(r), (a.beta_std.tail(q) - b.beta_std.tail(q)).squaredNorm() / static_cast<double>(q)};
    });
    return rows;
}

} // namespace fibag::sim
