#pragma once

// Calibrated spike-and-slab outcome model.
//
//   y = X beta + eps,            eps ~ N(0, sigma^2 I)
//   beta | gamma, sigma ~ N(0, sigma^2 A_gamma)
//   A_gamma = diag(v1 for intercept and B, gamma_j v1 + (1 - gamma_j) v0 for G and P)
//   gamma_j | omega_j ~ Bern(omega_j),  omega_j ~ Beta(F_j, 1/F_j)
//   sigma^2 ~ IG(nu/2, nu lambda/2)
//
// Survival outcomes use a log-normal AFT model: censored log-times are latent
// and are either imputed from a truncated normal (samplers) or replaced by
// their conditional moments (EM).
//
// Three engines: a full Gibbs sampler, a Metropolis sampler over gamma with
// (beta, sigma, omega) integrated out, and EMVS for the posterior mode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fibag/calibration.hpp"
#include "fibag/data_model.hpp"
#include "fibag/error.hpp"
#include "fibag/numeric.hpp"

namespace fibag::cbvs {

enum class Algorithm { Gibbs, SelectionMcmc, Emvs };

inline std::string_view to_string(Algorithm a) {
    switch (a) {
    case Algorithm::Gibbs: return "gibbs";
    case Algorithm::SelectionMcmc: return "select-mcmc";
    case Algorithm::Emvs: return "emvs";
    }
    return "";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s) {
    if (s == "gibbs") return Algorithm::Gibbs;
    if (s == "select-mcmc") return Algorithm::SelectionMcmc;
    if (s == "emvs") return Algorithm::Emvs;
    return std::nullopt;
}

// How SelectionMcmc weights the per-iteration conditional beta draws.
enum class BmaWeighting {
    Softmax,              // proportional to the collapsed posterior
    NegativeLogPosterior, // proportional to -log posterior
};

struct EmvsConfig {
    int max_iter = 1000;
    double tol = 1e-6;
    double omega_clamp = 1e-6;
};

struct CbvsConfig {
    double v0 = 0.025;
    double v1 = 1.0;
    double nu = 3.0;
    double lambda_sig = 1.0;
    Algorithm algorithm = Algorithm::Gibbs;
    int iterations = 50000;
    int burn_in = 10000;
    int thin = 1;
    std::uint64_t seed = 0;
    EmvsConfig emvs;
    BmaWeighting bma = BmaWeighting::Softmax;
    bool hastings_correction = true;
    bool record_models = false;
    std::optional<std::vector<int>> fixed_gamma; // Gibbs: hold gamma at this value

    void check() const {
        if (!(v0 > 0.0) || !(v1 >= v0))
            throw Error(ErrorKind::InvalidConfig, "need v1 >= v0 > 0");
        if (!(nu > 0.0) || !(lambda_sig > 0.0))
            throw Error(ErrorKind::InvalidConfig, "need nu > 0 and lambda > 0");
        if (algorithm != Algorithm::Emvs) {
            if (iterations <= 0) throw Error(ErrorKind::ZeroIterations, "iterations must be positive");
            if (burn_in < 0 || burn_in >= iterations)
                throw Error(ErrorKind::InvalidConfig, "burn_in must satisfy 0 <= burn_in < iterations");
            if (thin < 1) throw Error(ErrorKind::InvalidConfig, "thin must be >= 1");
        } else {
            if (emvs.max_iter <= 0) throw Error(ErrorKind::ZeroIterations, "emvs.max_iter must be positive");
            if (!(emvs.tol > 0.0)) throw Error(ErrorKind::InvalidConfig, "emvs.tol must be positive");
            if (!(emvs.omega_clamp > 0.0 && emvs.omega_clamp < 0.5))
                throw Error(ErrorKind::InvalidConfig, "emvs.omega_clamp must be in (0, 0.5)");
        }
    }
};

// ---------------------------------------------------------------------------
// Design

struct Design {
    Mat x;                               // n x p, standardized, column 0 = 1
    Vec col_mean;                        // p (0 for intercept)
    Vec col_sd;                          // p (1 for intercept)
    std::vector<std::string> column_ids; // p
    Eigen::Index first_selectable = 1;   // 1 + q_b

    Eigen::Index p() const { return x.cols(); }
    Eigen::Index q() const { return x.cols() - first_selectable; }

    std::vector<std::string> selectable_ids() const {
        return {column_ids.begin() + first_selectable, column_ids.end()};
    }

    // Coefficients on the original covariate scale.
    Vec to_raw(const Vec& beta_std) const {
        Vec raw = beta_std;
        double shift = 0.0;
        for (Eigen::Index k = 1; k < p(); ++k) {
            raw(k) = beta_std(k) / col_sd(k);
            shift += raw(k) * col_mean(k);
        }
        raw(0) = beta_std(0) - shift;
        return raw;
    }
};

// [1 | B | G | P], with B, G and P columns centred and scaled to unit
// (n-1) variance. A zero-variance column is left at zero.
inline Design assemble_design(const OmicsDataset& ds) {
    const auto n = ds.n();
    const auto qb = ds.covariates.cols(), qg = ds.genes.cols(), qp = ds.proteins.cols();
    Design d;
    d.x.resize(n, 1 + qb + qg + qp);
    d.col_mean = Vec::Zero(d.x.cols());
    d.col_sd = Vec::Ones(d.x.cols());
    d.x.col(0).setOnes();
    d.column_ids.push_back("(intercept)");
    d.first_selectable = 1 + qb;
    Eigen::Index at = 1;
    for (const Block* b : {&ds.covariates, &ds.genes, &ds.proteins}) {
        for (Eigen::Index j = 0; j < b->cols(); ++j, ++at) {
            const auto col = b->values.col(j);
            const double mean = col.mean();
            const double var = n > 1 ? (col.array() - mean).square().sum() / static_cast<double>(n - 1) : 0.0;
            const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
            d.col_mean(at) = mean;
            d.col_sd(at) = sd;
            d.x.col(at) = (col.array() - mean) / sd;
            d.column_ids.push_back(b->column_ids[static_cast<std::size_t>(j)]);
        }
    }
    return d;
}

// Priors for the selectable columns, matched by covariate id; covariates
// without a prior get Beta(1,1).
inline std::vector<calib::CalibratedPrior> align_priors(const Design& d,
                                                        const std::vector<calib::CalibratedPrior>& priors) {
    std::unordered_map<std::string, const calib::CalibratedPrior*> by_id;
    for (const auto& p : priors) by_id.emplace(p.covariate_id, &p);
    std::vector<calib::CalibratedPrior> out;
    for (const auto& id : d.selectable_ids()) {
        auto it = by_id.find(id);
        out.push_back(it == by_id.end() ? calib::uniform_prior(id) : *it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shared problem state

struct Problem {
    Mat x;
    Mat xtx;
    Vec y; // observed (continuous) or log-times (survival)
    std::vector<int> censored; // indices with delta = 0
    Eigen::Index first_selectable = 1;
    Vec prior_mean, beta_a, beta_b; // per selectable covariate
    CbvsConfig cfg;

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index p() const { return x.cols(); }
    Eigen::Index q() const { return x.cols() - first_selectable; }

    Vec prior_variances(const std::vector<int>& gamma) const {
        Vec a = Vec::Constant(p(), cfg.v1);
        for (Eigen::Index j = 0; j < q(); ++j)
            a(first_selectable + j) = gamma[static_cast<std::size_t>(j)] ? cfg.v1 : cfg.v0;
        return a;
    }
};

inline Problem make_problem(const Design& d, const OmicsDataset& ds, const std::vector<calib::CalibratedPrior>& priors,
                            const CbvsConfig& cfg) {
    cfg.check();
    if (!ds.outcome) throw Error(ErrorKind::InvalidConfig, "dataset has no outcome");
    Problem pr;
    pr.x = d.x;
    pr.xtx = d.x.transpose() * d.x;
    pr.y = outcome_values(*ds.outcome);
    if (const auto* s = std::get_if<SurvivalOutcome>(&*ds.outcome))
        for (std::size_t i = 0; i < s->delta.size(); ++i)
            if (s->delta[i] == 0) pr.censored.push_back(static_cast<int>(i));
    pr.first_selectable = d.first_selectable;
    const auto aligned = align_priors(d, priors);
    const auto q = d.q();
    pr.prior_mean.resize(q);
    pr.beta_a.resize(q);
    pr.beta_b.resize(q);
    for (Eigen::Index j = 0; j < q; ++j) {
        const auto& p = aligned[static_cast<std::size_t>(j)];
        pr.prior_mean(j) = p.prior_mean;
        pr.beta_a(j) = p.beta_a;
        pr.beta_b(j) = p.beta_b;
    }
    pr.cfg = cfg;
    if (cfg.fixed_gamma && static_cast<Eigen::Index>(cfg.fixed_gamma->size()) != q)
        throw Error(ErrorKind::InvalidConfig, "fixed_gamma length does not match the number of selectable covariates");
    return pr;
}

// ---------------------------------------------------------------------------
// Collapsed posterior of gamma

struct CollapsedEval {
    double log_post = 0.0;
    double quad = 0.0;      // y'(X A X' + I)^{-1} y
    Eigen::LLT<Mat> llt;    // of X'X + A^{-1}
    Vec post_mean;          // (X'X + A^{-1})^{-1} X'y
};

// log Pi(gamma | y) up to a constant, using
//   |X A X' + I| = |A| |X'X + A^{-1}|,
//   y'(X A X' + I)^{-1} y = y'y - y'X (X'X + A^{-1})^{-1} X'y.
inline CollapsedEval collapsed_eval(const Problem& pr, const std::vector<int>& gamma, const Vec& y, const Vec& xty) {
    const Vec a = pr.prior_variances(gamma);
    Mat m = pr.xtx;
    m.diagonal().array() += a.array().inverse();
    CollapsedEval e;
    e.llt.compute(m);
    if (e.llt.info() != Eigen::Success)
        throw Error(ErrorKind::FactorizationFailure, "X'X + A^-1 is not positive definite");
    const Vec w = e.llt.matrixL().solve(xty);
    e.post_mean = e.llt.matrixU().solve(w);
    double log_det_m = 0.0;
    const auto& l = e.llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) log_det_m += std::log(l(i, i));
    log_det_m *= 2.0;
    const double log_det = a.array().log().sum() + log_det_m;
    e.quad = std::max(y.squaredNorm() - w.squaredNorm(), 0.0);
    const double n = static_cast<double>(y.size());
    const auto& c = pr.cfg;
    e.log_post = -0.5 * log_det - 0.5 * (n + c.nu) * std::log(c.nu * c.lambda_sig + e.quad);
    for (Eigen::Index j = 0; j < pr.q(); ++j) {
        const double pj = pr.prior_mean(j);
        e.log_post += gamma[static_cast<std::size_t>(j)] ? std::log(pj) : std::log1p(-pj);
    }
    return e;
}

inline double log_collapsed_posterior(const std::vector<int>& gamma, const OmicsDataset& ds,
                                      const std::vector<calib::CalibratedPrior>& priors, const CbvsConfig& cfg) {
    const auto d = assemble_design(ds);
    CbvsConfig c = cfg;
    c.algorithm = Algorithm::SelectionMcmc;
    const auto pr = make_problem(d, ds, priors, c);
    if (static_cast<Eigen::Index>(gamma.size()) != pr.q())
        throw Error(ErrorKind::InvalidConfig, "gamma length does not match the number of selectable covariates");
    const Vec xty = pr.x.transpose() * pr.y;
    return collapsed_eval(pr, gamma, pr.y, xty).log_post;
}

// ---------------------------------------------------------------------------
// Fit result

struct CbvsFit {
    Algorithm algorithm = Algorithm::Gibbs;
    std::uint64_t seed = 0;
    std::vector<std::string> covariate_ids;   // selectable, length q
    std::vector<std::string> coefficient_ids; // all, length p
    Vec pip;
    Vec beta_std;
    Vec beta_raw;
    double sigma_hat = 0.0;
    std::vector<double> log_post_trace;
    double acceptance_rate = std::numeric_limits<double>::quiet_NaN();
    int em_iterations = 0;
    double final_objective = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    Vec beta_mcse; // Gibbs: batch-means Monte Carlo standard error of beta_std
    std::vector<std::pair<std::uint64_t, std::size_t>> model_visits; // SelectionMcmc with record_models
    CbvsConfig config;
};

namespace detail {

inline Vec draw_mvn_from_precision(Rng& rng, const Eigen::LLT<Mat>& llt, const Vec& mean, double scale) {
    Vec z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = draw_normal(rng);
    return mean + scale * Vec(llt.matrixU().solve(z));
}

inline void impute_censored(Rng& rng, const Problem& pr, const Vec& beta, double sigma, Vec& y_latent) {
    for (int i : pr.censored) {
        const double mu = pr.x.row(i).dot(beta);
        y_latent(i) = draw_truncated_normal_below(rng, mu, sigma, pr.y(i));
    }
}

inline std::uint64_t model_key(const std::vector<int>& gamma) {
    std::uint64_t k = 0;
    for (std::size_t j = 0; j < gamma.size() && j < 64; ++j)
        if (gamma[j]) k |= (std::uint64_t{1} << j);
    return k;
}

inline std::size_t draw_index(Rng& rng, std::size_t m) {
    const auto i = static_cast<std::size_t>(draw_uniform(rng) * static_cast<double>(m));
    return std::min(i, m - 1);
}

// Batch-means accumulator for Monte Carlo standard errors.
class BatchMeans {
public:
    BatchMeans(Eigen::Index dim, std::size_t total, std::size_t batches = 50)
        : batch_size_(std::max<std::size_t>(1, total / batches)), sum_(Vec::Zero(dim)) {}

    void add(const Vec& v) {
        sum_ += v;
        if (++count_ == batch_size_) {
            means_.push_back(sum_ / static_cast<double>(batch_size_));
            sum_.setZero();
            count_ = 0;
        }
    }

    Vec standard_error() const {
        const auto b = means_.size();
        if (b < 2) return Vec::Constant(sum_.size(), std::numeric_limits<double>::quiet_NaN());
        Vec mean = Vec::Zero(sum_.size());
        for (const auto& m : means_) mean += m;
        mean /= static_cast<double>(b);
        Vec var = Vec::Zero(sum_.size());
        for (const auto& m : means_) var.array() += (m - mean).array().square();
        var /= static_cast<double>(b - 1);
        return (var.array() / static_cast<double>(b)).sqrt();
    }

private:
    std::size_t batch_size_;
    std::size_t count_ = 0;
    Vec sum_;
    std::vector<Vec> means_;
};

inline CbvsFit start_fit(const Design& d, const CbvsConfig& cfg) {
    CbvsFit fit;
    fit.algorithm = cfg.algorithm;
    fit.seed = cfg.seed;
    fit.covariate_ids = d.selectable_ids();
    fit.coefficient_ids = d.column_ids;
    fit.config = cfg;
    return fit;
}

inline std::vector<int> initial_gamma(Rng& rng, const Problem& pr) {
    std::vector<int> gamma(static_cast<std::size_t>(pr.q()));
    for (Eigen::Index j = 0; j < pr.q(); ++j)
        gamma[static_cast<std::size_t>(j)] = draw_uniform(rng) < pr.prior_mean(j) ? 1 : 0;
    return gamma;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Selection-only MCMC

enum class Move { Add, Delete, Swap };

// Probability that the (fallback-resolved) move type is `m` when k of q
// indicators are on. Each of Add/Delete/Swap is drawn with probability 1/3;
// impossible moves fall back as: Add -> Delete, Delete -> Add,
// Swap -> Add (no ones) or Delete (no zeros).
inline double move_type_probability(Move m, std::size_t k, std::size_t q) {
    const bool none_on = k == 0, all_on = k == q;
    switch (m) {
    case Move::Add: return all_on ? 0.0 : (none_on ? 1.0 : 1.0 / 3.0);
    case Move::Delete: return none_on ? 0.0 : (all_on ? 1.0 : 1.0 / 3.0);
    case Move::Swap: return (none_on || all_on) ? 0.0 : 1.0 / 3.0;
    }
    return 0.0;
}

inline CbvsFit fit_selection_mcmc(const OmicsDataset& ds, const std::vector<calib::CalibratedPrior>& priors,
                                  const CbvsConfig& cfg_in) {
    CbvsConfig cfg = cfg_in;
    cfg.algorithm = Algorithm::SelectionMcmc;
    const auto d = assemble_design(ds);
    const auto pr = make_problem(d, ds, priors, cfg);
    const auto q = static_cast<std::size_t>(pr.q());
    if (q == 0) throw Error(ErrorKind::AllMovesImpossible, "no selectable covariates");
    const double n = static_cast<double>(pr.n());

    Rng rng(cfg.seed);
    auto fit = detail::start_fit(d, cfg);
    std::vector<int> gamma = detail::initial_gamma(rng, pr);
    Vec y = pr.y;
    Vec xty = pr.x.transpose() * y;
    CollapsedEval cur = collapsed_eval(pr, gamma, y, xty);
    const bool survival = !pr.censored.empty();

    Vec pip_sum = Vec::Zero(static_cast<Eigen::Index>(q));
    std::size_t retained = 0, accepted = 0;
    // Online weighted averages of beta and sigma draws.
    Vec beta_acc = Vec::Zero(pr.p());
    double sigma_acc = 0.0, weight_acc = 0.0;
    double log_w_max = -std::numeric_limits<double>::infinity();
    std::map<std::uint64_t, std::size_t> visits;

    auto draw_conditional = [&](const CollapsedEval& e, double& sigma_sq) {
        sigma_sq = draw_inverse_gamma(rng, 0.5 * (n + cfg.nu), 0.5 * (cfg.nu * cfg.lambda_sig + e.quad));
        return detail::draw_mvn_from_precision(rng, e.llt, e.post_mean, std::sqrt(sigma_sq));
    };

    std::vector<std::size_t> ones, zeros;
    for (int t = 0; t < cfg.iterations; ++t) {
        if (survival) {
            double s2 = 0.0;
            const Vec beta = draw_conditional(cur, s2);
            detail::impute_censored(rng, pr, beta, std::sqrt(s2), y);
            xty = pr.x.transpose() * y;
            cur = collapsed_eval(pr, gamma, y, xty);
        }

        ones.clear();
        zeros.clear();
        for (std::size_t j = 0; j < q; ++j) (gamma[j] ? ones : zeros).push_back(j);
        const std::size_t k = ones.size();

        Move move = static_cast<Move>(std::min<std::size_t>(2, detail::draw_index(rng, 3)));
        if (move == Move::Add && zeros.empty()) move = Move::Delete;
        else if (move == Move::Delete && ones.empty()) move = Move::Add;
        else if (move == Move::Swap && ones.empty()) move = Move::Add;
        else if (move == Move::Swap && zeros.empty()) move = Move::Delete;

        std::vector<int> proposal = gamma;
        double log_proposal_ratio = 0.0; // log q(old | new) - log q(new | old)
        switch (move) {
        case Move::Add: {
            proposal[zeros[detail::draw_index(rng, zeros.size())]] = 1;
            const double fwd = move_type_probability(Move::Add, k, q) / static_cast<double>(q - k);
            const double rev = move_type_probability(Move::Delete, k + 1, q) / static_cast<double>(k + 1);
            log_proposal_ratio = std::log(rev) - std::log(fwd);
            break;
        }
        case Move::Delete: {
            proposal[ones[detail::draw_index(rng, ones.size())]] = 0;
            const double fwd = move_type_probability(Move::Delete, k, q) / static_cast<double>(k);
            const double rev = move_type_probability(Move::Add, k - 1, q) / static_cast<double>(q - k + 1);
            log_proposal_ratio = std::log(rev) - std::log(fwd);
            break;
        }
        case Move::Swap: {
            const auto i0 = zeros[detail::draw_index(rng, zeros.size())];
            const auto i1 = ones[detail::draw_index(rng, ones.size())];
            proposal[i0] = 1;
            proposal[i1] = 0;
            break;
        }
        }

        CollapsedEval prop = collapsed_eval(pr, proposal, y, xty);
        double log_accept = std::min(0.0, prop.log_post - cur.log_post +
                                              (cfg.hastings_correction ? log_proposal_ratio : 0.0));
        if (std::log(draw_uniform(rng)) < log_accept) {
            gamma = std::move(proposal);
            cur = std::move(prop);
            ++accepted;
        }

        if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
            ++retained;
            for (std::size_t j = 0; j < q; ++j) pip_sum(static_cast<Eigen::Index>(j)) += gamma[j];
            if (cfg.record_models) ++visits[detail::model_key(gamma)];
            fit.log_post_trace.push_back(cur.log_post);
            double s2 = 0.0;
            const Vec beta = draw_conditional(cur, s2);
            const double sigma = std::sqrt(s2);
            if (cfg.bma == BmaWeighting::Softmax) {
                const double lw = cur.log_post;
                if (lw > log_w_max) {
                    const double rescale = std::isfinite(log_w_max) ? std::exp(log_w_max - lw) : 0.0;
                    beta_acc *= rescale;
                    sigma_acc *= rescale;
                    weight_acc *= rescale;
                    log_w_max = lw;
                }
                const double w = std::exp(lw - log_w_max);
                beta_acc += w * beta;
                sigma_acc += w * sigma;
                weight_acc += w;
            } else {
                const double w = -cur.log_post;
                beta_acc += w * beta;
                sigma_acc += w * sigma;
                weight_acc += w;
            }
        }
    }
    if (!(weight_acc > 0.0) || !std::isfinite(weight_acc))
        throw Error(ErrorKind::Divergence, "model-averaging weights are not positive; "
                                           "the negative-log-posterior weighting needs log posteriors < 0");

    fit.pip = pip_sum / static_cast<double>(retained);
    fit.beta_std = beta_acc / weight_acc;
    fit.beta_raw = d.to_raw(fit.beta_std);
    fit.sigma_hat = sigma_acc / weight_acc;
    fit.acceptance_rate = static_cast<double>(accepted) / cfg.iterations;
    fit.converged = true;
    fit.model_visits.assign(visits.begin(), visits.end());
    return fit;
}

// ---------------------------------------------------------------------------
// Full Gibbs sampler

namespace detail {

inline double log_beta_density(double x, double a, double b) {
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
}

inline double log_inverse_gamma_density(double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

} // namespace detail

inline CbvsFit fit_gibbs(const OmicsDataset& ds, const std::vector<calib::CalibratedPrior>& priors,
                         const CbvsConfig& cfg_in) {
    CbvsConfig cfg = cfg_in;
    cfg.algorithm = Algorithm::Gibbs;
    const auto d = assemble_design(ds);
    const auto pr = make_problem(d, ds, priors, cfg);
    const auto q = pr.q();
    const auto p = pr.p();
    const double n = static_cast<double>(pr.n());

    Rng rng(cfg.seed);
    auto fit = detail::start_fit(d, cfg);
    std::vector<int> gamma = cfg.fixed_gamma ? *cfg.fixed_gamma : detail::initial_gamma(rng, pr);
    Vec omega = pr.prior_mean;
    Vec y = pr.y;
    double sigma_sq = 1.0;
    Vec beta = Vec::Zero(p);

    const std::size_t kept = static_cast<std::size_t>((cfg.iterations - cfg.burn_in + cfg.thin - 1) / cfg.thin);
    detail::BatchMeans batches(p, kept);
    Vec pip_sum = Vec::Zero(q), beta_sum = Vec::Zero(p);
    double sigma_sum = 0.0;
    std::size_t retained = 0;

    for (int t = 0; t < cfg.iterations; ++t) {
        // beta | gamma, sigma^2, y
        const Vec a = pr.prior_variances(gamma);
        Mat prec = pr.xtx;
        prec.diagonal().array() += a.array().inverse();
        Eigen::LLT<Mat> llt(prec);
        if (llt.info() != Eigen::Success)
            throw Error(ErrorKind::FactorizationFailure, "X'X + A^-1 is not positive definite");
        const Vec mean = llt.solve(pr.x.transpose() * y);
        beta = detail::draw_mvn_from_precision(rng, llt, mean, std::sqrt(sigma_sq));

        // sigma^2 | beta, gamma, y
        const Vec resid = y - pr.x * beta;
        const double penalty = (beta.array().square() / a.array()).sum();
        sigma_sq = draw_inverse_gamma(rng, 0.5 * (n + static_cast<double>(p) + cfg.nu),
                                      0.5 * (resid.squaredNorm() + penalty + cfg.nu * cfg.lambda_sig));

        // gamma_j | beta_j, sigma^2, omega_j
        if (!cfg.fixed_gamma) {
            for (Eigen::Index j = 0; j < q; ++j) {
                const double b = beta(pr.first_selectable + j);
                const double log_odds = std::log(omega(j)) - std::log1p(-omega(j)) +
                                        log_normal_pdf(b, 0.0, sigma_sq * cfg.v1) -
                                        log_normal_pdf(b, 0.0, sigma_sq * cfg.v0);
                const double prob = 1.0 / (1.0 + std::exp(-log_odds));
                gamma[static_cast<std::size_t>(j)] = draw_uniform(rng) < prob ? 1 : 0;
            }
        }

        // omega_j | gamma_j
        for (Eigen::Index j = 0; j < q; ++j) {
            const int g = gamma[static_cast<std::size_t>(j)];
            double w = draw_beta(rng, pr.beta_a(j) + g, pr.beta_b(j) + 1.0 - g);
            omega(j) = std::clamp(w, 1e-300, 1.0 - 1e-16);
        }

        // latent log-times for censored subjects
        if (!pr.censored.empty()) detail::impute_censored(rng, pr, beta, std::sqrt(sigma_sq), y);

        if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
            ++retained;
            for (Eigen::Index j = 0; j < q; ++j) pip_sum(j) += gamma[static_cast<std::size_t>(j)];
            beta_sum += beta;
            sigma_sum += std::sqrt(sigma_sq);
            batches.add(beta);
            const Vec a_now = pr.prior_variances(gamma);
            double lp = -0.5 * n * (kLn2Pi + std::log(sigma_sq)) - 0.5 * (y - pr.x * beta).squaredNorm() / sigma_sq;
            for (Eigen::Index k = 0; k < p; ++k) lp += log_normal_pdf(beta(k), 0.0, sigma_sq * a_now(k));
            for (Eigen::Index j = 0; j < q; ++j) {
                const int g = gamma[static_cast<std::size_t>(j)];
                lp += g ? std::log(omega(j)) : std::log1p(-omega(j));
                lp += detail::log_beta_density(omega(j), pr.beta_a(j), pr.beta_b(j));
            }
            lp += detail::log_inverse_gamma_density(sigma_sq, 0.5 * cfg.nu, 0.5 * cfg.nu * cfg.lambda_sig);
            fit.log_post_trace.push_back(lp);
        }
    }
    const double r = static_cast<double>(retained);
    fit.pip = pip_sum / r;
    fit.beta_std = beta_sum / r;
    fit.beta_raw = d.to_raw(fit.beta_std);
    fit.sigma_hat = sigma_sum / r;
    fit.beta_mcse = batches.standard_error();
    fit.converged = true;
    return fit;
}

// ---------------------------------------------------------------------------
// EMVS

namespace detail {

struct EmvsState {
    Vec beta;
    double sigma_sq = 1.0;
    Vec omega;
};

// Observed-data log posterior (gamma summed out, censored times integrated).
inline double emvs_objective(const Problem& pr, const EmvsState& s) {
    const auto& c = pr.cfg;
    const double sigma = std::sqrt(s.sigma_sq);
    const Vec mu = pr.x * s.beta;
    std::vector<char> is_cens(static_cast<std::size_t>(pr.n()), 0);
    for (int i : pr.censored) is_cens[static_cast<std::size_t>(i)] = 1;
    double lp = 0.0;
    for (Eigen::Index i = 0; i < pr.n(); ++i) {
        if (is_cens[static_cast<std::size_t>(i)]) lp += log_normal_upper_tail((pr.y(i) - mu(i)) / sigma);
        else lp += log_normal_pdf(pr.y(i), mu(i), s.sigma_sq);
    }
    for (Eigen::Index k = 0; k < pr.first_selectable; ++k) lp += log_normal_pdf(s.beta(k), 0.0, s.sigma_sq * c.v1);
    for (Eigen::Index j = 0; j < pr.q(); ++j) {
        const double b = s.beta(pr.first_selectable + j);
        lp += log_add_exp(std::log(s.omega(j)) + log_normal_pdf(b, 0.0, s.sigma_sq * c.v1),
                          std::log1p(-s.omega(j)) + log_normal_pdf(b, 0.0, s.sigma_sq * c.v0));
        lp += log_beta_density(s.omega(j), pr.beta_a(j), pr.beta_b(j));
    }
    lp += log_inverse_gamma_density(s.sigma_sq, 0.5 * c.nu, 0.5 * c.nu * c.lambda_sig);
    return lp;
}

inline Vec emvs_inclusion(const Problem& pr, const EmvsState& s) {
    Vec pstar(pr.q());
    for (Eigen::Index j = 0; j < pr.q(); ++j) {
        const double b = s.beta(pr.first_selectable + j);
        const double l1 = std::log(s.omega(j)) + log_normal_pdf(b, 0.0, s.sigma_sq * pr.cfg.v1);
        const double l0 = std::log1p(-s.omega(j)) + log_normal_pdf(b, 0.0, s.sigma_sq * pr.cfg.v0);
        pstar(j) = 1.0 / (1.0 + std::exp(l0 - l1));
    }
    return pstar;
}

// Maximiser of (p* + F - 1) ln w + (1/F - p*) ln(1 - w) on [eps, 1 - eps].
inline double emvs_omega_update(double pstar, double f, double eps) {
    const double a = pstar + f - 1.0;
    const double b = 1.0 / f - pstar;
    double w;
    if (a <= 0.0 && b <= 0.0) w = 0.5; // flat or convex; not reachable for F >= 1
    else if (b <= 0.0) w = 1.0;
    else if (a <= 0.0) w = 0.0;
    else w = a / (a + b);
    return std::clamp(w, eps, 1.0 - eps);
}

} // namespace detail

inline CbvsFit fit_emvs(const OmicsDataset& ds, const std::vector<calib::CalibratedPrior>& priors,
                        const CbvsConfig& cfg_in) {
    CbvsConfig cfg = cfg_in;
    cfg.algorithm = Algorithm::Emvs;
    const auto d = assemble_design(ds);
    const auto pr = make_problem(d, ds, priors, cfg);
    const auto p = pr.p();
    const auto q = pr.q();
    const double n = static_cast<double>(pr.n());
    const double eps = cfg.emvs.omega_clamp;
    auto fit = detail::start_fit(d, cfg);

    detail::EmvsState s;
    s.omega = pr.prior_mean.unaryExpr([&](double w) { return std::clamp(w, eps, 1.0 - eps); });
    {
        Mat m = pr.xtx;
        m.diagonal().array() += 1.0 / cfg.v1;
        s.beta = m.llt().solve(pr.x.transpose() * pr.y);
        s.sigma_sq = std::max((pr.y - pr.x * s.beta).squaredNorm() / n, 1e-8);
    }
    double objective = detail::emvs_objective(pr, s);
    fit.log_post_trace.push_back(objective);

    Vec y_exp = pr.y;
    for (int it = 1; it <= cfg.emvs.max_iter; ++it) {
        // E-step
        const Vec pstar = detail::emvs_inclusion(pr, s);
        double extra_rss = 0.0; // sum of conditional variances of censored log-times
        y_exp = pr.y;
        if (!pr.censored.empty()) {
            const double sigma = std::sqrt(s.sigma_sq);
            for (int i : pr.censored) {
                const double mu = pr.x.row(i).dot(s.beta);
                const double alpha = (pr.y(i) - mu) / sigma;
                const double mills = std::exp(-0.5 * alpha * alpha - 0.5 * kLn2Pi - log_normal_upper_tail(alpha));
                y_exp(i) = mu + sigma * mills;
                extra_rss += s.sigma_sq * std::max(0.0, 1.0 + alpha * mills - mills * mills);
            }
        }
        // M-step
        Vec dstar = Vec::Constant(p, 1.0 / cfg.v1);
        for (Eigen::Index j = 0; j < q; ++j)
            dstar(pr.first_selectable + j) = pstar(j) / cfg.v1 + (1.0 - pstar(j)) / cfg.v0;
        Mat m = pr.xtx;
        m.diagonal() += dstar;
        Eigen::LLT<Mat> llt(m);
        if (llt.info() != Eigen::Success)
            throw Error(ErrorKind::FactorizationFailure, "EMVS ridge system is not positive definite");
        detail::EmvsState next;
        next.beta = llt.solve(pr.x.transpose() * y_exp);
        const double rss = (y_exp - pr.x * next.beta).squaredNorm() + extra_rss;
        const double pen = (next.beta.array().square() * dstar.array()).sum();
        next.sigma_sq = (rss + pen + cfg.nu * cfg.lambda_sig) / (n + static_cast<double>(p) + cfg.nu + 2.0);
        next.omega.resize(q);
        for (Eigen::Index j = 0; j < q; ++j) next.omega(j) = detail::emvs_omega_update(pstar(j), pr.beta_a(j), eps);

        const double next_obj = detail::emvs_objective(pr, next);
        if (!std::isfinite(next_obj)) throw Error(ErrorKind::Divergence, "EMVS objective became non-finite");
        // a rounding-level drop means the fixed point is reached in floating point
        if (next_obj < objective && objective - next_obj <= 1e-12 * (1.0 + std::abs(objective))) {
            fit.converged = true;
            break;
        }
        const double delta = (next.beta - s.beta).cwiseAbs().maxCoeff();
        s = std::move(next);
        objective = next_obj;
        fit.log_post_trace.push_back(objective);
        fit.em_iterations = it;
        if (delta < cfg.emvs.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.pip = detail::emvs_inclusion(pr, s);
    fit.beta_std = s.beta;
    fit.beta_raw = d.to_raw(s.beta);
    fit.sigma_hat = std::sqrt(s.sigma_sq);
    fit.final_objective = objective;
    return fit;
}

inline CbvsFit fit(const OmicsDataset& ds, const std::vector<calib::CalibratedPrior>& priors, const CbvsConfig& cfg) {
    switch (cfg.algorithm) {
    case Algorithm::Gibbs: return fit_gibbs(ds, priors, cfg);
    case Algorithm::SelectionMcmc: return fit_selection_mcmc(ds, priors, cfg);
    case Algorithm::Emvs: return fit_emvs(ds, priors, cfg);
    }
    throw Error(ErrorKind::InvalidConfig, "unknown algorithm");
}

} // namespace fibag::cbvs
