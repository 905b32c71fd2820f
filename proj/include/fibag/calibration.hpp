#pragma once

// Evidence calibration: maps an lBF to Beta(F(s), 1/F(s)) hyperparameters for
// a covariate's inclusion probability.
//
//   s*   = max(s, floor)
//   G(s) = 1/2 [ {1 + (s*/midpoint)^(-exponent)}^(-1) + 1 ]
//   F(s) = scale * G(s)^power
// The prior mean F/(F + 1/F) = F^2/(F^2 + 1) is 0.5 for s <= 0 and tends to 1.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fibag/error.hpp"
#include "fibag/gp_mechanistic.hpp"

namespace fibag::calib {

struct CalibrationConfig {
    double floor = 1e-6;
    double midpoint = 3.0;
    double exponent = 2.75;
    double power = 4.0;
    double scale = 16.0;
};

struct CalibratedPrior {
    std::string covariate_id;
    double s = 0.0;
    double f_value = 1.0;
    double beta_a = 1.0;
    double beta_b = 1.0;
    double prior_mean = 0.5;
};

inline double calibration_function(double s, const CalibrationConfig& cfg = {}) {
    const double s_star = std::max(s, cfg.floor);
    const double logistic = 1.0 / (1.0 + std::pow(s_star / cfg.midpoint, -cfg.exponent));
    const double g = 0.5 * (logistic + 1.0);
    return cfg.scale * std::pow(g, cfg.power);
}

inline CalibratedPrior calibrate(double lbf, const CalibrationConfig& cfg = {}, std::string covariate_id = {}) {
    if (!std::isfinite(lbf)) throw Error(ErrorKind::NonFinite, "lbf is not finite");
    CalibratedPrior p;
    p.covariate_id = std::move(covariate_id);
    p.s = lbf;
    p.f_value = calibration_function(lbf, cfg);
    p.beta_a = p.f_value;
    p.beta_b = 1.0 / p.f_value;
    const double f2 = p.f_value * p.f_value;
    p.prior_mean = f2 / (f2 + 1.0);
    return p;
}

// Uniform Beta(1,1) prior used for covariates without evidence.
inline CalibratedPrior uniform_prior(std::string covariate_id) {
    CalibratedPrior p;
    p.covariate_id = std::move(covariate_id);
    return p;
}

enum class AggregationKind { Average, Maximal, PrecisionWeighted };

inline std::string_view to_string(AggregationKind k) {
    switch (k) {
    case AggregationKind::Average: return "average";
    case AggregationKind::Maximal: return "maximal";
    case AggregationKind::PrecisionWeighted: return "precision";
    }
    return "";
}

inline AggregationKind parse_aggregation(std::string_view s) {
    if (s == "average") return AggregationKind::Average;
    if (s == "maximal" || s == "max") return AggregationKind::Maximal;
    if (s == "precision" || s == "precision-weighted") return AggregationKind::PrecisionWeighted;
    throw Error(ErrorKind::InvalidConfig, "unknown aggregation scheme '" + std::string(s) + "'");
}

struct AggregationScheme {
    AggregationKind kind = AggregationKind::Maximal;
    std::vector<double> weights; // PrecisionWeighted only
};

inline double aggregate(const std::vector<double>& evidence, const AggregationScheme& scheme) {
    if (evidence.empty()) throw Error(ErrorKind::EmptyEvidence, "no evidence to aggregate");
    for (double e : evidence)
        if (!std::isfinite(e)) throw Error(ErrorKind::NonFinite, "evidence contains non-finite lbf");
    switch (scheme.kind) {
    case AggregationKind::Average: {
        double s = 0.0;
        for (double e : evidence) s += e;
        return s / static_cast<double>(evidence.size());
    }
    case AggregationKind::Maximal: return *std::max_element(evidence.begin(), evidence.end());
    case AggregationKind::PrecisionWeighted: {
        if (scheme.weights.size() != evidence.size())
            throw Error(ErrorKind::WeightMismatch, "expected " + std::to_string(evidence.size()) + " weights, got " +
                                                       std::to_string(scheme.weights.size()));
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < evidence.size(); ++k) {
            if (!(scheme.weights[k] > 0.0)) throw Error(ErrorKind::WeightMismatch, "precision weights must be positive");
            num += scheme.weights[k] * evidence[k];
            den += scheme.weights[k];
        }
        return num / den;
    }
    }
    return 0.0;
}

// One prior per covariate in `covariate_order`. Evidence entries are grouped
// by biomarker id in axis order. PrecisionWeighted reads per-entry weights
// from `precision` (same order as `results`); a result naming a covariate not
// in the order raises UnknownCovariate.
inline std::vector<CalibratedPrior> calibrate_all(const std::vector<gp::MechanisticResult>& results,
                                                  AggregationKind kind,
                                                  const std::vector<std::string>& covariate_order,
                                                  const std::vector<double>& precision = {},
                                                  const CalibrationConfig& cfg = {}) {
    if (kind == AggregationKind::PrecisionWeighted && precision.size() != results.size())
        throw Error(ErrorKind::WeightMismatch, "precision weights must match the number of mechanistic results");
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < covariate_order.size(); ++i) position.emplace(covariate_order[i], i);

    std::vector<std::vector<std::pair<gp::Axis, std::size_t>>> grouped(covariate_order.size());
    for (std::size_t r = 0; r < results.size(); ++r) {
        auto it = position.find(results[r].biomarker_id);
        if (it == position.end())
            throw Error(ErrorKind::UnknownCovariate, "mechanistic result for '" + results[r].biomarker_id +
                                                         "' has no matching covariate");
        grouped[it->second].push_back({results[r].axis, r});
    }

    std::vector<CalibratedPrior> out;
    out.reserve(covariate_order.size());
    for (std::size_t i = 0; i < covariate_order.size(); ++i) {
        auto& entries = grouped[i];
        if (entries.empty()) {
            out.push_back(calibrate(0.0, cfg, covariate_order[i]));
            continue;
        }
        std::stable_sort(entries.begin(), entries.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        AggregationScheme scheme{kind, {}};
        std::vector<double> ev;
        for (const auto& [axis, r] : entries) {
            ev.push_back(results[r].lbf);
            if (kind == AggregationKind::PrecisionWeighted) scheme.weights.push_back(precision[r]);
        }
        out.push_back(calibrate(aggregate(ev, scheme), cfg, covariate_order[i]));
    }
    return out;
}

} // namespace fibag::calib
