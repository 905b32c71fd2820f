#pragma once

// Selection of covariates from posterior inclusion probabilities, treating
// p_j = 1 - PIP_j as p-value-like quantities.
//
// Paper rule: sort p ascending, r_j = cumulative sum, j* = min{j : r_j >= alpha},
// select the first j* (the crossing index included); no crossing selects all.
// CumulativeMean: j* = largest j with r_j / j <= alpha (0 if none).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fibag/error.hpp"

namespace fibag::fdr {

enum class Rule { PaperCumulativeSum, CumulativeMean };

inline std::string_view to_string(Rule r) {
    return r == Rule::PaperCumulativeSum ? "paper" : "cumulative-mean";
}

inline std::optional<Rule> parse_rule(std::string_view s) {
    if (s == "paper") return Rule::PaperCumulativeSum;
    if (s == "cumulative-mean") return Rule::CumulativeMean;
    return std::nullopt;
}

struct Entry {
    std::size_t index = 0; // position in the input
    std::string covariate_id;
    double pip = 0.0;
    double p = 1.0;
    double cum_stat = 0.0; // r_j (paper) or r_j / j (cumulative mean)
    bool selected = false;
};

struct SelectionResult {
    double alpha = 0.1;
    Rule rule = Rule::PaperCumulativeSum;
    std::vector<Entry> ordered; // every covariate, ascending p, ties by index
    std::size_t j_star = 0;     // number selected; the first j_star of `ordered`

    std::vector<std::string> selected_ids() const {
        std::vector<std::string> out;
        for (std::size_t k = 0; k < j_star; ++k) out.push_back(ordered[k].covariate_id);
        return out;
    }

    // Indicator in input order.
    std::vector<int> selected_mask() const {
        std::vector<int> m(ordered.size(), 0);
        for (std::size_t k = 0; k < j_star; ++k) m[ordered[k].index] = 1;
        return m;
    }
};

inline SelectionResult select_fdr(const std::vector<double>& pips, double alpha, Rule rule,
                                  const std::vector<std::string>& ids = {}) {
    if (pips.empty()) throw Error(ErrorKind::EmptyInput, "no inclusion probabilities to select from");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::AlphaOutOfRange, "alpha must lie in (0, 1]");
    if (!ids.empty() && ids.size() != pips.size())
        throw Error(ErrorKind::InvalidConfig, "covariate ids and PIPs differ in length");
    for (double v : pips)
        if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidConfig, "PIPs must lie in [0, 1]");

    SelectionResult res;
    res.alpha = alpha;
    res.rule = rule;
    res.ordered.resize(pips.size());
    for (std::size_t i = 0; i < pips.size(); ++i) {
        auto& e = res.ordered[i];
        e.index = i;
        e.covariate_id = ids.empty() ? std::to_string(i) : ids[i];
        e.pip = pips[i];
        e.p = 1.0 - pips[i];
    }
    std::stable_sort(res.ordered.begin(), res.ordered.end(), [](const Entry& a, const Entry& b) { return a.p < b.p; });

    double r = 0.0;
    const std::size_t m = res.ordered.size();
    std::optional<std::size_t> crossing;
    std::size_t last_ok = 0;
    for (std::size_t j = 0; j < m; ++j) {
        r += res.ordered[j].p;
        if (rule == Rule::PaperCumulativeSum) {
            res.ordered[j].cum_stat = r;
            if (!crossing && r >= alpha) crossing = j + 1;
        } else {
            const double mean = r / static_cast<double>(j + 1);
            res.ordered[j].cum_stat = mean;
            if (mean <= alpha) last_ok = j + 1;
        }
    }
    res.j_star = rule == Rule::PaperCumulativeSum ? crossing.value_or(m) : last_ok;
    for (std::size_t k = 0; k < res.j_star; ++k) res.ordered[k].selected = true;
    return res;
}

} // namespace fibag::fdr
