#pragma once

// Sample-aligned multi-platform matrices, outcomes, and the biomarker
// cis-map, plus their file ingestion.
//
// Matrix files are delimiter-separated with a header row of feature IDs and
// sample IDs in the first column. Tab is used when the header contains one,
// comma otherwise. Missing or non-numeric cells are rejected.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "fibag/error.hpp"
#include "fibag/numeric.hpp"

namespace fibag {

// A named block of columns sharing the dataset's row order.
struct Block {
    Mat values;                          // n x q
    std::vector<std::string> column_ids; // q
    std::vector<std::string> platform;   // q, e.g. "cna", "meth", "rna"
    bool centered = false;

    Eigen::Index cols() const { return values.cols(); }
    bool empty() const { return values.cols() == 0; }
};

struct ContinuousOutcome {
    Vec y;
};

// Log-scale observed times with event indicators (1 = event observed).
struct SurvivalOutcome {
    Vec z;
    std::vector<int> delta;
};

using Outcome = std::variant<ContinuousOutcome, SurvivalOutcome>;

inline bool is_survival(const Outcome& o) { return std::holds_alternative<SurvivalOutcome>(o); }

inline const Vec& outcome_values(const Outcome& o) {
    if (const auto* c = std::get_if<ContinuousOutcome>(&o)) return c->y;
    return std::get<SurvivalOutcome>(o).z;
}

struct OmicsDataset {
    std::vector<std::string> sample_ids;
    Block upstream;   // U = {C, M}
    Block genes;      // G
    Block proteins;   // P
    Block covariates; // B, may be empty
    std::optional<Outcome> outcome;

    Eigen::Index n() const { return static_cast<Eigen::Index>(sample_ids.size()); }
};

// ---------------------------------------------------------------------------

inline Mat center_columns(const Mat& m) {
    Mat out = m;
    if (m.rows() == 0) return out;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double mean = m.col(j).mean();
        out.col(j).array() -= mean;
    }
    return out;
}

inline bool columns_centered(const Mat& m, double tol = 1e-10) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (std::abs(m.col(j).mean()) >= tol) return false;
    return true;
}

// Throws on shape mismatch, non-finite entries, or a centered flag that does
// not hold.
inline void validate(const OmicsDataset& ds) {
    const auto n = ds.n();
    std::unordered_set<std::string> seen;
    for (const auto& s : ds.sample_ids)
        if (!seen.insert(s).second) throw Error(ErrorKind::DuplicateSampleId, s);
    auto check_block = [&](const Block& b, const char* name) {
        if (b.empty()) return;
        if (b.values.rows() != n)
            throw Error(ErrorKind::Format, std::string(name) + " has " +
                                              std::to_string(b.values.rows()) + " rows, expected " +
                                              std::to_string(n));
        if (static_cast<Eigen::Index>(b.column_ids.size()) != b.values.cols())
            throw Error(ErrorKind::Format, std::string(name) + " column id count mismatch");
        if (!b.values.allFinite()) throw Error(ErrorKind::NonFinite, std::string(name) + " has non-finite entries");
        if (b.centered && !columns_centered(b.values))
            throw Error(ErrorKind::Format, std::string(name) + " flagged centered but column means are not zero");
    };
    check_block(ds.upstream, "upstream");
    check_block(ds.genes, "genes");
    check_block(ds.proteins, "proteins");
    check_block(ds.covariates, "covariates");
    if (ds.outcome) {
        if (const auto* c = std::get_if<ContinuousOutcome>(&*ds.outcome)) {
            if (c->y.size() != n) throw Error(ErrorKind::Format, "outcome length mismatch");
            if (!c->y.allFinite()) throw Error(ErrorKind::NonFinite, "outcome has non-finite values");
        } else {
            const auto& s = std::get<SurvivalOutcome>(*ds.outcome);
            if (s.z.size() != n || static_cast<Eigen::Index>(s.delta.size()) != n)
                throw Error(ErrorKind::Format, "survival outcome length mismatch");
            if (!s.z.allFinite()) throw Error(ErrorKind::NonFinite, "survival times non-finite");
            for (int d : s.delta)
                if (d != 0 && d != 1) throw Error(ErrorKind::Format, "event indicator outside {0,1}");
        }
    }
}

// ---------------------------------------------------------------------------
// Delimited tables

struct Table {
    std::string path;
    std::vector<std::string> row_ids;
    std::vector<std::string> column_ids;
    std::vector<std::vector<std::string>> cells; // raw, row-major
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(delim, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace detail

inline Table read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    Table t;
    t.path = path;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Format, path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
    auto header = detail::split(line, delim);
    if (header.size() < 2) throw Error(ErrorKind::Format, path + ": header needs a sample column and at least one feature");
    t.column_ids.assign(header.begin() + 1, header.end());
    std::unordered_set<std::string> cols(t.column_ids.begin(), t.column_ids.end());
    if (cols.size() != t.column_ids.size()) throw Error(ErrorKind::Format, path + ": duplicate column id in header");
    std::unordered_set<std::string> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        auto fields = detail::split(line, delim);
        if (fields.size() != header.size())
            throw Error(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(header.size()) + " fields, got " +
                                               std::to_string(fields.size()));
        if (!rows.insert(fields[0]).second)
            throw Error(ErrorKind::DuplicateSampleId, path + ": sample '" + fields[0] + "'");
        t.row_ids.push_back(fields[0]);
        t.cells.emplace_back(fields.begin() + 1, fields.end());
    }
    return t;
}

// Numeric view of selected rows of a table, in the given row order.
inline Mat table_numeric(const Table& t, const std::vector<std::size_t>& row_order) {
    Mat m(static_cast<Eigen::Index>(row_order.size()), static_cast<Eigen::Index>(t.column_ids.size()));
    for (std::size_t r = 0; r < row_order.size(); ++r) {
        const auto& row = t.cells[row_order[r]];
        for (std::size_t c = 0; c < row.size(); ++c) {
            auto v = detail::parse_double(row[c]);
            if (!v)
                throw Error(ErrorKind::NonNumericCell, t.path + ": sample '" + t.row_ids[row_order[r]] +
                                                           "', column '" + t.column_ids[c] + "' = '" +
                                                           row[c] + "'");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return m;
}

struct IngestConfig {
    bool center_expression = true; // G and P
    bool center_covariates = true; // B
};

struct DatasetPaths {
    std::vector<std::pair<std::string, std::string>> upstream; // (platform, path)
    std::string genes;
    std::string proteins;   // optional
    std::string covariates; // optional
    std::string outcome;    // optional
};

struct LoadedDataset {
    OmicsDataset dataset;
    std::vector<std::string> dropped_samples; // sorted
};

inline Outcome parse_outcome(const Table& t, const std::vector<std::size_t>& order) {
    if (t.column_ids.size() == 1) {
        Mat m = table_numeric(t, order);
        return ContinuousOutcome{m.col(0)};
    }
    if (t.column_ids.size() == 2) {
        Mat m = table_numeric(t, order);
        SurvivalOutcome s;
        s.z.resize(m.rows());
        s.delta.resize(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (!(m(i, 0) > 0.0))
                throw Error(ErrorKind::Format, t.path + ": non-positive survival time for sample '" +
                                                   t.row_ids[order[static_cast<std::size_t>(i)]] + "'");
            if (m(i, 1) != 0.0 && m(i, 1) != 1.0)
                throw Error(ErrorKind::Format, t.path + ": event indicator must be 0 or 1 for sample '" +
                                                   t.row_ids[order[static_cast<std::size_t>(i)]] + "'");
            s.z(i) = std::log(m(i, 0));
            s.delta[static_cast<std::size_t>(i)] = static_cast<int>(m(i, 1));
        }
        return s;
    }
    throw Error(ErrorKind::Format, t.path + ": outcome file needs columns sample_id,value or sample_id,time,event");
}

// Loads all platform files, intersects samples (order of the first upstream
// file, or of the gene file when there is no upstream), and applies
// centering as requested.
inline LoadedDataset load_dataset(const DatasetPaths& paths, const IngestConfig& cfg = {}) {
    std::vector<Table> upstream_tables;
    for (const auto& [platform, p] : paths.upstream) upstream_tables.push_back(read_table(p));
    std::optional<Table> genes, proteins, covariates, outcome;
    if (!paths.genes.empty()) genes = read_table(paths.genes);
    if (!paths.proteins.empty()) proteins = read_table(paths.proteins);
    if (!paths.covariates.empty()) covariates = read_table(paths.covariates);
    if (!paths.outcome.empty()) outcome = read_table(paths.outcome);

    std::vector<const Table*> all;
    for (const auto& t : upstream_tables) all.push_back(&t);
    for (const auto* t : {&genes, &proteins, &covariates, &outcome})
        if (*t) all.push_back(&**t);
    if (all.empty()) throw Error(ErrorKind::Format, "no input tables given");

    std::set<std::string> union_ids;
    std::vector<std::unordered_map<std::string, std::size_t>> index(all.size());
    for (std::size_t k = 0; k < all.size(); ++k)
        for (std::size_t r = 0; r < all[k]->row_ids.size(); ++r) {
            index[k][all[k]->row_ids[r]] = r;
            union_ids.insert(all[k]->row_ids[r]);
        }

    LoadedDataset out;
    auto& ds = out.dataset;
    for (const auto& id : all.front()->row_ids) {
        bool everywhere = true;
        for (std::size_t k = 1; k < all.size() && everywhere; ++k) everywhere = index[k].count(id) > 0;
        if (everywhere) ds.sample_ids.push_back(id);
    }
    if (ds.sample_ids.empty()) throw Error(ErrorKind::EmptyIntersection, "input files share no sample ids");
    std::unordered_set<std::string> kept(ds.sample_ids.begin(), ds.sample_ids.end());
    for (const auto& id : union_ids)
        if (!kept.count(id)) out.dropped_samples.push_back(id);

    auto order_for = [&](const Table& t) {
        std::size_t k = 0;
        while (all[k] != &t) ++k;
        std::vector<std::size_t> order;
        order.reserve(ds.sample_ids.size());
        for (const auto& id : ds.sample_ids) order.push_back(index[k].at(id));
        return order;
    };

    const auto n = static_cast<Eigen::Index>(ds.sample_ids.size());
    {
        Eigen::Index total = 0;
        for (const auto& t : upstream_tables) total += static_cast<Eigen::Index>(t.column_ids.size());
        ds.upstream.values.resize(n, total);
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < upstream_tables.size(); ++k) {
            const auto& t = upstream_tables[k];
            Mat m = table_numeric(t, order_for(t));
            ds.upstream.values.middleCols(at, m.cols()) = m;
            at += m.cols();
            for (const auto& c : t.column_ids) {
                ds.upstream.column_ids.push_back(paths.upstream[k].first + ":" + c);
                ds.upstream.platform.push_back(paths.upstream[k].first);
            }
        }
    }
    auto fill = [&](Block& b, const std::optional<Table>& t, const char* platform, bool center) {
        if (!t) {
            b.values.resize(n, 0);
            return;
        }
        b.values = table_numeric(*t, order_for(*t));
        b.column_ids = t->column_ids;
        b.platform.assign(t->column_ids.size(), platform);
        if (center) {
            b.values = center_columns(b.values);
            b.centered = true;
        }
    };
    fill(ds.genes, genes, "rna", cfg.center_expression);
    fill(ds.proteins, proteins, "protein", cfg.center_expression);
    fill(ds.covariates, covariates, "covariate", cfg.center_covariates);
    if (outcome) ds.outcome = parse_outcome(*outcome, order_for(*outcome));
    validate(ds);
    return out;
}

// ---------------------------------------------------------------------------
// Biomarker cis-map
//
// Line records:
//   gene <gene_id> <upstream_ref>[,<upstream_ref>...]
//   protein <protein_id> <gene_id|-> <upstream_ref>[,<upstream_ref>...]
// An upstream_ref is a full upstream column id ("cna:YAP1"), a
// platform-relative index ("cna:7"), or a global 0-based index ("12").
// Blank lines and lines starting with '#' are ignored.

struct GeneEntry {
    std::string id;
    Eigen::Index column = -1; // into G
    std::vector<Eigen::Index> upstream;
};

struct ProteinEntry {
    std::string id;
    Eigen::Index column = -1;                // into P
    std::optional<Eigen::Index> coding_gene; // into G
    std::vector<Eigen::Index> upstream;

    bool driver_only() const { return !coding_gene.has_value(); }
};

struct BiomarkerMap {
    std::vector<GeneEntry> genes;
    std::vector<ProteinEntry> proteins;
};

namespace detail {

inline Eigen::Index resolve_upstream(const std::string& ref, const Block& upstream, const std::string& where) {
    const auto& ids = upstream.column_ids;
    if (auto it = std::find(ids.begin(), ids.end(), ref); it != ids.end()) return it - ids.begin();
    auto as_index = [](std::string_view s) -> std::optional<long> {
        long v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || v < 0) return std::nullopt;
        return v;
    };
    if (const auto colon = ref.find(':'); colon != std::string::npos) {
        const std::string platform = ref.substr(0, colon);
        if (auto k = as_index(std::string_view(ref).substr(colon + 1))) {
            long seen = 0;
            for (std::size_t c = 0; c < upstream.platform.size(); ++c)
                if (upstream.platform[c] == platform && seen++ == *k) return static_cast<Eigen::Index>(c);
        }
    } else if (auto k = as_index(ref)) {
        if (*k < upstream.cols()) return static_cast<Eigen::Index>(*k);
    }
    throw Error(ErrorKind::DanglingIndex, where + ": upstream reference '" + ref + "' does not resolve (q_u = " +
                                              std::to_string(upstream.cols()) + ")");
}

} // namespace detail

inline BiomarkerMap parse_biomarker_map(std::istream& in, const OmicsDataset& ds, const std::string& source = "map") {
    BiomarkerMap map;
    std::unordered_set<std::string> ids;
    auto column_of = [](const Block& b, const std::string& id) -> Eigen::Index {
        auto it = std::find(b.column_ids.begin(), b.column_ids.end(), id);
        return it == b.column_ids.end() ? -1 : it - b.column_ids.begin();
    };
    auto upstream_list = [&](const std::string& field, const std::string& where) {
        std::vector<Eigen::Index> cols;
        for (const auto& ref : detail::split(field, ','))
            if (!ref.empty()) cols.push_back(detail::resolve_upstream(ref, ds.upstream, where));
        if (cols.empty()) throw Error(ErrorKind::DanglingIndex, where + ": empty upstream column list");
        return cols;
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        std::istringstream fields(trimmed);
        std::vector<std::string> tok;
        for (std::string s; fields >> s;) tok.push_back(s);
        const std::string where = source + ":" + std::to_string(line_no);
        if (tok[0] == "gene" && tok.size() == 3) {
            GeneEntry g;
            g.id = tok[1];
            if (!ids.insert(g.id).second) throw Error(ErrorKind::DuplicateBiomarkerId, where + ": " + g.id);
            g.column = column_of(ds.genes, g.id);
            if (g.column < 0) throw Error(ErrorKind::DanglingIndex, where + ": gene '" + g.id + "' not in gene matrix");
            g.upstream = upstream_list(tok[2], where);
            map.genes.push_back(std::move(g));
        } else if (tok[0] == "protein" && tok.size() == 4) {
            ProteinEntry p;
            p.id = tok[1];
            if (!ids.insert(p.id).second) throw Error(ErrorKind::DuplicateBiomarkerId, where + ": " + p.id);
            p.column = column_of(ds.proteins, p.id);
            if (p.column < 0)
                throw Error(ErrorKind::DanglingIndex, where + ": protein '" + p.id + "' not in protein matrix");
            if (tok[2] != "-") {
                const auto gc = column_of(ds.genes, tok[2]);
                if (gc < 0)
                    throw Error(ErrorKind::DanglingIndex, where + ": coding gene '" + tok[2] + "' not in gene matrix");
                p.coding_gene = gc;
            }
            p.upstream = upstream_list(tok[3], where);
            map.proteins.push_back(std::move(p));
        } else {
            throw Error(ErrorKind::Format, where + ": expected 'gene <id> <cols>' or 'protein <id> <gene|-> <cols>'");
        }
    }
    return map;
}

inline BiomarkerMap load_biomarker_map(const std::string& path, const OmicsDataset& ds) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open biomarker map " + path);
    return parse_biomarker_map(in, ds, path);
}

} // namespace fibag
