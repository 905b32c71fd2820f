#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fibag/fibag.hpp"

namespace fibag::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using report::format_double;

// Everything a stage needs, after config file, environment and flags are
// merged (flag > environment > config file > default).
struct Settings {
    fs::path config_path;
    json config = json::object();
    DatasetPaths paths;
    std::string map_path;
    gp::GpHyperParams hyper;
    gp::QuadratureConfig quad;
    calib::AggregationKind aggregation = calib::AggregationKind::Maximal;
    cbvs::CbvsConfig cbvs;
    double alpha = 0.1;
    fdr::Rule rule = fdr::Rule::PaperCumulativeSum;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    fs::path out = "fibag-out";
    // per-command inputs
    std::string evidence_path, priors_path, fit_path;
    sim::Scenario scenario;
};

// Raw flag values; empty/unset means "not given".
struct Flags {
    std::string config, out, map, evidence, priors, fit, aggregation, algo, fdr_rule, sim_evidence;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs, iterations, burn_in, thin, n, replicates;
    std::optional<double> alpha;
};

[[noreturn]] void bad_config(const std::string& where, const std::string& what) {
    throw Error(ErrorKind::InvalidConfig, where + ": " + what);
}

// ---------------------------------------------------------------------------
// config file

std::string resolve(const Settings& s, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute() || s.config_path.empty()) return path.string();
    return (s.config_path.parent_path() / path).lexically_normal().string();
}

double num(const json& j, const std::string& where) {
    if (!j.is_number()) bad_config(where, "expected a number");
    return j.get<double>();
}

int integer(const json& j, const std::string& where) {
    if (!j.is_number_integer()) bad_config(where, "expected an integer");
    return j.get<int>();
}

std::string str(const json& j, const std::string& where) {
    if (!j.is_string()) bad_config(where, "expected a string");
    return j.get<std::string>();
}

bool boolean(const json& j, const std::string& where) {
    if (!j.is_boolean()) bad_config(where, "expected true or false");
    return j.get<bool>();
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) bad_config(where, "expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed) ok = ok || it.key() == k;
        if (!ok) bad_config(where + "." + it.key(), "unknown key");
    }
}

void load_config_file(Settings& s, const std::string& path) {
    s.config_path = path;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open config " + path);
    try {
        s.config = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Format, path + ": " + e.what());
    }
    const std::string f = path;
    const json& c = s.config;
    check_keys(c, {"data", "map", "mechanistic", "calibration", "cbvs", "fdr", "simulate", "seed", "jobs", "out"}, f);

    if (c.contains("data")) {
        const auto& d = c["data"];
        const std::string w = f + ": data";
        check_keys(d, {"upstream", "genes", "proteins", "covariates", "outcome"}, w);
        if (d.contains("upstream")) {
            if (!d["upstream"].is_array()) bad_config(w + ".upstream", "expected an array of {platform, path}");
            for (std::size_t i = 0; i < d["upstream"].size(); ++i) {
                const auto& e = d["upstream"][i];
                const std::string we = w + ".upstream[" + std::to_string(i) + "]";
                check_keys(e, {"platform", "path"}, we);
                if (!e.contains("platform") || !e.contains("path")) bad_config(we, "needs platform and path");
                s.paths.upstream.emplace_back(str(e["platform"], we + ".platform"), resolve(s, str(e["path"], we + ".path")));
            }
        }
        if (d.contains("genes")) s.paths.genes = resolve(s, str(d["genes"], w + ".genes"));
        if (d.contains("proteins")) s.paths.proteins = resolve(s, str(d["proteins"], w + ".proteins"));
        if (d.contains("covariates")) s.paths.covariates = resolve(s, str(d["covariates"], w + ".covariates"));
        if (d.contains("outcome")) s.paths.outcome = resolve(s, str(d["outcome"], w + ".outcome"));
    }
    if (c.contains("map")) s.map_path = resolve(s, str(c["map"], f + ": map"));
    if (c.contains("mechanistic")) {
        const auto& m = c["mechanistic"];
        const std::string w = f + ": mechanistic";
        check_keys(m, {"nu0", "tau0_sq", "lambda0", "g", "rel_tol"}, w);
        if (m.contains("nu0")) s.hyper.nu0 = num(m["nu0"], w + ".nu0");
        if (m.contains("tau0_sq")) s.hyper.tau0_sq = num(m["tau0_sq"], w + ".tau0_sq");
        if (m.contains("lambda0")) s.hyper.lambda0 = num(m["lambda0"], w + ".lambda0");
        if (m.contains("g") && !m["g"].is_null()) s.hyper.g = num(m["g"], w + ".g");
        if (m.contains("rel_tol")) s.quad.rel_tol = num(m["rel_tol"], w + ".rel_tol");
        try {
            s.hyper.check();
        } catch (const Error&) {
            bad_config(w, "hyperparameters must be strictly positive");
        }
    }
    if (c.contains("calibration")) {
        const auto& m = c["calibration"];
        check_keys(m, {"aggregation"}, f + ": calibration");
        if (m.contains("aggregation"))
            s.aggregation = calib::parse_aggregation(str(m["aggregation"], f + ": calibration.aggregation"));
    }
    if (c.contains("cbvs")) {
        const auto& m = c["cbvs"];
        const std::string w = f + ": cbvs";
        check_keys(m, {"algorithm", "iterations", "burn_in", "thin", "v0", "v1", "nu", "lambda", "emvs", "bma",
                       "hastings_correction"},
                   w);
        auto& b = s.cbvs;
        if (m.contains("algorithm")) {
            auto a = cbvs::parse_algorithm(str(m["algorithm"], w + ".algorithm"));
            if (!a) bad_config(w + ".algorithm", "expected gibbs, select-mcmc or emvs");
            b.algorithm = *a;
        }
        if (m.contains("iterations")) b.iterations = integer(m["iterations"], w + ".iterations");
        if (m.contains("burn_in")) b.burn_in = integer(m["burn_in"], w + ".burn_in");
        if (m.contains("thin")) b.thin = integer(m["thin"], w + ".thin");
        if (m.contains("v0")) b.v0 = num(m["v0"], w + ".v0");
        if (m.contains("v1")) b.v1 = num(m["v1"], w + ".v1");
        if (m.contains("nu")) b.nu = num(m["nu"], w + ".nu");
        if (m.contains("lambda")) b.lambda_sig = num(m["lambda"], w + ".lambda");
        if (m.contains("hastings_correction"))
            b.hastings_correction = boolean(m["hastings_correction"], w + ".hastings_correction");
        if (m.contains("bma")) {
            const auto v = str(m["bma"], w + ".bma");
            if (v == "softmax") b.bma = cbvs::BmaWeighting::Softmax;
            else if (v == "negative-log-posterior") b.bma = cbvs::BmaWeighting::NegativeLogPosterior;
            else bad_config(w + ".bma", "expected softmax or negative-log-posterior");
        }
        if (m.contains("emvs")) {
            const auto& e = m["emvs"];
            check_keys(e, {"max_iter", "tol", "omega_clamp"}, w + ".emvs");
            if (e.contains("max_iter")) b.emvs.max_iter = integer(e["max_iter"], w + ".emvs.max_iter");
            if (e.contains("tol")) b.emvs.tol = num(e["tol"], w + ".emvs.tol");
            if (e.contains("omega_clamp")) b.emvs.omega_clamp = num(e["omega_clamp"], w + ".emvs.omega_clamp");
        }
    }
    if (c.contains("fdr")) {
        const auto& m = c["fdr"];
        check_keys(m, {"alpha", "rule"}, f + ": fdr");
        if (m.contains("alpha")) s.alpha = num(m["alpha"], f + ": fdr.alpha");
        if (m.contains("rule")) {
            auto r = fdr::parse_rule(str(m["rule"], f + ": fdr.rule"));
            if (!r) bad_config(f + ": fdr.rule", "expected paper or cumulative-mean");
            s.rule = *r;
        }
    }
    if (c.contains("simulate")) {
        const auto& m = c["simulate"];
        const std::string w = f + ": simulate";
        check_keys(m, {"n", "p", "replicates", "seeds", "methods", "evidence", "xi"}, w);
        auto& sc = s.scenario;
        if (m.contains("n")) sc.n = integer(m["n"], w + ".n");
        if (m.contains("p") && integer(m["p"], w + ".p") != sim::Sim1Layout::p)
            bad_config(w + ".p", "simulation 1 has p = 200");
        if (m.contains("replicates")) sc.replicates = integer(m["replicates"], w + ".replicates");
        if (m.contains("seeds")) sc.seed = m["seeds"].get<std::uint64_t>();
        if (m.contains("methods")) {
            sc.methods.clear();
            for (const auto& v : m["methods"]) {
                const auto name = str(v, w + ".methods");
                if (name == "calibrated") sc.methods.push_back(sim::Method::CbvsCalibrated);
                else if (name == "uncalibrated") sc.methods.push_back(sim::Method::CbvsUncalibrated);
                else bad_config(w + ".methods", "expected calibrated or uncalibrated");
            }
        }
        if (m.contains("evidence")) {
            const auto v = str(m["evidence"], w + ".evidence");
            if (v == "gp") sc.evidence = sim::EvidenceSource::Gp;
            else if (v == "class-target") sc.evidence = sim::EvidenceSource::ClassTarget;
            else bad_config(w + ".evidence", "expected gp or class-target");
        }
        if (m.contains("xi")) {
            if (!m["xi"].is_array() || m["xi"].size() != 4) bad_config(w + ".xi", "expected four numbers");
            sim::ClassXi xi{};
            for (std::size_t k = 0; k < 4; ++k) xi[k] = num(m["xi"][k], w + ".xi");
            sc.xi = xi;
        }
    }
    if (c.contains("seed")) {
        if (!c["seed"].is_number_unsigned()) bad_config(f + ": seed", "expected a non-negative integer");
        s.seed = c["seed"].get<std::uint64_t>();
    }
    if (c.contains("jobs")) s.jobs = integer(c["jobs"], f + ": jobs");
    if (c.contains("out")) s.out = resolve(s, str(c["out"], f + ": out"));
}

Settings make_settings(const Flags& fl) {
    Settings s;
    if (!fl.config.empty()) load_config_file(s, fl.config);
    if (!fl.out.empty()) s.out = fl.out;
    if (!fl.map.empty()) s.map_path = fl.map;
    if (fl.seed) s.seed = fl.seed;
    if (fl.jobs) s.jobs = *fl.jobs;
    if (!fl.aggregation.empty()) s.aggregation = calib::parse_aggregation(fl.aggregation);
    if (!fl.algo.empty()) s.cbvs.algorithm = *cbvs::parse_algorithm(fl.algo); // validated by CLI11
    if (fl.iterations) s.cbvs.iterations = *fl.iterations;
    if (fl.burn_in) s.cbvs.burn_in = *fl.burn_in;
    if (fl.thin) s.cbvs.thin = *fl.thin;
    if (fl.alpha) s.alpha = *fl.alpha;
    if (!fl.fdr_rule.empty()) s.rule = *fdr::parse_rule(fl.fdr_rule);
    if (fl.n) s.scenario.n = *fl.n;
    if (fl.replicates) s.scenario.replicates = *fl.replicates;
    if (!fl.sim_evidence.empty())
        s.scenario.evidence = fl.sim_evidence == "gp" ? sim::EvidenceSource::Gp : sim::EvidenceSource::ClassTarget;
    s.evidence_path = fl.evidence.empty() ? (s.out / "mechanistic.csv").string() : fl.evidence;
    s.priors_path = fl.priors.empty() ? (s.out / "priors.csv").string() : fl.priors;
    s.fit_path = fl.fit.empty() ? (s.out / "fit.csv").string() : fl.fit;
    if (s.jobs < 1) throw Error(ErrorKind::InvalidConfig, "jobs must be >= 1");
    if (!(s.alpha > 0.0 && s.alpha <= 1.0)) throw Error(ErrorKind::AlphaOutOfRange, "alpha must lie in (0, 1]");
    return s;
}

std::uint64_t require_seed(const Settings& s) {
    if (!s.seed) throw Error(ErrorKind::Usage, "--seed is required for this command (or set FIBAG_SEED / config 'seed')");
    return *s.seed;
}

// ---------------------------------------------------------------------------
// files

void ensure_out(const Settings& s) {
    std::error_code ec;
    fs::create_directories(s.out, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + s.out.string() + ": " + ec.message());
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + p.string());
    out << content;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name, const std::string& file) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw Error(ErrorKind::Format, file + ": missing column '" + name + "'");
    }
};

Csv read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    Csv c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split(line, ',');
        if (c.header.empty()) {
            c.header = std::move(fields);
            continue;
        }
        if (fields.size() != c.header.size())
            throw Error(ErrorKind::Format, path + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(c.header.size()) + " fields");
        c.rows.push_back(std::move(fields));
    }
    if (c.header.empty()) throw Error(ErrorKind::Format, path + ": empty file");
    return c;
}

double csv_number(const std::string& v, const std::string& where) {
    auto d = detail::parse_double(v);
    if (!d) throw Error(ErrorKind::Format, where + ": '" + v + "' is not a number");
    return *d;
}

LoadedDataset load(const Settings& s) {
    if (s.paths.genes.empty() && s.paths.proteins.empty())
        throw Error(ErrorKind::InvalidConfig, "config: data.genes or data.proteins must be given");
    return load_dataset(s.paths);
}

std::vector<std::string> covariate_universe(const OmicsDataset& ds) {
    std::vector<std::string> ids = ds.genes.column_ids;
    ids.insert(ids.end(), ds.proteins.column_ids.begin(), ds.proteins.column_ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// stages

std::vector<std::string> stage_mechanistic(const Settings& s) {
    if (s.map_path.empty()) throw Error(ErrorKind::InvalidConfig, "no biomarker map given (--map or config 'map')");
    const auto loaded = load(s);
    const auto map = load_biomarker_map(s.map_path, loaded.dataset);
    const auto suite = gp::run_mechanistic_suite(loaded.dataset, map, s.hyper, s.quad, s.jobs);
    ensure_out(s);

    std::ostringstream csv;
    csv << "biomarker_id,axis,lbf,evidence_class,quad_error,nodes_used\n";
    json results = json::array();
    for (const auto& r : suite.results) {
        csv << report::csv_field(r.biomarker_id) << ',' << gp::to_string(r.axis) << ',' << format_double(r.lbf) << ','
            << gp::to_string(r.evidence) << ',' << format_double(r.quad_error) << ',' << r.nodes_used << '\n';
        results.push_back({{"biomarker_id", r.biomarker_id},
                           {"axis", gp::to_string(r.axis)},
                           {"lbf", jnum(r.lbf)},
                           {"evidence_class", gp::to_string(r.evidence)},
                           {"quad_error", jnum(r.quad_error)},
                           {"nodes_used", r.nodes_used}});
    }
    json failures = json::array();
    for (const auto& f : suite.failures)
        failures.push_back({{"biomarker_id", f.biomarker_id}, {"axis", gp::to_string(f.axis)}, {"message", f.message}});
    json dropped = loaded.dropped_samples;
    write_file(s.out / "mechanistic.csv", csv.str());
    write_json(s.out / "mechanistic.json",
               {{"n_samples", loaded.dataset.n()}, {"dropped_samples", dropped}, {"results", results}, {"failures", failures}});
    for (const auto& f : suite.failures) std::cerr << "warning: " << f.biomarker_id << " (" << gp::to_string(f.axis) << "): " << f.message << '\n';
    if (suite.results.empty() && !suite.failures.empty())
        throw Error(ErrorKind::FactorizationFailure, "every mechanistic model failed");
    return {"mechanistic.csv", "mechanistic.json"};
}

std::vector<std::string> stage_calibrate(const Settings& s) {
    const auto loaded = load(s);
    const Csv ev = read_csv(s.evidence_path);
    const auto c_id = ev.col("biomarker_id", s.evidence_path), c_axis = ev.col("axis", s.evidence_path),
               c_lbf = ev.col("lbf", s.evidence_path);
    std::vector<gp::MechanisticResult> results;
    for (std::size_t r = 0; r < ev.rows.size(); ++r) {
        const auto& row = ev.rows[r];
        const std::string where = s.evidence_path + ":" + std::to_string(r + 2);
        auto axis = gp::parse_axis(row[c_axis]);
        if (!axis) throw Error(ErrorKind::Format, where + ": unknown axis '" + row[c_axis] + "'");
        gp::MechanisticResult m;
        m.biomarker_id = row[c_id];
        m.axis = *axis;
        m.lbf = csv_number(row[c_lbf], where);
        results.push_back(m);
    }
    const auto priors = calib::calibrate_all(results, s.aggregation, covariate_universe(loaded.dataset));
    ensure_out(s);
    std::ostringstream csv;
    csv << "covariate_id,lbf,f,beta_a,beta_b,prior_mean\n";
    for (const auto& p : priors)
        csv << report::csv_field(p.covariate_id) << ',' << format_double(p.s) << ',' << format_double(p.f_value) << ','
            << format_double(p.beta_a) << ',' << format_double(p.beta_b) << ',' << format_double(p.prior_mean) << '\n';
    write_file(s.out / "priors.csv", csv.str());
    return {"priors.csv"};
}

std::vector<calib::CalibratedPrior> read_priors(const std::string& path, const OmicsDataset& ds) {
    const Csv c = read_csv(path);
    const auto c_id = c.col("covariate_id", path), c_lbf = c.col("lbf", path), c_a = c.col("beta_a", path),
               c_b = c.col("beta_b", path), c_f = c.col("f", path), c_m = c.col("prior_mean", path);
    const auto universe = covariate_universe(ds);
    std::vector<calib::CalibratedPrior> out;
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
        const auto& row = c.rows[r];
        const std::string where = path + ":" + std::to_string(r + 2);
        if (std::find(universe.begin(), universe.end(), row[c_id]) == universe.end())
            throw Error(ErrorKind::UnknownCovariate, where + ": covariate '" + row[c_id] + "' is not in the dataset");
        calib::CalibratedPrior p;
        p.covariate_id = row[c_id];
        p.s = csv_number(row[c_lbf], where);
        p.f_value = csv_number(row[c_f], where);
        p.beta_a = csv_number(row[c_a], where);
        p.beta_b = csv_number(row[c_b], where);
        p.prior_mean = csv_number(row[c_m], where);
        if (!(p.prior_mean > 0.0 && p.prior_mean < 1.0) || !(p.beta_a > 0.0) || !(p.beta_b > 0.0))
            throw Error(ErrorKind::Format, where + ": prior parameters out of range");
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<std::string> stage_cbvs(const Settings& s) {
    auto cfg = s.cbvs;
    cfg.seed = require_seed(s);
    const auto loaded = load(s);
    if (!loaded.dataset.outcome) throw Error(ErrorKind::InvalidConfig, "config: data.outcome is required for cbvs");
    std::vector<calib::CalibratedPrior> priors;
    if (fs::exists(s.priors_path)) priors = read_priors(s.priors_path, loaded.dataset);
    else std::cerr << "note: " << s.priors_path << " not found; using Beta(1,1) priors for every covariate\n";
    const auto fit = cbvs::fit(loaded.dataset, priors, cfg);
    ensure_out(s);

    const auto first = static_cast<Eigen::Index>(fit.coefficient_ids.size() - fit.covariate_ids.size());
    std::ostringstream csv;
    csv << "covariate_id,pip,beta_std,beta_raw\n";
    json cov = json::array();
    for (std::size_t j = 0; j < fit.covariate_ids.size(); ++j) {
        const auto k = first + static_cast<Eigen::Index>(j);
        const auto jj = static_cast<Eigen::Index>(j);
        csv << report::csv_field(fit.covariate_ids[j]) << ',' << format_double(fit.pip(jj)) << ','
            << format_double(fit.beta_std(k)) << ',' << format_double(fit.beta_raw(k)) << '\n';
    }
    for (std::size_t k = 0; k < fit.coefficient_ids.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        json e = {{"id", fit.coefficient_ids[k]}, {"beta_std", jnum(fit.beta_std(kk))}, {"beta_raw", jnum(fit.beta_raw(kk))}};
        if (kk >= first) e["pip"] = jnum(fit.pip(kk - first));
        if (fit.beta_mcse.size() == fit.beta_std.size()) e["beta_mcse"] = jnum(fit.beta_mcse(kk));
        cov.push_back(e);
    }
    json j = {{"algorithm", cbvs::to_string(fit.algorithm)},
              {"seed", fit.seed},
              {"outcome", is_survival(*loaded.dataset.outcome) ? "survival" : "continuous"},
              {"n", loaded.dataset.n()},
              {"sigma_hat", jnum(fit.sigma_hat)},
              {"converged", fit.converged}};
    if (fit.algorithm == cbvs::Algorithm::Emvs) {
        j["em_iterations"] = fit.em_iterations;
        j["final_objective"] = jnum(fit.final_objective);
    } else {
        j["iterations"] = cfg.iterations;
        j["burn_in"] = cfg.burn_in;
        j["thin"] = cfg.thin;
    }
    if (fit.algorithm == cbvs::Algorithm::SelectionMcmc) j["acceptance_rate"] = jnum(fit.acceptance_rate);
    j["coefficients"] = cov;

    std::ostringstream trace;
    trace << "step,log_post\n";
    for (std::size_t t = 0; t < fit.log_post_trace.size(); ++t) trace << t << ',' << format_double(fit.log_post_trace[t]) << '\n';

    write_file(s.out / "fit.csv", csv.str());
    write_json(s.out / "fit.json", j);
    write_file(s.out / "trace.csv", trace.str());
    return {"fit.csv", "fit.json", "trace.csv"};
}

std::vector<std::string> stage_fdr(const Settings& s) {
    const Csv c = read_csv(s.fit_path);
    const auto c_id = c.col("covariate_id", s.fit_path), c_pip = c.col("pip", s.fit_path);
    std::vector<std::string> ids;
    std::vector<double> pips;
    for (std::size_t r = 0; r < c.rows.size(); ++r) {
        ids.push_back(c.rows[r][c_id]);
        pips.push_back(csv_number(c.rows[r][c_pip], s.fit_path + ":" + std::to_string(r + 2)));
    }
    const auto sel = fdr::select_fdr(pips, s.alpha, s.rule, ids);
    ensure_out(s);
    std::ostringstream csv;
    csv << "covariate_id,pip,p,cum_stat,selected\n";
    for (const auto& e : sel.ordered)
        csv << report::csv_field(e.covariate_id) << ',' << format_double(e.pip) << ',' << format_double(e.p) << ','
            << format_double(e.cum_stat) << ',' << (e.selected ? 1 : 0) << '\n';
    write_file(s.out / "selection.csv", csv.str());
    write_json(s.out / "selection.json", {{"rule", fdr::to_string(sel.rule)},
                                          {"alpha", sel.alpha},
                                          {"j_star", sel.j_star},
                                          {"selected", sel.selected_ids()}});
    return {"selection.csv", "selection.json"};
}

json metrics_json(const sim::SimMetrics& m) {
    return {{"auc", jnum(m.auc)}, {"auc20", jnum(m.auc20)}, {"tpr", jnum(m.tpr)}, {"fpr", jnum(m.fpr)}, {"mcc", jnum(m.mcc)}};
}

std::vector<std::string> stage_simulate(const Settings& s) {
    auto sc = s.scenario;
    sc.seed = require_seed(s);
    sc.cbvs = s.cbvs;
    sc.alpha = s.alpha;
    sc.rule = s.rule;
    sc.hyper = s.hyper;
    sc.jobs = s.jobs;
    if (sc.replicates < 1) throw Error(ErrorKind::InvalidConfig, "simulate.replicates must be >= 1");
    const auto res = sim::run_benchmark(sc);
    ensure_out(s);

    auto row_csv = [](std::ostream& o, const sim::SimMetrics& m) {
        o << format_double(m.auc) << ',' << format_double(m.auc20) << ',' << format_double(m.tpr) << ','
          << format_double(m.fpr) << ',' << format_double(m.mcc);
    };
    std::ostringstream csv, longf;
    csv << "method,replicate,seed,auc,auc20,tpr,fpr,mcc,n_selected\n";
    longf << "method,replicate,metric,value\n";
    json rows = json::array(), summaries = json::array(), failures = json::array();
    for (const auto& r : res.rows) {
        csv << sim::to_string(r.method) << ',' << r.replicate << ',' << r.seed << ',';
        row_csv(csv, r.metrics);
        csv << ',' << r.n_selected << '\n';
        const std::pair<const char*, double> kv[] = {{"auc", r.metrics.auc}, {"auc20", r.metrics.auc20},
                                                     {"tpr", r.metrics.tpr}, {"fpr", r.metrics.fpr},
                                                     {"mcc", r.metrics.mcc}};
        for (const auto& [k, v] : kv)
            longf << sim::to_string(r.method) << ',' << r.replicate << ',' << k << ',' << format_double(v) << '\n';
        json j = metrics_json(r.metrics);
        j["method"] = sim::to_string(r.method);
        j["replicate"] = r.replicate;
        j["seed"] = r.seed;
        j["n_selected"] = r.n_selected;
        rows.push_back(j);
    }
    for (const auto& sm : res.summaries) {
        csv << sim::to_string(sm.method) << ",median,,";
        row_csv(csv, sm.median);
        csv << ",\n";
        summaries.push_back({{"method", sim::to_string(sm.method)},
                             {"replicates", sm.replicates},
                             {"median", metrics_json(sm.median)},
                             {"iqr", metrics_json(sm.iqr)}});
    }
    for (const auto& f : res.failures)
        failures.push_back({{"replicate", f.replicate}, {"method", sim::to_string(f.method)}, {"message", f.message}});
    json xi = json::array();
    for (double v : res.xi) xi.push_back(v);
    write_file(s.out / "metrics.csv", csv.str());
    write_file(s.out / "metrics_long.csv", longf.str());
    write_json(s.out / "metrics.json", {{"n", sc.n},
                                        {"p", sim::Sim1Layout::p},
                                        {"replicates", sc.replicates},
                                        {"seed", sc.seed},
                                        {"evidence", sc.evidence == sim::EvidenceSource::Gp ? "gp" : "class-target"},
                                        {"xi", xi},
                                        {"alpha", sc.alpha},
                                        {"rule", fdr::to_string(sc.rule)},
                                        {"summaries", summaries},
                                        {"rows", rows},
                                        {"failures", failures}});
    return {"metrics.csv", "metrics_long.csv", "metrics.json"};
}

// Effective configuration, used for the manifest hash.
json effective_config(const Settings& s) {
    json up = json::array();
    for (const auto& [pl, p] : s.paths.upstream) up.push_back({{"platform", pl}, {"path", fs::path(p).filename().string()}});
    auto base = [](const std::string& p) { return p.empty() ? std::string() : fs::path(p).filename().string(); };
    return {{"data", {{"upstream", up}, {"genes", base(s.paths.genes)}, {"proteins", base(s.paths.proteins)},
                      {"covariates", base(s.paths.covariates)}, {"outcome", base(s.paths.outcome)}}},
            {"map", base(s.map_path)},
            {"mechanistic", {{"nu0", s.hyper.nu0}, {"tau0_sq", s.hyper.tau0_sq}, {"lambda0", s.hyper.lambda0},
                             {"g", s.hyper.g ? json(*s.hyper.g) : json(nullptr)}, {"rel_tol", s.quad.rel_tol}}},
            {"calibration", {{"aggregation", calib::to_string(s.aggregation)}}},
            {"cbvs", {{"algorithm", cbvs::to_string(s.cbvs.algorithm)}, {"iterations", s.cbvs.iterations},
                      {"burn_in", s.cbvs.burn_in}, {"thin", s.cbvs.thin}, {"v0", s.cbvs.v0}, {"v1", s.cbvs.v1},
                      {"nu", s.cbvs.nu}, {"lambda", s.cbvs.lambda_sig},
                      {"bma", s.cbvs.bma == cbvs::BmaWeighting::Softmax ? "softmax" : "negative-log-posterior"},
                      {"hastings_correction", s.cbvs.hastings_correction},
                      {"emvs", {{"max_iter", s.cbvs.emvs.max_iter}, {"tol", s.cbvs.emvs.tol},
                                {"omega_clamp", s.cbvs.emvs.omega_clamp}}}}},
            {"fdr", {{"alpha", s.alpha}, {"rule", fdr::to_string(s.rule)}}},
            {"seed", s.seed ? json(*s.seed) : json(nullptr)}};
}

void stage_pipeline(const Settings& s) {
    require_seed(s);
    using clock = std::chrono::steady_clock;
    json stages = json::array(), timings = json::array();
    auto run_stage = [&](const char* name, auto&& fn) {
        const auto t0 = clock::now();
        std::vector<std::string> outputs;
        try {
            outputs = fn(s);
        } catch (const Error& e) {
            throw Error(e.kind(), std::string("stage ") + name + ": " + e.what());
        }
        const double secs = std::chrono::duration<double>(clock::now() - t0).count();
        stages.push_back({{"name", name}, {"outputs", outputs}});
        timings.push_back({{"name", name}, {"wall_seconds", secs}});
    };
    run_stage("mechanistic", stage_mechanistic);
    run_stage("calibrate", stage_calibrate);
    run_stage("cbvs", stage_cbvs);
    run_stage("fdr", stage_fdr);
    const json cfg = effective_config(s);
    write_json(s.out / "manifest.json", {{"tool", "fibag"},
                                         {"version", FIBAG_VERSION},
                                         {"seed", *s.seed},
                                         {"config_hash", report::hex64(report::fnv1a(cfg.dump()))},
                                         {"config", cfg},
                                         {"stages", stages}});
    write_json(s.out / "timings.json", {{"stages", timings}});
}

// ---------------------------------------------------------------------------
// command line

void add_common(CLI::App* cmd, Flags& f, bool seeded) {
    cmd->add_option("--config", f.config, "JSON configuration file")->envname("FIBAG_CONFIG");
    cmd->add_option("--out", f.out, "output directory")->envname("FIBAG_OUT");
    cmd->add_option("--jobs", f.jobs, "worker threads")->envname("FIBAG_JOBS")->check(CLI::PositiveNumber);
    if (seeded) cmd->add_option("--seed", f.seed, "master random seed")->envname("FIBAG_SEED");
}

void add_cbvs_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--algo", f.algo, "gibbs | select-mcmc | emvs")
        ->envname("FIBAG_ALGO")
        ->check(CLI::IsMember({"gibbs", "select-mcmc", "emvs"}));
    cmd->add_option("--iterations", f.iterations, "MCMC iterations")->envname("FIBAG_ITERATIONS");
    cmd->add_option("--burn-in", f.burn_in, "MCMC burn-in")->envname("FIBAG_BURN_IN");
    cmd->add_option("--thin", f.thin, "MCMC thinning")->envname("FIBAG_THIN");
}

void add_fdr_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--alpha", f.alpha, "FDR level in (0, 1]")->envname("FIBAG_ALPHA");
    cmd->add_option("--fdr-rule", f.fdr_rule, "paper | cumulative-mean")
        ->envname("FIBAG_FDR_RULE")
        ->check(CLI::IsMember({"paper", "cumulative-mean"}));
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"fibag: mechanistic evidence, calibrated spike-and-slab selection and simulation benchmarks"};
    app.set_version_flag("--version", std::string(FIBAG_VERSION));
    app.require_subcommand(1);
    Flags f;

    auto* mech = app.add_subcommand("mechanistic", "GP log Bayes factors for every biomarker axis");
    add_common(mech, f, false);
    mech->add_option("--map", f.map, "biomarker map file")->envname("FIBAG_MAP");

    auto* cal = app.add_subcommand("calibrate", "turn mechanistic evidence into Beta priors");
    add_common(cal, f, false);
    cal->add_option("--evidence", f.evidence, "mechanistic.csv (default: <out>/mechanistic.csv)");
    cal->add_option("--aggregation", f.aggregation, "average | maximal | precision")
        ->envname("FIBAG_AGGREGATION")
        ->check(CLI::IsMember({"average", "maximal", "max", "precision"}));

    auto* cb = app.add_subcommand("cbvs", "fit the calibrated spike-and-slab outcome model");
    add_common(cb, f, true);
    add_cbvs_flags(cb, f);
    cb->add_option("--priors", f.priors, "priors.csv (default: <out>/priors.csv)");

    auto* fd = app.add_subcommand("fdr", "select covariates from posterior inclusion probabilities");
    add_common(fd, f, false);
    add_fdr_flags(fd, f);
    fd->add_option("--fit", f.fit, "fit.csv (default: <out>/fit.csv)");

    auto* simc = app.add_subcommand("simulate", "simulation-1 benchmark, calibrated vs uncalibrated");
    add_common(simc, f, true);
    add_cbvs_flags(simc, f);
    add_fdr_flags(simc, f);
    simc->add_option("--n", f.n, "samples per replicate")->check(CLI::Range(2, 1000000));
    simc->add_option("--replicates", f.replicates, "replicates")->check(CLI::PositiveNumber);
    simc->add_option("--evidence", f.sim_evidence, "gp | class-target")->check(CLI::IsMember({"gp", "class-target"}));

    auto* pipe = app.add_subcommand("pipeline", "mechanistic -> calibrate -> cbvs -> fdr, with a run manifest");
    add_common(pipe, f, true);
    add_cbvs_flags(pipe, f);
    add_fdr_flags(pipe, f);
    pipe->add_option("--map", f.map, "biomarker map file")->envname("FIBAG_MAP");
    pipe->add_option("--aggregation", f.aggregation, "average | maximal | precision")
        ->envname("FIBAG_AGGREGATION")
        ->check(CLI::IsMember({"average", "maximal", "max", "precision"}));

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\nrun with --help for usage\n";
        return exit_code::usage;
    }

    try {
        const Settings s = make_settings(f);
        if (*mech) stage_mechanistic(s);
        else if (*cal) stage_calibrate(s);
        else if (*cb) stage_cbvs(s);
        else if (*fd) stage_fdr(s);
        else if (*simc) stage_simulate(s);
        else if (*pipe) stage_pipeline(s);
        return exit_code::ok;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code::data_format;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return exit_code::numerical;
    }
}

} // namespace fibag::cli
