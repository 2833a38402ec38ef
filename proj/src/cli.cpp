#include "mecor/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mecor/bayes.hpp"
#include "mecor/dataset_io.hpp"
#include "mecor/error.hpp"
#include "mecor/frame.hpp"
#include "mecor/mi.hpp"
#include "mecor/mle.hpp"
#include "mecor/regcal.hpp"
#include "mecor/simgen.hpp"
#include "mecor/stats.hpp"

namespace fs = std::filesystem;

namespace mecor::cli {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kVersion = "1.0.0";
constexpr const char* kOutEnv = "MECOR_OUT_DIR";

// ---------------------------------------------------------------------------
// JSON access
// ---------------------------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                    [&](const char* a) { return it.key() == a; });
        if (!ok) throw ConfigError(where + "." + it.key() + ": unknown key");
    }
}

template <class T>
void read(const json& j, const char* key, T& v, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        v = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

json number(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
    return a;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

StudyDesign design_from_json(const json& j) {
    check_keys(j, {"kind", "x", "xstar", "xstar1", "xstar2", "xss", "xss1", "xss2"}, "design");
    std::string kind = "replication";
    read(j, "kind", kind, "design");
    StudyDesign d;
    switch (parse_design(kind)) {
        case DesignKind::Validation: d = StudyDesign::validation(); break;
        case DesignKind::Replication: d = StudyDesign::replication(); break;
        case DesignKind::Calibration:
            d = j.contains("xss1") ? StudyDesign::calibration2() : StudyDesign::calibration();
            break;
    }
    read(j, "x", d.x, "design");
    read(j, "xstar", d.xstar, "design");
    read(j, "xstar1", d.xstar1, "design");
    read(j, "xstar2", d.xstar2, "design");
    read(j, "xss", d.xss, "design");
    read(j, "xss1", d.xss1, "design");
    read(j, "xss2", d.xss2, "design");
    return d;
}

json to_json(const StudyDesign& d) {
    json j;
    j["kind"] = to_string(d.kind);
    auto put = [&](const char* k, const std::string& v) {
        if (!v.empty()) j[k] = v;
    };
    put("x", d.x);
    put("xstar", d.xstar);
    put("xstar1", d.xstar1);
    put("xstar2", d.xstar2);
    put("xss", d.xss);
    put("xss1", d.xss1);
    put("xss2", d.xss2);
    return j;
}

OutcomeSpec outcome_from_json(const json& j) {
    check_keys(j, {"family", "y", "time", "event", "covariates", "exposure"}, "outcome");
    std::string family = "linear";
    read(j, "family", family, "outcome");
    OutcomeSpec o;
    o.kind = parse_outcome(family);
    read(j, "y", o.y, "outcome");
    read(j, "time", o.time, "outcome");
    read(j, "event", o.event, "outcome");
    read(j, "covariates", o.covariates, "outcome");
    read(j, "exposure", o.exposure, "outcome");
    return o;
}

json to_json(const OutcomeSpec& o) {
    json j;
    j["family"] = to_string(o.kind);
    if (o.kind == OutcomeKind::WeibullSurvival) {
        j["time"] = o.time;
        j["event"] = o.event;
    } else {
        j["y"] = o.y;
    }
    j["covariates"] = o.covariates;
    j["exposure"] = o.exposure;
    return j;
}

ErrorModelSpec error_from_json(const json& j, const std::string& where) {
    check_keys(j, {"kind", "theta0", "theta1", "sigma2_u"}, where);
    std::string kind = "classical";
    ErrorModelSpec e;
    read(j, "kind", kind, where);
    read(j, "sigma2_u", e.sigma2_u, where);
    if (kind == "systematic") {
        e.kind = ErrorModelSpec::Kind::Systematic;
        read(j, "theta0", e.theta0, where);
        read(j, "theta1", e.theta1, where);
    } else if (kind != "classical") {
        throw ConfigError(where + ".kind: unknown value '" + kind + "' (classical|systematic)");
    }
    return e;
}

json to_json(const ErrorModelSpec& e) {
    json j;
    j["kind"] = e.kind == ErrorModelSpec::Kind::Classical ? "classical" : "systematic";
    j["theta0"] = e.theta0;
    j["theta1"] = e.theta1;
    j["sigma2_u"] = e.sigma2_u;
    return j;
}

Mar mar_from_json(const json& j, const std::string& where) {
    Mar m;
    read(j, "intercept", m.intercept, where);
    read(j, "coef_y", m.coef_y, where);
    read(j, "coef_z", m.coef_z, where);
    read(j, "coef_xstar", m.coef_xstar, where);
    return m;
}

SelectionMechanism selection_from_json(const json& j) {
    const std::string where = "simulate.selection";
    check_keys(j, {"kind", "p", "intercept", "coef_y", "coef_z", "coef_xstar", "coef_x"}, where);
    std::string kind = "mcar";
    read(j, "kind", kind, where);
    if (kind == "mcar") {
        Mcar m;
        read(j, "p", m.p, where);
        return m;
    }
    if (kind == "mar") return mar_from_json(j, where);
    if (kind == "mnar") {
        Mnar m;
        m.observed = mar_from_json(j, where);
        read(j, "coef_x", m.coef_x, where);
        return m;
    }
    throw ConfigError(where + ".kind: unknown value '" + kind + "' (mcar|mar|mnar)");
}

json to_json(const SelectionMechanism& s) {
    json j;
    auto mar = [&](const Mar& m) {
        j["intercept"] = m.intercept;
        j["coef_y"] = m.coef_y;
        j["coef_z"] = m.coef_z;
        j["coef_xstar"] = m.coef_xstar;
    };
    if (const auto* m = std::get_if<Mcar>(&s)) {
        j["kind"] = "mcar";
        j["p"] = m->p;
    } else if (const auto* a = std::get_if<Mar>(&s)) {
        j["kind"] = "mar";
        mar(*a);
    } else {
        const auto& b = std::get<Mnar>(s);
        j["kind"] = "mnar";
        mar(b.observed);
        j["coef_x"] = b.coef_x;
    }
    return j;
}

CovariateSpec covariate_from_json(const json& j, const std::string& where) {
    check_keys(j, {"name", "kind", "mean", "variance", "p", "corr_x", "missing"}, where);
    CovariateSpec c;
    std::string kind = "normal";
    read(j, "name", c.name, where);
    read(j, "kind", kind, where);
    if (kind == "binary")
        c.kind = CovariateSpec::Kind::Binary;
    else if (kind != "normal")
        throw ConfigError(where + ".kind: unknown value '" + kind + "' (normal|binary)");
    read(j, "mean", c.mean, where);
    read(j, "variance", c.variance, where);
    read(j, "p", c.p, where);
    read(j, "corr_x", c.corr_x, where);
    if (j.contains("missing")) {
        const json& m = j.at("missing");
        check_keys(m, {"depends_on", "intercept", "coef"}, where + ".missing");
        CovariateMissingness cm;
        read(m, "depends_on", cm.depends_on, where + ".missing");
        read(m, "intercept", cm.intercept, where + ".missing");
        read(m, "coef", cm.coef, where + ".missing");
        c.missing = cm;
    }
    return c;
}

json to_json(const CovariateSpec& c) {
    json j;
    j["name"] = c.name;
    j["kind"] = c.kind == CovariateSpec::Kind::Binary ? "binary" : "normal";
    j["mean"] = c.mean;
    j["variance"] = c.variance;
    j["p"] = c.p;
    j["corr_x"] = c.corr_x;
    if (c.missing)
        j["missing"] = {{"depends_on", c.missing->depends_on},
                        {"intercept", c.missing->intercept},
                        {"coef", c.missing->coef}};
    return j;
}

SimConfig sim_from_json(const json& j) {
    const std::string w = "simulate";
    check_keys(j,
               {"n", "mu_x", "sigma2_x", "covariates", "outcome", "alpha", "beta_x", "beta_z",
                "sigma2_y", "shape", "censoring_rate", "design", "error", "error2",
                "second_measures", "selection", "primary_missing_prob", "stream"},
               w);
    SimConfig c;
    read(j, "n", c.n, w);
    read(j, "mu_x", c.mu_x, w);
    read(j, "sigma2_x", c.sigma2_x, w);
    if (j.contains("covariates")) {
        if (!j.at("covariates").is_array()) throw ConfigError("simulate.covariates: expected an array");
        std::size_t k = 0;
        for (const auto& cj : j.at("covariates"))
            c.covariates.push_back(covariate_from_json(cj, w + ".covariates[" + std::to_string(k++) + "]"));
    }
    std::string family = to_string(c.outcome);
    read(j, "outcome", family, w);
    c.outcome = parse_outcome(family);
    read(j, "alpha", c.alpha, w);
    read(j, "beta_x", c.beta_x, w);
    read(j, "beta_z", c.beta_z, w);
    read(j, "sigma2_y", c.sigma2_y, w);
    read(j, "shape", c.shape, w);
    read(j, "censoring_rate", c.censoring_rate, w);
    std::string design = to_string(c.design);
    read(j, "design", design, w);
    c.design = parse_design(design);
    if (j.contains("error")) c.error = error_from_json(j.at("error"), w + ".error");
    if (j.contains("error2")) c.error2 = error_from_json(j.at("error2"), w + ".error2");
    read(j, "second_measures", c.second_measures, w);
    if (j.contains("selection")) c.selection = selection_from_json(j.at("selection"));
    read(j, "primary_missing_prob", c.primary_missing_prob, w);
    read(j, "stream", c.stream, w);
    return c;
}

json to_json(const SimConfig& c) {
    json j;
    j["n"] = c.n;
    j["mu_x"] = c.mu_x;
    j["sigma2_x"] = c.sigma2_x;
    j["covariates"] = json::array();
    for (const auto& cv : c.covariates) j["covariates"].push_back(to_json(cv));
    j["outcome"] = to_string(c.outcome);
    j["alpha"] = c.alpha;
    j["beta_x"] = c.beta_x;
    j["beta_z"] = c.beta_z;
    j["sigma2_y"] = c.sigma2_y;
    j["shape"] = c.shape;
    j["censoring_rate"] = c.censoring_rate;
    j["design"] = to_string(c.design);
    j["error"] = to_json(c.error);
    j["error2"] = to_json(c.error2);
    j["second_measures"] = c.second_measures;
    j["selection"] = to_json(c.selection);
    j["primary_missing_prob"] = c.primary_missing_prob;
    j["seed"] = c.seed;
    j["stream"] = c.stream;
    return j;
}

const std::vector<std::string> kMethods = {"naive", "rc", "ml", "bayes", "mi"};

std::uint64_t method_stream(const std::string& m) {
    const auto it = std::find(kMethods.begin(), kMethods.end(), m);
    if (it == kMethods.end())
        throw ConfigError("method: unknown value '" + m + "' (naive|rc|ml|bayes|mi)");
    return static_cast<std::uint64_t>(it - kMethods.begin());
}

struct RunConfig {
    std::string input;
    StudyDesign design = StudyDesign::replication();
    OutcomeSpec outcome;
    std::string method = "rc";
    std::vector<std::string> methods;
    std::uint64_t seed = 1;
    double level = 0.95;
    unsigned threads = 0;
    std::string truth;

    RcOptions rc;
    MlOptions ml;
    std::vector<std::string> profile;
    PriorSpec priors;
    McmcOptions mcmc;
    bool dump_chains = true;
    MiOptions mi;
    bool dump_imputations = false;
};

SeMethod parse_se(const std::string& s) {
    if (s == "delta") return SeMethod::Delta;
    if (s == "bootstrap") return SeMethod::Bootstrap;
    throw ConfigError("rc.se_method: unknown value '" + s + "' (delta|bootstrap)");
}

PriorSpec priors_from_json(const json& j, const std::string& where) {
    check_keys(j, {"coef_var", "prec_shape", "prec_rate", "shape_rate", "scaled_coef_var", "flat"}, where);
    PriorSpec p;
    read(j, "coef_var", p.coef_var, where);
    read(j, "prec_shape", p.prec_shape, where);
    read(j, "prec_rate", p.prec_rate, where);
    read(j, "shape_rate", p.shape_rate, where);
    read(j, "scaled_coef_var", p.scaled_coef_var, where);
    read(j, "flat", p.flat, where);
    return p;
}

json to_json(const PriorSpec& p) {
    return {{"coef_var", p.coef_var},     {"prec_shape", p.prec_shape},
            {"prec_rate", p.prec_rate},   {"shape_rate", p.shape_rate},
            {"scaled_coef_var", p.scaled_coef_var}, {"flat", p.flat}};
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j,
               {"input", "design", "outcome", "method", "methods", "seed", "level", "threads",
                "truth", "out", "rc", "ml", "bayes", "mi", "simulate"},
               "config");
    RunConfig c;
    read(j, "input", c.input, "config");
    if (j.contains("design")) c.design = design_from_json(j.at("design"));
    if (j.contains("outcome")) c.outcome = outcome_from_json(j.at("outcome"));
    read(j, "method", c.method, "config");
    read(j, "methods", c.methods, "config");
    read(j, "seed", c.seed, "config");
    read(j, "level", c.level, "config");
    read(j, "threads", c.threads, "config");
    read(j, "truth", c.truth, "config");
    if (j.contains("rc")) {
        const json& r = j.at("rc");
        check_keys(r, {"se_method", "bootstrap_reps", "percentile", "stratify", "cross_regression"}, "rc");
        std::string se = "delta";
        read(r, "se_method", se, "rc");
        c.rc.se_method = parse_se(se);
        read(r, "bootstrap_reps", c.rc.bootstrap_reps, "rc");
        read(r, "percentile", c.rc.bootstrap_percentile, "rc");
        read(r, "stratify", c.rc.stratify_on_r, "rc");
        read(r, "cross_regression", c.rc.calibration.cross_regression, "rc");
    }
    if (j.contains("ml")) {
        const json& m = j.at("ml");
        check_keys(m, {"quad_points", "starts", "profile", "fixed"}, "ml");
        read(m, "quad_points", c.ml.quad_points, "ml");
        read(m, "starts", c.ml.starts, "ml");
        read(m, "profile", c.profile, "ml");
        std::map<std::string, double> fixed;
        read(m, "fixed", fixed, "ml");
        c.ml.fixed = fixed;
    }
    if (j.contains("bayes")) {
        const json& b = j.at("bayes");
        check_keys(b, {"chains", "iters", "burnin", "thin", "priors", "dump_chains"}, "bayes");
        read(b, "chains", c.mcmc.chains, "bayes");
        read(b, "iters", c.mcmc.iters, "bayes");
        read(b, "burnin", c.mcmc.burnin, "bayes");
        read(b, "thin", c.mcmc.thin, "bayes");
        read(b, "dump_chains", c.dump_chains, "bayes");
        if (b.contains("priors")) c.priors = priors_from_json(b.at("priors"), "bayes.priors");
    }
    if (j.contains("mi")) {
        const json& m = j.at("mi");
        check_keys(m, {"variant", "m", "smc_iters", "min_validated", "smc_max_tries", "priors",
                       "dump_imputations"},
                   "mi");
        std::string variant = to_string(c.mi.variant);
        read(m, "variant", variant, "mi");
        c.mi.variant = mi_variant_from_string(variant);
        read(m, "m", c.mi.m, "mi");
        read(m, "smc_iters", c.mi.smc_iterations, "mi");
        read(m, "min_validated", c.mi.min_validated, "mi");
        read(m, "smc_max_tries", c.mi.smc_max_tries, "mi");
        read(m, "dump_imputations", c.dump_imputations, "mi");
        if (m.contains("priors")) {
            check_keys(m.at("priors"), {"shape", "rate"}, "mi.priors");
            read(m.at("priors"), "shape", c.mi.priors.shape, "mi.priors");
            read(m.at("priors"), "rate", c.mi.priors.rate, "mi.priors");
        }
    }
    return c;
}

json to_json(const RunConfig& c, const std::vector<std::string>& methods) {
    json j;
    j["input"] = c.input;
    j["design"] = to_json(c.design);
    j["outcome"] = to_json(c.outcome);
    j["methods"] = methods;
    j["seed"] = c.seed;
    j["level"] = c.level;
    if (!c.truth.empty()) j["truth"] = c.truth;
    auto uses = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    if (uses("rc"))
        j["rc"] = {{"se_method", c.rc.se_method == SeMethod::Delta ? "delta" : "bootstrap"},
                   {"bootstrap_reps", c.rc.bootstrap_reps},
                   {"percentile", c.rc.bootstrap_percentile},
                   {"stratify", c.rc.stratify_on_r},
                   {"cross_regression", c.rc.calibration.cross_regression}};
    if (uses("ml")) {
        json fixed = json::object();
        for (const auto& [k, v] : c.ml.fixed) fixed[k] = v;
        j["ml"] = {{"quad_points", c.ml.quad_points},
                   {"starts", c.ml.starts},
                   {"profile", c.profile},
                   {"fixed", fixed}};
    }
    if (uses("bayes"))
        j["bayes"] = {{"chains", c.mcmc.chains}, {"iters", c.mcmc.iters},
                      {"burnin", c.mcmc.burnin}, {"thin", c.mcmc.thin},
                      {"priors", to_json(c.priors)}, {"dump_chains", c.dump_chains}};
    if (uses("mi"))
        j["mi"] = {{"variant", to_string(c.mi.variant)},
                   {"m", c.mi.m},
                   {"smc_iters", c.mi.smc_iterations},
                   {"min_validated", c.mi.min_validated},
                   {"smc_max_tries", c.mi.smc_max_tries},
                   {"priors", {{"shape", c.mi.priors.shape}, {"rate", c.mi.priors.rate}}},
                   {"dump_imputations", c.dump_imputations}};
    return j;
}

json load_json_file(const std::string& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw ConfigError(what + ": cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(what + ": invalid JSON in '" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + p.string() + "'");
    out << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json fit_json(const FitResult& f) {
    json j;
    j["names"] = f.names;
    j["estimate"] = vec_json(f.coef);
    j["se"] = vec_json(f.se());
    j["lower"] = vec_json(f.lower);
    j["upper"] = vec_json(f.upper);
    j["level"] = f.level;
    j["loglik"] = number(f.loglik);
    j["converged"] = f.converged;
    if (f.shape) j["shape"] = number(*f.shape);
    if (f.sigma2 > 0.0) j["sigma2"] = number(f.sigma2);
    j["warnings"] = f.warnings;
    return j;
}

struct MethodRun {
    std::string method;
    std::string label;
    bool ok = false;
    FitResult fit;
    json meta = json::object();
    std::string error_type;
    std::string error;
    int code = ExitCode::Ok;
    std::string note;  // missing-data handling footnote
    std::vector<std::pair<std::string, std::string>> files;
};

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
    if (dynamic_cast<const DataError*>(&e)) return "DataError";
    if (dynamic_cast<const SingularDesignError*>(&e)) return "SingularDesignError";
    if (dynamic_cast<const SeparationError*>(&e)) return "SeparationError";
    if (dynamic_cast<const ConvergenceError*>(&e)) return "ConvergenceError";
    if (dynamic_cast<const NoEventsError*>(&e)) return "NoEventsError";
    if (dynamic_cast<const UnsupportedConfiguration*>(&e)) return "UnsupportedConfiguration";
    if (dynamic_cast<const IdentifiabilityError*>(&e)) return "IdentifiabilityError";
    if (dynamic_cast<const InsufficientDataError*>(&e)) return "InsufficientDataError";
    if (dynamic_cast<const BootstrapFailure*>(&e)) return "BootstrapFailure";
    if (dynamic_cast<const ImputationError*>(&e)) return "ImputationError";
    if (dynamic_cast<const SamplerError*>(&e)) return "SamplerError";
    return "Error";
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e) ||
        dynamic_cast<const UnsupportedConfiguration*>(&e))
        return ExitCode::ConfigFailure;
    return ExitCode::MethodFailure;
}

std::string chain_csv(const PosteriorChain& c) {
    std::ostringstream os;
    for (std::size_t k = 0; k < c.names.size(); ++k) os << (k ? "," : "") << c.names[k];
    os << "\n";
    const Eigen::MatrixXd d = c.kept();
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
        for (Eigen::Index k = 0; k < d.cols(); ++k) os << (k ? "," : "") << format_double(d(i, k));
        os << "\n";
    }
    return os.str();
}

std::string csv_string(const Dataset& ds) {
    std::ostringstream os;
    write_csv(os, ds);
    return os.str();
}

std::size_t dropped_rows(const Dataset& ds, const RunConfig& c, const FrameOptions& fo) {
    return build_frame(ds, c.design, c.outcome, fo).dropped;
}

MethodRun run_method(const std::string& method, const Dataset& ds, const RunConfig& c) {
    MethodRun run;
    run.method = method;
    run.label = method;
    const RngStream rng = RngStream(c.seed, 0).split(method_stream(method));
    if (method == "naive") {
        run.fit = fit_naive(ds, c.design, c.outcome);
        run.fit.set_wald_intervals(c.level);
        run.meta["interval"] = "wald";
    } else if (method == "rc") {
        RcOptions o = c.rc;
        o.level = c.level;
        o.threads = c.threads;
        RcResult r = regression_calibration(ds, c.design, c.outcome, o, rng);
        run.fit = r.fit;
        run.fit.set_wald_intervals(c.level);
        const CalibrationModel& cm = r.calibration;
        run.meta["se_method"] = r.se_method == SeMethod::Delta ? "delta" : "bootstrap";
        run.meta["interval"] = r.se_method == SeMethod::Bootstrap && o.bootstrap_percentile
                                   ? "bootstrap percentile"
                                   : "wald";
        run.meta["bootstrap_failures"] = r.bootstrap_failures;
        run.meta["calibration"] = {{"source", to_string(cm.source)},
                                   {"names", cm.names},
                                   {"gamma", vec_json(cm.gamma)},
                                   {"gamma_se", vec_json(cm.gamma_cov.diagonal().cwiseMax(0.0).cwiseSqrt())},
                                   {"residual_variance", number(cm.residual_variance)},
                                   {"fit_rows", cm.fit_rows},
                                   {"sigma2_u", number(cm.sigma2_u)},
                                   {"tau2", number(cm.tau2)},
                                   {"warnings", cm.warnings}};
    } else if (method == "ml") {
        MlOptions o = c.ml;
        o.level = c.level;
        o.threads = c.threads == 0 ? 1 : c.threads;
        MlResult r = fit_ml(ds, c.design, c.outcome, o, rng);
        run.fit = r.fit;
        run.meta["interval"] = "wald";
        run.meta["quad_points"] = o.quad_points;
        run.meta["starts"] = o.starts;
        json sl = json::array();
        for (double v : r.start_logliks) sl.push_back(number(v));
        run.meta["start_logliks"] = sl;
        run.meta["boundary_sigma2_u"] = r.boundary_sigma2_u;
        json params = json::object();
        for (std::size_t k = 0; k < r.layout.names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            params[r.layout.names[k]] = {{"value", number(r.params[i])},
                                         {"se", number(std::sqrt(std::max(0.0, r.param_cov(i, i))))},
                                         {"free", static_cast<bool>(r.free[k])}};
        }
        run.meta["params"] = params;
        json prof = json::object();
        for (const auto& p : c.profile) {
            const ProfileInterval pi = profile_ml(r, p, c.level);
            prof[p] = {{"lower", number(pi.lower)}, {"upper", number(pi.upper)},
                       {"lower_open", pi.lower_open}, {"upper_open", pi.upper_open}};
            const auto k = run.fit.index_of(p);
            if (k >= 0) {
                run.fit.lower[k] = pi.lower;
                run.fit.upper[k] = pi.upper;
            }
        }
        if (!c.profile.empty()) {
            run.meta["profile"] = prof;
            run.meta["interval"] = "profile likelihood for profiled parameters, wald otherwise";
        }
    } else if (method == "bayes") {
        McmcOptions o = c.mcmc;
        o.threads = c.threads;
        const auto chains = run_mcmc(ds, c.design, c.outcome, c.priors, o, rng);
        const PosteriorSummary s = summarize_posterior(chains, c.level);
        run.fit = s.fit;
        run.meta["interval"] = "equal-tailed credible";
        run.meta["converged"] = s.converged;
        json params = json::array();
        for (const auto& p : s.params)
            params.push_back({{"name", p.name}, {"mean", number(p.mean)}, {"sd", number(p.sd)},
                              {"lower", number(p.lower)}, {"upper", number(p.upper)},
                              {"rhat", number(p.rhat)}, {"ess", number(p.ess)}});
        run.meta["params"] = params;
        json acc = json::array();
        for (const auto& ch : chains) {
            json a = json::object();
            for (const auto& [k, v] : ch.acceptance) a[k] = number(v);
            acc.push_back(a);
        }
        run.meta["acceptance"] = acc;
        for (const auto& w : s.warnings)
            if (std::find(run.fit.warnings.begin(), run.fit.warnings.end(), w) == run.fit.warnings.end())
                run.fit.warnings.push_back(w);
        if (c.dump_chains) {
            for (std::size_t k = 0; k < chains.size(); ++k)
                run.files.emplace_back("bayes/chain_" + std::to_string(k + 1) + ".csv", chain_csv(chains[k]));
            json diag = {{"params", params}, {"acceptance", acc}, {"converged", s.converged},
                         {"warnings", s.warnings}};
            run.files.emplace_back("bayes/diagnostics.json", diag.dump(2) + "\n");
        }
        FrameOptions strict;
        const std::size_t handled = dropped_rows(ds, c, strict);
        if (handled > 0)
            run.note = std::to_string(handled) +
                       " rows with missing measures or binary covariates kept; missing values sampled";
    } else if (method == "mi") {
        MiOptions o = c.mi;
        o.level = c.level;
        o.threads = c.threads;
        MiResult r = multiple_imputation(ds, c.design, c.outcome, o, rng);
        run.fit = r.fit;
        run.label = "mi(" + to_string(r.variant) + ")";
        run.meta["interval"] = "rubin t";
        run.meta["variant"] = to_string(r.variant);
        run.meta["m"] = r.pooled.m;
        run.meta["within"] = vec_json(r.pooled.within);
        run.meta["between"] = vec_json(r.pooled.between);
        run.meta["df"] = vec_json(r.pooled.df);
        if (r.variant == MiVariant::SmcFcs) {
            run.meta["acceptance_bound"] = "supremum of the outcome density over X";
            run.meta["smc_iters"] = o.smc_iterations;
            run.meta["mean_tries"] = number(r.smc.mean_tries);
            std::size_t flagged = 0;
            for (bool b : r.smc.nonstationary) flagged += b;
            run.meta["nonstationary_imputations"] = flagged;
            FrameOptions strict;
            const std::size_t handled = dropped_rows(ds, c, strict);
            if (handled > 0)
                run.note = std::to_string(handled) +
                           " rows with missing binary covariates kept; missing values imputed";
        }
        if (c.dump_imputations)
            for (std::size_t k = 0; k < r.imputations.completed.size(); ++k)
                run.files.emplace_back("mi/imputation_" + std::to_string(k + 1) + ".csv",
                                       csv_string(r.imputations.dataset(ds, k)));
    }
    if (method != "bayes" && run.note.empty()) {
        const std::size_t d = dropped_rows(ds, c, FrameOptions{});
        if (d > 0) run.note = std::to_string(d) + " incomplete rows dropped (complete-case)";
    }
    run.ok = true;
    return run;
}

json run_json(const MethodRun& r, const std::map<std::string, double>* truth) {
    json j;
    j["method"] = r.label;
    j["status"] = r.ok ? "ok" : "error";
    if (!r.ok) {
        j["error"] = {{"type", r.error_type}, {"message", r.error}};
        return j;
    }
    j["fit"] = fit_json(r.fit);
    j["metadata"] = r.meta;
    if (!r.note.empty()) j["missing_data"] = r.note;
    if (truth) {
        json b = json::object();
        for (std::size_t k = 0; k < r.fit.names.size(); ++k) {
            const auto it = truth->find(r.fit.names[k]);
            if (it != truth->end()) b[r.fit.names[k]] = number(r.fit.coef[static_cast<Eigen::Index>(k)] - it->second);
        }
        j["bias"] = b;
    }
    return j;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); }

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s[0] == '-') s.erase(0, 1);
    return s;
}

// Rows are coefficients, one column per method, in the order given.
std::string render_table(const std::vector<MethodRun>& runs, const std::map<std::string, double>* truth,
                         double level) {
    std::vector<std::string> rows;
    for (const auto& r : runs)
        if (r.ok)
            for (const auto& n : r.fit.names)
                if (std::find(rows.begin(), rows.end(), n) == rows.end()) rows.push_back(n);

    std::vector<std::string> header{"coefficient"};
    std::vector<std::string> notes;
    if (truth) header.push_back("truth");
    for (const auto& r : runs) {
        std::string h = r.label;
        if (!r.ok || !r.note.empty()) {
            const char mark = static_cast<char>('a' + notes.size());
            h += std::string("[") + mark + "]";
            notes.push_back(std::string(1, mark) + ": " + r.label + ": " +
                            (r.ok ? r.note : r.error_type + ": " + r.error));
        }
        header.push_back(h);
    }
    std::vector<std::vector<std::string>> cells{header};
    for (const auto& name : rows) {
        std::vector<std::string> line{name};
        if (truth) {
            const auto it = truth->find(name);
            line.push_back(it == truth->end() ? "-" : fixed(it->second, 3));
        }
        for (const auto& r : runs) {
            if (!r.ok) {
                line.push_back("error");
                continue;
            }
            const auto k = r.fit.index_of(name);
            line.push_back(k < 0 ? "-" : format_cell(r.fit.coef[k], r.fit.lower[k], r.fit.upper[k]));
        }
        cells.push_back(line);
    }
    if (truth) {
        for (const auto& name : rows) {
            const auto it = truth->find(name);
            if (it == truth->end()) continue;
            std::vector<std::string> line{"bias " + name, ""};
            for (const auto& r : runs) {
                const auto k = r.ok ? r.fit.index_of(name) : -1;
                line.push_back(k < 0 ? "-" : fixed(r.fit.coef[k] - it->second, 3));
            }
            cells.push_back(line);
        }
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t k = 0; k < line.size(); ++k) width[k] = std::max(width[k], line[k].size());
    std::ostringstream os;
    os << "Estimates with " << fixed(100.0 * level, 0) << "% intervals\n";
    for (const auto& line : cells) {
        std::string s;
        for (std::size_t k = 0; k < line.size(); ++k) s += pad(line[k], width[k] + (k + 1 < line.size() ? 2 : 0));
        while (!s.empty() && s.back() == ' ') s.pop_back();
        os << s << "\n";
    }
    for (const auto& n : notes) os << n << "\n";
    return os.str();
}

std::map<std::string, double> load_truth(const std::string& path) {
    const json j = load_json_file(path, "truth");
    if (!j.contains("params") || !j.at("params").is_object())
        throw ConfigError("truth: '" + path + "' has no params object");
    std::map<std::string, double> t;
    for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
        if (!it.value().is_number()) throw ConfigError("truth.params." + it.key() + ": expected a number");
        t[it.key()] = it.value().get<double>();
    }
    return t;
}

std::size_t substudy_rows(const Dataset& ds) {
    std::size_t k = 0;
    for (auto v : ds.r()) k += v;
    return k;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
    std::optional<std::string> input;
    std::optional<unsigned> threads;
};

fs::path out_dir(const Globals& g, const json& cfg) {
    if (!g.out.empty()) return g.out;
    if (const char* e = std::getenv(kOutEnv); e && *e) return e;
    if (cfg.contains("out") && cfg.at("out").is_string()) return cfg.at("out").get<std::string>();
    return ".";
}

json config_json(const Globals& g) {
    if (g.config.empty()) return json::object();
    return load_json_file(g.config, "config");
}

struct MethodFlags {
    std::optional<std::string> method;
    std::string methods;
    std::optional<std::string> mi_variant;
    std::optional<int> m, smc_iters, chains, iters, burnin, quad_points, starts, bootstrap_reps;
    std::vector<std::string> profile;
    std::string prior_file;
    std::optional<std::string> se_method;
    std::optional<std::string> truth;
    std::optional<double> level;
    bool dump_imputations = false;
    bool no_chains = false;
};

void add_method_flags(CLI::App* app, MethodFlags& f, bool compare) {
    if (compare)
        app->add_option("--methods", f.methods, "Comma-separated methods (naive,rc,ml,bayes,mi)");
    else
        app->add_option("--method", f.method, "naive | rc | ml | bayes | mi");
    app->add_option("--level", f.level, "Interval level");
    app->add_option("--se-method", f.se_method, "rc: delta | bootstrap");
    app->add_option("--bootstrap-reps", f.bootstrap_reps, "rc: bootstrap replicates");
    app->add_option("--quad-points", f.quad_points, "ml: Gauss-Hermite points");
    app->add_option("--starts", f.starts, "ml: optimizer starts");
    app->add_option("--profile", f.profile, "ml: profile-likelihood interval for a parameter");
    app->add_option("--chains", f.chains, "bayes: chains");
    app->add_option("--iters", f.iters, "bayes: iterations per chain, burn-in included");
    app->add_option("--burnin", f.burnin, "bayes: burn-in iterations");
    app->add_option("--prior-file", f.prior_file, "bayes: JSON prior overrides");
    app->add_flag("--no-chain-dump", f.no_chains, "bayes: skip per-chain CSVs");
    app->add_option("--mi-variant", f.mi_variant, "mi: normal | smcfcs");
    app->add_option("--m", f.m, "mi: number of imputations");
    app->add_option("--smc-iters", f.smc_iters, "mi: SMC-FCS cycles per imputation");
    app->add_flag("--dump-imputations", f.dump_imputations, "mi: write completed datasets");
    app->add_option("--truth", f.truth, "Truth JSON written by simulate");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

RunConfig resolve(const Globals& g, const MethodFlags& f, const json& cj, bool compare,
                  std::vector<std::string>& methods) {
    RunConfig c = run_config_from_json(cj);
    if (g.input) c.input = *g.input;
    if (g.seed) c.seed = *g.seed;
    if (g.threads) c.threads = *g.threads;
    if (f.method) c.method = *f.method;
    if (!f.methods.empty()) c.methods = split_list(f.methods);
    if (f.level) c.level = *f.level;
    if (f.truth) c.truth = *f.truth;
    if (!(c.level > 0.0 && c.level < 1.0)) throw ConfigError("level: must be in (0, 1)");
    if (c.input.empty()) throw ConfigError("input: no dataset given (--input or config.input)");

    methods = compare ? c.methods : std::vector<std::string>{c.method};
    for (const auto& m : methods) method_stream(m);
    if (compare && methods.size() < 2) throw ConfigError("methods: compare needs at least 2 methods");

    auto uses = [&](const char* m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    auto only = [&](bool given, const char* flag, const char* m) {
        if (given && !uses(m))
            throw ConfigError(std::string(flag) + ": only valid with method " + m);
    };
    only(f.se_method.has_value(), "--se-method", "rc");
    only(f.bootstrap_reps.has_value(), "--bootstrap-reps", "rc");
    only(f.quad_points.has_value(), "--quad-points", "ml");
    only(f.starts.has_value(), "--starts", "ml");
    only(!f.profile.empty(), "--profile", "ml");
    only(f.chains.has_value(), "--chains", "bayes");
    only(f.iters.has_value(), "--iters", "bayes");
    only(f.burnin.has_value(), "--burnin", "bayes");
    only(!f.prior_file.empty(), "--prior-file", "bayes");
    only(f.mi_variant.has_value(), "--mi-variant", "mi");
    only(f.m.has_value(), "--m", "mi");
    only(f.smc_iters.has_value(), "--smc-iters", "mi");
    only(f.dump_imputations, "--dump-imputations", "mi");

    if (f.se_method) c.rc.se_method = parse_se(*f.se_method);
    if (f.bootstrap_reps) c.rc.bootstrap_reps = *f.bootstrap_reps;
    if (f.quad_points) c.ml.quad_points = *f.quad_points;
    if (f.starts) c.ml.starts = *f.starts;
    if (!f.profile.empty()) c.profile = f.profile;
    if (f.chains) c.mcmc.chains = *f.chains;
    if (f.iters) c.mcmc.iters = *f.iters;
    if (f.burnin) c.mcmc.burnin = *f.burnin;
    if (f.no_chains) c.dump_chains = false;
    if (!f.prior_file.empty()) c.priors = priors_from_json(load_json_file(f.prior_file, "prior file"), "priors");
    if (f.mi_variant) c.mi.variant = mi_variant_from_string(*f.mi_variant);
    if (f.m) c.mi.m = *f.m;
    if (f.smc_iters) c.mi.smc_iterations = *f.smc_iters;
    if (f.dump_imputations) c.dump_imputations = true;

    if (uses("rc") && c.rc.bootstrap_reps < 2) throw ConfigError("rc.bootstrap_reps: must be >= 2");
    if (uses("ml")) {
        if (c.ml.quad_points < 2) throw ConfigError("ml.quad_points: must be >= 2");
        if (c.ml.starts < 1) throw ConfigError("ml.starts: must be >= 1");
    }
    if (uses("bayes")) {
        c.priors.check();
        if (c.mcmc.chains < 1) throw ConfigError("bayes.chains: must be >= 1");
        if (c.mcmc.iters < 1) throw ConfigError("bayes.iters: must be >= 1");
        if (c.mcmc.burnin < 0 || c.mcmc.burnin >= c.mcmc.iters)
            throw ConfigError("bayes.burnin: must be in [0, iters)");
        if (c.mcmc.thin < 1) throw ConfigError("bayes.thin: must be >= 1");
    }
    if (uses("mi")) {
        if (c.mi.m < 2) throw ConfigError("mi.m: must be >= 2");
        if (c.mi.smc_iterations < 1) throw ConfigError("mi.smc_iters: must be >= 1");
    }
    return c;
}

Dataset load_dataset(const RunConfig& c) {
    Dataset ds = read_csv_file(c.input);
    const auto v = validate_dataset(ds, c.design, c.outcome);
    if (!v.empty()) throw DataError("dataset fails validation: " + describe(v.front()) +
                                    (v.size() > 1 ? " (and " + std::to_string(v.size() - 1) + " more)" : ""));
    return ds;
}

int cmd_correct(const Globals& g, const MethodFlags& f, bool compare, std::ostream& out, std::ostream& err) {
    const json cj = config_json(g);
    std::vector<std::string> methods;
    const RunConfig c = resolve(g, f, cj, compare, methods);
    const fs::path dir = out_dir(g, cj);
    const Dataset ds = load_dataset(c);
    std::optional<std::map<std::string, double>> truth;
    if (!c.truth.empty()) truth = load_truth(c.truth);

    std::vector<std::string> todo = methods;
    if (!compare && c.method != "naive") todo.insert(todo.begin(), "naive");
    std::vector<MethodRun> runs(todo.size());
    // Methods are independent and draw from their own streams.
    parallel_for(
        todo.size(),
        [&](std::size_t k) {
            try {
                runs[k] = run_method(todo[k], ds, c);
            } catch (const Error& e) {
                runs[k].method = runs[k].label = todo[k];
                runs[k].error_type = error_type(e);
                runs[k].error = e.what();
                runs[k].code = exit_code_for(e);
            }
        },
        compare ? c.threads : 1);

    int code = ExitCode::Ok;
    for (const auto& r : runs)
        if (!r.ok) {
            err << "error: " << r.label << ": " << r.error_type << ": " << r.error << "\n";
            code = std::max(code, compare ? static_cast<int>(ExitCode::MethodFailure) : r.code);
        }
    if (!compare && !runs.back().ok) return runs.back().code;

    json report;
    report["command"] = compare ? "compare" : "correct";
    report["version"] = kVersion;
    report["seed"] = c.seed;
    report["config"] = to_json(c, methods);
    report["data"] = {{"rows", ds.n()}, {"substudy_rows", substudy_rows(ds)}};
    const auto* tp = truth ? &*truth : nullptr;
    if (tp) {
        json tj = json::object();
        for (const auto& [k, v] : *tp) tj[k] = v;
        report["truth"] = tj;
    }
    if (compare) {
        report["results"] = json::array();
        for (const auto& r : runs) report["results"].push_back(run_json(r, tp));
    } else {
        report["naive"] = run_json(runs.front(), tp);
        report["result"] = run_json(runs.back(), tp);
    }
    const std::string table = render_table(runs, tp, c.level);
    report["table"] = table;
    write_json(dir / "report.json", report);
    write_text(dir / "report.txt", table);
    for (const auto& r : runs)
        for (const auto& [name, text] : r.files) write_text(dir / name, text);

    out << table;
    for (const auto& r : runs)
        for (const auto& w : r.fit.warnings) out << "warning: " << r.label << ": " << w << "\n";
    return code;
}

int cmd_validate(const Globals& g, bool strict, std::ostream& out) {
    const json cj = config_json(g);
    RunConfig c = run_config_from_json(cj);
    if (g.input) c.input = *g.input;
    if (c.input.empty()) throw ConfigError("input: no dataset given (--input or config.input)");
    const Dataset ds = read_csv_file(c.input);
    ValidationOptions vo;
    vo.strict = strict;
    const auto v = validate_dataset(ds, c.design, c.outcome, vo);
    json report;
    report["command"] = "validate";
    report["version"] = kVersion;
    report["config"] = {{"input", c.input}, {"design", to_json(c.design)},
                        {"outcome", to_json(c.outcome)}, {"strict", strict}};
    report["data"] = {{"rows", ds.n()}, {"substudy_rows", substudy_rows(ds)}};
    report["valid"] = v.empty();
    json vs = json::array();
    for (const auto& x : v) {
        json e;
        e["row"] = x.row ? json(*x.row) : json(nullptr);
        e["column"] = x.column;
        e["rule"] = x.rule;
        vs.push_back(e);
    }
    report["violations"] = vs;
    write_json(out_dir(g, cj) / "validation.json", report);
    out << ds.n() << " rows, " << substudy_rows(ds) << " in the sub-study, " << v.size() << " violations\n";
    for (std::size_t k = 0; k < std::min<std::size_t>(v.size(), 20); ++k) out << "  " << describe(v[k]) << "\n";
    if (v.size() > 20) out << "  ...\n";
    return v.empty() ? ExitCode::Ok : ExitCode::ConfigFailure;
}

struct SimFlags {
    std::optional<std::size_t> n;
    std::optional<std::string> design, outcome;
    std::optional<double> sigma_u, beta_x, censoring_rate, p_substudy;
};

int cmd_simulate(const Globals& g, const SimFlags& f, std::ostream& out) {
    const json cj = config_json(g);
    SimConfig s;
    if (cj.contains("simulate")) s = sim_from_json(cj.at("simulate"));
    if (cj.contains("seed")) read(cj, "seed", s.seed, "config");
    if (g.seed) s.seed = *g.seed;
    if (f.n) s.n = *f.n;
    if (f.design) s.design = parse_design(*f.design);
    if (f.outcome) s.outcome = parse_outcome(*f.outcome);
    if (f.sigma_u) {
        if (!(*f.sigma_u >= 0.0)) throw ConfigError("sigma_u: must be >= 0");
        s.error.sigma2_u = *f.sigma_u * *f.sigma_u;
    }
    if (f.beta_x) s.beta_x = *f.beta_x;
    if (f.censoring_rate) s.censoring_rate = *f.censoring_rate;
    if (f.p_substudy) s.selection = Mcar{*f.p_substudy};
    s.check();
    const SimResult r = simulate(s);

    const fs::path dir = out_dir(g, cj);
    write_text(dir / "data.csv", csv_string(r.data));
    json t;
    t["command"] = "simulate";
    t["version"] = kVersion;
    t["seed"] = s.seed;
    t["config"] = to_json(s);
    t["design"] = to_json(r.design);
    t["outcome"] = to_json(r.outcome);
    json params = json::object();
    for (const auto& [k, v] : r.truth.params) params[k] = v;
    t["params"] = params;
    t["censoring_rate"] = r.truth.censoring_rate;
    t["censoring_hazard"] = r.truth.censoring_hazard;
    t["x"] = r.truth.x;
    write_json(dir / "truth.json", t);
    out << "wrote " << r.data.n() << " rows (" << substudy_rows(r.data) << " in the sub-study) to "
        << (dir / "data.csv").string() << "\n";
    return ExitCode::Ok;
}

}  // namespace

std::string format_cell(double estimate, double lower, double upper, int digits) {
    return fixed(estimate, digits) + " (" + fixed(lower, digits) + ", " + fixed(upper, digits) + ")";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Regression estimates corrected for covariate measurement error", "mecor"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--out", g.out, std::string("Output directory (default: $") + kOutEnv + ", config.out, .)");
    app.add_option("--input", g.input, "Dataset CSV");
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");

    bool strict = false;
    auto* validate = app.add_subcommand("validate", "Check a dataset against its study design");
    validate->add_flag("--strict", strict, "Report cells missing where the design expects them");

    SimFlags sf;
    auto* sim = app.add_subcommand("simulate", "Generate a dataset with known truth");
    sim->add_option("--n", sf.n, "Rows");
    sim->add_option("--design", sf.design, "validation | replication | calibration");
    sim->add_option("--outcome", sf.outcome, "linear | logistic | weibull");
    sim->add_option("--sigma-u", sf.sigma_u, "Error standard deviation of the primary measure");
    sim->add_option("--beta-x", sf.beta_x, "Exposure effect");
    sim->add_option("--censoring-rate", sf.censoring_rate, "Weibull: target censored fraction");
    sim->add_option("--p-substudy", sf.p_substudy, "Sub-study inclusion probability (MCAR)");

    MethodFlags cf, mf;
    auto* correct = app.add_subcommand("correct", "Run one correction method next to the naive fit");
    add_method_flags(correct, cf, false);
    auto* compare = app.add_subcommand("compare", "Run several methods side by side");
    add_method_flags(compare, mf, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ExitCode::Ok : ExitCode::ConfigFailure;
    }

    try {
        if (validate->parsed()) return cmd_validate(g, strict, out);
        if (sim->parsed()) return cmd_simulate(g, sf, out);
        if (correct->parsed()) return cmd_correct(g, cf, false, out, err);
        return cmd_correct(g, mf, true, out, err);
    } catch (const Error& e) {
        err << "error: " << error_type(e) << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return ExitCode::ConfigFailure;
    }
}

}  // namespace mecor::cli
