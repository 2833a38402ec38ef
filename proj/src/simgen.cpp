#include "mecor/simgen.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "mecor/error.hpp"
#include "mecor/rng.hpp"
#include "mecor/stats.hpp"

namespace mecor {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double covariate_sd(const CovariateSpec& c) {
    return c.kind == CovariateSpec::Kind::Normal ? std::sqrt(c.variance)
                                                 : std::sqrt(c.p * (1.0 - c.p));
}

double covariate_mean(const CovariateSpec& c) {
    return c.kind == CovariateSpec::Kind::Normal ? c.mean : c.p;
}

double draw_measure(RngStream& g, const ErrorModelSpec& e, double x) {
    return e.theta0 + e.theta1 * x + std::sqrt(e.sigma2_u) * g.normal();
}

double selection_logit(const Mar& m, double y, const std::vector<double>& z, double xstar) {
    double eta = m.intercept + m.coef_y * y + m.coef_xstar * xstar;
    for (std::size_t j = 0; j < m.coef_z.size(); ++j) eta += m.coef_z[j] * z[j];
    return eta;
}

}  // namespace

void SimConfig::check() const {
    if (n < 2) throw ConfigError("n must be at least 2");
    if (!(sigma2_x > 0.0) || !std::isfinite(sigma2_x)) throw ConfigError("sigma2_x must be > 0");
    if (!(sigma2_y > 0.0)) throw ConfigError("sigma2_y must be > 0");
    if (!(shape > 0.0)) throw ConfigError("shape must be > 0");
    if (!(censoring_rate >= 0.0 && censoring_rate < 1.0))
        throw ConfigError("censoring_rate must lie in [0, 1)");
    if (!(primary_missing_prob >= 0.0 && primary_missing_prob < 1.0))
        throw ConfigError("primary_missing_prob must lie in [0, 1)");
    if (beta_z.size() != covariates.size())
        throw ConfigError("beta_z must have one entry per covariate");
    error.check();
    error2.check();
    if (second_measures != 1 && second_measures != 2)
        throw ConfigError("second_measures must be 1 or 2");
    check_selection(selection);
    auto check_mar = [&](const Mar& m) {
        if (!m.coef_z.empty() && m.coef_z.size() != covariates.size())
            throw ConfigError("selection.coef_z must have one entry per covariate");
    };
    if (const auto* m = std::get_if<Mar>(&selection)) check_mar(*m);
    if (const auto* m = std::get_if<Mnar>(&selection)) check_mar(m->observed);
    double r2 = 0.0;
    std::set<std::string> names;
    for (const auto& c : covariates) {
        if (c.name.empty() || !names.insert(c.name).second)
            throw ConfigError("covariate names must be non-empty and unique");
        if (c.kind == CovariateSpec::Kind::Normal && !(c.variance > 0.0))
            throw ConfigError("covariate '" + c.name + "': variance must be > 0");
        if (c.kind == CovariateSpec::Kind::Binary && !(c.p > 0.0 && c.p < 1.0))
            throw ConfigError("covariate '" + c.name + "': p must lie in (0, 1)");
        if (!(std::abs(c.corr_x) < 1.0))
            throw ConfigError("covariate '" + c.name + "': |corr_x| must be < 1");
        r2 += c.corr_x * c.corr_x;
        if (c.missing && !c.missing->depends_on.empty()) {
            bool found = false;
            for (const auto& o : covariates)
                if (o.name == c.missing->depends_on && !o.missing) found = true;
            if (!found)
                throw ConfigError("covariate '" + c.name +
                                  "': missingness must depend on a complete covariate");
        }
    }
    if (!(r2 < 1.0)) throw ConfigError("sum of squared covariate correlations with X must be < 1");
}

double solve_censoring_rate(const std::vector<double>& times, double target) {
    if (target <= 0.0) return 0.0;
    auto frac = [&](double lambda) {
        double s = 0.0;
        for (double t : times) s += -std::expm1(-lambda * t);
        return s / static_cast<double>(times.size());
    };
    double lo = 0.0, hi = 1.0;
    while (frac(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (frac(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

SimResult simulate(const SimConfig& cfg) {
    cfg.check();
    const std::size_t n = cfg.n;
    const std::size_t q = cfg.covariates.size();
    RngStream root(cfg.seed, cfg.stream);
    RngStream gz = root.split(1), gx = root.split(2), gy = root.split(3), gu = root.split(4),
              gr = root.split(5), gm = root.split(6);

    // Covariates, independent of one another.
    std::vector<std::vector<double>> z(q, std::vector<double>(n));
    for (std::size_t j = 0; j < q; ++j) {
        const auto& c = cfg.covariates[j];
        for (std::size_t i = 0; i < n; ++i)
            z[j][i] = c.kind == CovariateSpec::Kind::Normal
                          ? c.mean + std::sqrt(c.variance) * gz.normal()
                          : static_cast<double>(gz.bernoulli(c.p));
    }

    // X | Z linear Gaussian with the requested marginal variance and correlations.
    double r2 = 0.0;
    for (const auto& c : cfg.covariates) r2 += c.corr_x * c.corr_x;
    const double sx = std::sqrt(cfg.sigma2_x);
    const double resid_sd = sx * std::sqrt(1.0 - r2);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double m = cfg.mu_x;
        for (std::size_t j = 0; j < q; ++j) {
            const auto& c = cfg.covariates[j];
            m += c.corr_x * sx / covariate_sd(c) * (z[j][i] - covariate_mean(c));
        }
        x[i] = m + resid_sd * gx.normal();
    }

    // Outcome.
    std::vector<double> y(n), t(n), d(n);
    std::vector<double> eta(n);
    for (std::size_t i = 0; i < n; ++i) {
        eta[i] = cfg.alpha + cfg.beta_x * x[i];
        for (std::size_t j = 0; j < q; ++j) eta[i] += cfg.beta_z[j] * z[j][i];
    }
    TruthRecord truth;
    switch (cfg.outcome) {
        case OutcomeKind::LinearNormal:
            for (std::size_t i = 0; i < n; ++i) y[i] = eta[i] + std::sqrt(cfg.sigma2_y) * gy.normal();
            truth.params["sigma2_y"] = cfg.sigma2_y;
            break;
        case OutcomeKind::LogisticBinary:
            for (std::size_t i = 0; i < n; ++i) y[i] = gy.bernoulli(stats::expit(eta[i])) ? 1.0 : 0.0;
            break;
        case OutcomeKind::WeibullSurvival: {
            std::vector<double> tt(n);
            for (std::size_t i = 0; i < n; ++i)
                tt[i] = std::pow(gy.exponential(1.0) / std::exp(eta[i]), 1.0 / cfg.shape);
            const double lambda = solve_censoring_rate(tt, cfg.censoring_rate);
            double censored = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double c = lambda > 0.0 ? gy.exponential(lambda)
                                              : std::numeric_limits<double>::infinity();
                t[i] = std::min(tt[i], c);
                d[i] = tt[i] <= c ? 1.0 : 0.0;
                censored += 1.0 - d[i];
            }
            truth.censoring_hazard = lambda;
            truth.censoring_rate = censored / static_cast<double>(n);
            truth.params["shape"] = cfg.shape;
            break;
        }
    }

    // Error-prone measures.
    std::vector<double> m1(n), m2(n, kNaN), m3(n, kNaN);
    for (std::size_t i = 0; i < n; ++i) {
        m1[i] = draw_measure(gu, cfg.error, x[i]);
        switch (cfg.design) {
            case DesignKind::Validation:
                break;
            case DesignKind::Replication:
                m2[i] = draw_measure(gu, cfg.error, x[i]);
                break;
            case DesignKind::Calibration:
                m2[i] = draw_measure(gu, cfg.error2, x[i]);
                if (cfg.second_measures == 2) m3[i] = draw_measure(gu, cfg.error2, x[i]);
                break;
        }
    }

    // Sub-study selection.
    std::vector<std::uint8_t> r(n);
    std::vector<double> zi(q);
    for (std::size_t i = 0; i < n; ++i) {
        const double yy = cfg.outcome == OutcomeKind::WeibullSurvival ? d[i] : y[i];
        for (std::size_t j = 0; j < q; ++j) zi[j] = z[j][i];
        double p = 0.0;
        if (const auto* mc = std::get_if<Mcar>(&cfg.selection))
            p = mc->p;
        else if (const auto* ma = std::get_if<Mar>(&cfg.selection))
            p = stats::expit(selection_logit(*ma, yy, zi, m1[i]));
        else if (const auto* mn = std::get_if<Mnar>(&cfg.selection))
            p = stats::expit(selection_logit(mn->observed, yy, zi, m1[i]) + mn->coef_x * x[i]);
        r[i] = gr.bernoulli(p) ? 1 : 0;
    }

    // Covariate and primary-measure missingness.
    std::vector<std::vector<double>> zobs = z;
    for (std::size_t j = 0; j < q; ++j) {
        const auto& c = cfg.covariates[j];
        if (!c.missing) continue;
        const std::vector<double>* dep = nullptr;
        for (std::size_t k = 0; k < q; ++k)
            if (cfg.covariates[k].name == c.missing->depends_on) dep = &z[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double eta_m = c.missing->intercept + (dep ? c.missing->coef * (*dep)[i] : 0.0);
            if (gm.bernoulli(stats::expit(eta_m))) zobs[j][i] = kNaN;
        }
    }
    std::vector<double> m1obs = m1;
    if (cfg.primary_missing_prob > 0.0)
        for (std::size_t i = 0; i < n; ++i)
            if (gm.bernoulli(cfg.primary_missing_prob)) m1obs[i] = kNaN;

    // Assemble.
    SimResult out;
    Dataset ds(r);
    OutcomeSpec os;
    std::vector<std::string> znames;
    for (const auto& c : cfg.covariates) znames.push_back(c.name);
    switch (cfg.outcome) {
        case OutcomeKind::LinearNormal:
            os = OutcomeSpec::linear("y", znames);
            ds.add_column(make_column("y", y));
            break;
        case OutcomeKind::LogisticBinary:
            os = OutcomeSpec::logistic("y", znames);
            ds.add_column(make_column("y", y, ColumnType::Binary));
            break;
        case OutcomeKind::WeibullSurvival:
            os = OutcomeSpec::weibull("t", "d", znames);
            ds.add_column(make_column("t", t, ColumnType::Time));
            ds.add_column(make_column("d", d, ColumnType::Binary));
            break;
    }
    for (std::size_t j = 0; j < q; ++j)
        ds.add_column(make_column_nan_missing(cfg.covariates[j].name, zobs[j],
                                              cfg.covariates[j].kind == CovariateSpec::Kind::Binary
                                                  ? ColumnType::Binary
                                                  : ColumnType::Continuous));
    auto substudy = [&](const std::vector<double>& v) {
        std::vector<double> o = v;
        for (std::size_t i = 0; i < n; ++i)
            if (!r[i]) o[i] = kNaN;
        return o;
    };
    switch (cfg.design) {
        case DesignKind::Validation:
            out.design = StudyDesign::validation("x", "xstar");
            ds.add_column(make_column_nan_missing("x", substudy(x)));
            ds.add_column(make_column_nan_missing("xstar", m1obs));
            break;
        case DesignKind::Replication:
            out.design = StudyDesign::replication("xstar1", "xstar2");
            ds.add_column(make_column_nan_missing("xstar1", m1obs));
            ds.add_column(make_column_nan_missing("xstar2", substudy(m2)));
            break;
        case DesignKind::Calibration:
            ds.add_column(make_column_nan_missing("xstar", m1obs));
            if (cfg.second_measures == 1) {
                out.design = StudyDesign::calibration("xstar", "xss");
                ds.add_column(make_column_nan_missing("xss", substudy(m2)));
            } else {
                out.design = StudyDesign::calibration2("xstar", "xss1", "xss2");
                ds.add_column(make_column_nan_missing("xss1", substudy(m2)));
                ds.add_column(make_column_nan_missing("xss2", substudy(m3)));
            }
            break;
    }

    truth.params["(Intercept)"] = cfg.alpha;
    truth.params[os.exposure] = cfg.beta_x;
    for (std::size_t j = 0; j < q; ++j) truth.params[cfg.covariates[j].name] = cfg.beta_z[j];
    truth.params["mu_x"] = cfg.mu_x;
    truth.params["sigma2_x"] = cfg.sigma2_x;
    truth.params["sigma2_u"] = cfg.error.sigma2_u;
    truth.params["theta0"] = cfg.error.theta0;
    truth.params["theta1"] = cfg.error.theta1;
    if (cfg.design == DesignKind::Calibration) truth.params["sigma2_u2"] = cfg.error2.sigma2_u;
    truth.x = std::move(x);

    out.data = std::move(ds);
    out.truth = std::move(truth);
    out.outcome = os;
    return out;
}

// ---------------------------------------------------------------------------

std::vector<TruthCheckRow> truth_check(const std::vector<std::string>& names,
                                       const Eigen::VectorXd& estimate,
                                       const Eigen::VectorXd& lower,
                                       const Eigen::VectorXd& upper, const TruthRecord& truth) {
    std::vector<TruthCheckRow> rows;
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto it = truth.params.find(names[k]);
        if (it == truth.params.end()) continue;
        const auto j = static_cast<Eigen::Index>(k);
        TruthCheckRow row;
        row.name = names[k];
        row.truth = it->second;
        row.estimate = estimate[j];
        row.bias = estimate[j] - it->second;
        row.rel_bias = it->second != 0.0 ? row.bias / std::abs(it->second) : kNaN;
        row.covered = lower.size() > j && upper.size() > j && lower[j] <= it->second &&
                      it->second <= upper[j];
        rows.push_back(row);
    }
    return rows;
}

std::vector<TruthCheckRow> truth_check(const FitResult& fit, const TruthRecord& truth) {
    return truth_check(fit.names, fit.coef, fit.lower, fit.upper, truth);
}

}  // namespace mecor
