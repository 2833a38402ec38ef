#include "mecor/regcal.hpp"

#include <cmath>
#include <limits>

#include "mecor/error.hpp"
#include "mecor/stats.hpp"

namespace mecor {

namespace {

using Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

// (1, measure, z) for row i.
Eigen::VectorXd calib_regressors(const ModelFrame& f, std::size_t i) {
    Eigen::VectorXd w(2 + f.z.cols());
    w[0] = 1.0;
    w[1] = f.m1[idx(i)];
    if (f.z.cols() > 0) w.tail(f.z.cols()) = f.z.row(idx(i)).transpose();
    return w;
}

Eigen::VectorXd z_regressors(const ModelFrame& f, std::size_t i) {
    Eigen::VectorXd v(1 + f.z.cols());
    v[0] = 1.0;
    if (f.z.cols() > 0) v.tail(f.z.cols()) = f.z.row(idx(i)).transpose();
    return v;
}

// Response of the linear calibration regression for row i, if available.
std::optional<double> calib_response(const ModelFrame& f, CalibrationSource s, std::size_t i) {
    if (!f.r[i] || !f.m1_obs[i]) return std::nullopt;
    switch (s) {
        case CalibrationSource::Validation:
            if (f.x_obs[i]) return f.x[idx(i)];
            return std::nullopt;
        case CalibrationSource::ReplicationCrossReg:
            if (f.m2_obs[i]) return f.m2[idx(i)];
            return std::nullopt;
        case CalibrationSource::Calibration: {
            double s2 = 0.0;
            int k = 0;
            if (f.m2_obs[i]) {
                s2 += f.m2[idx(i)];
                ++k;
            }
            if (f.m3_obs[i]) {
                s2 += f.m3[idx(i)];
                ++k;
            }
            if (k == 0) return std::nullopt;
            return s2 / k;
        }
        case CalibrationSource::ReplicationRandomIntercept:
            break;
    }
    return std::nullopt;
}

CalibrationSource source_for(const ModelFrame& f, const CalibrationOptions& opts) {
    switch (f.design) {
        case DesignKind::Validation: return CalibrationSource::Validation;
        case DesignKind::Calibration: return CalibrationSource::Calibration;
        case DesignKind::Replication:
            return opts.cross_regression ? CalibrationSource::ReplicationCrossReg
                                         : CalibrationSource::ReplicationRandomIntercept;
    }
    return CalibrationSource::Validation;
}

std::vector<std::string> calib_names(const ModelFrame& f) {
    std::vector<std::string> names{"(Intercept)", f.measure_name};
    names.insert(names.end(), f.z_names.begin(), f.z_names.end());
    return names;
}

// Random-intercept parameters theta = (delta, sigma2_u, mu..., tau2).
struct RiParams {
    double delta = 0.0;
    double sigma2_u = 0.0;
    Eigen::VectorXd mu;
    double tau2 = 0.0;
};

RiParams unpack_ri(const Eigen::VectorXd& th, Index q) {
    RiParams p;
    p.delta = th[0];
    p.sigma2_u = th[1];
    p.mu = th.segment(2, q + 1);
    p.tau2 = th[3 + q];
    return p;
}

double ri_mean(const RiParams& p, double wbar, int k, const Eigen::VectorXd& v) {
    const double mu = p.mu.dot(v);
    const double denom = p.tau2 + p.sigma2_u / k;
    const double lambda = denom > 0.0 ? p.tau2 / denom : 1.0;
    return mu + lambda * (wbar - mu);
}

bool pair_complete(const ModelFrame& f, std::size_t i) {
    return f.r[i] && f.m1_obs[i] && f.m2_obs[i];
}

}  // namespace

std::string to_string(CalibrationSource s) {
    switch (s) {
        case CalibrationSource::Validation: return "validation";
        case CalibrationSource::ReplicationCrossReg: return "replication-cross-regression";
        case CalibrationSource::ReplicationRandomIntercept: return "replication-random-intercept";
        case CalibrationSource::Calibration: return "calibration";
    }
    return "?";
}

CalibrationModel fit_calibration(const ModelFrame& f, const CalibrationOptions& opts) {
    CalibrationModel cm;
    cm.source = source_for(f, opts);
    cm.names = calib_names(f);
    const Index q = f.z.cols();
    const Index p1 = 2 + q;

    for (std::size_t i = 0; i < f.n(); ++i)
        if (!f.m1_obs[i]) throw DataError("regression calibration needs the error-prone measure "
                                          "on every analysed row");

    if (f.design == DesignKind::Replication) {
        std::vector<double> diffs;
        for (std::size_t i = 0; i < f.n(); ++i)
            if (pair_complete(f, i)) diffs.push_back(f.m1[idx(i)] - f.m2[idx(i)]);
        if (diffs.size() < 3)
            throw InsufficientDataError("replication design needs at least 3 rows with both "
                                        "replicates; found " + std::to_string(diffs.size()));
        cm.delta = stats::mean(diffs);
        cm.sigma2_u = 0.5 * stats::variance(diffs);
        if (!(cm.sigma2_u > 0.0))
            cm.warnings.push_back("estimated measurement error variance is 0; "
                                  "no correction needed");
    }

    if (cm.source != CalibrationSource::ReplicationRandomIntercept) {
        std::vector<std::size_t> rows;
        std::vector<double> resp;
        for (std::size_t i = 0; i < f.n(); ++i) {
            if (auto v = calib_response(f, cm.source, i)) {
                rows.push_back(i);
                resp.push_back(*v);
            }
        }
        if (static_cast<Index>(rows.size()) < p1 + 2)
            throw InsufficientDataError(
                "calibration model needs at least " + std::to_string(p1 + 2) +
                " sub-study rows with the required measures; found " + std::to_string(rows.size()));
        Eigen::MatrixXd W(idx(rows.size()), p1);
        Eigen::VectorXd y(idx(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            W.row(idx(k)) = calib_regressors(f, rows[k]).transpose();
            y[idx(k)] = resp[k];
        }
        FitResult ols = fit_ols(W, y, cm.names);
        cm.gamma = ols.coef;
        cm.gamma_cov = ols.cov;
        cm.residual_variance = ols.sigma2;
        cm.fit_rows = rows.size();
        return cm;
    }

    // Random-intercept model by moments over all rows.
    const auto n = f.n();
    if (static_cast<Index>(n) < q + 3)
        throw InsufficientDataError("too few rows for the random-intercept calibration model");
    Eigen::MatrixXd V(idx(n), q + 1);
    Eigen::VectorXd wbar(idx(n));
    double inv_k = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int k = 0;
        V.row(idx(i)) = z_regressors(f, i).transpose();
        wbar[idx(i)] = f.measure_mean(i, &k);
        inv_k += 1.0 / k;
    }
    inv_k /= static_cast<double>(n);
    FitResult mu = fit_ols(V, wbar);
    cm.mu_coef = mu.coef;
    cm.tau2 = mu.sigma2 - cm.sigma2_u * inv_k;
    if (cm.tau2 < 0.0) {
        cm.warnings.push_back("moment estimate of var(X|Z) was negative and has been set to 0");
        cm.tau2 = 0.0;
    }
    cm.fit_rows = n;
    const double denom = cm.tau2 + cm.sigma2_u;
    const double lambda1 = denom > 0.0 ? cm.tau2 / denom : 1.0;
    cm.gamma = Eigen::VectorXd::Zero(p1);
    cm.gamma[0] = (1.0 - lambda1) * cm.mu_coef[0];
    cm.gamma[1] = lambda1;
    if (q > 0) cm.gamma.tail(q) = (1.0 - lambda1) * cm.mu_coef.tail(q);
    cm.residual_variance = denom > 0.0 ? cm.tau2 * cm.sigma2_u / denom : 0.0;
    cm.gamma_cov = Eigen::MatrixXd::Zero(p1, p1);
    return cm;
}

CalibrationModel fit_calibration(const Dataset& ds, const StudyDesign& design,
                                 const OutcomeSpec& outcome, const CalibrationOptions& opts) {
    return fit_calibration(build_frame(ds, design, outcome), opts);
}

CalibrationRow calibration_row(const ModelFrame& f, std::size_t i) {
    CalibrationRow row;
    if (f.x_obs[i] && f.r[i]) row.x = f.x[idx(i)];
    if (f.m1_obs[i]) row.measure = f.m1[idx(i)];
    if (f.design == DesignKind::Replication && f.m2_obs[i]) row.second = f.m2[idx(i)];
    row.z = f.z.cols() > 0 ? Eigen::VectorXd(f.z.row(idx(i)).transpose()) : Eigen::VectorXd();
    return row;
}

double conditional_mean(const CalibrationModel& cm, const CalibrationRow& row) {
    if (cm.source == CalibrationSource::Validation && row.x) return *row.x;
    if (!row.measure) throw DataError("row lacks the error-prone measure needed for calibration");
    const Index q = row.z.size();
    if (cm.source == CalibrationSource::ReplicationRandomIntercept) {
        RiParams p;
        p.mu = cm.mu_coef;
        p.tau2 = cm.tau2;
        p.sigma2_u = cm.sigma2_u;
        Eigen::VectorXd v(1 + q);
        v[0] = 1.0;
        if (q > 0) v.tail(q) = row.z;
        if (row.second) return ri_mean(p, 0.5 * (*row.measure + *row.second), 2, v);
        return ri_mean(p, *row.measure, 1, v);
    }
    Eigen::VectorXd w(2 + q);
    w[0] = 1.0;
    w[1] = *row.measure;
    if (q > 0) w.tail(q) = row.z;
    return cm.gamma.dot(w);
}

Eigen::VectorXd conditional_means(const CalibrationModel& cm, const ModelFrame& f) {
    Eigen::VectorXd out(idx(f.n()));
    for (std::size_t i = 0; i < f.n(); ++i) out[idx(i)] = conditional_mean(cm, calibration_row(f, i));
    return out;
}

FitResult fit_naive(const ModelFrame& f) {
    FitResult fit = fit_outcome(f.outcome, f.outcome_design(f.m1), f.y, f.event, f.outcome_names());
    fit.method = "naive";
    return fit;
}

FitResult fit_naive(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome) {
    return fit_naive(build_frame(ds, design, outcome));
}

// ---------------------------------------------------------------------------
// Delta method: sandwich over the stacked calibration and outcome estimating
// equations, with a numerical Jacobian of the summed equations.

namespace {

class StackedEquations {
public:
    StackedEquations(const ModelFrame& f, const CalibrationModel& cm) : f_(f), cm_(cm) {
        q_ = f.z.cols();
        p2_ = 2 + q_;
        if (cm.source == CalibrationSource::ReplicationRandomIntercept) {
            p1_ = 4 + q_;
            n_pairs_ = 0;
            inv_k_.resize(f.n());
            for (std::size_t i = 0; i < f.n(); ++i) {
                if (pair_complete(f, i)) ++n_pairs_;
                int k = 0;
                f.measure_mean(i, &k);
                inv_k_[i] = 1.0 / k;
            }
        } else {
            p1_ = 2 + q_;
        }
    }

    Index stage1_dim() const { return p1_; }
    Index dim() const { return p1_ + p2_; }

    Eigen::VectorXd stage1_estimate() const {
        Eigen::VectorXd th(p1_);
        if (cm_.source == CalibrationSource::ReplicationRandomIntercept) {
            th[0] = cm_.delta;
            th[1] = cm_.sigma2_u;
            th.segment(2, q_ + 1) = cm_.mu_coef;
            th[3 + q_] = cm_.tau2;
        } else {
            th = cm_.gamma;
        }
        return th;
    }

    // Rows of per-record estimating functions at theta = (stage1, beta).
    Eigen::MatrixXd rows(const Eigen::VectorXd& theta) const {
        const auto n = f_.n();
        Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(idx(n), dim());
        const Eigen::VectorXd th1 = theta.head(p1_);
        const Eigen::VectorXd beta = theta.tail(p2_);
        const bool ri = cm_.source == CalibrationSource::ReplicationRandomIntercept;
        RiParams rp;
        if (ri) rp = unpack_ri(th1, q_);
        const double nn = static_cast<double>(n);
        const double pair_scale =
            n_pairs_ > 1 ? (static_cast<double>(n_pairs_) - 1.0) / n_pairs_ : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double xhat = 0.0;
            if (ri) {
                if (pair_complete(f_, i)) {
                    const double dd = f_.m1[idx(i)] - f_.m2[idx(i)];
                    psi(idx(i), 0) = dd - rp.delta;
                    psi(idx(i), 1) = 0.5 * (dd - rp.delta) * (dd - rp.delta) -
                                     rp.sigma2_u * pair_scale;
                }
                const Eigen::VectorXd v = z_regressors(f_, i);
                int k = 0;
                const double wbar = f_.measure_mean(i, &k);
                const double res = wbar - rp.mu.dot(v);
                psi.block(idx(i), 2, 1, q_ + 1) = res * v.transpose();
                psi(idx(i), 3 + q_) = res * res * nn / (nn - static_cast<double>(q_ + 1)) -
                                      rp.sigma2_u * inv_k_[i] - rp.tau2;
                xhat = ri_mean(rp, wbar, k, v);
            } else {
                const Eigen::VectorXd w = calib_regressors(f_, i);
                if (auto resp = calib_response(f_, cm_.source, i))
                    psi.block(idx(i), 0, 1, p1_) = ((*resp - th1.dot(w)) * w).transpose();
                if (cm_.source == CalibrationSource::Validation && f_.r[i] && f_.x_obs[i])
                    xhat = f_.x[idx(i)];
                else
                    xhat = th1.dot(w);
            }
            Eigen::VectorXd d(p2_);
            d[0] = 1.0;
            d[1] = xhat;
            if (q_ > 0) d.tail(q_) = f_.z.row(idx(i)).transpose();
            const double eta = beta.dot(d);
            const double resid = f_.outcome == OutcomeKind::LinearNormal
                                     ? f_.y[idx(i)] - eta
                                     : f_.y[idx(i)] - stats::expit(eta);
            psi.block(idx(i), p1_, 1, p2_) = (resid * d).transpose();
        }
        return psi;
    }

    Eigen::MatrixXd sandwich(const Eigen::VectorXd& theta) const {
        const Eigen::MatrixXd psi = rows(theta);
        const Eigen::MatrixXd meat = psi.transpose() * psi;
        Eigen::MatrixXd jac(dim(), dim());
        for (Index j = 0; j < dim(); ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
            Eigen::VectorXd a = theta, b = theta;
            a[j] += h;
            b[j] -= h;
            jac.col(j) = (rows(a).colwise().sum() - rows(b).colwise().sum()).transpose() / (2 * h);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw SingularDesignError("delta-method Jacobian is singular");
        const Eigen::MatrixXd jinv = lu.inverse();
        Eigen::MatrixXd cov = jinv * meat * jinv.transpose();
        return 0.5 * (cov + cov.transpose());
    }

private:
    const ModelFrame& f_;
    const CalibrationModel& cm_;
    Index q_ = 0, p1_ = 0, p2_ = 0;
    std::size_t n_pairs_ = 0;
    std::vector<double> inv_k_;
};

Eigen::VectorXd rc_point(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome,
                         const CalibrationOptions& copts) {
    const ModelFrame f = build_frame(ds, design, outcome);
    const CalibrationModel cm = fit_calibration(f, copts);
    const Eigen::VectorXd xhat = conditional_means(cm, f);
    return fit_outcome(f.outcome, f.outcome_design(xhat), f.y, f.event, f.outcome_names()).coef;
}

}  // namespace

RcResult regression_calibration(const Dataset& ds, const StudyDesign& design,
                                const OutcomeSpec& outcome, const RcOptions& opts,
                                const RngStream& rng) {
    RcResult res;
    const ModelFrame f = build_frame(ds, design, outcome);
    res.calibration = fit_calibration(f, opts.calibration);
    const Eigen::VectorXd xhat = conditional_means(res.calibration, f);
    res.fit = fit_outcome(f.outcome, f.outcome_design(xhat), f.y, f.event, f.outcome_names());
    res.fit.method = "rc";
    res.fit.level = opts.level;
    res.fit.warnings.insert(res.fit.warnings.end(), res.calibration.warnings.begin(),
                            res.calibration.warnings.end());
    if (f.outcome != OutcomeKind::LinearNormal)
        res.fit.warnings.push_back("regression calibration is an approximation for non-linear "
                                   "outcome models");

    SeMethod se = opts.se_method;
    if (se == SeMethod::Delta && f.outcome == OutcomeKind::WeibullSurvival) {
        res.fit.warnings.push_back("delta-method standard errors are not available for the "
                                   "Weibull outcome; using the bootstrap");
        se = SeMethod::Bootstrap;
    }
    res.se_method = se;

    if (res.calibration.source == CalibrationSource::ReplicationRandomIntercept &&
        !(res.calibration.sigma2_u > 0.0)) {
        // No error: the calibrated exposure is the measure itself.
        std::vector<std::string> warnings = std::move(res.fit.warnings);
        res.fit = fit_naive(f);
        res.fit.method = "rc";
        res.fit.level = opts.level;
        res.fit.warnings = std::move(warnings);
        res.fit.set_wald_intervals(opts.level);
        return res;
    }

    if (se == SeMethod::Delta) {
        StackedEquations eq(f, res.calibration);
        Eigen::VectorXd theta(eq.dim());
        theta << eq.stage1_estimate(), res.fit.coef;
        const Eigen::MatrixXd cov = eq.sandwich(theta);
        res.fit.cov = cov.bottomRightCorner(res.fit.coef.size(), res.fit.coef.size());
        res.fit.lower.resize(0);
        res.fit.upper.resize(0);
        res.fit.set_wald_intervals(opts.level);
        return res;
    }

    BootstrapOptions bo;
    bo.level = opts.level;
    bo.stratify_on_r = opts.stratify_on_r;
    bo.threads = opts.threads;
    const CalibrationOptions copts = opts.calibration;
    const BootstrapResult b = bootstrap(
        [&](const Dataset& d) { return rc_point(d, design, outcome, copts); }, ds,
        opts.bootstrap_reps, rng, bo);
    res.bootstrap_failures = b.failures;
    const Eigen::MatrixXd centered = b.draws.rowwise() - b.draws.colwise().mean();
    res.fit.cov = centered.transpose() * centered / static_cast<double>(b.draws.rows() - 1);
    if (opts.bootstrap_percentile) {
        res.fit.lower = b.pct_lower;
        res.fit.upper = b.pct_upper;
    } else {
        res.fit.lower = b.normal_lower;
        res.fit.upper = b.normal_upper;
    }
    if (b.failures > 0)
        res.fit.warnings.push_back(std::to_string(b.failures) + " bootstrap replicates failed");
    return res;
}

}  // namespace mecor
