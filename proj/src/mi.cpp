#include "mecor/mi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mecor/error.hpp"
#include "mecor/stats.hpp"

namespace mecor {

namespace {

using Eigen::Index;

Index ix(std::size_t i) { return static_cast<Index>(i); }

Eigen::VectorXd std_normal(Index n, RngStream& rng) {
    Eigen::VectorXd e(n);
    for (Index k = 0; k < n; ++k) e[k] = rng.normal();
    return e;
}

struct LinDraw {
    Eigen::VectorXd coef;
    double s2 = 0.0;
};

// Posterior draw for y ~ N(A c, s2): flat prior on c; s2 from RSS / chi2(n - p)
// or, with priors, from the inverse-Gamma full posterior.
LinDraw draw_linear(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, RngStream& rng,
                    const SmcPriors* pr = nullptr) {
    const Index n = A.rows(), p = A.cols();
    if (n <= p) throw InsufficientDataError("too few rows for the imputation regression");
    const Eigen::MatrixXd AtA = A.transpose() * A;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(AtA);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)
        throw SingularDesignError("imputation regression design is singular");
    const Eigen::VectorXd chat = ldlt.solve(A.transpose() * y);
    const double rss = (y - A * chat).squaredNorm();
    LinDraw d;
    const double dfree = static_cast<double>(n - p);
    if (pr)
        d.s2 = 1.0 / rng.gamma(pr->shape + 0.5 * dfree, pr->rate + 0.5 * rss);
    else
        d.s2 = rss > 0.0 ? rss / rng.chi_squared(dfree) : 0.0;
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(AtA.inverse()).matrixL();
    d.coef = chat + std::sqrt(d.s2) * (L * std_normal(p, rng));
    return d;
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& cols) {
    Eigen::MatrixXd A(cols.rows(), cols.cols() + 1);
    A.col(0).setOnes();
    if (cols.cols() > 0) A.rightCols(cols.cols()) = cols;
    return A;
}

template <class Fn>
std::vector<Completed> run_imputations(int m, unsigned threads, const RngStream& rng, Fn fn) {
    if (m < 1) throw ConfigError("number of imputations must be >= 1");
    std::vector<Completed> out(static_cast<std::size_t>(m));
    parallel_for(
        out.size(),
        [&](std::size_t k) {
            RngStream r = rng.split(k);
            out[k] = fn(k, r);
        },
        threads);
    return out;
}

}  // namespace

std::string to_string(MiVariant v) { return v == MiVariant::Normal ? "normal" : "smcfcs"; }

MiVariant mi_variant_from_string(const std::string& s) {
    if (s == "normal") return MiVariant::Normal;
    if (s == "smcfcs") return MiVariant::SmcFcs;
    throw ConfigError("unknown MI variant '" + s + "' (expected normal or smcfcs)");
}

Dataset ImputationSet::dataset(const Dataset& source, std::size_t m) const {
    if (m >= completed.size()) throw ConfigError("imputation index out of range");
    Dataset out = source.take_rows(frame.rows);
    const Completed& c = completed[m];
    out.set_column(make_column(frame.exposure_name,
                               std::vector<double>(c.x.data(), c.x.data() + c.x.size())));
    for (Index j = 0; j < c.z.cols(); ++j) {
        const auto& name = frame.z_names[static_cast<std::size_t>(j)];
        Column col = out.column(name);
        for (Index i = 0; i < c.z.rows(); ++i) {
            col.values[static_cast<std::size_t>(i)] = c.z(i, j);
            col.missing[static_cast<std::size_t>(i)] = 0;
        }
        out.set_column(col);
    }
    return out;
}

NormalDraw conditional_normal(double prior_mean, double prior_var, double measure_mean, int k,
                              double sigma2_u) {
    NormalDraw d;
    if (k == 0) return {prior_mean, prior_var};
    if (sigma2_u <= 0.0) return {measure_mean, 0.0};
    if (prior_var <= 0.0) return {prior_mean, 0.0};
    // Equivalent to m + k (w - m) v / (k v + s2), var = v s2 / (k v + s2).
    const double denom = k * prior_var + sigma2_u;
    d.mean = prior_mean + k * (measure_mean - prior_mean) * prior_var / denom;
    d.var = prior_var * sigma2_u / denom;
    return d;
}

FitResult fit_completed(const ModelFrame& f, const Completed& c) {
    Eigen::MatrixXd D(ix(f.n()), 2 + c.z.cols());
    D.col(0).setOnes();
    D.col(1) = c.x;
    if (c.z.cols() > 0) D.rightCols(c.z.cols()) = c.z;
    return fit_outcome(f.outcome, D, f.y, f.event, f.outcome_names());
}

// ---------------------------------------------------------------------------

ImputationSet impute_validation(const Dataset& ds, const StudyDesign& design,
                                const OutcomeSpec& outcome, const MiOptions& opts,
                                const RngStream& rng) {
    if (design.kind != DesignKind::Validation)
        throw ConfigError("validation imputation needs a validation design");
    ImputationSet set;
    set.frame = build_frame(ds, design, outcome);
    const ModelFrame& f = set.frame;
    const std::size_t n = f.n();
    std::vector<std::size_t> obs, mis;
    for (std::size_t i = 0; i < n; ++i) (f.r[i] && f.x_obs[i] ? obs : mis).push_back(i);
    if (obs.size() < opts.min_validated)
        throw InsufficientDataError(
            "validation imputation needs at least " + std::to_string(opts.min_validated) +
            " validated rows, found " + std::to_string(obs.size()) +
            "; consider the Bayesian method, which uses every row");

    // Predictors: X*, Z and the outcome (Y, or event and cumulative hazard).
    Index extra = f.outcome == OutcomeKind::WeibullSurvival ? 2 : 1;
    Eigen::MatrixXd P(ix(n), 1 + f.z.cols() + extra);
    P.col(0) = f.m1;
    if (f.z.cols() > 0) P.middleCols(1, f.z.cols()) = f.z;
    if (f.outcome == OutcomeKind::WeibullSurvival) {
        const StepFunction H = nelson_aalen(f.y, f.event);
        P.col(P.cols() - 2) = f.event;
        for (std::size_t i = 0; i < n; ++i) P(ix(i), P.cols() - 1) = H(f.y[ix(i)]);
    } else {
        P.col(P.cols() - 1) = f.y;
    }
    const Eigen::MatrixXd A = with_intercept(P);
    Eigen::MatrixXd Ao(ix(obs.size()), A.cols());
    Eigen::VectorXd xo(ix(obs.size()));
    for (std::size_t k = 0; k < obs.size(); ++k) {
        Ao.row(ix(k)) = A.row(ix(obs[k]));
        xo[ix(k)] = f.x[ix(obs[k])];
    }
    set.completed = run_imputations(opts.m, opts.threads, rng, [&](std::size_t, RngStream& r) {
        const LinDraw d = draw_linear(Ao, xo, r);
        Completed c;
        c.x = f.x;
        c.z = f.z;
        const double sd = std::sqrt(d.s2);
        for (std::size_t i : mis) c.x[ix(i)] = A.row(ix(i)).dot(d.coef) + sd * r.normal();
        return c;
    });
    return set;
}

// ---------------------------------------------------------------------------

ImputationSet impute_replicates_normal(const Dataset& ds, const StudyDesign& design,
                                       const OutcomeSpec& outcome, const MiOptions& opts,
                                       const RngStream& rng) {
    if (design.kind == DesignKind::Validation)
        throw ConfigError("replicate imputation needs a replication or calibration design");
    if (outcome.kind != OutcomeKind::LinearNormal)
        throw UnsupportedConfiguration(
            "conditional-normal imputation requires a LinearNormal outcome; use smcfcs");
    ImputationSet set;
    set.frame = build_frame(ds, design, outcome);
    const ModelFrame& f = set.frame;
    const std::size_t n = f.n();
    const bool calib = design.kind == DesignKind::Calibration;

    // Measures of the replicate type: X*_1, X*_2 or X**_1, X**_2.
    const Eigen::VectorXd& a = calib ? f.m2 : f.m1;
    const Eigen::VectorXd& b = calib ? f.m3 : f.m2;
    const auto& a_obs = calib ? f.m2_obs : f.m1_obs;
    const auto& b_obs = calib ? f.m3_obs : f.m2_obs;

    std::vector<double> diffs;
    for (std::size_t i = 0; i < n; ++i)
        if (a_obs[i] && b_obs[i]) diffs.push_back(a[ix(i)] - b[ix(i)]);
    if (diffs.size() < 3)
        throw InsufficientDataError("fewer than 3 rows with two replicate measures");
    const double dbar = stats::mean(diffs);
    double ssd = 0.0;
    for (double d : diffs) ssd += (d - dbar) * (d - dbar);

    // E(X | Y, Z[, X*]) from the regression of the replicate mean. Its residual
    // variance is var(X | Y, Z) + sigma2_u / k, exact when every row has the same k.
    Index extra = calib ? 2 : 1;
    Eigen::MatrixXd P(ix(n), f.z.cols() + extra);
    P.col(0) = f.y;
    if (calib) P.col(1) = f.m1;
    if (f.z.cols() > 0) P.rightCols(f.z.cols()) = f.z;
    const Eigen::MatrixXd A = with_intercept(P);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        if (a_obs[i] || b_obs[i]) rows.push_back(i);
    Eigen::MatrixXd Ar(ix(rows.size()), A.cols());
    Eigen::VectorXd yr(ix(rows.size()));
    double inv_k = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        Ar.row(ix(k)) = A.row(ix(i));
        const int cnt = (a_obs[i] ? 1 : 0) + (b_obs[i] ? 1 : 0);
        yr[ix(k)] = ((a_obs[i] ? a[ix(i)] : 0.0) + (b_obs[i] ? b[ix(i)] : 0.0)) / cnt;
        inv_k += 1.0 / cnt;
    }
    inv_k /= static_cast<double>(rows.size());
    const FitResult mean_fit = fit_ols(Ar, yr);
    const double s2u_hat = 0.5 * ssd / static_cast<double>(diffs.size() - 1);
    const double v_hat = mean_fit.sigma2 - s2u_hat * inv_k;
    if (!(v_hat > 0.0)) {
        std::ostringstream os;
        os << "estimated var(X | Y, Z) = " << v_hat
           << " is not positive: the error variance (" << s2u_hat
           << ") is too large for moment identification";
        throw ImputationError(os.str());
    }

    set.completed = run_imputations(opts.m, opts.threads, rng, [&](std::size_t, RngStream& r) {
        LinDraw d;
        double s2u = 0.0, v = 0.0;
        int tries = 0;
        do {
            if (++tries > 100)
                throw ImputationError("could not draw a positive var(X | Y, Z) in 100 attempts");
            d = draw_linear(Ar, yr, r);
            s2u = ssd > 0.0 ? 0.5 * ssd / r.chi_squared(static_cast<double>(diffs.size() - 1)) : 0.0;
            v = d.s2 - s2u * inv_k;
        } while (!(v > 0.0) && d.s2 > 0.0);
        if (d.s2 <= 0.0) v = 0.0;
        Completed c;
        c.x.resize(ix(n));
        c.z = f.z;
        for (std::size_t i = 0; i < n; ++i) {
            const Index row = ix(i);
            int k = 0;
            double s = 0.0;
            if (a_obs[i]) s += a[row], ++k;
            if (b_obs[i]) s += b[row], ++k;
            const NormalDraw nd =
                conditional_normal(A.row(row).dot(d.coef), v, k ? s / k : 0.0, k, s2u);
            c.x[row] = nd.mean + std::sqrt(nd.var) * r.normal();
        }
        return c;
    });
    return set;
}

// ---------------------------------------------------------------------------

namespace {

// Outcome density at x relative to its supremum over x (through eta).
struct OutcomeRatio {
    OutcomeKind kind;
    Eigen::VectorXd beta;
    double s2y = 1.0, shape = 1.0;

    double operator()(double y, double event, double x, const Eigen::VectorXd& zr) const {
        double eta = beta[0] + beta[1] * x;
        for (Index j = 0; j < zr.size(); ++j) eta += beta[2 + j] * zr[j];
        switch (kind) {
            case OutcomeKind::LinearNormal:
                return std::exp(-0.5 * (y - eta) * (y - eta) / s2y);
            case OutcomeKind::LogisticBinary: {
                const double p = stats::expit(eta);
                return y > 0.5 ? p : 1.0 - p;
            }
            case OutcomeKind::WeibullSurvival: {
                const double lam = std::exp(shape * std::log(y) + eta);
                return event > 0.5 ? lam * std::exp(1.0 - lam) : std::exp(-lam);
            }
        }
        return 0.0;
    }

    // log of the ratio as a function of eta, with its first two derivatives.
    double log_ratio(double y, double event, double eta, double* d1, double* d2) const {
        switch (kind) {
            case OutcomeKind::LinearNormal:
                *d1 = (y - eta) / s2y;
                *d2 = -1.0 / s2y;
                return -0.5 * (y - eta) * (y - eta) / s2y;
            case OutcomeKind::LogisticBinary: {
                const double pr = stats::expit(eta);
                *d1 = y - pr;
                *d2 = -pr * (1.0 - pr);
                return y > 0.5 ? -stats::log1p_exp(-eta) : -stats::log1p_exp(eta);
            }
            case OutcomeKind::WeibullSurvival: {
                const double le = shape * std::log(y) + eta, lam = std::exp(le);
                *d1 = event - lam;
                *d2 = -lam;
                return event > 0.5 ? le + 1.0 - lam : -lam;
            }
        }
        return 0.0;
    }

    double loglik(double y, double event, double x, const Eigen::VectorXd& zr) const {
        double eta = beta[0] + beta[1] * x;
        for (Index j = 0; j < zr.size(); ++j) eta += beta[2 + j] * zr[j];
        switch (kind) {
            case OutcomeKind::LinearNormal:
                return -0.5 * (y - eta) * (y - eta) / s2y;
            case OutcomeKind::LogisticBinary:
                return y * eta - stats::log1p_exp(eta);
            case OutcomeKind::WeibullSurvival: {
                const double lt = std::log(y);
                return event * eta - std::exp(shape * lt + eta);
            }
        }
        return 0.0;
    }
};

OutcomeRatio draw_outcome(const ModelFrame& f, const Completed& c, RngStream& r) {
    OutcomeRatio o;
    o.kind = f.outcome;
    Eigen::MatrixXd D(ix(f.n()), 2 + c.z.cols());
    D.col(0).setOnes();
    D.col(1) = c.x;
    if (c.z.cols() > 0) D.rightCols(c.z.cols()) = c.z;
    switch (f.outcome) {
        case OutcomeKind::LinearNormal: {
            const LinDraw d = draw_linear(D, f.y, r);
            o.beta = d.coef;
            o.s2y = d.s2;
            break;
        }
        case OutcomeKind::LogisticBinary: {
            const FitResult fit = fit_logistic(D, f.y);
            const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(fit.cov).matrixL();
            o.beta = fit.coef + L * std_normal(fit.coef.size(), r);
            break;
        }
        case OutcomeKind::WeibullSurvival: {
            const FitResult fit = fit_weibull_ph(f.y, f.event, D);
            Eigen::VectorXd w(fit.coef.size() + 1);
            w[0] = std::log(*fit.shape);
            w.tail(fit.coef.size()) = fit.coef;
            Eigen::MatrixXd H;
            weibull_loglik(f.y, f.event, D, w, nullptr, &H);
            const Eigen::MatrixXd cov = stats::sym_inverse(-H);
            const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
            const Eigen::VectorXd wd = w + L * std_normal(w.size(), r);
            o.shape = std::exp(wd[0]);
            o.beta = wd.tail(fit.coef.size());
            break;
        }
    }
    return o;
}

}  // namespace

double smc_draw(const ModelFrame& f, std::size_t i, const Eigen::VectorXd& z, const SmcParams& p,
                RngStream& rng, long max_tries, long* tries) {
    const Index row = ix(i);
    const Index q = z.size();
    const double mu = p.gamma[0] + (q > 0 ? z.dot(p.gamma.tail(q)) : 0.0);
    double P = 1.0 / p.tau2, b = mu / p.tau2;
    auto add = [&](double obs, double c0, double a, double v) {
        P += a * a / v;
        b += a * (obs - c0) / v;
    };
    if (f.design == DesignKind::Validation) {
        if (f.m1_obs[i]) add(f.m1[row], p.theta0, p.theta1, p.sigma2_u);
    } else {
        if (f.m1_obs[i]) add(f.m1[row], 0.0, 1.0, p.sigma2_u);
        if (f.m2_obs[i]) add(f.m2[row], 0.0, 1.0, p.sigma2_u);
    }
    const double pm = b / P, psd = 1.0 / std::sqrt(P);
    OutcomeRatio ratio{p.outcome, p.beta, p.sigma2_y, p.shape};
    const double ev = f.event.size() ? f.event[row] : 0.0;
    const double y = f.y[row];
    const double bx = p.beta[1];
    double eta0 = p.beta[0];
    for (Index j = 0; j < q; ++j) eta0 += p.beta[2 + j] * z[j];
    auto fail = [&](long t) {
        std::ostringstream os;
        os << "SMC-FCS rejection sampler gave up on record " << f.rows[i] + 1 << " after " << t
           << " proposals (acceptance ratio at the proposal mean " << ratio(y, ev, pm, z) << ")";
        return ImputationError(os.str());
    };

    // Proposals from p(X | X*, Z) first.
    const long plain = std::min<long>(max_tries, 1000);
    long t = 0;
    while (t < plain) {
        const double xc = pm + psd * rng.normal();
        ++t;
        if (rng.uniform() < ratio(y, ev, xc, z)) {
            if (tries) *tries = t;
            return xc;
        }
    }

    // Outlying records: the same proposal recentred at the mode xm of the
    // target h. h(x) - log g(x) is concave with its maximum at xm, so
    // exp(h(x) - h(xm) + (x - xm)^2 / 2 psd^2) is a valid acceptance probability.
    auto h = [&](double x, double* d1, double* d2) {
        double g1 = 0.0, g2 = 0.0;
        const double lr = ratio.log_ratio(y, ev, eta0 + bx * x, &g1, &g2);
        if (d1) *d1 = -(x - pm) / (psd * psd) + bx * g1;
        if (d2) *d2 = -1.0 / (psd * psd) + bx * bx * g2;
        return -0.5 * (x - pm) * (x - pm) / (psd * psd) + lr;
    };
    double xm = pm, hm = h(pm, nullptr, nullptr);
    for (int it = 0; it < 200; ++it) {
        double d1 = 0.0, d2 = 0.0;
        h(xm, &d1, &d2);
        double step = -d1 / d2;
        double xn = xm + step, hn = h(xn, nullptr, nullptr);
        for (int k = 0; k < 60 && !(hn >= hm); ++k) {
            step *= 0.5;
            xn = xm + step;
            hn = h(xn, nullptr, nullptr);
        }
        if (!(hn >= hm)) break;
        xm = xn;
        hm = hn;
        if (std::abs(step) < 1e-12 * (1.0 + std::abs(xm))) break;
    }
    if (!std::isfinite(hm)) throw fail(t);
    while (t < max_tries) {
        const double xc = xm + psd * rng.normal();
        ++t;
        const double la = h(xc, nullptr, nullptr) - hm + 0.5 * (xc - xm) * (xc - xm) / (psd * psd);
        if (std::log(rng.uniform()) < la) {
            if (tries) *tries = t;
            return xc;
        }
    }
    throw fail(t);
}

namespace {

double slope_t(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 4) return 0.0;
    double mt = 0.0, mv = 0.0;
    for (std::size_t k = 0; k < n; ++k) mt += static_cast<double>(k), mv += v[k];
    mt /= static_cast<double>(n);
    mv /= static_cast<double>(n);
    double stt = 0.0, stv = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        stt += (static_cast<double>(k) - mt) * (static_cast<double>(k) - mt);
        stv += (static_cast<double>(k) - mt) * (v[k] - mv);
    }
    const double b = stv / stt;
    double rss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double e = v[k] - mv - b * (static_cast<double>(k) - mt);
        rss += e * e;
    }
    const double se = std::sqrt(rss / static_cast<double>(n - 2) / stt);
    return se > 0.0 ? b / se : 0.0;
}

}  // namespace

namespace {

// Starting exposure values: the calibrated mean E(X | X*, Z) from moment
// estimates, which starts the chain far closer to stationarity than X* itself.
Eigen::VectorXd smc_start(const ModelFrame& f, const Eigen::MatrixXd& z,
                          const std::vector<std::uint8_t>& x_known) {
    const std::size_t n = f.n();
    const bool validation = f.design == DesignKind::Validation;
    const Eigen::MatrixXd Z = with_intercept(z);
    Eigen::VectorXd x(ix(n));
    if (validation) {
        std::vector<std::size_t> v, w;
        for (std::size_t i = 0; i < n; ++i) {
            if (x_known[i] && f.m1_obs[i]) v.push_back(i);
            if (x_known[i]) w.push_back(i);
        }
        Eigen::MatrixXd A(ix(v.size()), Z.cols() + 1), B(ix(w.size()), Z.cols());
        Eigen::VectorXd ya(ix(v.size())), yb(ix(w.size()));
        for (std::size_t k = 0; k < v.size(); ++k) {
            A(ix(k), 0) = f.m1[ix(v[k])];
            A.row(ix(k)).tail(Z.cols()) = Z.row(ix(v[k]));
            ya[ix(k)] = f.x[ix(v[k])];
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
            B.row(ix(k)) = Z.row(ix(w[k]));
            yb[ix(k)] = f.x[ix(w[k])];
        }
        const bool with_m = v.size() > static_cast<std::size_t>(A.cols());
        const Eigen::VectorXd ca = with_m ? Eigen::VectorXd(A.colPivHouseholderQr().solve(ya)) : Eigen::VectorXd();
        const Eigen::VectorXd cb = B.colPivHouseholderQr().solve(yb);
        for (std::size_t i = 0; i < n; ++i) {
            const Index row = ix(i);
            if (x_known[i])
                x[row] = f.x[row];
            else if (with_m && f.m1_obs[i])
                x[row] = ca[0] * f.m1[row] + Z.row(row).dot(ca.tail(Z.cols()));
            else
                x[row] = Z.row(row).dot(cb);
        }
        return x;
    }
    double ssd = 0.0, dbar = 0.0;
    std::vector<double> d;
    for (std::size_t i = 0; i < n; ++i)
        if (f.m1_obs[i] && f.m2_obs[i]) d.push_back(f.m1[ix(i)] - f.m2[ix(i)]);
    dbar = stats::mean(d);
    for (double v : d) ssd += (v - dbar) * (v - dbar);
    const double s2u = 0.5 * ssd / static_cast<double>(d.size() - 1);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
        if (f.m1_obs[i] || f.m2_obs[i]) rows.push_back(i);
    Eigen::MatrixXd A(ix(rows.size()), Z.cols());
    Eigen::VectorXd wbar(ix(rows.size()));
    double inv_k = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        const int cnt = f.m1_obs[i] + f.m2_obs[i];
        A.row(ix(k)) = Z.row(ix(i));
        wbar[ix(k)] = ((f.m1_obs[i] ? f.m1[ix(i)] : 0.0) + (f.m2_obs[i] ? f.m2[ix(i)] : 0.0)) / cnt;
        inv_k += 1.0 / cnt;
    }
    inv_k /= static_cast<double>(rows.size());
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(wbar);
    const double s2 = (wbar - A * coef).squaredNorm() / static_cast<double>(rows.size() - ix(A.cols()));
    const double tau2 = std::max(s2 - s2u * inv_k, 0.05 * s2);
    for (std::size_t i = 0; i < n; ++i) {
        const Index row = ix(i);
        int k = 0;
        double s = 0.0;
        if (f.m1_obs[i]) s += f.m1[row], ++k;
        if (f.m2_obs[i]) s += f.m2[row], ++k;
        x[row] = conditional_normal(Z.row(row).dot(coef), tau2, k ? s / k : 0.0, k, s2u).mean;
    }
    return x;
}

}  // namespace

ImputationSet impute_smcfcs(const Dataset& ds, const StudyDesign& design,
                            const OutcomeSpec& outcome, const MiOptions& opts,
                            const RngStream& rng, SmcDiagnostics* diag) {
    if (design.kind == DesignKind::Calibration)
        throw UnsupportedConfiguration(
            "SMC-FCS imputation is not available for calibration designs; use the normal "
            "variant or another method");
    if (opts.smc_iterations < 1) throw ConfigError("smc iterations must be >= 1");
    if (!(opts.priors.shape > 0.0 && opts.priors.rate > 0.0))
        throw ConfigError("SMC-FCS inverse-Gamma hyperparameters must be > 0");
    ImputationSet set;
    FrameOptions fo;
    fo.allow_missing_binary_z = true;
    fo.allow_missing_primary = true;
    set.frame = build_frame(ds, design, outcome, fo);
    const ModelFrame& f = set.frame;
    const std::size_t n = f.n();
    const Index q = f.z.cols();
    const bool validation = design.kind == DesignKind::Validation;

    std::vector<std::uint8_t> x_known(n, 0);
    for (std::size_t i = 0; i < n; ++i) x_known[i] = validation && f.r[i] && f.x_obs[i];
    if (validation) {
        std::size_t k = 0;
        for (auto v : x_known) k += v;
        if (k < 3) throw InsufficientDataError("SMC-FCS needs at least 3 validated rows");
    } else {
        std::size_t k = 0;
        for (std::size_t i = 0; i < n; ++i) k += f.m1_obs[i] && f.m2_obs[i];
        if (k < 2) throw IdentifiabilityError("SMC-FCS needs at least 2 rows with two replicates");
    }

    std::vector<int> miss_cols, complete_cols;
    for (Index j = 0; j < q; ++j) {
        bool miss = false;
        for (Index i = 0; i < f.z.rows() && !miss; ++i) miss = std::isnan(f.z(i, j));
        (miss ? miss_cols : complete_cols).push_back(static_cast<int>(j));
    }
    for (int j : miss_cols)
        if (!f.z_binary[static_cast<std::size_t>(j)])
            throw DataError("continuous covariate '" + f.z_names[static_cast<std::size_t>(j)] +
                            "' has missing values; only binary covariates can be imputed");
    Eigen::MatrixXd C(ix(n), 1 + ix(complete_cols.size()));
    C.col(0).setOnes();
    for (std::size_t k = 0; k < complete_cols.size(); ++k) C.col(ix(k + 1)) = f.z.col(complete_cols[k]);

    std::vector<std::vector<double>> traces(static_cast<std::size_t>(opts.m));
    std::vector<double> tries_per(static_cast<std::size_t>(opts.m), 0.0);

    set.completed = run_imputations(opts.m, opts.threads, rng, [&](std::size_t mi, RngStream& r) {
        Completed c;
        c.z = f.z;
        for (int j : miss_cols) {
            double s = 0.0;
            int k = 0;
            for (Index i = 0; i < c.z.rows(); ++i)
                if (!std::isnan(c.z(i, j))) s += c.z(i, j), ++k;
            const double p = k ? std::clamp(s / k, 0.05, 0.95) : 0.5;
            for (Index i = 0; i < c.z.rows(); ++i)
                if (std::isnan(c.z(i, j))) c.z(i, j) = r.bernoulli(p) ? 1.0 : 0.0;
        }
        c.x = smc_start(f, c.z, x_known);

        long total_tries = 0, total_draws = 0;
        auto& trace = traces[mi];
        for (int it = 0; it < opts.smc_iterations; ++it) {
            // Parameter draws given the current completed data.
            const OutcomeRatio out = draw_outcome(f, c, r);
            const LinDraw expo = draw_linear(with_intercept(c.z), c.x, r, &opts.priors);
            double th0 = 0.0, th1 = 1.0, s2u = 0.0;
            if (validation) {
                std::vector<std::size_t> rows;
                for (std::size_t i = 0; i < n; ++i)
                    if (f.m1_obs[i]) rows.push_back(i);
                Eigen::MatrixXd A(ix(rows.size()), 2);
                Eigen::VectorXd b(ix(rows.size()));
                for (std::size_t k = 0; k < rows.size(); ++k) {
                    A(ix(k), 0) = 1.0;
                    A(ix(k), 1) = c.x[ix(rows[k])];
                    b[ix(k)] = f.m1[ix(rows[k])];
                }
                const LinDraw e = draw_linear(A, b, r, &opts.priors);
                th0 = e.coef[0];
                th1 = e.coef[1];
                s2u = e.s2;
            } else {
                // From the replicate differences, X*_1 - X*_2 ~ N(0, 2 sigma2_u), which
                // do not involve X.
                double ss = 0.0, m = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    if (f.m1_obs[i] && f.m2_obs[i]) ss += 0.5 * std::pow(f.m1[ix(i)] - f.m2[ix(i)], 2), m += 1;
                s2u = 1.0 / r.gamma(opts.priors.shape + 0.5 * m, opts.priors.rate + 0.5 * ss);
            }

            // Missing binary covariates from their full conditional.
            for (int j : miss_cols) {
                Eigen::VectorXd pi = Eigen::VectorXd::Zero(C.cols());
                try {
                    const FitResult pf = fit_logistic(C, c.z.col(j));
                    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(pf.cov).matrixL();
                    pi = pf.coef + L * std_normal(pf.coef.size(), r);
                } catch (const SeparationError&) {
                }
                for (Index i = 0; i < ix(n); ++i) {
                    if (!std::isnan(f.z(i, j))) continue;
                    const double lin = C.row(i).dot(pi);
                    Eigen::VectorXd zr = c.z.row(i).transpose();
                    double lp[2];
                    for (int v = 0; v < 2; ++v) {
                        zr[j] = v;
                        const double mu = expo.coef[0] + (q > 0 ? zr.dot(expo.coef.tail(q)) : 0.0);
                        lp[v] = v * lin + out.loglik(f.y[i], f.event.size() ? f.event[i] : 0.0, c.x[i], zr) -
                                0.5 * (c.x[i] - mu) * (c.x[i] - mu) / expo.s2;
                    }
                    c.z(i, j) = r.uniform() < stats::expit(lp[1] - lp[0]) ? 1.0 : 0.0;
                }
            }

            // Exposure by rejection from the proposal p(X | X*, Z).
            SmcParams sp;
            sp.outcome = f.outcome;
            sp.beta = out.beta;
            sp.sigma2_y = out.s2y;
            sp.shape = out.shape;
            sp.gamma = expo.coef;
            sp.tau2 = expo.s2;
            sp.theta0 = th0;
            sp.theta1 = th1;
            sp.sigma2_u = s2u;
            double sum = 0.0;
            int cnt = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (x_known[i]) continue;
                long t = 0;
                c.x[ix(i)] = smc_draw(f, i, c.z.row(ix(i)).transpose(), sp, r, opts.smc_max_tries, &t);
                total_tries += t;
                ++total_draws;
                sum += c.x[ix(i)];
                ++cnt;
            }
            trace.push_back(cnt ? sum / cnt : 0.0);
        }
        tries_per[mi] = total_draws ? static_cast<double>(total_tries) / static_cast<double>(total_draws) : 0.0;
        return c;
    });

    SmcDiagnostics d;
    d.mean_trace = traces;
    for (std::size_t k = 0; k < traces.size(); ++k) {
        const auto& tr = traces[k];
        const std::vector<double> half(tr.begin() + static_cast<std::ptrdiff_t>(tr.size() / 2), tr.end());
        const bool flag = half.size() >= 6 && std::abs(slope_t(half)) > 3.0;
        d.nonstationary.push_back(flag);
        if (flag)
            set.warnings.push_back("imputation " + std::to_string(k + 1) +
                                   ": imputed-X mean trends over the last half of the cycles; "
                                   "consider more SMC-FCS iterations");
    }
    d.mean_tries = stats::mean(tries_per);
    if (diag) *diag = d;
    return set;
}

// ---------------------------------------------------------------------------

PooledResult pool_rubin(const std::vector<FitResult>& fits, PoolScale scale, double level) {
    if (fits.size() < 2) throw ConfigError("Rubin's rules need at least 2 imputations");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");
    const auto& names = fits.front().names;
    const Index p = fits.front().coef.size();
    for (const auto& f : fits)
        if (f.names != names || f.coef.size() != p || f.cov.rows() != p)
            throw DataError("imputation fits have mismatched parameter names");
    PooledResult out;
    out.names = names;
    out.m = static_cast<int>(fits.size());
    out.scale = scale;
    out.level = level;
    const double M = static_cast<double>(fits.size());

    out.per_imputation.resize(out.m, p);
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(p, p);
    for (int k = 0; k < out.m; ++k) {
        const FitResult& f = fits[static_cast<std::size_t>(k)];
        Eigen::VectorXd b = f.coef;
        Eigen::MatrixXd V = f.cov;
        if (scale == PoolScale::Log) {
            if ((b.array() <= 0.0).any()) throw DataError("log-scale pooling needs positive estimates");
            const Eigen::VectorXd inv = b.cwiseInverse();
            V = inv.asDiagonal() * V * inv.asDiagonal();
            b = b.array().log().matrix();
        }
        out.per_imputation.row(k) = b.transpose();
        W += V;
    }
    W /= M;
    const Eigen::RowVectorXd qbar = out.per_imputation.colwise().mean();
    const Eigen::MatrixXd centred = out.per_imputation.rowwise() - qbar;
    const Eigen::MatrixXd B = centred.transpose() * centred / (M - 1.0);
    out.total_cov = W + (1.0 + 1.0 / M) * B;
    out.within = W.diagonal();
    out.between = B.diagonal();
    out.total = out.total_cov.diagonal();
    out.df.resize(p);
    out.lower.resize(p);
    out.upper.resize(p);
    out.estimate.resize(p);
    const double a = 0.5 * (1.0 + level);
    for (Index j = 0; j < p; ++j) {
        const double bj = out.between[j], wj = out.within[j];
        double crit;
        if (bj <= 0.0) {
            out.df[j] = std::numeric_limits<double>::infinity();
            crit = stats::normal_quantile(a);
        } else {
            const double r = (1.0 + 1.0 / M) * bj / wj;
            out.df[j] = wj > 0.0 ? (M - 1.0) * std::pow(1.0 + 1.0 / r, 2) : M - 1.0;
            crit = stats::student_t_quantile(a, out.df[j]);
        }
        const double half = crit * std::sqrt(out.total[j]);
        double est = qbar[j], lo = qbar[j] - half, hi = qbar[j] + half;
        if (scale == PoolScale::Log) {
            est = std::exp(est);
            lo = std::exp(lo);
            hi = std::exp(hi);
        }
        out.estimate[j] = est;
        out.lower[j] = lo;
        out.upper[j] = hi;
    }
    return out;
}

FitResult PooledResult::to_fit_result() const {
    FitResult f;
    f.method = "mi";
    f.names = names;
    f.coef = estimate;
    f.cov = total_cov;
    f.lower = lower;
    f.upper = upper;
    f.level = level;
    f.converged = true;
    return f;
}

MiResult multiple_imputation(const Dataset& ds, const StudyDesign& design,
                             const OutcomeSpec& outcome, const MiOptions& opts,
                             const RngStream& rng) {
    if (opts.m < 2) throw ConfigError("multiple imputation needs m >= 2");
    MiResult res;
    res.variant = opts.variant;
    if (opts.variant == MiVariant::SmcFcs)
        res.imputations = impute_smcfcs(ds, design, outcome, opts, rng, &res.smc);
    else if (design.kind == DesignKind::Validation)
        res.imputations = impute_validation(ds, design, outcome, opts, rng);
    else
        res.imputations = impute_replicates_normal(ds, design, outcome, opts, rng);
    std::vector<FitResult> fits(res.imputations.completed.size());
    parallel_for(
        fits.size(),
        [&](std::size_t k) { fits[k] = fit_completed(res.imputations.frame, res.imputations.completed[k]); },
        opts.threads);
    res.pooled = pool_rubin(fits, PoolScale::Identity, opts.level);
    res.fit = res.pooled.to_fit_result();
    if (outcome.kind == OutcomeKind::WeibullSurvival) {
        double s = 0.0;
        for (const auto& f : fits) s += std::log(*f.shape);
        res.fit.shape = std::exp(s / static_cast<double>(fits.size()));
    }
    res.warnings = res.imputations.warnings;
    res.fit.warnings = res.warnings;
    return res;
}

}  // namespace mecor
