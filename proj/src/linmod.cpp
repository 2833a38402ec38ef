#include "mecor/linmod.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mecor/error.hpp"
#include "mecor/stats.hpp"

namespace mecor {

namespace {

std::vector<std::string> default_names(const std::vector<std::string>& names, Eigen::Index p) {
    if (static_cast<Eigen::Index>(names.size()) == p) return names;
    std::vector<std::string> out;
    for (Eigen::Index j = 0; j < p; ++j) out.push_back("b" + std::to_string(j));
    return out;
}

std::string collinear_columns(const Eigen::MatrixXd& X, const std::vector<std::string>& names) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(X);
    lu.setThreshold(1e-10);
    const Eigen::MatrixXd ker = lu.kernel();
    std::vector<std::string> cols;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (ker.cols() > 0 && ker.row(j).cwiseAbs().maxCoeff() > 1e-8)
            cols.push_back(names[static_cast<std::size_t>(j)]);
    }
    std::ostringstream os;
    for (std::size_t k = 0; k < cols.size(); ++k) os << (k ? ", " : "") << cols[k];
    return os.str();
}

}  // namespace

Eigen::VectorXd FitResult::se() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

std::ptrdiff_t FitResult::index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : it - names.begin();
}

void FitResult::set_wald_intervals(double lvl) {
    if (lower.size() == coef.size() && upper.size() == coef.size()) return;
    level = lvl;
    const double z = stats::normal_quantile(0.5 + lvl / 2.0);
    const Eigen::VectorXd s = se();
    lower = coef - z * s;
    upper = coef + z * s;
}

// ---------------------------------------------------------------------------

FitResult fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const std::vector<std::string>& names) {
    const Eigen::Index n = X.rows(), p = X.cols();
    FitResult fit;
    fit.method = "ols";
    fit.names = default_names(names, p);
    if (n < p) throw SingularDesignError("fewer rows than coefficients in linear regression");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
        throw SingularDesignError("design matrix is rank deficient; collinear columns: " +
                                  collinear_columns(X, fit.names));
    fit.coef = qr.solve(y);
    const Eigen::VectorXd resid = y - X * fit.coef;
    const double rss = resid.squaredNorm();
    fit.sigma2 = n > p ? rss / static_cast<double>(n - p) : 0.0;
    const Eigen::MatrixXd xtx_inv = stats::sym_inverse(X.transpose() * X);
    fit.cov = fit.sigma2 * xtx_inv;
    const double s2ml = rss / static_cast<double>(n);
    fit.loglik = s2ml > 0.0 ? -0.5 * static_cast<double>(n) *
                                  (std::log(2.0 * std::numbers::pi * s2ml) + 1.0)
                            : std::numeric_limits<double>::infinity();
    fit.grad_norm = n > 0 ? (X.transpose() * resid).cwiseAbs().maxCoeff() : 0.0;
    return fit;
}

double gaussian_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, double sigma2) {
    const double rss = (y - X * beta).squaredNorm();
    return -0.5 * static_cast<double>(y.size()) * std::log(2.0 * std::numbers::pi * sigma2) -
           0.5 * rss / sigma2;
}

// ---------------------------------------------------------------------------

double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    const Eigen::VectorXd eta = X * beta;
    double ll = 0.0;
    Eigen::VectorXd resid(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        ll += y[i] * eta[i] - stats::log1p_exp(eta[i]);
        const double p = stats::expit(eta[i]);
        resid[i] = y[i] - p;
        w[i] = p * (1.0 - p);
    }
    if (grad) *grad = X.transpose() * resid;
    if (hess) *hess = -(X.transpose() * w.asDiagonal() * X);
    return ll;
}

FitResult fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const std::vector<std::string>& names, const LogisticOptions& opts) {
    const Eigen::Index p = X.cols();
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0) throw DataError("logistic outcome must be 0/1");
    FitResult fit;
    fit.method = "logistic";
    fit.names = default_names(names, p);
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < p)
            throw SingularDesignError("design matrix is rank deficient; collinear columns: " +
                                      collinear_columns(X, fit.names));
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    double ll = logistic_loglik(X, y, beta, &g, &h);
    std::ostringstream trace;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(-h);
        Eigen::VectorXd step = ldlt.solve(g);
        if (ldlt.info() != Eigen::Success || !step.allFinite())
            throw SeparationError("fitted probabilities reached 0 or 1; the outcome is separated");
        // A small score alone is not enough: under separation the score
        // vanishes while the Newton step stays of order one.
        if (g.cwiseAbs().maxCoeff() < opts.grad_tol && step.cwiseAbs().maxCoeff() < 1e-6) break;
        double a = 1.0;
        Eigen::VectorXd nb;
        double nll = 0.0;
        for (int ls = 0; ls < 30; ++ls) {
            nb = beta + a * step;
            nll = logistic_loglik(X, y, nb);
            if (nll >= ll - 1e-12 * std::abs(ll)) break;
            a *= 0.5;
        }
        const double moved = (nb - beta).cwiseAbs().maxCoeff();
        const double gain = nll - ll;
        beta = nb;
        // Coefficients running off with no likelihood gain: fitted
        // probabilities have saturated at 0 or 1.
        if (beta.norm() > opts.separation_norm || (moved > 1.0 && std::abs(gain) < 1e-8))
            throw SeparationError("logistic coefficients diverging (norm " +
                                  std::to_string(beta.norm()) + "); the outcome is separated");
        ll = logistic_loglik(X, y, beta, &g, &h);
        trace << "iter " << it + 1 << " loglik " << ll << " grad " << g.cwiseAbs().maxCoeff()
              << "\n";
    }
    fit.grad_norm = g.cwiseAbs().maxCoeff();
    if (fit.grad_norm >= opts.grad_tol)
        throw ConvergenceError("logistic regression did not converge after " +
                               std::to_string(opts.max_iter) + " iterations\n" + trace.str());
    fit.coef = beta;
    fit.loglik = ll;
    fit.iterations = it;
    fit.cov = stats::sym_inverse(-h);
    return fit;
}

// ---------------------------------------------------------------------------

double weibull_loglik(const Eigen::VectorXd& t, const Eigen::VectorXd& d, const Eigen::MatrixXd& X,
                      const Eigen::VectorXd& w, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
    const Eigen::Index n = X.rows(), p = X.cols();
    const double rho = w[0];
    const double r = std::exp(rho);
    const Eigen::VectorXd eta = X * w.tail(p);
    double ll = 0.0;
    if (grad) grad->setZero(p + 1);
    if (hess) hess->setZero(p + 1, p + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lt = std::log(t[i]);
        const double H = std::exp(r * lt + eta[i]);
        ll += d[i] * (rho + (r - 1.0) * lt + eta[i]) - H;
        if (grad || hess) {
            const double rl = r * lt;
            const double gr = d[i] * (1.0 + rl) - H * rl;
            const double ge = d[i] - H;
            if (grad) {
                (*grad)[0] += gr;
                grad->tail(p) += ge * X.row(i).transpose();
            }
            if (hess) {
                (*hess)(0, 0) += d[i] * rl - H * rl * rl - H * rl;
                const Eigen::VectorXd xr = X.row(i).transpose();
                hess->block(1, 0, p, 1) += -H * rl * xr;
                hess->block(1, 1, p, p) += -H * xr * xr.transpose();
            }
        }
    }
    if (hess) hess->block(0, 1, 1, p) = hess->block(1, 0, p, 1).transpose();
    return ll;
}

FitResult fit_weibull_ph(const Eigen::VectorXd& t, const Eigen::VectorXd& d,
                         const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                         const WeibullOptions& opts) {
    const Eigen::Index n = X.rows(), p = X.cols();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(t[i] > 0.0)) throw DataError("survival times must be strictly positive");
        if (d[i] != 0.0 && d[i] != 1.0) throw DataError("event indicator must be 0/1");
    }
    const double events = d.sum();
    if (events < 1.0) throw NoEventsError("no events: every survival time is censored");
    FitResult fit;
    fit.method = "weibull";
    fit.names = default_names(names, p);
    {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < p)
            throw SingularDesignError("design matrix is rank deficient; collinear columns: " +
                                      collinear_columns(X, fit.names));
    }

    // Free coordinates: log r (unless fixed) and beta.
    const bool fix_shape = opts.fixed_shape.has_value();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p + 1);
    if (fix_shape) w[0] = std::log(*opts.fixed_shape);
    // Start at the exponential-model intercept when the first column is constant.
    bool has_intercept = n > 0 && (X.col(0).array() == 1.0).all();
    if (has_intercept) {
        const double r0 = std::exp(w[0]);
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) s += std::pow(t[i], r0);
        w[1] = std::log(events / s);
    }
    const Eigen::Index off = fix_shape ? 1 : 0;
    const Eigen::Index k = p + 1 - off;

    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    double ll = weibull_loglik(t, d, X, w, &g, &h);
    std::ostringstream trace;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        const Eigen::VectorXd gf = g.tail(k);
        if (gf.cwiseAbs().maxCoeff() < opts.grad_tol) break;
        Eigen::MatrixXd A = -h.bottomRightCorner(k, k);
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        double lambda = 0.0;
        while (llt.info() != Eigen::Success) {
            lambda = lambda == 0.0 ? 1e-6 * std::max(1.0, A.diagonal().cwiseAbs().maxCoeff())
                                   : lambda * 10.0;
            llt.compute(A + lambda * Eigen::MatrixXd::Identity(k, k));
        }
        const Eigen::VectorXd step = llt.solve(gf);
        double a = 1.0;
        Eigen::VectorXd nw = w;
        double nll = -std::numeric_limits<double>::infinity();
        bool ok = false;
        // Near the optimum the predicted gain is below the rounding noise of
        // the log-likelihood; accept the Newton step if the score shrinks.
        if (gf.dot(step) < 1e-10 * (1.0 + std::abs(ll))) {
            nw.tail(k) = w.tail(k) + step;
            Eigen::VectorXd ng;
            nll = weibull_loglik(t, d, X, nw, &ng);
            ok = std::isfinite(nll) &&
                 ng.tail(k).cwiseAbs().maxCoeff() < gf.cwiseAbs().maxCoeff();
        }
        for (int ls = 0; ls < 40 && !ok; ++ls) {
            nw.tail(k) = w.tail(k) + a * step;
            nll = weibull_loglik(t, d, X, nw);
            if (std::isfinite(nll) && nll > ll + 1e-4 * a * gf.dot(step)) {
                ok = true;
                break;
            }
            a *= 0.5;
        }
        if (!ok) break;
        w = nw;
        ll = weibull_loglik(t, d, X, w, &g, &h);
        trace << "iter " << it + 1 << " loglik " << ll << " grad "
              << g.tail(k).cwiseAbs().maxCoeff() << "\n";
    }
    fit.grad_norm = g.tail(k).cwiseAbs().maxCoeff();
    if (!(fit.grad_norm < opts.grad_tol))
        throw ConvergenceError("Weibull regression did not converge\n" + trace.str());
    fit.iterations = it;
    fit.loglik = ll;
    fit.coef = w.tail(p);
    fit.shape = std::exp(w[0]);
    const Eigen::MatrixXd cov = stats::sym_inverse(-h.bottomRightCorner(k, k));
    fit.cov = cov.bottomRightCorner(p, p);
    if (!fix_shape) fit.log_shape_se = std::sqrt(std::max(0.0, cov(0, 0)));
    return fit;
}

FitResult fit_outcome(OutcomeKind kind, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& event, const std::vector<std::string>& names) {
    switch (kind) {
        case OutcomeKind::LinearNormal: return fit_ols(X, y, names);
        case OutcomeKind::LogisticBinary: return fit_logistic(X, y, names);
        case OutcomeKind::WeibullSurvival: return fit_weibull_ph(y, event, X, names);
    }
    throw ConfigError("unknown outcome family");
}

// ---------------------------------------------------------------------------

StepFunction::StepFunction(std::vector<double> knots, std::vector<double> values)
    : knots_(std::move(knots)), values_(std::move(values)) {}

double StepFunction::operator()(double t) const {
    auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    if (it == knots_.begin()) return 0.0;
    return values_[static_cast<std::size_t>(it - knots_.begin() - 1)];
}

StepFunction nelson_aalen(const Eigen::VectorXd& t, const Eigen::VectorXd& d) {
    const auto n = static_cast<std::size_t>(t.size());
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return t[static_cast<Eigen::Index>(a)] < t[static_cast<Eigen::Index>(b)];
    });
    std::vector<double> knots, values;
    double cum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        const double ti = t[static_cast<Eigen::Index>(order[i])];
        const double at_risk = static_cast<double>(n - i);
        double events = 0.0;
        std::size_t j = i;
        while (j < n && t[static_cast<Eigen::Index>(order[j])] == ti) {
            events += d[static_cast<Eigen::Index>(order[j])];
            ++j;
        }
        if (events > 0.0) {
            cum += events / at_risk;
            knots.push_back(ti);
            values.push_back(cum);
        }
        i = j;
    }
    return StepFunction(std::move(knots), std::move(values));
}

// ---------------------------------------------------------------------------

BootstrapResult bootstrap(const Estimator& estimator, const Dataset& ds, int B,
                          const RngStream& rng, const BootstrapOptions& opts) {
    if (B < 2) throw ConfigError("bootstrap needs at least 2 replicates");
    BootstrapResult res;
    res.requested = B;
    res.estimate = estimator(ds);
    const Eigen::Index p = res.estimate.size();

    std::vector<std::size_t> group0, group1;
    for (std::size_t i = 0; i < ds.n(); ++i) (ds.r()[i] ? group1 : group0).push_back(i);

    std::vector<Eigen::VectorXd> est(static_cast<std::size_t>(B));
    std::vector<std::string> err(static_cast<std::size_t>(B));
    std::vector<std::uint8_t> ok(static_cast<std::size_t>(B), 0);
    parallel_for(
        static_cast<std::size_t>(B),
        [&](std::size_t b) {
            RngStream g = rng.split(b);
            std::vector<std::size_t> rows;
            rows.reserve(ds.n());
            if (opts.stratify_on_r) {
                for (const auto* grp : {&group0, &group1})
                    for (std::size_t k = 0; k < grp->size(); ++k)
                        rows.push_back((*grp)[g.index(grp->size())]);
            } else {
                for (std::size_t k = 0; k < ds.n(); ++k) rows.push_back(g.index(ds.n()));
            }
            try {
                Eigen::VectorXd e = estimator(ds.take_rows(rows));
                if (e.size() != p || !e.allFinite()) throw Error("non-finite estimate");
                est[b] = std::move(e);
                ok[b] = 1;
            } catch (const std::exception& ex) {
                err[b] = ex.what();
            }
        },
        opts.threads);

    std::vector<std::size_t> good;
    for (std::size_t b = 0; b < ok.size(); ++b) {
        if (ok[b])
            good.push_back(b);
        else
            res.failure_messages.push_back("replicate " + std::to_string(b) + ": " + err[b]);
    }
    res.failures = B - static_cast<int>(good.size());
    if (static_cast<double>(res.failures) > opts.max_fail_fraction * B || good.size() < 2) {
        std::string msg = std::to_string(res.failures) + " of " + std::to_string(B) +
                          " bootstrap replicates failed";
        if (!res.failure_messages.empty()) msg += "; first: " + res.failure_messages.front();
        throw BootstrapFailure(msg);
    }
    res.draws.resize(static_cast<Eigen::Index>(good.size()), p);
    for (std::size_t k = 0; k < good.size(); ++k)
        res.draws.row(static_cast<Eigen::Index>(k)) = est[good[k]].transpose();

    const double alpha = 1.0 - opts.level;
    const double z = stats::normal_quantile(1.0 - alpha / 2.0);
    res.se.resize(p);
    res.pct_lower.resize(p);
    res.pct_upper.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        std::vector<double> col(res.draws.col(j).data(), res.draws.col(j).data() + res.draws.rows());
        res.se[j] = std::sqrt(stats::variance(col));
        res.pct_lower[j] = stats::quantile(col, alpha / 2.0);
        res.pct_upper[j] = stats::quantile(col, 1.0 - alpha / 2.0);
    }
    res.normal_lower = res.estimate - z * res.se;
    res.normal_upper = res.estimate + z * res.se;
    return res;
}

}  // namespace mecor
