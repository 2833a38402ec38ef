#include "mecor/mle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mecor/error.hpp"
#include "mecor/regcal.hpp"
#include "mecor/stats.hpp"

namespace mecor {

namespace {

using Eigen::Index;

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Index ix(std::size_t i) { return static_cast<Index>(i); }

// Linear form sum_k c_k w[j_k] over at most a handful of parameters.
struct Lin {
    Index idx[16] = {};
    double coef[16] = {};
    int n = 0;
    void add(Index j, double c) {
        idx[n] = j;
        coef[n] = c;
        ++n;
    }
};

// Accumulates log f(x), its x-derivatives and, optionally, parameter
// derivatives of one record's integrand at a fixed latent x.
struct Acc {
    double lf = 0.0, d1 = 0.0, d2 = 0.0;
    Eigen::VectorXd* g = nullptr;
    Eigen::MatrixXd* h = nullptr;

    // Gaussian factor with residual r = v - mu, log variance phi = w[phi_idx],
    // mu linear in the parameters via `lin`; drdx = d r / d x.
    void gauss(double r, double phi, const Lin& lin, Index phi_idx, double drdx) {
        const double e = std::exp(-phi);
        lf += -0.5 * (kLog2Pi + phi + r * r * e);
        d1 += -r * e * drdx;
        d2 += -e * drdx * drdx;
        if (g) {
            const double lmu = r * e;
            for (int a = 0; a < lin.n; ++a) (*g)[lin.idx[a]] += lmu * lin.coef[a];
            (*g)[phi_idx] += -0.5 + 0.5 * r * r * e;
        }
        if (h) {
            const double lmumu = -e, lmuphi = -r * e, lphiphi = -0.5 * r * r * e;
            for (int a = 0; a < lin.n; ++a) {
                for (int b = 0; b < lin.n; ++b)
                    (*h)(lin.idx[a], lin.idx[b]) += lmumu * lin.coef[a] * lin.coef[b];
                (*h)(lin.idx[a], phi_idx) += lmuphi * lin.coef[a];
                (*h)(phi_idx, lin.idx[a]) += lmuphi * lin.coef[a];
            }
            (*h)(phi_idx, phi_idx) += lphiphi;
        }
    }

    // Factor depending on the parameters through eta (linear, `lin`) and an
    // optional extra parameter rho: l, l_eta, l_etaeta, l_rho, l_etarho, l_rhorho.
    void general(double l, double le, double lee, const Lin& lin, double detadx, Index rho_idx = -1,
                 double lr = 0.0, double ler = 0.0, double lrr = 0.0) {
        lf += l;
        d1 += le * detadx;
        d2 += lee * detadx * detadx;
        if (g) {
            for (int a = 0; a < lin.n; ++a) (*g)[lin.idx[a]] += le * lin.coef[a];
            if (rho_idx >= 0) (*g)[rho_idx] += lr;
        }
        if (h) {
            for (int a = 0; a < lin.n; ++a) {
                for (int b = 0; b < lin.n; ++b)
                    (*h)(lin.idx[a], lin.idx[b]) += lee * lin.coef[a] * lin.coef[b];
                if (rho_idx >= 0) {
                    (*h)(lin.idx[a], rho_idx) += ler * lin.coef[a];
                    (*h)(rho_idx, lin.idx[a]) += ler * lin.coef[a];
                }
            }
            if (rho_idx >= 0) (*h)(rho_idx, rho_idx) += lrr;
        }
    }
};

}  // namespace

// ---------------------------------------------------------------------------

Index ParamLayout::index_of(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return ix(k);
    return -1;
}

ParamLayout make_layout(const ModelFrame& f) {
    ParamLayout l;
    l.names = f.outcome_names();
    l.p_beta = ix(l.names.size());
    Index k = l.p_beta;
    if (f.outcome == OutcomeKind::LinearNormal) {
        l.outcome_nuisance = k++;
        l.names.push_back("log_sigma2_y");
    } else if (f.outcome == OutcomeKind::WeibullSurvival) {
        l.outcome_nuisance = k++;
        l.names.push_back("log_shape");
    }
    if (f.design != DesignKind::Replication) {
        l.theta0 = k++;
        l.theta1 = k++;
        l.names.push_back("theta0");
        l.names.push_back("theta1");
    }
    l.log_sigma2_u = k++;
    l.names.push_back("log_sigma2_u");
    if (f.design == DesignKind::Calibration) {
        l.log_sigma2_u2 = k++;
        l.names.push_back("log_sigma2_u2");
    }
    l.gamma = k;
    l.names.push_back("gamma0");
    for (const auto& z : f.z_names) l.names.push_back("gamma_" + z);
    k += 1 + ix(f.z_names.size());
    l.log_tau2 = k++;
    l.names.push_back("log_tau2");
    l.dim = k;
    return l;
}

Eigen::VectorXd pack(const ParamLayout& l, const JointParams& p) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(l.dim);
    if (p.beta.size() != l.p_beta) throw ConfigError("beta has the wrong length");
    w.head(l.p_beta) = p.beta;
    if (l.outcome_nuisance >= 0)
        w[l.outcome_nuisance] =
            std::log(l.names[static_cast<std::size_t>(l.outcome_nuisance)] == "log_shape"
                         ? p.shape
                         : p.sigma2_y);
    if (l.theta0 >= 0) {
        w[l.theta0] = p.theta0;
        w[l.theta1] = p.theta1;
    }
    w[l.log_sigma2_u] = std::log(p.sigma2_u);
    if (l.log_sigma2_u2 >= 0) w[l.log_sigma2_u2] = std::log(p.sigma2_u2);
    const Index ng = l.log_tau2 - l.gamma;
    if (p.gamma.size() != ng) throw ConfigError("gamma has the wrong length");
    w.segment(l.gamma, ng) = p.gamma;
    w[l.log_tau2] = std::log(p.tau2);
    return w;
}

JointParams unpack(const ParamLayout& l, const Eigen::VectorXd& w) {
    JointParams p;
    p.beta = w.head(l.p_beta);
    if (l.outcome_nuisance >= 0) {
        if (l.names[static_cast<std::size_t>(l.outcome_nuisance)] == "log_shape")
            p.shape = std::exp(w[l.outcome_nuisance]);
        else
            p.sigma2_y = std::exp(w[l.outcome_nuisance]);
    }
    if (l.theta0 >= 0) {
        p.theta0 = w[l.theta0];
        p.theta1 = w[l.theta1];
    }
    p.sigma2_u = std::exp(w[l.log_sigma2_u]);
    if (l.log_sigma2_u2 >= 0) p.sigma2_u2 = std::exp(w[l.log_sigma2_u2]);
    p.gamma = w.segment(l.gamma, l.log_tau2 - l.gamma);
    p.tau2 = std::exp(w[l.log_tau2]);
    return p;
}

// ---------------------------------------------------------------------------

JointLikelihood::JointLikelihood(ModelFrame frame, const LikelihoodOptions& opts)
    : frame_(std::move(frame)), threads_(opts.threads) {
    if (!opts.nondifferential)
        throw UnsupportedConfiguration(
            "maximum likelihood supports non-differential measurement error only");
    for (std::size_t i = 0; i < frame_.n(); ++i)
        if (!frame_.z_complete(i))
            throw DataError("maximum likelihood needs complete covariates on every analysed row");
    if (frame_.q() > 12) throw UnsupportedConfiguration("maximum likelihood supports at most 12 covariates");
    layout_ = make_layout(frame_);
    rule_ = gauss_hermite(opts.quad_points);
}

namespace {

// log f(x) for record i with parameter derivatives accumulated into acc.
void integrand(const ModelFrame& f, const ParamLayout& l, std::size_t i, double x,
               const Eigen::VectorXd& w, Acc& acc) {
    const Index q = f.z.cols();
    const Index row = ix(i);

    // Outcome.
    Lin eta_lin;
    eta_lin.add(0, 1.0);
    eta_lin.add(1, x);
    double eta = w[0] + w[1] * x;
    for (Index j = 0; j < q; ++j) {
        eta_lin.add(2 + j, f.z(row, j));
        eta += w[2 + j] * f.z(row, j);
    }
    const double bx = w[1];
    switch (f.outcome) {
        case OutcomeKind::LinearNormal:
            acc.gauss(f.y[row] - eta, w[l.outcome_nuisance], eta_lin, l.outcome_nuisance, -bx);
            break;
        case OutcomeKind::LogisticBinary: {
            const double y = f.y[row];
            const double p = stats::expit(eta);
            acc.general(y * eta - stats::log1p_exp(eta), y - p, -p * (1.0 - p), eta_lin, bx);
            break;
        }
        case OutcomeKind::WeibullSurvival: {
            const double rho = w[l.outcome_nuisance];
            const double r = std::exp(rho);
            const double lt = std::log(f.y[row]);
            const double d = f.event[row];
            const double rl = r * lt;
            const double H = std::exp(rl + eta);
            acc.general(d * (rho + (r - 1.0) * lt + eta) - H, d - H, -H, eta_lin, bx,
                        l.outcome_nuisance, d * (1.0 + rl) - H * rl, -H * rl,
                        d * rl - H * rl * rl - H * rl);
            break;
        }
    }

    // Measurements.
    const Lin none{};
    auto systematic = [&](double m) {
        Lin lin;
        lin.add(l.theta0, 1.0);
        lin.add(l.theta1, x);
        acc.gauss(m - w[l.theta0] - w[l.theta1] * x, w[l.log_sigma2_u], lin, l.log_sigma2_u,
                  -w[l.theta1]);
    };
    switch (f.design) {
        case DesignKind::Validation:
            if (f.m1_obs[i]) systematic(f.m1[row]);
            break;
        case DesignKind::Replication:
            if (f.m1_obs[i]) acc.gauss(f.m1[row] - x, w[l.log_sigma2_u], none, l.log_sigma2_u, -1.0);
            if (f.m2_obs[i]) acc.gauss(f.m2[row] - x, w[l.log_sigma2_u], none, l.log_sigma2_u, -1.0);
            break;
        case DesignKind::Calibration:
            if (f.m1_obs[i]) systematic(f.m1[row]);
            if (f.m2_obs[i])
                acc.gauss(f.m2[row] - x, w[l.log_sigma2_u2], none, l.log_sigma2_u2, -1.0);
            if (f.m3_obs[i])
                acc.gauss(f.m3[row] - x, w[l.log_sigma2_u2], none, l.log_sigma2_u2, -1.0);
            break;
    }

    // Exposure model.
    Lin glin;
    glin.add(l.gamma, 1.0);
    double mu = w[l.gamma];
    for (Index j = 0; j < q; ++j) {
        glin.add(l.gamma + 1 + j, f.z(row, j));
        mu += w[l.gamma + 1 + j] * f.z(row, j);
    }
    acc.gauss(x - mu, w[l.log_tau2], glin, l.log_tau2, 1.0);
}

bool x_observed(const ModelFrame& f, std::size_t i) {
    return f.design == DesignKind::Validation && f.r[i] && f.x_obs[i];
}

}  // namespace

double JointLikelihood::record(std::size_t i, const Eigen::VectorXd& w, Eigen::VectorXd* grad,
                               Eigen::MatrixXd* hess) const {
    const Index P = layout_.dim;
    if (x_observed(frame_, i)) {
        Acc acc;
        acc.g = grad;
        acc.h = hess;
        integrand(frame_, layout_, i, frame_.x[ix(i)], w, acc);
        return acc.lf;
    }

    // Mode of the integrand by damped Newton; every factor is log-concave in x.
    auto at = [&](double x) {
        Acc a;
        integrand(frame_, layout_, i, x, w, a);
        return a;
    };
    double x = w[layout_.gamma];
    for (Index j = 0; j < frame_.z.cols(); ++j) x += w[layout_.gamma + 1 + j] * frame_.z(ix(i), j);
    Acc cur = at(x);
    for (int it = 0; it < 100; ++it) {
        if (!(cur.d2 < 0.0)) break;
        const double step = -cur.d1 / cur.d2;
        double a = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            Acc nxt = at(x + a * step);
            if (std::isfinite(nxt.lf) && nxt.lf >= cur.lf - 1e-12 * std::abs(cur.lf)) {
                x += a * step;
                cur = nxt;
                moved = true;
                break;
            }
            a *= 0.5;
        }
        if (!moved || std::abs(a * step) < 1e-10 * (1.0 + std::abs(x))) break;
    }
    const double sd = 1.0 / std::sqrt(-cur.d2);

    const int K = rule_.size();
    std::vector<double> logt(static_cast<std::size_t>(K));
    std::vector<Eigen::VectorXd> gk;
    std::vector<Eigen::MatrixXd> hk;
    if (grad) gk.assign(static_cast<std::size_t>(K), Eigen::VectorXd::Zero(P));
    if (hess) hk.assign(static_cast<std::size_t>(K), Eigen::MatrixXd::Zero(P, P));
    for (int k = 0; k < K; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const double t = rule_.nodes[kk];
        Acc a;
        if (grad) a.g = &gk[kk];
        if (hess) a.h = &hk[kk];
        integrand(frame_, layout_, i, x + std::numbers::sqrt2 * sd * t, w, a);
        logt[kk] = std::log(rule_.weights[kk]) + t * t + a.lf;
    }
    const double lse = stats::log_sum_exp(logt);
    const double value = std::log(std::numbers::sqrt2 * sd) + lse;
    if (grad || hess) {
        Eigen::VectorXd gbar = Eigen::VectorXd::Zero(P);
        std::vector<double> wk(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) wk[static_cast<std::size_t>(k)] = std::exp(logt[static_cast<std::size_t>(k)] - lse);
        if (grad || hess)
            for (int k = 0; k < K; ++k)
                if (!gk.empty()) gbar += wk[static_cast<std::size_t>(k)] * gk[static_cast<std::size_t>(k)];
        if (grad) *grad = gbar;
        if (hess) {
            Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
            for (int k = 0; k < K; ++k) {
                const auto kk = static_cast<std::size_t>(k);
                H += wk[kk] * (hk[kk] + gk[kk] * gk[kk].transpose());
            }
            H -= gbar * gbar.transpose();
            *hess = H;
        }
    }
    return value;
}

double JointLikelihood::record_loglik(std::size_t i, const Eigen::VectorXd& w) const {
    return record(i, w, nullptr, nullptr);
}

double JointLikelihood::evaluate(const Eigen::VectorXd& w, Eigen::VectorXd* grad,
                                 Eigen::MatrixXd* hess) const {
    const Index P = layout_.dim;
    const std::size_t n = frame_.n();
    // Fixed chunking keeps the reduction order independent of the thread count.
    const std::size_t chunks = std::min<std::size_t>(n, 32);
    std::vector<double> val(chunks, 0.0);
    std::vector<Eigen::VectorXd> gs(chunks);
    std::vector<Eigen::MatrixXd> hs(chunks);
    parallel_for(
        chunks,
        [&](std::size_t c) {
            const std::size_t lo = c * n / chunks, hi = (c + 1) * n / chunks;
            Eigen::VectorXd gi(P), gsum = Eigen::VectorXd::Zero(grad || hess ? P : 0);
            Eigen::MatrixXd hi_m(P, P), hsum = Eigen::MatrixXd::Zero(hess ? P : 0, hess ? P : 0);
            double s = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                gi.setZero();
                if (hess) hi_m.setZero();
                s += record(i, w, (grad || hess) ? &gi : nullptr, hess ? &hi_m : nullptr);
                if (grad || hess) gsum += gi;
                if (hess) hsum += hi_m;
            }
            val[c] = s;
            gs[c] = std::move(gsum);
            hs[c] = std::move(hsum);
        },
        threads_);
    double total = 0.0;
    if (grad) grad->setZero(P);
    if (hess) hess->setZero(P, P);
    for (std::size_t c = 0; c < chunks; ++c) {
        total += val[c];
        if (grad) *grad += gs[c];
        if (hess) *hess += hs[c];
    }
    if (!std::isfinite(total)) return -std::numeric_limits<double>::infinity();
    return total;
}

double JointLikelihood::value(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const {
    return evaluate(w, grad, nullptr);
}

bool JointLikelihood::hessian(const Eigen::VectorXd& w, Eigen::MatrixXd& h) const {
    evaluate(w, nullptr, &h);
    return h.allFinite();
}

// ---------------------------------------------------------------------------

namespace {

double loglik_for(DesignKind expected, const JointParams& p, const Dataset& ds,
                  const StudyDesign& design, const OutcomeSpec& outcome,
                  const LikelihoodOptions& opts) {
    if (!opts.nondifferential)
        throw UnsupportedConfiguration(
            "maximum likelihood supports non-differential measurement error only");
    if (design.kind != expected)
        throw DataError("likelihood requested for a " + to_string(expected) +
                        " design but the dataset is bound as " + to_string(design.kind));
    JointLikelihood model(build_frame(ds, design, outcome), opts);
    return model.value(pack(model.layout(), p), nullptr);
}

}  // namespace

double loglik_validation(const JointParams& p, const Dataset& ds, const StudyDesign& design,
                         const OutcomeSpec& outcome, const LikelihoodOptions& opts) {
    return loglik_for(DesignKind::Validation, p, ds, design, outcome, opts);
}

double loglik_replication(const JointParams& p, const Dataset& ds, const StudyDesign& design,
                          const OutcomeSpec& outcome, const LikelihoodOptions& opts) {
    return loglik_for(DesignKind::Replication, p, ds, design, outcome, opts);
}

// ---------------------------------------------------------------------------

namespace {

double var_floor(double v, double floor) { return std::isfinite(v) && v > floor ? v : floor; }

// Error-model and exposure-model starting values from simple moments.
void moment_start(const ModelFrame& f, JointParams& p) {
    const auto n = f.n();
    const Index q = f.z.cols();
    std::vector<double> m1;
    for (std::size_t i = 0; i < n; ++i)
        if (f.m1_obs[i]) m1.push_back(f.m1[ix(i)]);
    const double v1 = var_floor(stats::variance(m1), 1e-4);

    auto regress_on_z = [&](const std::vector<std::size_t>& rows, const std::vector<double>& resp,
                            Eigen::VectorXd& coef, double& rvar) {
        Eigen::MatrixXd V(ix(rows.size()), q + 1);
        Eigen::VectorXd y(ix(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            V(ix(k), 0) = 1.0;
            if (q > 0) V.block(ix(k), 1, 1, q) = f.z.row(ix(rows[k]));
            y[ix(k)] = resp[k];
        }
        FitResult fit = fit_ols(V, y);
        coef = fit.coef;
        rvar = fit.sigma2;
    };

    switch (f.design) {
        case DesignKind::Replication: {
            std::vector<double> diffs;
            std::vector<std::size_t> rows;
            std::vector<double> wbar;
            double inv_k = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (f.m1_obs[i] && f.m2_obs[i]) diffs.push_back(f.m1[ix(i)] - f.m2[ix(i)]);
                int k = 0;
                const double m = f.measure_mean(i, &k);
                if (k == 0) continue;
                rows.push_back(i);
                wbar.push_back(m);
                inv_k += 1.0 / k;
            }
            p.sigma2_u = var_floor(0.5 * stats::variance(diffs), 1e-3 * v1);
            double rv = 0.0;
            regress_on_z(rows, wbar, p.gamma, rv);
            p.tau2 = var_floor(rv - p.sigma2_u * inv_k / static_cast<double>(rows.size()), 0.1 * v1);
            break;
        }
        case DesignKind::Validation: {
            std::vector<std::size_t> rows;
            std::vector<double> xs, ms;
            for (std::size_t i = 0; i < n; ++i) {
                if (!(f.r[i] && f.x_obs[i])) continue;
                rows.push_back(i);
                xs.push_back(f.x[ix(i)]);
            }
            double rv = 0.0;
            regress_on_z(rows, xs, p.gamma, rv);
            p.tau2 = var_floor(rv, 1e-3 * v1);
            std::vector<std::size_t> both;
            for (std::size_t i : rows)
                if (f.m1_obs[i]) both.push_back(i);
            Eigen::MatrixXd A(ix(both.size()), 2);
            Eigen::VectorXd b(ix(both.size()));
            for (std::size_t k = 0; k < both.size(); ++k) {
                A(ix(k), 0) = 1.0;
                A(ix(k), 1) = f.x[ix(both[k])];
                b[ix(k)] = f.m1[ix(both[k])];
            }
            FitResult e = fit_ols(A, b);
            p.theta0 = e.coef[0];
            p.theta1 = e.coef[1];
            p.sigma2_u = var_floor(e.sigma2, 1e-3 * v1);
            break;
        }
        case DesignKind::Calibration: {
            std::vector<std::size_t> rows;
            std::vector<double> xs, diffs;
            double inv_k = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                int k = 0;
                if (f.m2_obs[i]) {
                    s += f.m2[ix(i)];
                    ++k;
                }
                if (f.m3_obs[i]) {
                    s += f.m3[ix(i)];
                    ++k;
                }
                if (f.m2_obs[i] && f.m3_obs[i]) diffs.push_back(f.m2[ix(i)] - f.m3[ix(i)]);
                if (k == 0) continue;
                rows.push_back(i);
                xs.push_back(s / k);
                inv_k += 1.0 / k;
            }
            double rv = 0.0;
            regress_on_z(rows, xs, p.gamma, rv);
            p.sigma2_u2 = diffs.size() > 2 ? var_floor(0.5 * stats::variance(diffs), 1e-3 * rv)
                                           : var_floor(0.2 * rv, 1e-3);
            const double kbar = inv_k / static_cast<double>(rows.size());
            p.tau2 = var_floor(rv - p.sigma2_u2 * kbar, 0.1 * rv);
            std::vector<std::size_t> both;
            for (std::size_t k = 0; k < rows.size(); ++k)
                if (f.m1_obs[rows[k]]) both.push_back(k);
            Eigen::MatrixXd A(ix(both.size()), 2);
            Eigen::VectorXd b(ix(both.size()));
            for (std::size_t k = 0; k < both.size(); ++k) {
                A(ix(k), 0) = 1.0;
                A(ix(k), 1) = xs[both[k]];
                b[ix(k)] = f.m1[ix(rows[both[k]])];
            }
            FitResult e = fit_ols(A, b);
            const double rel = p.tau2 / (p.tau2 + p.sigma2_u2 * kbar);
            p.theta1 = e.coef[1] / rel;
            p.theta0 = stats::mean(std::vector<double>(b.data(), b.data() + b.size())) -
                       p.theta1 * stats::mean(std::vector<double>(A.col(1).data(),
                                                                  A.col(1).data() + A.rows()));
            p.sigma2_u = var_floor(v1 - p.theta1 * p.theta1 * p.tau2, 0.05 * v1);
            break;
        }
    }
}

void apply_fixed(const ParamLayout& l, const std::map<std::string, double>& fixed,
                 Eigen::VectorXd& w, std::vector<bool>& free) {
    for (const auto& [name, v] : fixed) {
        Index j = l.index_of(name);
        double val = v;
        if (j < 0) {
            j = l.index_of("log_" + name);
            if (j >= 0) {
                if (!(v > 0.0)) throw ConfigError("fixed value for '" + name + "' must be > 0");
                val = std::log(v);
            }
        }
        if (j < 0) throw ConfigError("unknown parameter '" + name + "' in fixed parameters");
        w[j] = val;
        free[static_cast<std::size_t>(j)] = false;
    }
}

void check_identified(const ModelFrame& f) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < f.n(); ++i) {
        switch (f.design) {
            case DesignKind::Validation: k += f.r[i] && f.x_obs[i]; break;
            case DesignKind::Replication: k += f.m1_obs[i] && f.m2_obs[i]; break;
            case DesignKind::Calibration: k += f.m2_obs[i] || f.m3_obs[i]; break;
        }
    }
    if (k < 2)
        throw IdentifiabilityError(
            "the measurement error model is not identified: fewer than 2 sub-study rows carry "
            "the second measure");
}

}  // namespace

MlResult fit_ml(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome,
                const MlOptions& opts, const RngStream& rng) {
    if (!opts.nondifferential)
        throw UnsupportedConfiguration(
            "maximum likelihood supports non-differential measurement error only");
    FrameOptions fo;
    fo.allow_missing_primary = opts.allow_missing_primary;
    ModelFrame f = build_frame(ds, design, outcome, fo);
    check_identified(f);
    LikelihoodOptions lo;
    lo.quad_points = opts.quad_points;
    lo.threads = opts.threads;
    auto model = std::make_shared<JointLikelihood>(f, lo);
    const ParamLayout& l = model->layout();

    MlResult res;
    res.layout = l;
    res.free.assign(static_cast<std::size_t>(l.dim), true);
    Eigen::VectorXd probe = Eigen::VectorXd::Zero(l.dim);
    apply_fixed(l, opts.fixed, probe, res.free);

    // Starting points.
    std::vector<Eigen::VectorXd> starts;
    if (opts.start) {
        if (opts.start->size() != l.dim) throw ConfigError("start vector has the wrong length");
        starts.push_back(*opts.start);
    } else {
        JointParams base;
        moment_start(f, base);
        std::vector<std::size_t> cc;
        for (std::size_t i = 0; i < f.n(); ++i)
            if (f.m1_obs[i]) cc.push_back(i);
        Eigen::MatrixXd D(ix(cc.size()), l.p_beta);
        Eigen::VectorXd yy(ix(cc.size())), ev(ix(cc.size()));
        const Eigen::MatrixXd full = f.outcome_design(f.m1);
        for (std::size_t k = 0; k < cc.size(); ++k) {
            D.row(ix(k)) = full.row(ix(cc[k]));
            yy[ix(k)] = f.y[ix(cc[k])];
            if (f.event.size()) ev[ix(k)] = f.event[ix(cc[k])];
        }
        auto outcome_start = [&](const FitResult& fit) {
            JointParams p = base;
            p.beta = fit.coef;
            if (f.outcome == OutcomeKind::LinearNormal) p.sigma2_y = var_floor(fit.sigma2, 1e-6);
            if (fit.shape) p.shape = *fit.shape;
            return pack(l, p);
        };
        const FitResult naive = fit_outcome(f.outcome, D, yy, ev, f.outcome_names());
        starts.push_back(outcome_start(naive));
        Eigen::VectorXd rc_start = starts.back();
        try {
            std::vector<std::size_t> rows = cc;
            ModelFrame g = f;
            if (cc.size() != f.n()) g = build_frame(ds, design, outcome);
            const CalibrationModel cm = fit_calibration(g);
            const FitResult rc = fit_outcome(g.outcome, g.outcome_design(conditional_means(cm, g)),
                                             g.y, g.event, g.outcome_names());
            rc_start = outcome_start(rc);
            // Outcome residual variance given X is smaller than given X*.
            if (f.outcome == OutcomeKind::LinearNormal) {
                JointParams p = unpack(l, rc_start);
                p.sigma2_y = var_floor(rc.sigma2 - p.beta[1] * p.beta[1] * cm.residual_variance,
                                       0.05 * rc.sigma2);
                rc_start = pack(l, p);
            }
        } catch (const Error&) {
        }
        if (opts.starts >= 2) starts.push_back(rc_start);
        RngStream g = rng.split(0xC0FFEE);
        for (int s = 2; s < opts.starts; ++s) {
            Eigen::VectorXd w = rc_start;
            for (Index j = 0; j < l.dim; ++j) w[j] += 0.2 * std::max(0.5, std::abs(w[j])) * g.normal();
            starts.push_back(w);
        }
    }
    for (auto& s : starts) {
        std::vector<bool> dummy = res.free;
        apply_fixed(l, opts.fixed, s, dummy);
    }

    // Maximize from each start, keep the best converged optimum.
    OptimResult best;
    bool have = false;
    std::ostringstream trace;
    for (std::size_t s = 0; s < starts.size(); ++s) {
        OptimResult r = maximize(*model, starts[s], res.free, opts.optim);
        res.start_logliks.push_back(r.converged ? r.value : kNaN);
        trace << "start " << s << ": loglik " << r.value << ", gradient " << r.grad_norm
              << (r.converged ? "" : " (not converged)") << "\n";
        if (r.converged && (!have || r.value > best.value)) {
            best = r;
            have = true;
        }
    }
    if (!have)
        throw ConvergenceError("maximum likelihood did not converge from any start\n" + trace.str());

    // Observed information on the free block.
    std::vector<Index> fi;
    for (Index j = 0; j < l.dim; ++j)
        if (res.free[static_cast<std::size_t>(j)]) fi.push_back(j);
    Eigen::MatrixXd h;
    model->hessian(best.x, h);
    Eigen::MatrixXd info(ix(fi.size()), ix(fi.size()));
    for (std::size_t a = 0; a < fi.size(); ++a)
        for (std::size_t b = 0; b < fi.size(); ++b) info(ix(a), ix(b)) = -h(fi[a], fi[b]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
    const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (!(es.eigenvalues().minCoeff() > 1e-10 * emax)) {
        std::ostringstream os;
        os << "observed information is singular at the optimum; the model is not identified "
              "(eigenvalues from "
           << es.eigenvalues().minCoeff() << " to " << es.eigenvalues().maxCoeff() << ")";
        throw IdentifiabilityError(os.str());
    }
    const Eigen::MatrixXd cov_free = stats::sym_inverse(info);
    res.param_cov = Eigen::MatrixXd::Zero(l.dim, l.dim);
    for (std::size_t a = 0; a < fi.size(); ++a)
        for (std::size_t b = 0; b < fi.size(); ++b) res.param_cov(fi[a], fi[b]) = cov_free(ix(a), ix(b));

    res.params = best.x;
    res.natural = unpack(l, best.x);
    res.model = model;

    FitResult& fit = res.fit;
    fit.method = "ml";
    fit.names = f.outcome_names();
    fit.coef = best.x.head(l.p_beta);
    fit.cov = res.param_cov.topLeftCorner(l.p_beta, l.p_beta);
    fit.loglik = best.value;
    fit.converged = true;
    fit.iterations = best.iterations;
    fit.grad_norm = best.grad_norm;
    if (f.outcome == OutcomeKind::WeibullSurvival) {
        fit.shape = res.natural.shape;
        fit.log_shape_se = std::sqrt(res.param_cov(l.outcome_nuisance, l.outcome_nuisance));
    }
    if (f.outcome == OutcomeKind::LinearNormal) fit.sigma2 = res.natural.sigma2_y;
    fit.set_wald_intervals(opts.level);

    double vm = 0.0;
    {
        std::vector<double> m1;
        for (std::size_t i = 0; i < f.n(); ++i)
            if (f.m1_obs[i]) m1.push_back(f.m1[ix(i)]);
        vm = stats::variance(m1);
    }
    if (res.free[static_cast<std::size_t>(l.log_sigma2_u)] && res.natural.sigma2_u < 1e-6 * vm) {
        res.boundary_sigma2_u = true;
        fit.warnings.push_back("estimated measurement error variance is on the boundary (near 0)");
    }
    int agree = 0;
    for (double v : res.start_logliks)
        if (std::isfinite(v) && std::abs(v - best.value) < 1e-6 * (1.0 + std::abs(best.value)))
            ++agree;
    if (starts.size() > 1 && agree < 2)
        fit.warnings.push_back("only one start reached the reported optimum");
    return res;
}

ProfileInterval profile_ml(const MlResult& fit, const std::string& param, double level) {
    const Index j = fit.layout.index_of(param);
    if (j < 0) throw ConfigError("unknown parameter '" + param + "' for the profile interval");
    if (!fit.free[static_cast<std::size_t>(j)])
        throw ConfigError("parameter '" + param + "' is fixed; nothing to profile");
    ProfileOptions po;
    po.level = level;
    const double se = std::sqrt(fit.param_cov(j, j));
    return profile_interval(*fit.model, fit.params, fit.fit.loglik, j, se, fit.free, po);
}

}  // namespace mecor
