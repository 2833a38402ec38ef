#include "mecor/bayes.hpp"

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

constexpr double kTargetScalar = 0.44;
constexpr double kTargetBlock = 0.234;

// Draw from N(P^-1 b, P^-1).
Eigen::VectorXd draw_gaussian(const Eigen::MatrixXd& P, const Eigen::VectorXd& b, RngStream& rng,
                              const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(P);
    if (llt.info() != Eigen::Success)
        throw SamplerError(std::string("full conditional precision of ") + what +
                           " is not positive definite");
    const Eigen::VectorXd mean = llt.solve(b);
    Eigen::VectorXd e(b.size());
    for (Index k = 0; k < e.size(); ++k) e[k] = rng.normal();
    return mean + llt.matrixU().solve(e);
}

// Conjugate draw of regression coefficients for y ~ N(D b, s2).
Eigen::VectorXd draw_regression(const Eigen::MatrixXd& D, const Eigen::VectorXd& y, double s2,
                                const PriorSpec& pr, RngStream& rng, const char* what) {
    Eigen::MatrixXd P = D.transpose() * D / s2;
    if (!pr.flat) P.diagonal().array() += 1.0 / pr.coef_var;
    return draw_gaussian(P, D.transpose() * y / s2, rng, what);
}

// Variance whose precision has a Gamma(a, b) prior, given m residuals with sum of squares ss.
double draw_variance(double ss, double m, const PriorSpec& pr, RngStream& rng) {
    return 1.0 / rng.gamma(pr.prec_shape + 0.5 * m, pr.prec_rate + 0.5 * ss);
}

double adapt_rate(long k) { return std::pow(static_cast<double>(k) + 1.0, -0.6); }

Eigen::MatrixXd proposal_factor(const Eigen::MatrixXd& neg_hess) {
    const Index d = neg_hess.rows();
    Eigen::LLT<Eigen::MatrixXd> llt(neg_hess);
    if (llt.info() == Eigen::Success) {
        Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
        Eigen::LLT<Eigen::MatrixXd> c(cov);
        if (c.info() == Eigen::Success) return c.matrixL();
    }
    return 0.1 * Eigen::MatrixXd::Identity(d, d);
}

}  // namespace

void PriorSpec::check() const {
    auto pos = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string("prior hyperparameter '") + name + "' must be > 0");
    };
    pos(coef_var, "coef_var");
    pos(prec_shape, "prec_shape");
    pos(prec_rate, "prec_rate");
    pos(shape_rate, "shape_rate");
    pos(scaled_coef_var, "scaled_coef_var");
}

// ---------------------------------------------------------------------------

GibbsSampler::GibbsSampler(ModelFrame frame, const PriorSpec& priors, RngStream rng)
    : f_(std::move(frame)), pr_(priors), rng_(rng) {
    pr_.check();
    n_ = f_.n();
    q_ = f_.z.cols();
    init();
}

Eigen::MatrixXd GibbsSampler::outcome_design() const {
    Eigen::MatrixXd D(ix(n_), 2 + q_);
    D.col(0).setOnes();
    D.col(1) = x_;
    if (q_ > 0) D.rightCols(q_) = z_;
    return D;
}

double GibbsSampler::outcome_ll(std::size_t i, double x, const Eigen::VectorXd& zrow) const {
    double eta = beta_[0] + beta_[1] * x;
    for (Index j = 0; j < q_; ++j) eta += beta_[2 + j] * zrow[j];
    const Index row = ix(i);
    switch (f_.outcome) {
        case OutcomeKind::LinearNormal: {
            const double r = f_.y[row] - eta;
            return -0.5 * r * r / s2y_;
        }
        case OutcomeKind::LogisticBinary:
            return f_.y[row] * eta - stats::log1p_exp(eta);
        case OutcomeKind::WeibullSurvival: {
            const double lt = std::log(f_.y[row]);
            return f_.event[row] * ((shape_ - 1.0) * lt + eta) - std::exp(shape_ * lt + eta);
        }
    }
    return 0.0;
}

// Gaussian factors in x (measures and exposure model) as one normal kernel.
double GibbsSampler::gaussian_part(std::size_t i, double x, double* prec, double* mean) const {
    const Index row = ix(i);
    double P = 1.0 / tau2_;
    double mu = gamma_[0];
    for (Index j = 0; j < q_; ++j) mu += gamma_[1 + j] * z_(row, j);
    double b = mu / tau2_;
    auto add = [&](double obs, double c, double a, double v) {
        P += a * a / v;
        b += a * (obs - c) / v;
    };
    switch (f_.design) {
        case DesignKind::Validation:
            if (f_.m1_obs[i]) add(f_.m1[row], th0_, th1_, s2u_);
            break;
        case DesignKind::Replication:
            if (f_.m1_obs[i]) add(f_.m1[row], 0.0, 1.0, s2u_);
            if (f_.m2_obs[i]) add(f_.m2[row], 0.0, 1.0, s2u_);
            break;
        case DesignKind::Calibration:
            if (f_.m1_obs[i]) add(f_.m1[row], th0_, th1_, s2u_);
            if (f_.m2_obs[i]) add(f_.m2[row], 0.0, 1.0, s2u2_);
            if (f_.m3_obs[i]) add(f_.m3[row], 0.0, 1.0, s2u2_);
            break;
    }
    const double m = b / P;
    if (prec) *prec = P;
    if (mean) *mean = m;
    return -0.5 * P * (x - m) * (x - m);
}

void GibbsSampler::init() {
    // Latent exposure starts at the available measures.
    x_.resize(ix(n_));
    x_fixed_.assign(n_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
        const Index row = ix(i);
        if (f_.design == DesignKind::Validation && f_.r[i] && f_.x_obs[i]) {
            x_[row] = f_.x[row];
            x_fixed_[i] = 1;
            continue;
        }
        double s = 0.0;
        int k = 0;
        if (f_.design == DesignKind::Calibration) {
            if (f_.m2_obs[i]) s += f_.m2[row], ++k;
            if (f_.m3_obs[i]) s += f_.m3[row], ++k;
        }
        if (k == 0) {
            if (f_.m1_obs[i]) s += f_.m1[row], ++k;
            if (f_.design == DesignKind::Replication && f_.m2_obs[i]) s += f_.m2[row], ++k;
        }
        x_[row] = k ? s / k : std::numeric_limits<double>::quiet_NaN();
    }
    double xm = 0.0;
    int xk = 0;
    for (Index i = 0; i < x_.size(); ++i)
        if (std::isfinite(x_[i])) xm += x_[i], ++xk;
    if (xk == 0) throw DataError("no record carries any exposure measure");
    xm /= xk;
    for (Index i = 0; i < x_.size(); ++i)
        if (!std::isfinite(x_[i])) x_[i] = xm;

    // Covariates: missing binary cells start from the observed proportion.
    z_ = f_.z;
    for (Index j = 0; j < q_; ++j) {
        bool miss = false;
        double s = 0.0;
        int k = 0;
        for (Index i = 0; i < z_.rows(); ++i) {
            if (std::isnan(z_(i, j))) miss = true;
            else s += z_(i, j), ++k;
        }
        if (!miss) {
            complete_cols_.push_back(static_cast<int>(j));
            continue;
        }
        if (!f_.z_binary[static_cast<std::size_t>(j)])
            throw DataError("continuous covariate '" + f_.z_names[static_cast<std::size_t>(j)] +
                            "' has missing values; only binary covariates can be imputed");
        miss_cols_.push_back(static_cast<int>(j));
        const double p = k ? std::clamp(s / k, 0.05, 0.95) : 0.5;
        for (Index i = 0; i < z_.rows(); ++i)
            if (std::isnan(z_(i, j))) z_(i, j) = rng_.bernoulli(p) ? 1.0 : 0.0;
    }
    cov_design_.resize(ix(n_), 1 + ix(complete_cols_.size()));
    cov_design_.col(0).setOnes();
    for (std::size_t c = 0; c < complete_cols_.size(); ++c)
        cov_design_.col(ix(c + 1)) = f_.z.col(complete_cols_[c]);
    for (int j : miss_cols_) {
        Eigen::VectorXd pj = Eigen::VectorXd::Zero(cov_design_.cols());
        Eigen::MatrixXd H;
        try {
            pj = fit_logistic(cov_design_, z_.col(j)).coef;
        } catch (const Error&) {
        }
        logistic_loglik(cov_design_, z_.col(j), pj, nullptr, &H);
        pi_.push_back(pj);
        Block b;
        Eigen::MatrixXd nh = -H;
        if (!pr_.flat) nh.diagonal().array() += 1.0 / pr_.coef_var;
        b.chol = proposal_factor(nh);
        b.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(pj.size())));
        pi_blocks_.push_back(b);
    }

    // Exposure and error models from the starting exposure.
    {
        Eigen::MatrixXd V(ix(n_), 1 + q_);
        V.col(0).setOnes();
        if (q_ > 0) V.rightCols(q_) = z_;
        FitResult e = fit_ols(V, x_);
        gamma_ = e.coef;
        tau2_ = std::max(e.sigma2, 1e-3);
    }
    s2u_ = 0.5 * tau2_;
    s2u2_ = 0.5 * tau2_;
    if (f_.design != DesignKind::Replication) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n_; ++i)
            if (f_.m1_obs[i] && (f_.design == DesignKind::Calibration || x_fixed_[i])) rows.push_back(i);
        if (rows.size() >= 3) {
            Eigen::MatrixXd A(ix(rows.size()), 2);
            Eigen::VectorXd b(ix(rows.size()));
            for (std::size_t k = 0; k < rows.size(); ++k) {
                A(ix(k), 0) = 1.0;
                A(ix(k), 1) = x_[ix(rows[k])];
                b[ix(k)] = f_.m1[ix(rows[k])];
            }
            try {
                FitResult e = fit_ols(A, b);
                th0_ = e.coef[0];
                th1_ = e.coef[1];
                s2u_ = std::max(e.sigma2, 1e-3 * tau2_);
            } catch (const Error&) {
            }
        }
    }

    // Outcome model from the starting exposure, with a proposal shaped by
    // the curvature there.
    const Eigen::MatrixXd D = outcome_design();
    const Index p = D.cols();
    beta_ = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd nh = Eigen::MatrixXd::Identity(p, p);
    switch (f_.outcome) {
        case OutcomeKind::LinearNormal: {
            FitResult fit = fit_ols(D, f_.y);
            beta_ = fit.coef;
            s2y_ = std::max(fit.sigma2, 1e-6);
            break;
        }
        case OutcomeKind::LogisticBinary: {
            try {
                beta_ = fit_logistic(D, f_.y).coef;
            } catch (const Error&) {
            }
            Eigen::MatrixXd H;
            logistic_loglik(D, f_.y, beta_, nullptr, &H);
            nh = -H;
            if (!pr_.flat) nh.diagonal().array() += 1.0 / pr_.coef_var;
            break;
        }
        case OutcomeKind::WeibullSurvival: {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(p + 1);
            try {
                FitResult fit = fit_weibull_ph(D, f_.y, f_.event);
                w[0] = std::log(*fit.shape);
                w.tail(p) = fit.coef;
            } catch (const Error&) {
            }
            shape_ = std::exp(w[0]);
            beta_ = w.tail(p);
            Eigen::MatrixXd H;
            weibull_loglik(f_.y, f_.event, D, w, nullptr, &H);
            // Curvature in (log r, -beta / r) coordinates.
            Eigen::MatrixXd J = Eigen::MatrixXd::Zero(p + 1, p + 1);
            J(0, 0) = 1.0;
            J.block(1, 0, p, 1) = beta_;
            J.bottomRightCorner(p, p) = -shape_ * Eigen::MatrixXd::Identity(p, p);
            nh = -(J.transpose() * H * J);
            break;
        }
    }
    outcome_block_.chol = proposal_factor(nh);
    outcome_block_.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(nh.rows())));

    // Overdispersed start so that chains begin apart.
    if (f_.outcome != OutcomeKind::LinearNormal) {
        Eigen::VectorXd e(outcome_block_.chol.rows());
        for (Index k = 0; k < e.size(); ++k) e[k] = rng_.normal();
        const Eigen::VectorXd d = outcome_block_.chol * e;
        if (f_.outcome == OutcomeKind::LogisticBinary) {
            beta_ += d;
        } else {
            const double rho = std::log(shape_) + d[0];
            const Eigen::VectorXd psi = -beta_ / shape_ + d.tail(beta_.size());
            shape_ = std::exp(rho);
            beta_ = -psi * shape_;
        }
    } else {
        for (Index k = 0; k < beta_.size(); ++k)
            beta_[k] += 0.5 * std::sqrt(s2y_ / static_cast<double>(n_)) * rng_.normal();
    }

    x_scale_.resize(ix(n_));
    for (std::size_t i = 0; i < n_; ++i) {
        double P = 0.0;
        gaussian_part(i, x_[ix(i)], &P, nullptr);
        x_scale_[ix(i)] = 2.4 / std::sqrt(P);
    }
    x_tries_i_.assign(n_, 0);
    x_acc_i_.assign(n_, 0);
    check_state("initialization");
}

void GibbsSampler::update_latent(bool adapt) {
    for (std::size_t i = 0; i < n_; ++i) {
        if (x_fixed_[i]) continue;
        const Index row = ix(i);
        double P = 0.0, m = 0.0;
        if (f_.outcome == OutcomeKind::LinearNormal) {
            gaussian_part(i, 0.0, &P, &m);
            double c = beta_[0];
            for (Index j = 0; j < q_; ++j) c += beta_[2 + j] * z_(row, j);
            const double a = beta_[1];
            const double b = P * m + a * (f_.y[row] - c) / s2y_;
            P += a * a / s2y_;
            x_[row] = b / P + rng_.normal() / std::sqrt(P);
            continue;
        }
        const Eigen::VectorXd zr = z_.row(row).transpose();
        const double x0 = x_[row];
        const double x1 = x0 + x_scale_[row] * rng_.normal();
        const double lr = outcome_ll(i, x1, zr) + gaussian_part(i, x1, nullptr, nullptr) -
                          outcome_ll(i, x0, zr) - gaussian_part(i, x0, nullptr, nullptr);
        if (std::isnan(lr)) throw SamplerError("NaN in the latent exposure update of record " +
                                               std::to_string(f_.rows[i] + 1));
        const double acc = lr >= 0.0 ? 1.0 : std::exp(lr);
        ++x_tries_;
        if (rng_.uniform() < acc) {
            x_[row] = x1;
            ++x_accepts_;
        }
        if (adapt) x_scale_[row] *= std::exp((acc - kTargetScalar) * adapt_rate(sweeps_));
    }
}

void GibbsSampler::update_outcome(bool adapt) {
    const Eigen::MatrixXd D = outcome_design();
    const Index p = D.cols();
    switch (f_.outcome) {
        case OutcomeKind::LinearNormal: {
            beta_ = draw_regression(D, f_.y, s2y_, pr_, rng_, "outcome coefficients");
            const double ss = (f_.y - D * beta_).squaredNorm();
            s2y_ = draw_variance(ss, static_cast<double>(n_), pr_, rng_);
            return;
        }
        case OutcomeKind::LogisticBinary: {
            auto target = [&](const Eigen::VectorXd& b) {
                double v = logistic_loglik(D, f_.y, b);
                if (!pr_.flat) v -= 0.5 * b.squaredNorm() / pr_.coef_var;
                return v;
            };
            Eigen::VectorXd e(p);
            for (Index k = 0; k < p; ++k) e[k] = rng_.normal();
            const Eigen::VectorXd prop =
                beta_ + std::exp(outcome_block_.log_scale) * (outcome_block_.chol * e);
            const double lr = target(prop) - target(beta_);
            if (std::isnan(lr)) throw SamplerError("NaN in the outcome coefficient update");
            const double acc = lr >= 0.0 ? 1.0 : std::exp(lr);
            ++outcome_block_.tries;
            if (rng_.uniform() < acc) {
                beta_ = prop;
                ++outcome_block_.accepts;
            }
            if (adapt) outcome_block_.log_scale += (acc - kTargetBlock) * adapt_rate(sweeps_);
            return;
        }
        case OutcomeKind::WeibullSurvival: {
            // Random walk on (log r, -beta / r).
            auto target = [&](const Eigen::VectorXd& u) {
                const double r = std::exp(u[0]);
                Eigen::VectorXd w(p + 1);
                w[0] = u[0];
                w.tail(p) = -u.tail(p) * r;
                double v = weibull_loglik(f_.y, f_.event, D, w);
                v += -pr_.shape_rate * r + u[0];
                if (!pr_.flat) v -= 0.5 * u.tail(p).squaredNorm() / pr_.scaled_coef_var;
                return v;
            };
            Eigen::VectorXd u(p + 1);
            u[0] = std::log(shape_);
            u.tail(p) = -beta_ / shape_;
            Eigen::VectorXd e(p + 1);
            for (Index k = 0; k <= p; ++k) e[k] = rng_.normal();
            const Eigen::VectorXd prop =
                u + std::exp(outcome_block_.log_scale) * (outcome_block_.chol * e);
            const double tc = target(u);
            if (!std::isfinite(tc)) throw SamplerError("NaN in the Weibull outcome update");
            const double tp = target(prop);
            const double lr = tp - tc;
            const double acc = !std::isfinite(tp) ? 0.0 : (lr >= 0.0 ? 1.0 : std::exp(lr));
            ++outcome_block_.tries;
            if (rng_.uniform() < acc) {
                shape_ = std::exp(prop[0]);
                beta_ = -prop.tail(p) * shape_;
                ++outcome_block_.accepts;
            }
            if (adapt) outcome_block_.log_scale += (acc - kTargetBlock) * adapt_rate(sweeps_);
            return;
        }
    }
}

void GibbsSampler::update_error() {
    double ss = 0.0, m = 0.0;
    if (f_.design != DesignKind::Replication) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < n_; ++i)
            if (f_.m1_obs[i]) rows.push_back(i);
        Eigen::MatrixXd A(ix(rows.size()), 2);
        Eigen::VectorXd b(ix(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            A(ix(k), 0) = 1.0;
            A(ix(k), 1) = x_[ix(rows[k])];
            b[ix(k)] = f_.m1[ix(rows[k])];
        }
        const Eigen::VectorXd th = draw_regression(A, b, s2u_, pr_, rng_, "error model");
        th0_ = th[0];
        th1_ = th[1];
        ss = (b - A * th).squaredNorm();
        m = static_cast<double>(rows.size());
        s2u_ = draw_variance(ss, m, pr_, rng_);
        if (f_.design == DesignKind::Calibration) {
            ss = m = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                const Index row = ix(i);
                if (f_.m2_obs[i]) ss += std::pow(f_.m2[row] - x_[row], 2), m += 1;
                if (f_.m3_obs[i]) ss += std::pow(f_.m3[row] - x_[row], 2), m += 1;
            }
            s2u2_ = draw_variance(ss, m, pr_, rng_);
        }
        return;
    }
    for (std::size_t i = 0; i < n_; ++i) {
        const Index row = ix(i);
        if (f_.m1_obs[i]) ss += std::pow(f_.m1[row] - x_[row], 2), m += 1;
        if (f_.m2_obs[i]) ss += std::pow(f_.m2[row] - x_[row], 2), m += 1;
    }
    s2u_ = draw_variance(ss, m, pr_, rng_);
}

void GibbsSampler::update_exposure() {
    Eigen::MatrixXd V(ix(n_), 1 + q_);
    V.col(0).setOnes();
    if (q_ > 0) V.rightCols(q_) = z_;
    gamma_ = draw_regression(V, x_, tau2_, pr_, rng_, "exposure model");
    tau2_ = draw_variance((x_ - V * gamma_).squaredNorm(), static_cast<double>(n_), pr_, rng_);
}

void GibbsSampler::update_missing_z(bool adapt) {
    for (std::size_t c = 0; c < miss_cols_.size(); ++c) {
        const int j = miss_cols_[c];
        const Eigen::VectorXd lin = cov_design_ * pi_[c];
        for (std::size_t i = 0; i < n_; ++i) {
            const Index row = ix(i);
            if (!std::isnan(f_.z(row, j))) continue;
            Eigen::VectorXd zr = z_.row(row).transpose();
            double lp[2];
            for (int v = 0; v < 2; ++v) {
                zr[j] = v;
                double mu = gamma_[0];
                for (Index k = 0; k < q_; ++k) mu += gamma_[1 + k] * zr[k];
                lp[v] = v * lin[row] - stats::log1p_exp(lin[row]) + outcome_ll(i, x_[row], zr) -
                        0.5 * (x_[row] - mu) * (x_[row] - mu) / tau2_;
            }
            const double p1 = stats::expit(lp[1] - lp[0]);
            if (std::isnan(p1))
                throw SamplerError("NaN in the covariate update of record " +
                                   std::to_string(f_.rows[i] + 1));
            z_(row, j) = rng_.uniform() < p1 ? 1.0 : 0.0;
        }
        // Covariate model coefficients.
        Block& b = pi_blocks_[c];
        const Eigen::VectorXd zj = z_.col(j);
        auto target = [&](const Eigen::VectorXd& v) {
            double t = logistic_loglik(cov_design_, zj, v);
            if (!pr_.flat) t -= 0.5 * v.squaredNorm() / pr_.coef_var;
            return t;
        };
        Eigen::VectorXd e(pi_[c].size());
        for (Index k = 0; k < e.size(); ++k) e[k] = rng_.normal();
        const Eigen::VectorXd prop = pi_[c] + std::exp(b.log_scale) * (b.chol * e);
        const double lr = target(prop) - target(pi_[c]);
        if (std::isnan(lr)) throw SamplerError("NaN in the covariate model update");
        const double acc = lr >= 0.0 ? 1.0 : std::exp(lr);
        ++b.tries;
        if (rng_.uniform() < acc) {
            pi_[c] = prop;
            ++b.accepts;
        }
        if (adapt)
            b.log_scale += (acc - (e.size() > 1 ? kTargetBlock : kTargetScalar)) * adapt_rate(sweeps_);
    }
}

void GibbsSampler::sweep(bool adapt) {
    update_latent(adapt);
    update_missing_z(adapt);
    update_outcome(adapt);
    update_error();
    update_exposure();
    ++sweeps_;
    check_state("sweep");
}

void GibbsSampler::check_state(const char* where) const {
    const Eigen::VectorXd p = params();
    if (p.allFinite() && x_.allFinite()) return;
    std::ostringstream os;
    os << "non-finite sampler state after " << where << " " << sweeps_ << ":";
    const auto nm = names();
    for (std::size_t k = 0; k < nm.size(); ++k) os << " " << nm[k] << "=" << p[ix(k)];
    throw SamplerError(os.str());
}

std::vector<std::string> GibbsSampler::names() const {
    std::vector<std::string> out = f_.outcome_names();
    if (f_.outcome == OutcomeKind::LinearNormal) out.push_back("sigma2_y");
    if (f_.outcome == OutcomeKind::WeibullSurvival) out.push_back("shape");
    if (f_.design != DesignKind::Replication) {
        out.push_back("theta0");
        out.push_back("theta1");
    }
    out.push_back("sigma2_u");
    if (f_.design == DesignKind::Calibration) out.push_back("sigma2_u2");
    out.push_back("gamma0");
    for (const auto& z : f_.z_names) out.push_back("gamma_" + z);
    out.push_back("tau2");
    for (int j : miss_cols_) {
        const std::string& zn = f_.z_names[static_cast<std::size_t>(j)];
        out.push_back("pi_" + zn + "_(Intercept)");
        for (int c : complete_cols_) out.push_back("pi_" + zn + "_" + f_.z_names[static_cast<std::size_t>(c)]);
    }
    return out;
}

Eigen::VectorXd GibbsSampler::params() const {
    std::vector<double> v(beta_.data(), beta_.data() + beta_.size());
    if (f_.outcome == OutcomeKind::LinearNormal) v.push_back(s2y_);
    if (f_.outcome == OutcomeKind::WeibullSurvival) v.push_back(shape_);
    if (f_.design != DesignKind::Replication) {
        v.push_back(th0_);
        v.push_back(th1_);
    }
    v.push_back(s2u_);
    if (f_.design == DesignKind::Calibration) v.push_back(s2u2_);
    for (Index k = 0; k < gamma_.size(); ++k) v.push_back(gamma_[k]);
    v.push_back(tau2_);
    for (const auto& p : pi_)
        for (Index k = 0; k < p.size(); ++k) v.push_back(p[k]);
    return Eigen::Map<Eigen::VectorXd>(v.data(), ix(v.size()));
}

void GibbsSampler::set_params(const Eigen::VectorXd& p) {
    if (p.size() != ix(names().size())) throw ConfigError("parameter vector has the wrong length");
    Index k = 0;
    beta_ = p.segment(k, beta_.size());
    k += beta_.size();
    if (f_.outcome == OutcomeKind::LinearNormal) s2y_ = p[k++];
    if (f_.outcome == OutcomeKind::WeibullSurvival) shape_ = p[k++];
    if (f_.design != DesignKind::Replication) {
        th0_ = p[k++];
        th1_ = p[k++];
    }
    s2u_ = p[k++];
    if (f_.design == DesignKind::Calibration) s2u2_ = p[k++];
    gamma_ = p.segment(k, gamma_.size());
    k += gamma_.size();
    tau2_ = p[k++];
    for (auto& v : pi_) {
        v = p.segment(k, v.size());
        k += v.size();
    }
}

void GibbsSampler::set_latent_x(const Eigen::VectorXd& x) {
    if (x.size() != ix(n_)) throw ConfigError("latent vector has the wrong length");
    x_ = x;
}

std::map<std::string, double> GibbsSampler::acceptance() const {
    std::map<std::string, double> out;
    auto rate = [](long a, long t) { return t ? static_cast<double>(a) / static_cast<double>(t) : 1.0; };
    if (x_tries_) out["latent_x"] = rate(x_accepts_, x_tries_);
    if (outcome_block_.tries) out["outcome"] = rate(outcome_block_.accepts, outcome_block_.tries);
    for (std::size_t c = 0; c < miss_cols_.size(); ++c)
        out["pi_" + f_.z_names[static_cast<std::size_t>(miss_cols_[c])]] =
            rate(pi_blocks_[c].accepts, pi_blocks_[c].tries);
    return out;
}

void GibbsSampler::reset_acceptance() {
    x_tries_ = x_accepts_ = 0;
    outcome_block_.tries = outcome_block_.accepts = 0;
    for (auto& b : pi_blocks_) b.tries = b.accepts = 0;
}

// ---------------------------------------------------------------------------

std::vector<PosteriorChain> run_mcmc(const Dataset& ds, const StudyDesign& design,
                                     const OutcomeSpec& outcome, const PriorSpec& priors,
                                     const McmcOptions& opts, const RngStream& rng) {
    priors.check();
    if (opts.chains < 1) throw ConfigError("chains must be >= 1");
    if (opts.iters < 1) throw ConfigError("iters must be >= 1");
    if (opts.burnin < 0 || opts.burnin >= opts.iters)
        throw ConfigError("burnin must be in [0, iters)");
    if (opts.thin < 1) throw ConfigError("thin must be >= 1");
    FrameOptions fo;
    fo.allow_missing_binary_z = true;
    fo.allow_missing_primary = true;
    const ModelFrame frame = build_frame(ds, design, outcome, fo);
    for (std::size_t r : opts.keep_latent)
        if (r >= frame.n()) throw ConfigError("keep_latent row " + std::to_string(r) + " out of range");

    std::vector<PosteriorChain> chains(static_cast<std::size_t>(opts.chains));
    parallel_for(
        chains.size(),
        [&](std::size_t c) {
            const RngStream cr = rng.split(c);
            GibbsSampler s(frame, priors, cr);
            PosteriorChain& out = chains[c];
            out.names = s.names();
            out.seed = cr.seed();
            out.stream = cr.stream();
            out.latent_rows = opts.keep_latent;
            const int stored = (opts.iters + opts.thin - 1) / opts.thin;
            out.draws.resize(stored, ix(out.names.size()));
            out.latent.resize(stored, ix(opts.keep_latent.size()));
            int row = 0;
            for (int it = 0; it < opts.iters; ++it) {
                if (it == opts.burnin) s.reset_acceptance();
                s.sweep(it < opts.burnin);
                if (it % opts.thin) continue;
                if (it < opts.burnin) ++out.burnin_rows;
                out.draws.row(row) = s.params().transpose();
                for (std::size_t k = 0; k < opts.keep_latent.size(); ++k)
                    out.latent(row, ix(k)) = s.latent_x()[ix(opts.keep_latent[k])];
                ++row;
            }
            out.acceptance = s.acceptance();
            for (const auto& [block, rate] : out.acceptance) {
                if (rate < 0.1 || rate > 0.6) {
                    std::ostringstream os;
                    os << "chain " << c << ": acceptance rate of block '" << block << "' is "
                       << rate << ", outside [0.1, 0.6]";
                    out.warnings.push_back(os.str());
                }
            }
        },
        opts.threads);
    return chains;
}

// ---------------------------------------------------------------------------

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
    std::vector<Eigen::VectorXd> halves;
    for (const auto& c : chains) {
        const Index h = c.size() / 2;
        if (h < 2) return std::numeric_limits<double>::quiet_NaN();
        halves.push_back(c.head(h));
        halves.push_back(c.tail(h));
    }
    Index L = halves.front().size();
    for (const auto& h : halves) L = std::min(L, h.size());
    const double m = static_cast<double>(halves.size());
    std::vector<double> means, vars;
    for (const auto& h : halves) {
        const Eigen::VectorXd s = h.head(L);
        const double mu = s.mean();
        means.push_back(mu);
        vars.push_back((s.array() - mu).square().sum() / static_cast<double>(L - 1));
    }
    const double W = stats::mean(vars);
    const double B = static_cast<double>(L) * stats::variance(means);
    if (W <= 0.0) return B <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    (void)m;
    const double vplus = (static_cast<double>(L) - 1.0) / static_cast<double>(L) * W + B / static_cast<double>(L);
    return std::sqrt(vplus / W);
}

double effective_size(const Eigen::VectorXd& draws) {
    const Index n = draws.size();
    if (n < 4) return static_cast<double>(n);
    const Eigen::ArrayXd d = draws.array() - draws.mean();
    const double c0 = d.square().sum() / static_cast<double>(n);
    if (c0 <= 0.0) return static_cast<double>(n);
    auto rho = [&](Index t) {
        return (d.head(n - t) * d.tail(n - t)).sum() / static_cast<double>(n) / c0;
    };
    double sum = 0.0;
    double prev = std::numeric_limits<double>::infinity();
    for (Index t = 0; t + 1 < n; t += 2) {
        double pair = rho(t) + rho(t + 1);
        if (pair <= 0.0) break;
        pair = std::min(pair, prev);  // initial monotone sequence
        sum += pair;
        prev = pair;
    }
    const double tau = -1.0 + 2.0 * sum;
    return static_cast<double>(n) / std::max(tau, 1.0 / std::log10(static_cast<double>(n) + 10.0));
}

const ParamSummary& PosteriorSummary::operator[](const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw ConfigError("no posterior summary for '" + name + "'");
}

PosteriorSummary summarize_posterior(const std::vector<PosteriorChain>& chains, double level) {
    if (chains.empty()) throw ConfigError("no chains to summarize");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must be in (0, 1)");
    const auto& names = chains.front().names;
    for (const auto& c : chains) {
        if (c.names != names) throw ConfigError("chains have different parameters");
        if (c.draws.rows() - c.burnin_rows < 1) throw ConfigError("a chain has no post-burn-in draws");
    }
    PosteriorSummary out;
    out.level = level;
    const Index P = ix(names.size());
    Index total = 0;
    for (const auto& c : chains) total += c.draws.rows() - c.burnin_rows;
    Eigen::MatrixXd all(total, P);
    {
        Index r = 0;
        for (const auto& c : chains) {
            const Eigen::MatrixXd k = c.kept();
            all.middleRows(r, k.rows()) = k;
            r += k.rows();
        }
    }
    const double a = 0.5 * (1.0 - level);
    for (Index j = 0; j < P; ++j) {
        ParamSummary s;
        s.name = names[static_cast<std::size_t>(j)];
        const Eigen::VectorXd col = all.col(j);
        std::vector<double> v(col.data(), col.data() + col.size());
        s.mean = col.mean();
        const bool constant = col.minCoeff() == col.maxCoeff();
        s.sd = v.size() > 1 && !constant ? std::sqrt(std::max(0.0, stats::variance(v))) : 0.0;
        s.lower = stats::quantile(v, a);
        s.upper = stats::quantile(v, 1.0 - a);
        std::vector<Eigen::VectorXd> per;
        s.ess = 0.0;
        for (const auto& c : chains) {
            per.push_back(c.kept().col(j));
            s.ess += effective_size(per.back());
        }
        s.rhat = constant ? 1.0 : split_rhat(per);
        if (s.rhat > 1.1) {
            out.converged = false;
            out.warnings.push_back("NOT CONVERGED: R-hat of '" + s.name + "' is " +
                                   std::to_string(s.rhat));
        }
        out.params.push_back(s);
    }
    for (const auto& c : chains)
        out.warnings.insert(out.warnings.end(), c.warnings.begin(), c.warnings.end());

    // Outcome coefficients come first in every chain's parameter order.
    FitResult& fit = out.fit;
    fit.method = "bayes";
    Index p = 0;
    while (p < P && names[static_cast<std::size_t>(p)] != "sigma2_y" &&
           names[static_cast<std::size_t>(p)] != "shape" &&
           names[static_cast<std::size_t>(p)] != "theta0" &&
           names[static_cast<std::size_t>(p)] != "sigma2_u")
        ++p;
    fit.names.assign(names.begin(), names.begin() + p);
    const Eigen::MatrixXd B = all.leftCols(p);
    fit.coef = B.colwise().mean().transpose();
    const Eigen::MatrixXd centred = B.rowwise() - fit.coef.transpose();
    fit.cov = total > 1 ? Eigen::MatrixXd(centred.transpose() * centred / static_cast<double>(total - 1))
                        : Eigen::MatrixXd::Zero(p, p);
    fit.lower.resize(p);
    fit.upper.resize(p);
    for (Index j = 0; j < p; ++j) {
        fit.lower[j] = out.params[static_cast<std::size_t>(j)].lower;
        fit.upper[j] = out.params[static_cast<std::size_t>(j)].upper;
    }
    fit.level = level;
    fit.converged = out.converged;
    for (const auto& s : out.params) {
        if (s.name == "shape") fit.shape = s.mean;
        if (s.name == "sigma2_y") fit.sigma2 = s.mean;
    }
    fit.warnings = out.warnings;
    return out;
}

}  // namespace mecor
