// Acceptance suite: one [PASS]/[FAIL] line per criterion.
// Usage: mecor_acceptance [C1 C2 ...]   (all criteria when none given)

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mecor/bayes.hpp"
#include "mecor/cli.hpp"
#include "mecor/error.hpp"
#include "mecor/mi.hpp"
#include "mecor/mle.hpp"
#include "mecor/regcal.hpp"
#include "mecor/simgen.hpp"
#include "mecor/stats.hpp"

using namespace mecor;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [x]");
        pass = pass && ok;
    }
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

struct McSummary {
    double mean = 0.0, se = 0.0;
};

McSummary mc(const std::vector<double>& v) {
    return {stats::mean(v), std::sqrt(stats::variance(v) / static_cast<double>(v.size()))};
}

// |mean - target| <= 3 MC SE
bool within3(const McSummary& s, double target) { return std::abs(s.mean - target) <= 3.0 * s.se; }

std::string mc_text(const std::string& name, const McSummary& s, double target) {
    return name + " " + fmt(s.mean) + " (target " + fmt(target, 2) + ", 3se " + fmt(3.0 * s.se) + ")";
}

double norm_logpdf(double v, double m, double s2) {
    return -0.5 * (std::log(2.0 * std::numbers::pi * s2) + (v - m) * (v - m) / s2);
}

// Replication design, LinearNormal outcome, sigma2_x = sigma2_u = 1, beta_x = 1.
SimConfig attenuation_config(std::size_t n, std::uint64_t seed) {
    SimConfig c;
    c.n = n;
    c.design = DesignKind::Replication;
    c.outcome = OutcomeKind::LinearNormal;
    c.sigma2_x = 1.0;
    c.error = ErrorModelSpec::classical(1.0);
    c.beta_x = 1.0;
    c.selection = Mcar{0.5};
    c.seed = seed;
    return c;
}

MlOptions fast_ml() {
    MlOptions o;
    o.quad_points = 16;
    o.starts = 2;
    return o;
}

// ---------------------------------------------------------------------------

Verdict c1_attenuation() {
    const int reps = 500, bayes_reps = 100;
    const std::size_t n = 2000;
    std::vector<double> naive(reps), rc(reps), ml(reps), mi(reps), smc(reps), bayes(bayes_reps);
    parallel_for(reps, [&](std::size_t r) {
        const auto sim = simulate(attenuation_config(n, 1000 + r));
        const RngStream rng(77, r);
        naive[r] = fit_naive(sim.data, sim.design, sim.outcome).coef[1];
        rc[r] = regression_calibration(sim.data, sim.design, sim.outcome, {}, rng.split(1)).fit.coef[1];
        ml[r] = fit_ml(sim.data, sim.design, sim.outcome, fast_ml(), rng.split(2)).fit.coef[1];
        MiOptions mo;
        mi[r] = multiple_imputation(sim.data, sim.design, sim.outcome, mo, rng.split(3)).fit.coef[1];
        mo.variant = MiVariant::SmcFcs;
        smc[r] = multiple_imputation(sim.data, sim.design, sim.outcome, mo, rng.split(4)).fit.coef[1];
        if (r < static_cast<std::size_t>(bayes_reps)) {
            McmcOptions bo;
            bo.chains = 2;
            bo.iters = 2000;
            bo.burnin = 1000;
            bo.threads = 1;
            const auto chains = run_mcmc(sim.data, sim.design, sim.outcome, {}, bo, rng.split(5));
            bayes[r] = summarize_posterior(chains).fit.coef[1];
        }
    });
    const double lambda = 1.0 / (1.0 + 1.0);
    Verdict v;
    v.require(within3(mc(naive), lambda), mc_text("naive", mc(naive), lambda));
    for (const auto& [name, est] : std::vector<std::pair<std::string, std::vector<double>*>>{
             {"rc", &rc}, {"ml", &ml}, {"bayes", &bayes}, {"mi", &mi}, {"smcfcs", &smc}})
        v.require(within3(mc(*est), 1.0), mc_text(name, mc(*est), 1.0));
    return v;
}

Verdict c2_cross_agreement() {
    // Every record replicated: the balanced design where RC and ML coincide.
    SimConfig c = attenuation_config(5000, 2);
    c.selection = Mcar{1.0};
    const auto sim = simulate(c);
    const RngStream rng(88, 0);
    std::map<std::string, double> est;
    est["rc"] = regression_calibration(sim.data, sim.design, sim.outcome, {}, rng.split(1)).fit.coef[1];
    est["ml"] = fit_ml(sim.data, sim.design, sim.outcome, {}, rng.split(2)).fit.coef[1];
    PriorSpec flat;
    flat.flat = true;
    McmcOptions bo;
    bo.iters = 6000;
    bo.burnin = 2000;
    est["bayes"] = summarize_posterior(run_mcmc(sim.data, sim.design, sim.outcome, flat, bo, rng.split(3))).fit.coef[1];
    MiOptions mo;
    mo.m = 100;
    est["mi"] = multiple_imputation(sim.data, sim.design, sim.outcome, mo, rng.split(4)).fit.coef[1];

    Verdict v;
    std::string values;
    double worst = 0.0;
    for (const auto& [a, ea] : est) {
        values += (values.empty() ? "" : " ") + a + "=" + fmt(ea);
        for (const auto& [b, eb] : est)
            if (a < b) worst = std::max(worst, std::abs(ea - eb) / std::max(std::abs(ea), std::abs(eb)));
    }
    v.require(worst < 0.01, values + ", max pairwise rel diff " + fmt(100.0 * worst, 3) + "% (< 1%)");
    return v;
}

// Closed-form observed-data log-likelihood of the linear replication model:
// (Y, X*_1[, X*_2]) | Z is multivariate normal.
double mvn_loglik(const ModelFrame& f, const JointParams& p) {
    double ll = 0.0;
    for (std::size_t i = 0; i < f.n(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        double mu = p.gamma[0];
        double ey = p.beta[0];
        for (Eigen::Index j = 0; j < f.z.cols(); ++j) {
            mu += p.gamma[1 + j] * f.z(row, j);
            ey += p.beta[2 + j] * f.z(row, j);
        }
        ey += p.beta[1] * mu;
        std::vector<double> obs{f.y[row]}, mean{ey};
        if (f.m1_obs[i]) obs.push_back(f.m1[row]), mean.push_back(mu);
        if (f.m2_obs[i]) obs.push_back(f.m2[row]), mean.push_back(mu);
        const auto d = static_cast<Eigen::Index>(obs.size());
        Eigen::MatrixXd S(d, d);
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) {
                if (a == 0 && b == 0)
                    S(a, b) = p.beta[1] * p.beta[1] * p.tau2 + p.sigma2_y;
                else if (a == 0 || b == 0)
                    S(a, b) = p.beta[1] * p.tau2;
                else
                    S(a, b) = p.tau2 + (a == b ? p.sigma2_u : 0.0);
            }
        Eigen::VectorXd r(d);
        for (Eigen::Index a = 0; a < d; ++a) r[a] = obs[static_cast<std::size_t>(a)] - mean[static_cast<std::size_t>(a)];
        const Eigen::LLT<Eigen::MatrixXd> llt(S);
        const Eigen::MatrixXd L = llt.matrixL();
        ll += -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                      2.0 * L.diagonal().array().log().sum() + r.dot(llt.solve(r)));
    }
    return ll;
}

// Parameters (beta, log sigma2_y, log sigma2_u, gamma, log tau2).
JointParams from_vector(const Eigen::VectorXd& v, Eigen::Index q) {
    JointParams p;
    p.beta = v.head(2 + q);
    p.sigma2_y = std::exp(v[2 + q]);
    p.sigma2_u = std::exp(v[3 + q]);
    p.gamma = v.segment(4 + q, 1 + q);
    p.tau2 = std::exp(v[5 + 2 * q]);
    return p;
}

Eigen::VectorXd to_vector(const JointParams& p, Eigen::Index q) {
    Eigen::VectorXd v(6 + 2 * q);
    v << p.beta, std::log(p.sigma2_y), std::log(p.sigma2_u), p.gamma, std::log(p.tau2);
    return v;
}

// Newton ascent on the closed form with central-difference derivatives.
double maximize_closed_form(const ModelFrame& f, Eigen::VectorXd v) {
    const Eigen::Index q = f.q();
    auto F = [&](const Eigen::VectorXd& x) { return mvn_loglik(f, from_vector(x, q)); };
    const Eigen::Index d = v.size();
    const double h = 1e-4;
    double fv = F(v);
    for (int it = 0; it < 50; ++it) {
        Eigen::VectorXd g(d);
        Eigen::MatrixXd H(d, d);
        for (Eigen::Index a = 0; a < d; ++a) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
            e[a] = h;
            g[a] = (F(v + e) - F(v - e)) / (2 * h);
            for (Eigen::Index b = 0; b <= a; ++b) {
                Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
                u[b] = h;
                H(a, b) = H(b, a) = (F(v + e + u) - F(v + e - u) - F(v - e + u) + F(v - e - u)) / (4 * h * h);
            }
        }
        Eigen::VectorXd step = -H.ldlt().solve(g);
        double t = 1.0;
        while (t > 1e-8 && !(F(v + t * step) >= fv)) t *= 0.5;
        const double fn = F(v + t * step);
        if (!(fn >= fv)) break;
        v += t * step;
        const double gain = fn - fv;
        fv = fn;
        if (gain < 1e-12) break;
    }
    return fv;
}

Verdict c3_gaussian_oracle() {
    Verdict v;
    double worst_at = 0.0, worst_max = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
        RngStream g(303, k);
        SimConfig c;
        c.n = 150 + g.index(250);
        c.design = DesignKind::Replication;
        c.seed = 400 + k;
        c.alpha = g.normal();
        c.beta_x = -1.0 + 3.0 * g.uniform();
        c.sigma2_x = 0.5 + g.uniform();
        c.sigma2_y = 0.3 + g.uniform();
        c.error = ErrorModelSpec::classical(0.2 + 1.8 * g.uniform());
        c.selection = Mcar{0.2 + 0.6 * g.uniform()};
        if (k % 2 == 0) {
            c.covariates.push_back({"z", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.6 * g.uniform() - 0.3, std::nullopt});
            c.beta_z = {g.normal()};
        }
        const auto sim = simulate(c);
        MlOptions mo;
        mo.optim.grad_tol = 1e-8;
        const MlResult r = fit_ml(sim.data, sim.design, sim.outcome, mo, RngStream(5, k));
        const ModelFrame& f = r.model->frame();
        const double at = loglik_replication(r.natural, sim.data, sim.design, sim.outcome);
        const double oracle_at = mvn_loglik(f, r.natural);
        const double oracle_max = maximize_closed_form(f, to_vector(r.natural, f.q()));
        worst_at = std::max(worst_at, std::abs(at - oracle_at));
        worst_max = std::max(worst_max, std::abs(r.fit.loglik - oracle_max));
    }
    v.require(worst_at < 1e-6, "max |quadrature - closed form| at the MLE " + sci(worst_at));
    v.require(worst_max < 1e-6, "max |ML maximum - closed-form maximum| " + sci(worst_max));
    return v;
}

Verdict c4_conjugate() {
    Verdict v;
    // Scalar case against a fine grid.
    const NormalDraw d = conditional_normal(0.0, 1.0, 1.5, 2, 1.0);
    const int N = 400001;
    const double lo = -12.0, hi = 12.0, h = (hi - lo) / (N - 1);
    double s0 = 0, s1 = 0, s2 = 0;
    for (int k = 0; k < N; ++k) {
        const double x = lo + k * h;
        const double w = std::exp(norm_logpdf(x, 0.0, 1.0) + norm_logpdf(1.0, x, 1.0) + norm_logpdf(2.0, x, 1.0));
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    const double gm = s1 / s0, gv = s2 / s0 - gm * gm;
    v.require(std::abs(d.mean - 1.0) < 1e-12 && std::abs(d.var - 1.0 / 3.0) < 1e-12,
              "formula mean " + fmt(d.mean, 6) + " var " + fmt(d.var, 6));
    v.require(std::abs(gm - d.mean) < 1e-4 && std::abs(gv - d.var) < 1e-4,
              "grid mean " + fmt(gm, 6) + " var " + fmt(gv, 6));

    // 10^4 draws for one record: 100 copies x 100 imputations.
    SimConfig c = attenuation_config(20000, 44);
    c.error = ErrorModelSpec::classical(0.5);
    c.covariates.push_back({"z", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.3, std::nullopt});
    c.beta_z = {0.5};
    const auto sim = simulate(c);
    const std::size_t copies = 100;
    std::vector<std::size_t> rows(sim.data.n());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    std::size_t first = 0;
    while (!sim.data.r()[first]) ++first;
    rows.insert(rows.end(), copies, first);
    Dataset big = sim.data.take_rows(rows);
    const double x1 = 0.8, x2 = 1.3, y = 1.1, z = -0.2;
    for (std::size_t k = 0; k < copies; ++k) {
        const std::size_t i = sim.data.n() + k;
        big.column("xstar1").values[i] = x1;
        big.column("xstar2").values[i] = x2;
        big.column("y").values[i] = y;
        big.column("z").values[i] = z;
    }
    MiOptions mo;
    mo.m = 100;
    const auto set = impute_replicates_normal(big, sim.design, sim.outcome, mo, RngStream(45, 0));

    const ModelFrame& f = set.frame;
    std::vector<double> diffs;
    for (std::size_t i = 0; i < f.n(); ++i)
        if (f.m1_obs[i] && f.m2_obs[i]) diffs.push_back(f.m1[static_cast<Eigen::Index>(i)] - f.m2[static_cast<Eigen::Index>(i)]);
    const double s2u = 0.5 * stats::variance(diffs);
    Eigen::MatrixXd A(static_cast<Eigen::Index>(f.n()), 3);
    A.col(0).setOnes();
    A.col(1) = f.y;
    A.col(2) = f.z.col(0);
    Eigen::VectorXd wbar = f.m1;
    double inv_k = 0.0;
    for (std::size_t i = 0; i < f.n(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (f.m2_obs[i]) wbar[r] = 0.5 * (f.m1[r] + f.m2[r]);
        inv_k += f.m2_obs[i] ? 0.5 : 1.0;
    }
    inv_k /= static_cast<double>(f.n());
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(wbar);
    const double rss = (wbar - A * coef).squaredNorm();
    const double m = coef[0] + coef[1] * y + coef[2] * z;
    const double var_xyz = rss / static_cast<double>(f.n() - 3) - s2u * inv_k;
    const double mean_formula = m + 2.0 * ((x1 + x2) / 2.0 - m) * var_xyz / (2.0 * var_xyz + s2u);
    const double var_formula = var_xyz * s2u / (2.0 * var_xyz + s2u);

    std::vector<double> means, vars;
    for (const auto& cmp : set.completed) {
        const Eigen::VectorXd seg = cmp.x.tail(static_cast<Eigen::Index>(copies));
        const double mu = seg.mean();
        means.push_back(mu);
        vars.push_back((seg.array() - mu).square().sum() / static_cast<double>(copies - 1));
    }
    const McSummary mm = mc(means), mv = mc(vars);
    v.require(within3(mm, mean_formula), "draw mean " + fmt(mm.mean) + " vs " + fmt(mean_formula) + " (3se " + fmt(3 * mm.se) + ")");
    v.require(within3(mv, var_formula), "draw var " + fmt(mv.mean) + " vs " + fmt(var_formula) + " (3se " + fmt(3 * mv.se) + ")");
    return v;
}

Verdict c5_smc_fidelity() {
    SimConfig c = attenuation_config(40, 55);
    c.outcome = OutcomeKind::LogisticBinary;
    c.error = ErrorModelSpec::classical(0.5);
    c.selection = Mcar{1.0};
    c.covariates.push_back({"z", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.3, std::nullopt});
    c.beta_z = {0.5};
    const auto sim = simulate(c);
    const ModelFrame f = build_frame(sim.data, sim.design, sim.outcome);
    SmcParams p;
    p.outcome = OutcomeKind::LogisticBinary;
    p.beta = Eigen::Vector3d(-0.3, 1.5, 0.5);
    p.gamma = Eigen::Vector2d(0.1, 0.3);
    p.tau2 = 0.9;
    p.sigma2_u = 0.5;
    const std::size_t i = 7;
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd z = f.z.row(row).transpose();
    RngStream g(56, 0);
    std::vector<double> draws(2000);
    for (auto& d : draws) d = smc_draw(f, i, z, p, g);

    const int N = 40001;
    const double lo = -10.0, hi = 10.0, h = (hi - lo) / (N - 1);
    std::vector<double> cdf(N);
    std::vector<double> logd(N);
    for (int k = 0; k < N; ++k) {
        const double x = lo + k * h;
        const double eta = p.beta[0] + p.beta[1] * x + p.beta[2] * z[0];
        logd[k] = f.y[row] * eta - std::log1p(std::exp(eta)) + norm_logpdf(x, p.gamma[0] + p.gamma[1] * z[0], p.tau2) +
                  norm_logpdf(f.m1[row], x, p.sigma2_u) + norm_logpdf(f.m2[row], x, p.sigma2_u);
    }
    const double top = *std::max_element(logd.begin(), logd.end());
    double s = 0.0;
    for (int k = 0; k < N; ++k) cdf[k] = (s += std::exp(logd[k] - top));
    for (auto& v : cdf) v /= s;
    auto F = [&](double x) {
        if (x <= lo) return 0.0;
        if (x >= hi) return 1.0;
        const double t = (x - lo) / h;
        const auto k = static_cast<std::size_t>(t);
        return cdf[k] + (t - static_cast<double>(k)) * (cdf[std::min<std::size_t>(k + 1, N - 1)] - cdf[k]);
    };
    const double ks = stats::ks_distance(draws, F);
    Verdict v;
    v.require(ks < 0.05, "KS " + fmt(ks) + " (< 0.05) over 2000 draws for one record");
    return v;
}

Verdict c6_coverage() {
    const int reps = 500;
    const std::size_t n = 500;
    std::vector<int> rc(reps), ml(reps), bayes(reps), mi(reps);
    parallel_for(reps, [&](std::size_t r) {
        const auto sim = simulate(attenuation_config(n, 6000 + r));
        const RngStream rng(66, r);
        auto covers = [](double lo, double hi) { return lo <= 1.0 && 1.0 <= hi ? 1 : 0; };
        RcOptions ro;
        ro.se_method = SeMethod::Bootstrap;
        ro.threads = 1;
        const FitResult frc = regression_calibration(sim.data, sim.design, sim.outcome, ro, rng.split(1)).fit;
        rc[r] = covers(frc.lower[1], frc.upper[1]);
        MlOptions mo;
        mo.starts = 2;
        const MlResult fml = fit_ml(sim.data, sim.design, sim.outcome, mo, rng.split(2));
        const ProfileInterval pi = profile_ml(fml, "x");
        ml[r] = covers(pi.lower, pi.upper);
        McmcOptions bo;
        bo.chains = 2;
        bo.iters = 2000;
        bo.burnin = 1000;
        bo.threads = 1;
        const FitResult fb = summarize_posterior(run_mcmc(sim.data, sim.design, sim.outcome, {}, bo, rng.split(3))).fit;
        bayes[r] = covers(fb.lower[1], fb.upper[1]);
        MiOptions mio;
        mio.threads = 1;
        const FitResult fmi = multiple_imputation(sim.data, sim.design, sim.outcome, mio, rng.split(4)).fit;
        mi[r] = covers(fmi.lower[1], fmi.upper[1]);
    });
    Verdict v;
    for (const auto& [name, hits] : std::vector<std::pair<std::string, std::vector<int>*>>{
             {"rc-bootstrap", &rc}, {"ml-profile", &ml}, {"bayes-credible", &bayes}, {"mi-rubin", &mi}}) {
        double cov = 0.0;
        for (int h : *hits) cov += h;
        cov /= reps;
        v.require(cov >= 0.92 && cov <= 0.98, name + " " + fmt(cov, 3));
    }
    return v;
}

FitResult crafted(std::vector<std::string> names, Eigen::VectorXd coef, Eigen::MatrixXd cov) {
    FitResult f;
    f.names = std::move(names);
    f.coef = std::move(coef);
    f.cov = std::move(cov);
    return f;
}

Verdict c7_rubin() {
    Verdict v;
    // Hand-evaluated: estimates {1,2,3}, W = 0.5: Qbar 2, B 1, T = 0.5 + (4/3) 1.
    std::vector<FitResult> a;
    for (double q : {1.0, 2.0, 3.0}) a.push_back(crafted({"x"}, Eigen::VectorXd::Constant(1, q), Eigen::MatrixXd::Constant(1, 1, 0.5)));
    const PooledResult pa = pool_rubin(a);
    const double T = 0.5 + (1.0 + 1.0 / 3.0) * 1.0;
    const double df = 2.0 * std::pow(1.0 + 0.5 / ((1.0 + 1.0 / 3.0) * 1.0), 2);
    v.require(pa.estimate[0] == 2.0 && pa.within[0] == 0.5 && pa.between[0] == 1.0,
              "Qbar " + fmt(pa.estimate[0], 6) + " W " + fmt(pa.within[0], 6) + " B " + fmt(pa.between[0], 6));
    v.require(std::abs(pa.total[0] - T) <= 4 * std::numeric_limits<double>::epsilon() * T,
              "T " + fmt(pa.total[0], 12) + " vs " + fmt(T, 12));
    v.require(std::abs(pa.df[0] - df) <= 1e-12 * df, "df " + fmt(pa.df[0], 6) + " vs " + fmt(df, 6));

    // Two parameters with varying W.
    std::vector<FitResult> b;
    const double q1[] = {0.25, 0.5, 1.0, 0.75}, q2[] = {-1.0, -1.5, -0.5, -1.0};
    const double w1[] = {0.04, 0.06, 0.05, 0.05}, w2[] = {0.2, 0.1, 0.3, 0.2};
    for (int k = 0; k < 4; ++k) {
        Eigen::MatrixXd cov(2, 2);
        cov << w1[k], 0.01, 0.01, w2[k];
        b.push_back(crafted({"x", "z"}, Eigen::Vector2d(q1[k], q2[k]), cov));
    }
    const PooledResult pb = pool_rubin(b);
    // Qbar = (0.625, -1.0), W = (0.05, 0.2) with covariance 0.01.
    const double Bx = (0.375 * 0.375 + 0.125 * 0.125 + 0.375 * 0.375 + 0.125 * 0.125) / 3.0;
    const double Bz = (0.0 + 0.25 + 0.25 + 0.0) / 3.0;
    const double Bxz = (0.0 + 0.125 * 0.5 + 0.375 * 0.5 + 0.0) / 3.0;
    const double eps = 8 * std::numeric_limits<double>::epsilon();
    v.require(std::abs(pb.estimate[0] - 0.625) <= eps && std::abs(pb.estimate[1] + 1.0) <= eps &&
                  std::abs(pb.within[0] - 0.05) <= eps && std::abs(pb.within[1] - 0.2) <= eps &&
                  std::abs(pb.between[0] - Bx) <= eps && std::abs(pb.between[1] - Bz) <= eps &&
                  std::abs(pb.total[0] - (0.05 + 1.25 * Bx)) <= eps && std::abs(pb.total[1] - (0.2 + 1.25 * Bz)) <= eps &&
                  std::abs(pb.total_cov(0, 1) - (0.01 + 1.25 * Bxz)) <= eps,
              "2-parameter W, B, T and covariance exact");

    // B = 0.
    std::vector<FitResult> z;
    for (int k = 0; k < 5; ++k) z.push_back(crafted({"x"}, Eigen::VectorXd::Constant(1, 0.3), Eigen::MatrixXd::Constant(1, 1, 0.2)));
    const PooledResult pz = pool_rubin(z);
    const double half = stats::normal_quantile(0.975) * std::sqrt(0.2);
    v.require(pz.between[0] == 0.0 && pz.total[0] == 0.2 && std::isinf(pz.df[0]) &&
                  std::abs(pz.upper[0] - 0.3 - half) <= eps,
              "B=0: T = W, df infinite, normal interval");
    return v;
}

// Central-difference gradient of f.
Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& w) {
    Eigen::VectorXd g(w.size());
    for (Eigen::Index a = 0; a < w.size(); ++a) {
        const double h = 1e-5 * std::max(1.0, std::abs(w[a]));
        Eigen::VectorXd up = w, dn = w;
        up[a] += h;
        dn[a] -= h;
        g[a] = (f(up) - f(dn)) / (2 * h);
    }
    return g;
}

// Central differences of an analytic gradient.
Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g, const Eigen::VectorXd& w) {
    Eigen::MatrixXd H(w.size(), w.size());
    for (Eigen::Index a = 0; a < w.size(); ++a) {
        const double h = 1e-5 * std::max(1.0, std::abs(w[a]));
        Eigen::VectorXd up = w, dn = w;
        up[a] += h;
        dn[a] -= h;
        H.col(a) = (g(up) - g(dn)) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-12); }

Verdict c8_derivatives() {
    using Fn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*, Eigen::MatrixXd*)>;
    struct Model {
        std::string name;
        Eigen::Index dim;
        Fn fn;
        Eigen::VectorXd centre;
    };
    std::vector<Model> models;

    SimConfig base = attenuation_config(120, 808);
    base.error = ErrorModelSpec::classical(0.5);
    base.covariates.push_back({"z", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.3, std::nullopt});
    base.beta_z = {0.5};

    {
        SimConfig c = base;
        c.outcome = OutcomeKind::LogisticBinary;
        const auto sim = simulate(c);
        const ModelFrame f = build_frame(sim.data, sim.design, sim.outcome);
        const Eigen::MatrixXd X = f.outcome_design(f.m1);
        const Eigen::VectorXd y = f.y;
        models.push_back({"logistic", X.cols(),
                          [X, y](const Eigen::VectorXd& w, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
                              return logistic_loglik(X, y, w, g, h);
                          },
                          Eigen::Vector3d(0.1, 0.8, 0.4)});
    }
    {
        SimConfig c = base;
        c.outcome = OutcomeKind::WeibullSurvival;
        c.shape = 1.5;
        c.censoring_rate = 0.3;
        const auto sim = simulate(c);
        const ModelFrame f = build_frame(sim.data, sim.design, sim.outcome);
        const Eigen::MatrixXd X = f.outcome_design(f.m1);
        const Eigen::VectorXd t = f.y, d = f.event;
        models.push_back({"weibull", X.cols() + 1,
                          [X, t, d](const Eigen::VectorXd& w, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
                              return weibull_loglik(t, d, X, w, g, h);
                          },
                          Eigen::Vector4d(0.3, -0.5, 0.8, 0.4)});
    }
    for (DesignKind dk : {DesignKind::Validation, DesignKind::Replication, DesignKind::Calibration})
        for (OutcomeKind ok : {OutcomeKind::LinearNormal, OutcomeKind::LogisticBinary, OutcomeKind::WeibullSurvival}) {
            SimConfig c = base;
            c.design = dk;
            c.outcome = ok;
            c.second_measures = 2;
            if (ok == OutcomeKind::WeibullSurvival) {
                c.shape = 1.5;
                c.censoring_rate = 0.3;
            }
            const auto sim = simulate(c);
            LikelihoodOptions lo;
            lo.quad_points = 32;
            auto model = std::make_shared<JointLikelihood>(build_frame(sim.data, sim.design, sim.outcome), lo);
            JointParams p;
            p.beta = Eigen::Vector3d(0.2, 0.8, 0.4);
            p.sigma2_y = 0.9;
            p.shape = 1.3;
            p.theta0 = 0.1;
            p.theta1 = 0.9;
            p.sigma2_u = 0.6;
            p.sigma2_u2 = 0.4;
            p.gamma = Eigen::Vector2d(0.1, 0.3);
            p.tau2 = 1.2;
            models.push_back({"joint " + to_string(dk) + "/" + to_string(ok), model->dim(),
                              [model](const Eigen::VectorXd& w, Eigen::VectorXd* g, Eigen::MatrixXd* h) {
                                  const double v = model->value(w, g);
                                  if (h && !model->hessian(w, *h)) throw Error("no analytic Hessian");
                                  return v;
                              },
                              pack(model->layout(), p)});
        }

    Verdict v;
    double worst_g = 0.0, worst_h = 0.0;
    std::string worst_name;
    for (const auto& m : models) {
        RngStream g(909, std::hash<std::string>{}(m.name));
        for (int k = 0; k < 10; ++k) {
            Eigen::VectorXd w = m.centre;
            for (Eigen::Index a = 0; a < w.size(); ++a) w[a] += 0.3 * g.normal();
            Eigen::VectorXd grad;
            Eigen::MatrixXd hess;
            m.fn(w, &grad, &hess);
            const auto f = [&](const Eigen::VectorXd& x) { return m.fn(x, nullptr, nullptr); };
            const auto gr = [&](const Eigen::VectorXd& x) {
                Eigen::VectorXd out;
                m.fn(x, &out, nullptr);
                return out;
            };
            const double eg = rel(grad, fd_gradient(f, w));
            const double eh = rel(hess, fd_jacobian(gr, w));
            if (eg > worst_g || eh > worst_h) worst_name = m.name;
            worst_g = std::max(worst_g, eg);
            worst_h = std::max(worst_h, eh);
        }
    }
    v.require(worst_g < 1e-5, std::to_string(models.size()) + " models x 10 points: max gradient rel err " + sci(worst_g));
    v.require(worst_h < 1e-3, "max information rel err " + sci(worst_h) + " (worst " + worst_name + ")");
    return v;
}

SimConfig weibull_config(std::uint64_t seed) {
    SimConfig c;
    c.n = 1500;
    c.design = DesignKind::Replication;
    c.outcome = OutcomeKind::WeibullSurvival;
    c.sigma2_x = 1.0;
    c.error = ErrorModelSpec::classical(0.5);
    c.beta_x = 0.5;
    c.shape = 1.2;
    c.censoring_rate = 0.5;
    c.selection = Mcar{0.06};
    c.covariates.push_back({"age", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.2, std::nullopt});
    c.covariates.push_back({"smk", CovariateSpec::Kind::Binary, 0.0, 1.0, 0.4, 0.0, CovariateMissingness{"age", 0.0, 0.5}});
    c.beta_z = {0.3, 0.5};
    c.seed = seed;
    return c;
}

Verdict c9_weibull() {
    const int reps = 100;
    std::vector<double> bayes(reps), smc(reps), naive(reps), zmiss(reps);
    std::vector<int> bigger_b(reps), bigger_s(reps);
    parallel_for(reps, [&](std::size_t r) {
        const auto sim = simulate(weibull_config(9000 + r));
        const RngStream rng(99, r);
        const double nv = fit_naive(sim.data, sim.design, sim.outcome).coef[1];
        McmcOptions bo;
        bo.chains = 2;
        bo.iters = 3000;
        bo.burnin = 1500;
        bo.threads = 1;
        const double b = summarize_posterior(run_mcmc(sim.data, sim.design, sim.outcome, {}, bo, rng.split(1))).fit.coef[1];
        MiOptions mo;
        mo.variant = MiVariant::SmcFcs;
        mo.threads = 1;
        const double s = multiple_imputation(sim.data, sim.design, sim.outcome, mo, rng.split(2)).fit.coef[1];
        std::size_t miss = 0;
        const Column& smk = sim.data.column("smk");
        for (std::size_t i = 0; i < smk.size(); ++i) miss += smk.is_missing(i);
        naive[r] = nv;
        bayes[r] = b;
        smc[r] = s;
        zmiss[r] = static_cast<double>(miss) / static_cast<double>(smk.size());
        bigger_b[r] = std::abs(b) > std::abs(nv);
        bigger_s[r] = std::abs(s) > std::abs(nv);
    });
    const double truth = weibull_config(0).beta_x;
    Verdict v;
    v.require(within3(mc(bayes), truth), mc_text("bayes", mc(bayes), truth));
    v.require(within3(mc(smc), truth), mc_text("smcfcs", mc(smc), truth));
    double fb = 0, fs = 0;
    for (int k = 0; k < reps; ++k) fb += bigger_b[k], fs += bigger_s[k];
    fb /= reps;
    fs /= reps;
    v.require(fb >= 0.9, "|bayes| > |naive| in " + fmt(100 * fb, 0) + "%");
    v.require(fs >= 0.9, "|smcfcs| > |naive| in " + fmt(100 * fs, 0) + "%");
    v.detail += "; naive " + fmt(stats::mean(naive)) + ", smk missing " + fmt(100 * stats::mean(zmiss), 1) + "%";
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Every regular file under a directory, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

Verdict c10_determinism() {
    const fs::path root = fs::temp_directory_path() / "mecor_acceptance_c10";
    fs::remove_all(root);
    fs::create_directories(root);
    auto run = [](std::vector<std::string> args) {
        args.insert(args.begin(), "mecor");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    };
    const std::string sim_dir = (root / "sim").string();
    run({"--seed", "2024", "--out", sim_dir, "simulate", "--n", "600", "--p-substudy", "0.4"});
    std::ofstream(root / "cfg.json") << R"({"input": ")" << (root / "sim/data.csv").string() << R"(", "truth": ")"
                                     << (root / "sim/truth.json").string() << R"(", "seed": 17})";
    const std::string cfg = (root / "cfg.json").string();

    struct Cmd {
        std::string name;
        std::vector<std::string> args;
    };
    const std::vector<Cmd> cmds = {
        {"simulate", {"--seed", "2024", "simulate", "--n", "600", "--p-substudy", "0.4"}},
        {"validate", {"--config", cfg, "validate"}},
        {"correct naive", {"--config", cfg, "correct", "--method", "naive"}},
        {"correct rc", {"--config", cfg, "correct", "--method", "rc", "--se-method", "bootstrap", "--bootstrap-reps", "50"}},
        {"correct ml", {"--config", cfg, "correct", "--method", "ml", "--profile", "x"}},
        {"correct bayes", {"--config", cfg, "correct", "--method", "bayes", "--iters", "1000", "--burnin", "500"}},
        {"correct mi", {"--config", cfg, "correct", "--method", "mi", "--dump-imputations"}},
        {"correct mi smcfcs", {"--config", cfg, "correct", "--method", "mi", "--mi-variant", "smcfcs", "--m", "5"}},
        {"compare", {"--config", cfg, "compare", "--methods", "naive,rc,ml,bayes,mi", "--iters", "1000", "--burnin", "500"}},
    };
    Verdict v;
    int identical = 0;
    std::string failed;
    for (std::size_t k = 0; k < cmds.size(); ++k) {
        std::map<std::string, std::string> out[2];
        int codes[2];
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path dir = root / ("cmd" + std::to_string(k)) / std::to_string(rep);
            std::vector<std::string> args{"--out", dir.string()};
            args.insert(args.end(), cmds[k].args.begin(), cmds[k].args.end());
            codes[rep] = run(args);
            out[rep] = tree(dir);
        }
        if (codes[0] == 0 && codes[1] == 0 && !out[0].empty() && out[0] == out[1])
            ++identical;
        else
            failed += " " + cmds[k].name;
    }
    v.require(identical == static_cast<int>(cmds.size()),
              std::to_string(identical) + "/" + std::to_string(cmds.size()) + " commands byte-identical" +
                  (failed.empty() ? "" : ", differing:" + failed));
    fs::remove_all(root);
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::tuple<std::string, std::string, std::function<Verdict()>>> criteria = {
        {"C1", "attenuation reproduction", c1_attenuation},
        {"C2", "method cross-agreement", c2_cross_agreement},
        {"C3", "gaussian closed-form oracle", c3_gaussian_oracle},
        {"C4", "conjugate-conditional oracle", c4_conjugate},
        {"C5", "SMC-FCS target fidelity", c5_smc_fidelity},
        {"C6", "interval coverage", c6_coverage},
        {"C7", "Rubin's rules exactness", c7_rubin},
        {"C8", "gradient and information checks", c8_derivatives},
        {"C9", "Weibull pipeline", c9_weibull},
        {"C10", "determinism", c10_determinism},
    };
    std::vector<std::string> wanted(argv + 1, argv + argc);
    for (const auto& w : wanted)
        if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return std::get<0>(c) == w; })) {
            std::cerr << "unknown criterion " << w << "\n";
            return 2;
        }
    bool all = true;
    for (const auto& [id, title, fn] : criteria) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), id) == wanted.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << id << " " << title << ": " << v.detail << " ("
                  << fmt(secs, 1) << " s)" << std::endl;
        all = all && v.pass;
    }
    return all ? 0 : 1;
}
