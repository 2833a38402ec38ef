#include "doctest.h"

#include <cmath>
#include <numbers>

#include "mecor/error.hpp"
#include "mecor/mi.hpp"
#include "mecor/simgen.hpp"
#include "mecor/stats.hpp"

using namespace mecor;

namespace {

SimConfig rep_config(std::size_t n, std::uint64_t seed, double s2u = 0.5) {
    SimConfig c;
    c.n = n;
    c.design = DesignKind::Replication;
    c.seed = seed;
    c.error = ErrorModelSpec::classical(s2u);
    c.covariates.push_back({"z", CovariateSpec::Kind::Normal, 0.0, 1.0, 0.5, 0.3, std::nullopt});
    c.beta_z = {0.5};
    return c;
}

FitResult fake_fit(double b, double w) {
    FitResult f;
    f.names = {"x"};
    f.coef = Eigen::VectorXd::Constant(1, b);
    f.cov = Eigen::MatrixXd::Constant(1, 1, w);
    return f;
}

}  // namespace

TEST_CASE("Rubin's rules on hand-evaluated inputs") {
    auto p = pool_rubin({fake_fit(1, 0.5), fake_fit(2, 0.5), fake_fit(3, 0.5)});
    CHECK(p.estimate[0] == 2.0);
    CHECK(p.within[0] == 0.5);
    CHECK(p.between[0] == 1.0);
    CHECK(p.total[0] == doctest::Approx(0.5 + 4.0 / 3.0).epsilon(1e-15));
    CHECK(p.total[0] >= p.within[0]);

    auto z = pool_rubin({fake_fit(0.3, 0.2), fake_fit(0.3, 0.2)});
    CHECK(z.between[0] == 0.0);
    CHECK(z.total[0] == 0.2);
    CHECK(std::isinf(z.df[0]));
    CHECK(z.upper[0] - 0.3 == doctest::Approx(1.959963985 * std::sqrt(0.2)));

    FitResult other = fake_fit(1, 1);
    other.names = {"y"};
    CHECK_THROWS_AS(pool_rubin({fake_fit(1, 1), other}), DataError);
    CHECK_THROWS_AS(pool_rubin({fake_fit(1, 1)}), ConfigError);
}

TEST_CASE("log-scale pooling equals identity pooling of log coefficients") {
    std::vector<FitResult> logs, ratios;
    RngStream g(1, 0);
    for (int k = 0; k < 5; ++k) {
        const double b = 0.4 + 0.1 * g.normal(), v = 0.01 + 0.001 * k;
        logs.push_back(fake_fit(b, v));
        ratios.push_back(fake_fit(std::exp(b), v * std::exp(2 * b)));
    }
    auto a = pool_rubin(logs);
    auto b = pool_rubin(ratios, PoolScale::Log);
    CHECK(std::log(b.estimate[0]) == doctest::Approx(a.estimate[0]).epsilon(1e-12));
    CHECK(b.total[0] == doctest::Approx(a.total[0]).epsilon(1e-12));
    CHECK(std::log(b.lower[0]) == doctest::Approx(a.lower[0]).epsilon(1e-12));
    CHECK(std::log(b.upper[0]) == doctest::Approx(a.upper[0]).epsilon(1e-12));
}

TEST_CASE("conditional normal matches a fine-grid posterior") {
    const NormalDraw d = conditional_normal(0.0, 1.0, 1.5, 2, 1.0);
    CHECK(d.mean == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(d.var == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    const int N = 200001;
    const double lo = -10, hi = 10, h = (hi - lo) / (N - 1);
    double s0 = 0, s1 = 0, s2 = 0;
    for (int k = 0; k < N; ++k) {
        const double x = lo + k * h;
        const double w = std::exp(-0.5 * x * x - 0.5 * (1.0 - x) * (1.0 - x) - 0.5 * (2.0 - x) * (2.0 - x));
        s0 += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    const double gm = s1 / s0, gv = s2 / s0 - gm * gm;
    CHECK(std::abs(gm - d.mean) < 1e-4);
    CHECK(std::abs(gv - d.var) < 1e-4);

    const NormalDraw zero = conditional_normal(0.2, 1.0, 0.9, 1, 0.0);
    CHECK(zero.mean == 0.9);
    CHECK(zero.var == 0.0);
    const NormalDraw inf = conditional_normal(0.2, 1.0, 0.9, 2, 1e14);
    CHECK(inf.mean == doctest::Approx(0.2).epsilon(1e-10));
    CHECK(inf.var == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("replicate imputation draws follow the conjugate formulas") {
    // Many copies of one record inside a large dataset; parameter draws vary
    // across imputations, so the MC error uses per-imputation means.
    auto sim = simulate(rep_config(20000, 2));
    Dataset& ds = sim.data;
    const double x1 = 0.8, x2 = 1.3, y = 1.1, z = -0.2;
    const std::size_t copies = 100;
    std::vector<std::size_t> rows(ds.n());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    std::size_t first = 0;
    for (std::size_t i = 0; i < ds.n(); ++i)
        if (ds.r()[i]) {
            first = i;
            break;
        }
    for (std::size_t k = 0; k < copies; ++k) rows.push_back(first);
    Dataset big = ds.take_rows(rows);
    for (std::size_t k = 0; k < copies; ++k) {
        const std::size_t i = ds.n() + k;
        big.column("xstar1").values[i] = x1;
        big.column("xstar2").values[i] = x2;
        big.column("y").values[i] = y;
        big.column("z").values[i] = z;
    }
    MiOptions o;
    o.m = 100;
    auto set = impute_replicates_normal(big, sim.design, sim.outcome, o, RngStream(3, 0));

    // Oracle from the point estimates of the imputation model.
    ModelFrame f = set.frame;
    std::vector<double> d;
    for (std::size_t i = 0; i < f.n(); ++i)
        if (f.m1_obs[i] && f.m2_obs[i]) d.push_back(f.m1[Eigen::Index(i)] - f.m2[Eigen::Index(i)]);
    const double s2u = 0.5 * stats::variance(d);
    Eigen::MatrixXd A(static_cast<Eigen::Index>(f.n()), 3);
    A.col(0).setOnes();
    A.col(1) = f.y;
    A.col(2) = f.z.col(0);
    Eigen::VectorXd wbar = f.m1;
    double inv_k = 0.0;
    for (std::size_t i = 0; i < f.n(); ++i) {
        const Eigen::Index r = Eigen::Index(i);
        if (f.m2_obs[i]) wbar[r] = 0.5 * (f.m1[r] + f.m2[r]);
        inv_k += f.m2_obs[i] ? 0.5 : 1.0;
    }
    inv_k /= static_cast<double>(f.n());
    FitResult mf = fit_ols(A, wbar);
    const double m = mf.coef[0] + mf.coef[1] * y + mf.coef[2] * z;
    const double v = mf.sigma2 - s2u * inv_k;
    const double mean_formula = m + (x1 + x2 - 2 * m) * v / (2 * v + s2u);
    const double var_formula = v * s2u / (2 * v + s2u);

    std::vector<double> means, vars;
    for (const auto& c : set.completed) {
        const Eigen::VectorXd seg = c.x.tail(static_cast<Eigen::Index>(copies));
        const double mu = seg.mean();
        means.push_back(mu);
        vars.push_back((seg.array() - mu).square().sum() / (copies - 1));
    }
    const double se_mean = std::sqrt(stats::variance(means) / means.size());
    const double se_var = std::sqrt(stats::variance(vars) / vars.size());
    CHECK(std::abs(stats::mean(means) - mean_formula) < 3 * se_mean);
    CHECK(std::abs(stats::mean(vars) - var_formula) < 3 * se_var);
}

TEST_CASE("zero measurement error imputes the measure itself") {
    auto sim = simulate(rep_config(500, 4, 0.0));
    auto set = impute_replicates_normal(sim.data, sim.design, sim.outcome, {}, RngStream(5, 0));
    for (const auto& c : set.completed)
        for (std::size_t i = 0; i < set.frame.n(); ++i)
            CHECK(c.x[Eigen::Index(i)] == doctest::Approx(set.frame.m1[Eigen::Index(i)]).epsilon(1e-12));
}

TEST_CASE("too much error for moment identification") {
    auto sim = simulate(rep_config(400, 6));
    Column& a = sim.data.column("xstar1");
    Column& b = sim.data.column("xstar2");
    for (std::size_t i = 0; i < a.values.size(); ++i)
        if (!b.is_missing(i)) b.values[i] = -a.values[i];
    CHECK_THROWS_AS(impute_replicates_normal(sim.data, sim.design, sim.outcome), ImputationError);
    SimConfig c = rep_config(200, 7);
    c.outcome = OutcomeKind::LogisticBinary;
    auto lg = simulate(c);
    CHECK_THROWS_AS(impute_replicates_normal(lg.data, lg.design, lg.outcome), UnsupportedConfiguration);
}

TEST_CASE("validation imputation: degenerate fits and the validated-row floor") {
    SimConfig c = rep_config(300, 8);
    c.design = DesignKind::Validation;
    auto sim = simulate(c);
    // Make X an exact copy of X* so the imputation regression has no residual.
    Column x = sim.data.column("x");
    const Column& xs = sim.data.column("xstar");
    for (std::size_t i = 0; i < x.values.size(); ++i)
        if (!x.is_missing(i)) x.values[i] = xs.values[i];
    sim.data.set_column(x);
    MiOptions o;
    o.m = 5;
    auto set = impute_validation(sim.data, sim.design, sim.outcome, o, RngStream(9, 0));
    for (std::size_t k = 1; k < set.completed.size(); ++k)
        CHECK((set.completed[k].x - set.completed[0].x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((set.completed[0].x - set.frame.m1).cwiseAbs().maxCoeff() < 1e-9);
    Dataset d0 = set.dataset(sim.data, 0);
    CHECK_FALSE(d0.column("x").any_missing());

    SimConfig few = c;
    few.selection = Mcar{0.05};
    auto fs = simulate(few);
    CHECK_THROWS_WITH_AS(impute_validation(fs.data, fs.design, fs.outcome), doctest::Contains("Bayesian"),
                         InsufficientDataError);
}

TEST_CASE("validation imputation recovers the exposure effect") {
    const int reps = 200;
    std::vector<double> est;
    for (int r = 0; r < reps; ++r) {
        SimConfig c = rep_config(400, 100 + r);
        c.design = DesignKind::Validation;
        auto sim = simulate(c);
        MiOptions o;
        o.m = 20;
        auto res = multiple_imputation(sim.data, sim.design, sim.outcome, o, RngStream(r, 1));
        est.push_back(res.fit.coef[1]);
    }
    CHECK(std::abs(stats::mean(est) - 1.0) < 3 * std::sqrt(stats::variance(est) / reps));
}

TEST_CASE("SMC-FCS rejection draws follow the grid-normalized target") {
    SimConfig c = rep_config(40, 10);
    c.outcome = OutcomeKind::LogisticBinary;
    c.selection = Mcar{1.0};
    auto sim = simulate(c);
    FrameOptions fo;
    ModelFrame f = build_frame(sim.data, sim.design, sim.outcome, fo);
    SmcParams p;
    p.outcome = OutcomeKind::LogisticBinary;
    p.beta = Eigen::Vector3d(-0.3, 1.5, 0.5);
    p.gamma = Eigen::Vector2d(0.1, 0.3);
    p.tau2 = 0.9;
    p.sigma2_u = 0.5;
    const std::size_t i = 3;
    const Eigen::VectorXd z = f.z.row(3).transpose();
    RngStream g(11, 0);
    std::vector<double> draws;
    for (int k = 0; k < 2000; ++k) draws.push_back(smc_draw(f, i, z, p, g));

    const int N = 20001;
    const double lo = -8, hi = 8, h = (hi - lo) / (N - 1);
    std::vector<double> grid(N), cdf(N);
    double s = 0;
    for (int k = 0; k < N; ++k) {
        const double x = lo + k * h;
        const double eta = p.beta[0] + p.beta[1] * x + p.beta[2] * z[0];
        const double mu = p.gamma[0] + p.gamma[1] * z[0];
        const double l = f.y[3] * eta - stats::log1p_exp(eta) - 0.5 * (x - mu) * (x - mu) / p.tau2 -
                         0.5 * (f.m1[3] - x) * (f.m1[3] - x) / p.sigma2_u -
                         0.5 * (f.m2[3] - x) * (f.m2[3] - x) / p.sigma2_u;
        grid[k] = x;
        s += std::exp(l);
        cdf[k] = s;
    }
    for (auto& v : cdf) v /= s;
    auto F = [&](double x) {
        if (x <= lo) return 0.0;
        if (x >= hi) return 1.0;
        const auto k = static_cast<std::size_t>((x - lo) / h);
        return cdf[k];
    };
    CHECK(stats::ks_distance(draws, F) < 0.05);
}

TEST_CASE("SMC-FCS draws for an outlying record stay exact") {
    auto sim = simulate(rep_config(40, 10));
    ModelFrame f = build_frame(sim.data, sim.design, sim.outcome);
    const std::size_t i = 5;
    const Eigen::Index row = 5;
    f.y[row] = 14.0;
    SmcParams p;
    p.beta = Eigen::Vector3d(0.2, 1.0, 0.4);
    p.sigma2_y = 1.0;
    p.gamma = Eigen::Vector2d(0.0, 0.3);
    p.tau2 = 1.0;
    p.sigma2_u = 0.5;
    const Eigen::VectorXd z = f.z.row(row).transpose();

    // Linear outcome: the target is normal.
    const double mu = p.gamma[0] + p.gamma[1] * z[0];
    double prec = 1.0 / p.tau2, lin = mu / p.tau2;
    if (f.m1_obs[i]) prec += 1.0 / p.sigma2_u, lin += f.m1[row] / p.sigma2_u;
    if (f.m2_obs[i]) prec += 1.0 / p.sigma2_u, lin += f.m2[row] / p.sigma2_u;
    const double r = f.y[row] - p.beta[0] - p.beta[2] * z[0];
    prec += p.beta[1] * p.beta[1] / p.sigma2_y;
    lin += p.beta[1] * r / p.sigma2_y;
    const double mean = lin / prec, sd = 1.0 / std::sqrt(prec);

    RngStream g(21, 0);
    std::vector<double> draws;
    long max_tries = 0;
    for (int k = 0; k < 2000; ++k) {
        long t = 0;
        draws.push_back(smc_draw(f, i, z, p, g, 100000, &t));
        max_tries = std::max(max_tries, t);
    }
    CHECK(max_tries > 1000);
    CHECK(stats::ks_distance(draws, [&](double x) { return stats::normal_cdf((x - mean) / sd); }) < 0.05);
}

TEST_CASE("SMC-FCS and conditional-normal imputation agree for a linear outcome") {
    auto sim = simulate(rep_config(1000, 12));
    MiOptions o;
    o.m = 40;
    auto normal = multiple_imputation(sim.data, sim.design, sim.outcome, o, RngStream(13, 0));
    o.variant = MiVariant::SmcFcs;
    SmcDiagnostics diag;
    auto set = impute_smcfcs(sim.data, sim.design, sim.outcome, o, RngStream(14, 0), &diag);
    auto smc = multiple_imputation(sim.data, sim.design, sim.outcome, o, RngStream(14, 0));
    const double se = std::sqrt(normal.pooled.between[1] / o.m + smc.pooled.between[1] / o.m);
    CHECK(std::abs(normal.fit.coef[1] - smc.fit.coef[1]) < 3 * se);
    CHECK(diag.mean_trace.size() == 40);
    CHECK(diag.mean_tries >= 1.0);
    CHECK(set.completed[0].x == smc.imputations.completed[0].x);
}

TEST_CASE("SMC-FCS rejects calibration designs and imputes missing binary covariates") {
    SimConfig c = rep_config(200, 15);
    c.design = DesignKind::Calibration;
    auto cal = simulate(c);
    MiOptions o;
    o.variant = MiVariant::SmcFcs;
    CHECK_THROWS_AS(impute_smcfcs(cal.data, cal.design, cal.outcome, o), UnsupportedConfiguration);

    SimConfig w = rep_config(600, 16);
    w.outcome = OutcomeKind::WeibullSurvival;
    w.censoring_rate = 0.2;
    w.covariates.push_back({"smk", CovariateSpec::Kind::Binary, 0, 1, 0.4, 0.0,
                            CovariateMissingness{"z", 0.0, 0.5}});
    w.beta_z = {0.5, 0.6};
    auto ws = simulate(w);
    o.m = 10;
    o.smc_iterations = 10;
    auto res = multiple_imputation(ws.data, ws.design, ws.outcome, o, RngStream(17, 0));
    for (const auto& comp : res.imputations.completed) CHECK_FALSE(comp.z.hasNaN());
    CHECK(std::abs(res.fit.coef[1] - 1.0) < 4 * std::sqrt(res.fit.cov(1, 1)));
    CHECK(std::abs(res.fit.coef[3] - 0.6) < 4 * std::sqrt(res.fit.cov(3, 3)));
}
