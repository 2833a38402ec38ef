#include "doctest.h"

#include <cmath>

#include "mecor/error.hpp"
#include "mecor/linmod.hpp"
#include "mecor/optim.hpp"
#include "mecor/rng.hpp"
#include "mecor/stats.hpp"

using namespace mecor;

namespace {

Eigen::MatrixXd random_design(RngStream& g, int n, int p) {
    Eigen::MatrixXd X(n, p);
    for (int i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (int j = 1; j < p; ++j) X(i, j) = g.normal();
    }
    return X;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("ols interpolates noiseless data") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 0, 1, 1, 1, 2, 1, 3;
    Eigen::VectorXd y(4);
    y << 1, 3, 5, 7;
    auto fit = fit_ols(X, y);
    CHECK(fit.coef[0] == doctest::Approx(1.0));
    CHECK(fit.coef[1] == doctest::Approx(2.0));
    CHECK(fit.sigma2 == doctest::Approx(0.0).epsilon(1e-20));
}

TEST_CASE("ols intercept only gives the mean") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    Eigen::VectorXd y(3);
    y << 1, 2, 3;
    CHECK(fit_ols(X, y).coef[0] == doctest::Approx(2.0));
}

TEST_CASE("ols matches the normal equations") {
    RngStream g(5, 0);
    Eigen::MatrixXd X = random_design(g, 50, 3);
    Eigen::VectorXd y(50);
    for (int i = 0; i < 50; ++i) y[i] = 0.3 + X(i, 1) - 2.0 * X(i, 2) + g.normal();
    auto fit = fit_ols(X, y);
    const Eigen::MatrixXd xtx = X.transpose() * X;
    const Eigen::VectorXd b = xtx.llt().solve(X.transpose() * y);
    CHECK((fit.coef - b).cwiseAbs().maxCoeff() < 1e-10);
    const double s2 = (y - X * b).squaredNorm() / 47.0;
    CHECK(rel_err(fit.cov, s2 * xtx.inverse()) < 1e-10);
}

TEST_CASE("ols rank deficiency names the collinear columns") {
    Eigen::MatrixXd X(5, 3);
    X << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8, 1, 5, 10;
    Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, 0, 1);
    try {
        fit_ols(X, y, {"(Intercept)", "a", "b"});
        FAIL("expected SingularDesignError");
    } catch (const SingularDesignError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("a") != std::string::npos);
        CHECK(msg.find("b") != std::string::npos);
    }
}

TEST_CASE("logistic symmetric data has zero slope") {
    Eigen::MatrixXd X(4, 2);
    X << 1, 1, 1, -1, 1, 1, 1, -1;
    Eigen::VectorXd y(4);
    y << 1, 0, 0, 1;
    auto fit = fit_logistic(X, y);
    CHECK(std::abs(fit.coef[1]) < 1e-10);
}

TEST_CASE("logistic intercept only is the logit of the proportion") {
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(8, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(8);
    y[0] = y[1] = 1;
    CHECK(fit_logistic(X, y).coef[0] == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-10));
}

TEST_CASE("logistic matches a plain Newton solver") {
    RngStream g(8, 0);
    const int n = 200;
    Eigen::MatrixXd X = random_design(g, n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i)
        y[i] = g.bernoulli(1.0 / (1.0 + std::exp(-(-0.5 + X(i, 1) + 0.5 * X(i, 2)))));
    auto fit = fit_logistic(X, y);
    REQUIRE(fit.grad_norm < 1e-8);

    Eigen::VectorXd b = Eigen::VectorXd::Zero(3);
    for (int it = 0; it < 50; ++it) {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(3);
        Eigen::MatrixXd info = Eigen::MatrixXd::Zero(3, 3);
        for (int i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(b)));
            grad += (y[i] - p) * X.row(i).transpose();
            info += p * (1 - p) * X.row(i).transpose() * X.row(i);
        }
        b += info.ldlt().solve(grad);
    }
    CHECK((fit.coef - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("logistic separation is reported") {
    Eigen::MatrixXd X(6, 2);
    X << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
    Eigen::VectorXd y(6);
    y << 0, 0, 0, 1, 1, 1;
    CHECK_THROWS_AS(fit_logistic(X, y), SeparationError);
}

TEST_CASE("analytic scores and information match finite differences") {
    RngStream g(21, 0);
    const int n = 100;
    Eigen::MatrixXd X = random_design(g, n, 3);
    Eigen::VectorXd y(n), t(n), d(n);
    for (int i = 0; i < n; ++i) {
        y[i] = g.bernoulli(0.4);
        t[i] = g.exponential(1.0);
        d[i] = g.bernoulli(0.7);
    }
    for (int rep = 0; rep < 10; ++rep) {
        Eigen::VectorXd b(3), w(4);
        for (int j = 0; j < 3; ++j) b[j] = 0.5 * g.normal();
        for (int j = 0; j < 4; ++j) w[j] = 0.3 * g.normal();

        Eigen::VectorXd gl;
        Eigen::MatrixXd hl;
        logistic_loglik(X, y, b, &gl, &hl);
        auto lf = [&](const Eigen::VectorXd& v) { return logistic_loglik(X, y, v); };
        CHECK(rel_err(gl, numeric_gradient(lf, b, 1e-6)) < 1e-5);
        FunctionObjective lo(3, [&](const Eigen::VectorXd& v, Eigen::VectorXd* gr) {
            return logistic_loglik(X, y, v, gr);
        });
        CHECK(rel_err(hl, numeric_hessian(lo, b)) < 1e-3);

        Eigen::VectorXd gw;
        Eigen::MatrixXd hw;
        weibull_loglik(t, d, X, w, &gw, &hw);
        auto wf = [&](const Eigen::VectorXd& v) { return weibull_loglik(t, d, X, v); };
        CHECK(rel_err(gw, numeric_gradient(wf, w, 1e-6)) < 1e-5);
        FunctionObjective wo(4, [&](const Eigen::VectorXd& v, Eigen::VectorXd* gr) {
            return weibull_loglik(t, d, X, v, gr);
        });
        CHECK(rel_err(hw, numeric_hessian(wo, w)) < 1e-3);
    }
}

TEST_CASE("weibull with unit shape reduces to the exponential rate") {
    Eigen::VectorXd t(5), d(5);
    t << 0.5, 1.2, 2.0, 0.7, 3.1;
    d << 1, 0, 1, 1, 0;
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(5, 1);
    WeibullOptions o;
    o.fixed_shape = 1.0;
    auto fit = fit_weibull_ph(t, d, X, {}, o);
    CHECK(std::exp(fit.coef[0]) == doctest::Approx(3.0 / t.sum()).epsilon(1e-8));
}

TEST_CASE("weibull scale equivariance") {
    RngStream g(3, 0);
    const int n = 300;
    Eigen::MatrixXd X = random_design(g, n, 2);
    Eigen::VectorXd t(n), d(n);
    for (int i = 0; i < n; ++i) {
        const double e = g.exponential(1.0);
        t[i] = std::pow(e / std::exp(-1.0 + 0.5 * X(i, 1)), 1.0 / 1.5);
        d[i] = g.bernoulli(0.8);
    }
    auto a = fit_weibull_ph(t, d, X);
    const double c = 3.7;
    auto b = fit_weibull_ph(t * c, d, X);
    CHECK(*b.shape == doctest::Approx(*a.shape).epsilon(1e-6));
    CHECK(b.coef[1] == doctest::Approx(a.coef[1]).epsilon(1e-6));
    CHECK(b.coef[0] == doctest::Approx(a.coef[0] - *a.shape * std::log(c)).epsilon(1e-6));
}

TEST_CASE("weibull recovers known parameters by simulation") {
    const double r = 1.5, b0 = -0.5, b1 = 0.7;
    const int reps = 200, n = 500;
    std::vector<double> rs, s1;
    RngStream root(77, 0);
    for (int k = 0; k < reps; ++k) {
        RngStream g = root.split(k);
        Eigen::MatrixXd X = random_design(g, n, 2);
        Eigen::VectorXd t(n), d(n);
        for (int i = 0; i < n; ++i) {
            const double tt = std::pow(g.exponential(1.0) / std::exp(b0 + b1 * X(i, 1)), 1.0 / r);
            const double c = g.exponential(0.3);
            t[i] = std::min(tt, c);
            d[i] = tt <= c ? 1.0 : 0.0;
        }
        auto fit = fit_weibull_ph(t, d, X);
        rs.push_back(*fit.shape);
        s1.push_back(fit.coef[1]);
    }
    const double mcse_r = std::sqrt(stats::variance(rs) / reps);
    const double mcse_b = std::sqrt(stats::variance(s1) / reps);
    CHECK(std::abs(stats::mean(rs) - r) < 3.0 * mcse_r + 0.01);
    CHECK(std::abs(stats::mean(s1) - b1) < 3.0 * mcse_b + 0.01);
}

TEST_CASE("weibull without events") {
    Eigen::VectorXd t(3), d = Eigen::VectorXd::Zero(3);
    t << 1, 2, 3;
    CHECK_THROWS_AS(fit_weibull_ph(t, d, Eigen::MatrixXd::Ones(3, 1)), NoEventsError);
}

TEST_CASE("nelson-aalen definition and hand example") {
    Eigen::VectorXd t(4), d(4);
    t << 1, 2, 3, 4;
    d << 1, 0, 0, 0;
    CHECK(nelson_aalen(t, d)(1.0) == doctest::Approx(0.25));

    d.setZero();
    auto h0 = nelson_aalen(t, d);
    CHECK(h0(0.5) == 0.0);
    CHECK(h0(10.0) == 0.0);

    Eigen::VectorXd t5(5), d5(5);
    t5 << 2, 1, 5, 3, 2;
    d5 << 1, 1, 0, 1, 0;
    auto h = nelson_aalen(t5, d5);
    CHECK(h(0.5) == 0.0);
    CHECK(h(1.0) == doctest::Approx(1.0 / 5.0));
    CHECK(h(1.99) == doctest::Approx(1.0 / 5.0));
    CHECK(h(2.0) == doctest::Approx(1.0 / 5.0 + 1.0 / 4.0));
    CHECK(h(3.0) == doctest::Approx(1.0 / 5.0 + 1.0 / 4.0 + 1.0 / 2.0));
    CHECK(h(9.0) == doctest::Approx(1.0 / 5.0 + 1.0 / 4.0 + 1.0 / 2.0));
}

namespace {

Dataset column_dataset(const std::vector<double>& v) {
    Dataset ds(std::vector<std::uint8_t>(v.size(), 1));
    ds.add_column(make_column("v", v));
    return ds;
}

Eigen::VectorXd mean_estimator(const Dataset& ds) {
    Eigen::VectorXd e(1);
    e[0] = stats::mean(ds.column("v").values);
    return e;
}

}  // namespace

TEST_CASE("bootstrap of a constant sample has zero width") {
    auto res = bootstrap(mean_estimator, column_dataset(std::vector<double>(20, 3.0)), 50,
                         RngStream(1, 0));
    CHECK(res.pct_lower[0] == 3.0);
    CHECK(res.pct_upper[0] == 3.0);
    CHECK(res.se[0] == 0.0);
}

TEST_CASE("bootstrap is reproducible") {
    RngStream g(4, 0);
    std::vector<double> v(60);
    for (auto& x : v) x = g.normal();
    auto a = bootstrap(mean_estimator, column_dataset(v), 100, RngStream(9, 2));
    auto b = bootstrap(mean_estimator, column_dataset(v), 100, RngStream(9, 2));
    CHECK(a.draws == b.draws);
}

TEST_CASE("bootstrap standard error of the mean") {
    RngStream root(10, 0);
    for (int run = 0; run < 10; ++run) {
        RngStream g = root.split(run);
        std::vector<double> v(100);
        for (auto& x : v) x = g.normal(1.0, 2.0);
        const double oracle = std::sqrt(stats::variance(v) / 100.0);
        auto res = bootstrap(mean_estimator, column_dataset(v), 1000, root.split(1000 + run));
        CHECK(std::abs(res.se[0] / oracle - 1.0) < 0.15);
    }
}

TEST_CASE("bootstrap aborts when too many replicates fail") {
    std::vector<double> v(30, 1.0);
    int calls = 0;
    Estimator bad = [&](const Dataset& ds) -> Eigen::VectorXd {
        if (calls++ > 0) throw Error("boom");
        return mean_estimator(ds);
    };
    BootstrapOptions o;
    o.threads = 1;
    CHECK_THROWS_AS(bootstrap(bad, column_dataset(v), 20, RngStream(1, 0), o), BootstrapFailure);
}
