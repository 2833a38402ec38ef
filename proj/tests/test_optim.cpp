#include "doctest.h"

#include <cmath>

#include "mecor/optim.hpp"
#include "mecor/stats.hpp"

using namespace mecor;

namespace {

// Gaussian log-likelihood in (mu) with known unit variance plus a quadratic
// nuisance coordinate: exactly quadratic in every direction.
class Quadratic : public Objective {
public:
    explicit Quadratic(Eigen::MatrixXd a, Eigen::VectorXd c) : a_(std::move(a)), c_(std::move(c)) {}
    Eigen::Index dim() const override { return c_.size(); }
    double value(const Eigen::VectorXd& w, Eigen::VectorXd* g) const override {
        const Eigen::VectorXd d = w - c_;
        if (g) *g = -a_ * d;
        return -0.5 * d.dot(a_ * d);
    }
    bool hessian(const Eigen::VectorXd&, Eigen::MatrixXd& h) const override {
        h = -a_;
        return true;
    }

private:
    Eigen::MatrixXd a_;
    Eigen::VectorXd c_;
};

}  // namespace

TEST_CASE("maximize a Rosenbrock-type objective") {
    FunctionObjective f(2, [](const Eigen::VectorXd& w, Eigen::VectorXd* g) {
        const double a = 1.0 - w[0], b = w[1] - w[0] * w[0];
        if (g) {
            (*g)[0] = 2.0 * a + 400.0 * w[0] * b;
            (*g)[1] = -200.0 * b;
        }
        return -(a * a + 100.0 * b * b);
    });
    OptimOptions o;
    o.max_iter = 500;
    auto r = maximize(f, Eigen::Vector2d(-1.2, 1.0), o);
    CHECK(r.converged);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("fixed coordinates stay put") {
    Eigen::Matrix2d a;
    a << 2, 0.5, 0.5, 1;
    Quadratic q(a, Eigen::Vector2d(1.0, -1.0));
    auto r = maximize(q, Eigen::Vector2d(3.0, 0.0), std::vector<bool>{false, true});
    CHECK(r.x[0] == 3.0);
    // argmax of the second coordinate given the first: c2 - a21/a22 (w1 - c1)
    CHECK(r.x[1] == doctest::Approx(-1.0 - 0.5 * 2.0).epsilon(1e-8));
}

TEST_CASE("profile interval equals the Wald interval for a quadratic") {
    Eigen::Matrix2d a;
    a << 4, 1, 1, 2;
    Quadratic q(a, Eigen::Vector2d(0.3, 2.0));
    const Eigen::Matrix2d cov = a.inverse();
    const double se = std::sqrt(cov(0, 0));
    auto p = profile_interval(q, Eigen::Vector2d(0.3, 2.0), 0.0, 0, se, {true, true});
    const double z = stats::normal_quantile(0.975);
    CHECK(p.lower == doctest::Approx(0.3 - z * se).epsilon(1e-6));
    CHECK(p.upper == doctest::Approx(0.3 + z * se).epsilon(1e-6));
    CHECK_FALSE(p.lower_open);

    ProfileOptions o99;
    o99.level = 0.99;
    auto p99 = profile_interval(q, Eigen::Vector2d(0.3, 2.0), 0.0, 0, se, {true, true}, o99);
    CHECK(p99.lower < p.lower);
    CHECK(p99.upper > p.upper);
}

TEST_CASE("flat profile gives an open interval") {
    FunctionObjective f(1, [](const Eigen::VectorXd& w, Eigen::VectorXd* g) {
        if (g) (*g)[0] = -w[0] * std::exp(-w[0] * w[0]);
        return 0.5 * std::exp(-w[0] * w[0]);
    });
    auto p = profile_interval(f, Eigen::VectorXd::Zero(1), 0.5, 0, 1.0, {true});
    CHECK(p.lower_open);
    CHECK(p.upper_open);
}
