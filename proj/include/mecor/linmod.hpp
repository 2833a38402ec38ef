#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/rng.hpp"

namespace mecor {

struct FitResult {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd cov;
    double loglik = 0.0;
    bool converged = true;
    int iterations = 0;
    double grad_norm = 0.0;
    std::optional<double> shape;     // Weibull r
    std::optional<double> log_shape_se;
    double sigma2 = 0.0;          // residual variance (OLS)
    std::string method;
    std::vector<std::string> warnings;
    // Interval estimates; when empty, Wald intervals are derived from cov.
    Eigen::VectorXd lower, upper;
    double level = 0.95;

    Eigen::VectorXd se() const;
    std::ptrdiff_t index_of(const std::string& name) const;  // -1 if absent
    // Fills lower/upper with Wald intervals at `level` when not already set.
    void set_wald_intervals(double level);
};

// ---------------------------------------------------------------------------
// Ordinary least squares
// ---------------------------------------------------------------------------

FitResult fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  const std::vector<std::string>& names = {});

// ---------------------------------------------------------------------------
// Logistic regression by IRLS
// ---------------------------------------------------------------------------

struct LogisticOptions {
    double grad_tol = 1e-8;
    int max_iter = 100;
    double separation_norm = 1e4;
};

FitResult fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const std::vector<std::string>& names = {},
                       const LogisticOptions& opts = {});

double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, Eigen::VectorXd* grad = nullptr,
                       Eigen::MatrixXd* hess = nullptr);

// ---------------------------------------------------------------------------
// Weibull proportional hazards, h(t) = r t^(r-1) exp(x'beta)
// ---------------------------------------------------------------------------

struct WeibullOptions {
    double grad_tol = 1e-6;
    int max_iter = 100;
    std::optional<double> fixed_shape;  // hold r fixed
};

// Parameter vector w = (log r, beta). Returns the log-likelihood
// sum d_i log h(t_i) - H(t_i).
double weibull_loglik(const Eigen::VectorXd& t, const Eigen::VectorXd& d, const Eigen::MatrixXd& X,
                      const Eigen::VectorXd& w, Eigen::VectorXd* grad = nullptr,
                      Eigen::MatrixXd* hess = nullptr);

// coef/cov describe beta; the shape is reported in `shape` with the standard
// error of log r in `log_shape_se`.
FitResult fit_weibull_ph(const Eigen::VectorXd& t, const Eigen::VectorXd& d,
                         const Eigen::MatrixXd& X, const std::vector<std::string>& names = {},
                         const WeibullOptions& opts = {});

double gaussian_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, double sigma2);

// Dispatch on the outcome family; `y` holds times for Weibull, `event` the
// event indicator (ignored otherwise).
FitResult fit_outcome(OutcomeKind kind, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& event, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Nelson-Aalen cumulative hazard
// ---------------------------------------------------------------------------

class StepFunction {
public:
    StepFunction() = default;
    StepFunction(std::vector<double> knots, std::vector<double> values);
    // Right-continuous: value at the last knot <= t, 0 before the first.
    double operator()(double t) const;
    const std::vector<double>& knots() const { return knots_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::vector<double> knots_;
    std::vector<double> values_;
};

StepFunction nelson_aalen(const Eigen::VectorXd& t, const Eigen::VectorXd& d);

// ---------------------------------------------------------------------------
// Case-resampling bootstrap
// ---------------------------------------------------------------------------

struct BootstrapOptions {
    double level = 0.95;
    bool stratify_on_r = false;
    double max_fail_fraction = 0.1;
    unsigned threads = 0;
};

struct BootstrapResult {
    Eigen::MatrixXd draws;  // successful replicates x parameters
    Eigen::VectorXd estimate;
    Eigen::VectorXd se;
    Eigen::VectorXd pct_lower, pct_upper;
    Eigen::VectorXd normal_lower, normal_upper;
    int failures = 0;
    int requested = 0;
    std::vector<std::string> failure_messages;
};

using Estimator = std::function<Eigen::VectorXd(const Dataset&)>;

// Replicate b uses rng.split(b). Throws BootstrapFailure when more than
// max_fail_fraction of the replicates throw.
BootstrapResult bootstrap(const Estimator& estimator, const Dataset& ds, int B,
                          const RngStream& rng, const BootstrapOptions& opts = {});

}  // namespace mecor
