#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mecor {

// A log-likelihood (or any objective to maximize) with analytic gradient.
class Objective {
public:
    virtual ~Objective() = default;
    virtual Eigen::Index dim() const = 0;
    // Returns the value; fills grad (size dim()) when non-null.
    virtual double value(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const = 0;
    // Analytic Hessian of the objective if available.
    virtual bool hessian(const Eigen::VectorXd& /*w*/, Eigen::MatrixXd& /*h*/) const {
        return false;
    }
};

// Adapter for lambdas.
class FunctionObjective : public Objective {
public:
    using Fn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;
    FunctionObjective(Eigen::Index dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
    Eigen::Index dim() const override { return dim_; }
    double value(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const override {
        return fn_(w, grad);
    }

private:
    Eigen::Index dim_;
    Fn fn_;
};

struct OptimOptions {
    double grad_tol = 1e-6;  // sup-norm of the free gradient
    int max_iter = 200;
    int newton_polish = 5;   // Newton steps with the analytic Hessian after BFGS
    // Initial inverse-Hessian for BFGS on the free block (negative of the
    // inverse curvature). When empty a scaled identity is used.
    std::optional<Eigen::MatrixXd> initial_inverse_hessian;
};

struct OptimResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd grad;
    int iterations = 0;
    int evaluations = 0;
    double grad_norm = 0.0;  // sup-norm over free coordinates
    bool converged = false;
    std::vector<std::string> trace;
};

// Maximizes `obj` over the coordinates with free[i] == true, holding the
// others at their starting values.
OptimResult maximize(const Objective& obj, const Eigen::VectorXd& start,
                     const std::vector<bool>& free, const OptimOptions& opts = {});
OptimResult maximize(const Objective& obj, const Eigen::VectorXd& start,
                     const OptimOptions& opts = {});

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& w, double rel_step = 1e-5);
// Central differences of an analytic gradient; symmetrized.
Eigen::MatrixXd numeric_hessian(const Objective& obj, const Eigen::VectorXd& w,
                                double rel_step = 1e-5);

struct ProfileInterval {
    double lower = 0.0;
    double upper = 0.0;
    bool lower_open = false;  // endpoint beyond the search bound
    bool upper_open = false;
    double level = 0.95;
    double estimate = 0.0;
};

struct ProfileOptions {
    double level = 0.95;
    double max_se_multiple = 20.0;  // search bound, in Wald SEs from the estimate
    double tol = 1e-7;              // endpoint tolerance relative to the Wald SE
    OptimOptions inner;
};

// Profile-likelihood interval for coordinate `index`: the set where
// 2 * (max loglik - profile loglik) <= chi2_1(level). `mle` must be a
// converged maximizer and `se` the Wald standard error used to scale the
// search. Endpoints are located by bracketing and bisection on the profile.
ProfileInterval profile_interval(const Objective& obj, const Eigen::VectorXd& mle,
                                 double max_value, Eigen::Index index, double se,
                                 const std::vector<bool>& free, const ProfileOptions& opts = {});

}  // namespace mecor
