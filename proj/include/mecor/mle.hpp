#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/frame.hpp"
#include "mecor/linmod.hpp"
#include "mecor/optim.hpp"
#include "mecor/quadrature.hpp"
#include "mecor/rng.hpp"

namespace mecor {

// Joint model parameters on the natural scale.
//   outcome:  beta = (alpha, beta_x, beta_z...), sigma2_y (linear), shape (Weibull)
//   error:    X* = theta0 + theta1 X + U, var U = sigma2_u
//             (replication: theta0 = 0, theta1 = 1 for both replicates)
//             calibration: X** = X + U2, var U2 = sigma2_u2
//   exposure: X | Z ~ N(gamma' (1, Z), tau2)
struct JointParams {
    Eigen::VectorXd beta;
    double sigma2_y = 1.0;
    double shape = 1.0;
    double theta0 = 0.0;
    double theta1 = 1.0;
    double sigma2_u = 1.0;
    double sigma2_u2 = 1.0;
    Eigen::VectorXd gamma;
    double tau2 = 1.0;
};

// Position of each parameter in the unconstrained vector w. Variances and
// the Weibull shape enter on the log scale. Absent parameters have index -1.
struct ParamLayout {
    Eigen::Index p_beta = 0;
    Eigen::Index outcome_nuisance = -1;  // log sigma2_y or log r
    Eigen::Index theta0 = -1, theta1 = -1;
    Eigen::Index log_sigma2_u = -1;
    Eigen::Index log_sigma2_u2 = -1;
    Eigen::Index gamma = -1;  // first of 1 + q
    Eigen::Index log_tau2 = -1;
    Eigen::Index dim = 0;
    std::vector<std::string> names;

    Eigen::Index index_of(const std::string& name) const;  // -1 if absent
};

ParamLayout make_layout(const ModelFrame& f);
Eigen::VectorXd pack(const ParamLayout& l, const JointParams& p);
JointParams unpack(const ParamLayout& l, const Eigen::VectorXd& w);

struct LikelihoodOptions {
    int quad_points = 32;
    bool nondifferential = true;
    unsigned threads = 1;
};

// Observed-data log-likelihood with the latent exposure integrated out per
// record by adaptive Gauss-Hermite quadrature (recentred at each record's
// integrand mode). Records with X observed contribute the full-data density.
class JointLikelihood : public Objective {
public:
    JointLikelihood(ModelFrame frame, const LikelihoodOptions& opts = {});

    Eigen::Index dim() const override { return layout_.dim; }
    double value(const Eigen::VectorXd& w, Eigen::VectorXd* grad) const override;
    bool hessian(const Eigen::VectorXd& w, Eigen::MatrixXd& h) const override;

    // Contribution of record i alone.
    double record_loglik(std::size_t i, const Eigen::VectorXd& w) const;

    const ModelFrame& frame() const { return frame_; }
    const ParamLayout& layout() const { return layout_; }
    int quad_points() const { return rule_.size(); }

private:
    double evaluate(const Eigen::VectorXd& w, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const;
    double record(std::size_t i, const Eigen::VectorXd& w, Eigen::VectorXd* grad,
                  Eigen::MatrixXd* hess) const;

    ModelFrame frame_;
    ParamLayout layout_;
    QuadratureRule rule_;
    unsigned threads_;
};

// Convenience forms evaluated at natural-scale parameters. Throw
// UnsupportedConfiguration for differential error and DataError when the
// design does not match.
double loglik_validation(const JointParams& p, const Dataset& ds, const StudyDesign& design,
                         const OutcomeSpec& outcome, const LikelihoodOptions& opts = {});
double loglik_replication(const JointParams& p, const Dataset& ds, const StudyDesign& design,
                          const OutcomeSpec& outcome, const LikelihoodOptions& opts = {});

struct MlOptions {
    int quad_points = 32;
    int starts = 5;  // naive, RC, then jittered copies of the RC start
    bool nondifferential = true;
    // Parameters held fixed, by layout name on the natural scale
    // ("sigma2_u", "theta1", "sigma2_y", ...).
    std::map<std::string, double> fixed;
    std::optional<Eigen::VectorXd> start;  // unconstrained-scale start replacing the defaults
    double level = 0.95;
    OptimOptions optim;
    unsigned threads = 1;
    bool allow_missing_primary = false;
};

struct MlResult {
    FitResult fit;  // outcome coefficients with Wald intervals
    ParamLayout layout;
    Eigen::VectorXd params;     // unconstrained scale
    Eigen::MatrixXd param_cov;  // inverse observed information, free block; zeros elsewhere
    std::vector<bool> free;
    JointParams natural;
    std::vector<double> start_logliks;  // final loglik from each start (NaN when it failed)
    bool boundary_sigma2_u = false;
    std::shared_ptr<const JointLikelihood> model;
};

MlResult fit_ml(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome,
                const MlOptions& opts = {}, const RngStream& rng = RngStream(1, 0));

// Profile-likelihood interval for a parameter of a converged fit, on the
// unconstrained scale (outcome coefficients are unconstrained already).
ProfileInterval profile_ml(const MlResult& fit, const std::string& param, double level = 0.95);

}  // namespace mecor
