#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/frame.hpp"
#include "mecor/linmod.hpp"
#include "mecor/rng.hpp"

namespace mecor {

// Regression coefficients N(0, coef_var); precisions Gamma(prec_shape,
// prec_rate); Weibull shape r ~ Exponential(shape_rate) and the scaled
// coefficients -beta/r ~ N(0, scaled_coef_var). `flat` replaces the
// coefficient priors (outcome, error, exposure) by improper flat priors.
struct PriorSpec {
    double coef_var = 1e4;
    double prec_shape = 0.5;
    double prec_rate = 0.5;
    double shape_rate = 0.001;
    double scaled_coef_var = 1e6;
    bool flat = false;

    void check() const;  // ConfigError unless every hyperparameter is > 0
};

struct McmcOptions {
    int chains = 4;
    int iters = 10000;  // total per chain, burn-in included
    int burnin = 5000;
    int thin = 1;
    std::vector<std::size_t> keep_latent;  // frame rows whose latent X is stored
    unsigned threads = 0;
};

struct PosteriorChain {
    std::vector<std::string> names;
    Eigen::MatrixXd draws;   // stored iterations x parameters, burn-in rows first
    int burnin_rows = 0;
    std::vector<std::size_t> latent_rows;
    Eigen::MatrixXd latent;  // stored iterations x latent_rows.size()
    std::map<std::string, double> acceptance;  // per block, post burn-in
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::vector<std::string> warnings;

    Eigen::MatrixXd kept() const { return draws.bottomRows(draws.rows() - burnin_rows); }
};

std::vector<PosteriorChain> run_mcmc(const Dataset& ds, const StudyDesign& design,
                                     const OutcomeSpec& outcome, const PriorSpec& priors = {},
                                     const McmcOptions& opts = {},
                                     const RngStream& rng = RngStream(1, 0));

// One chain of the Metropolis-within-Gibbs sampler, exposed so tests can
// drive single sweeps (and rewrite the data between sweeps).
class GibbsSampler {
public:
    GibbsSampler(ModelFrame frame, const PriorSpec& priors, RngStream rng);

    // One full sweep; step sizes adapt only while `adapt` is true.
    void sweep(bool adapt);

    std::vector<std::string> names() const;
    Eigen::VectorXd params() const;  // in names() order
    const Eigen::VectorXd& latent_x() const { return x_; }
    const Eigen::MatrixXd& current_z() const { return z_; }
    ModelFrame& frame() { return f_; }

    // Overwrites the chain state.
    void set_latent_x(const Eigen::VectorXd& x);
    void set_params(const Eigen::VectorXd& p);

    std::map<std::string, double> acceptance() const;  // since the last reset
    void reset_acceptance();

private:
    struct Block {
        Eigen::MatrixXd chol;  // proposal factor
        double log_scale = 0.0;
        long tries = 0, accepts = 0;
    };

    void init();
    void update_latent(bool adapt);
    void update_outcome(bool adapt);
    void update_error();
    void update_exposure();
    void update_missing_z(bool adapt);
    void check_state(const char* where) const;

    Eigen::MatrixXd outcome_design() const;
    double outcome_ll(std::size_t i, double x, const Eigen::VectorXd& zrow) const;
    double gaussian_part(std::size_t i, double x, double* prec, double* mean) const;

    ModelFrame f_;
    PriorSpec pr_;
    RngStream rng_;
    std::size_t n_ = 0;
    Eigen::Index q_ = 0;

    Eigen::VectorXd x_;
    std::vector<std::uint8_t> x_fixed_;
    Eigen::MatrixXd z_;
    std::vector<int> miss_cols_;          // binary covariates with missing cells
    std::vector<int> complete_cols_;      // fully observed covariates
    Eigen::MatrixXd cov_design_;          // [1, complete covariates]

    Eigen::VectorXd beta_;
    double s2y_ = 1.0, shape_ = 1.0;
    double th0_ = 0.0, th1_ = 1.0, s2u_ = 1.0, s2u2_ = 1.0;
    Eigen::VectorXd gamma_;
    double tau2_ = 1.0;
    std::vector<Eigen::VectorXd> pi_;     // per missing column

    Block outcome_block_;
    std::vector<Block> pi_blocks_;
    Eigen::VectorXd x_scale_;             // per record latent step size
    long x_tries_ = 0, x_accepts_ = 0;
    std::vector<long> x_tries_i_, x_acc_i_;
    long sweeps_ = 0;
};

struct ParamSummary {
    std::string name;
    double mean = 0.0, sd = 0.0, lower = 0.0, upper = 0.0;
    double rhat = 1.0;  // NaN with a single chain too short to split
    double ess = 0.0;
};

struct PosteriorSummary {
    std::vector<ParamSummary> params;
    FitResult fit;  // outcome coefficients: posterior means, covariance, credible intervals
    bool converged = true;  // every R-hat <= 1.1
    double level = 0.95;
    std::vector<std::string> warnings;

    const ParamSummary& operator[](const std::string& name) const;
};

PosteriorSummary summarize_posterior(const std::vector<PosteriorChain>& chains,
                                     double level = 0.95);

// Split R-hat over the given chains (each a column of draws).
double split_rhat(const std::vector<Eigen::VectorXd>& chains);
// Effective sample size from Geyer's initial positive sequence.
double effective_size(const Eigen::VectorXd& draws);

}  // namespace mecor
