#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/frame.hpp"
#include "mecor/linmod.hpp"
#include "mecor/rng.hpp"

namespace mecor {

// Inverse-Gamma(shape, rate) priors on variances in the SMC-FCS parameter
// draws; regression coefficients get flat priors.
struct SmcPriors {
    double shape = 0.01;
    double rate = 0.01;
};

enum class MiVariant { Normal, SmcFcs };

std::string to_string(MiVariant v);
MiVariant mi_variant_from_string(const std::string& s);

struct MiOptions {
    int m = 20;
    MiVariant variant = MiVariant::Normal;
    std::size_t min_validated = 30;  // R=1 rows needed by validation imputation
    int smc_iterations = 20;
    long smc_max_tries = 100000;     // rejection attempts per record and cycle
    SmcPriors priors;
    double level = 0.95;
    unsigned threads = 0;
};

// A completed dataset: the rows of the analysis frame with the exposure
// column (named after the design's exposure) filled in and any imputed
// covariates completed.
struct Completed {
    Eigen::VectorXd x;
    Eigen::MatrixXd z;
};

struct ImputationSet {
    ModelFrame frame;                 // rows and observed data used
    std::vector<Completed> completed;
    std::vector<std::string> warnings;

    Dataset dataset(const Dataset& source, std::size_t m) const;
};

// Validation design: X drawn for R=0 rows from a linear regression of X on
// (X*, Z, outcome terms) fitted on R=1 rows, with parameters redrawn per
// imputation. Weibull outcomes enter as (event, Nelson-Aalen H(T)).
ImputationSet impute_validation(const Dataset& ds, const StudyDesign& design,
                                const OutcomeSpec& outcome, const MiOptions& opts = {},
                                const RngStream& rng = RngStream(1, 0));

// Replication (or calibration, via the two X** measures) with LinearNormal
// outcome: X drawn from its conditional normal given the measures, Y and Z.
ImputationSet impute_replicates_normal(const Dataset& ds, const StudyDesign& design,
                                       const OutcomeSpec& outcome, const MiOptions& opts = {},
                                       const RngStream& rng = RngStream(1, 0));

// Conjugate conditional of X given its prior N(prior_mean, prior_var) and k
// measures with mean `measure_mean`, each with error variance sigma2_u.
struct NormalDraw {
    double mean = 0.0;
    double var = 0.0;
};
NormalDraw conditional_normal(double prior_mean, double prior_var, double measure_mean, int k,
                              double sigma2_u);

// Parameters of one SMC-FCS cycle.
struct SmcParams {
    OutcomeKind outcome = OutcomeKind::LinearNormal;
    Eigen::VectorXd beta;  // (alpha, beta_x, beta_z...)
    double sigma2_y = 1.0;
    double shape = 1.0;
    Eigen::VectorXd gamma;  // exposure model on (1, Z)
    double tau2 = 1.0;
    double theta0 = 0.0, theta1 = 1.0;  // validation error model; 0/1 for replicates
    double sigma2_u = 1.0;
};

// One rejection draw of X for frame row i with covariates `z`: proposals from
// p(X | measures, Z) accepted with probability f(y | X, Z) / sup_X f(y | X, Z).
// Throws ImputationError after max_tries proposals.
double smc_draw(const ModelFrame& f, std::size_t i, const Eigen::VectorXd& z, const SmcParams& p,
                RngStream& rng, long max_tries = 100000, long* tries = nullptr);

struct SmcDiagnostics {
    std::vector<std::vector<double>> mean_trace;  // per imputation, mean imputed X per cycle
    std::vector<bool> nonstationary;
    double mean_tries = 0.0;  // average rejection attempts per imputed value
};

// Substantive-model-compatible imputation by rejection sampling from the
// proposal p(X | X*, Z) with the outcome density as acceptance ratio.
ImputationSet impute_smcfcs(const Dataset& ds, const StudyDesign& design,
                            const OutcomeSpec& outcome, const MiOptions& opts = {},
                            const RngStream& rng = RngStream(1, 0),
                            SmcDiagnostics* diag = nullptr);

enum class PoolScale { Identity, Log };

struct PooledResult {
    std::vector<std::string> names;
    Eigen::VectorXd estimate;  // on the reporting scale
    Eigen::VectorXd within, between, total;  // variances on the pooling scale
    Eigen::MatrixXd total_cov;               // W + (1 + 1/M) B, pooling scale
    Eigen::VectorXd df;                      // infinite when B = 0
    Eigen::VectorXd lower, upper;            // reporting scale
    Eigen::MatrixXd per_imputation;          // M x p, pooling scale
    int m = 0;
    PoolScale scale = PoolScale::Identity;
    double level = 0.95;

    FitResult to_fit_result() const;
};

// Log: inputs are ratios (e.g. hazard ratios) with covariance on the ratio
// scale; pooling happens on the log scale and results are mapped back.
PooledResult pool_rubin(const std::vector<FitResult>& fits, PoolScale scale = PoolScale::Identity,
                        double level = 0.95);

struct MiResult {
    PooledResult pooled;
    FitResult fit;
    ImputationSet imputations;
    MiVariant variant = MiVariant::Normal;
    SmcDiagnostics smc;  // SmcFcs only
    std::vector<std::string> warnings;
};

// Imputes, fits the outcome model on each completed dataset and pools.
// Normal picks the validation or replicate-normal imputation by design.
MiResult multiple_imputation(const Dataset& ds, const StudyDesign& design,
                             const OutcomeSpec& outcome, const MiOptions& opts = {},
                             const RngStream& rng = RngStream(1, 0));

FitResult fit_completed(const ModelFrame& f, const Completed& c);

}  // namespace mecor
