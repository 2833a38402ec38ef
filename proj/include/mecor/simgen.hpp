#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/linmod.hpp"

namespace mecor {

// Missingness of a generated covariate:
// logit Pr(missing) = intercept + coef * (value of `depends_on`).
// An empty `depends_on` gives MCAR missingness with probability expit(intercept).
struct CovariateMissingness {
    std::string depends_on;
    double intercept = 0.0;
    double coef = 0.0;
};

struct CovariateSpec {
    enum class Kind { Normal, Binary };
    std::string name;
    Kind kind = Kind::Normal;
    double mean = 0.0;      // Normal
    double variance = 1.0;  // Normal
    double p = 0.5;         // Binary
    double corr_x = 0.0;    // correlation with X
    std::optional<CovariateMissingness> missing;
};

struct SimConfig {
    std::size_t n = 1000;
    double mu_x = 0.0;
    double sigma2_x = 1.0;
    std::vector<CovariateSpec> covariates;

    OutcomeKind outcome = OutcomeKind::LinearNormal;
    double alpha = 0.0;
    double beta_x = 1.0;
    std::vector<double> beta_z;
    double sigma2_y = 1.0;       // LinearNormal residual variance
    double shape = 1.0;          // Weibull r
    double censoring_rate = 0.0; // Weibull: target fraction censored, in [0, 1)

    DesignKind design = DesignKind::Replication;
    // Error model of the always-observed measure (X*, X*_1) and of X*_2.
    ErrorModelSpec error = ErrorModelSpec::classical(1.0);
    // Calibration design: model of the second-type measure(s) X**.
    ErrorModelSpec error2 = ErrorModelSpec::classical(0.5);
    int second_measures = 1;  // calibration: 1 (xss) or 2 (xss1, xss2)

    SelectionMechanism selection = Mcar{0.5};
    double primary_missing_prob = 0.0;  // MCAR missingness of X* / X*_1

    std::uint64_t seed = 1;
    std::uint64_t stream = 0;

    // Throws ConfigError naming the offending field.
    void check() const;
};

struct TruthRecord {
    std::map<std::string, double> params;  // "(Intercept)", exposure "x", covariates, nuisance
    std::vector<double> x;                 // latent true exposure per row
    double censoring_rate = 0.0;           // realized
    double censoring_hazard = 0.0;         // exponential censoring rate used
};

struct SimResult {
    Dataset data;
    TruthRecord truth;
    StudyDesign design;
    OutcomeSpec outcome;
};

SimResult simulate(const SimConfig& cfg);

// Rate of exponential censoring giving mean_i Pr(C_i < T_i) = target.
double solve_censoring_rate(const std::vector<double>& times, double target);

struct TruthCheckRow {
    std::string name;
    double truth = 0.0;
    double estimate = 0.0;
    double bias = 0.0;
    double rel_bias = 0.0;  // NaN when truth is 0
    bool covered = false;
};

std::vector<TruthCheckRow> truth_check(const std::vector<std::string>& names,
                                       const Eigen::VectorXd& estimate,
                                       const Eigen::VectorXd& lower,
                                       const Eigen::VectorXd& upper, const TruthRecord& truth);
std::vector<TruthCheckRow> truth_check(const FitResult& fit, const TruthRecord& truth);

}  // namespace mecor
