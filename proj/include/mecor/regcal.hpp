#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mecor/core.hpp"
#include "mecor/frame.hpp"
#include "mecor/linmod.hpp"
#include "mecor/rng.hpp"

namespace mecor {

enum class CalibrationSource {
    Validation,                  // X on (X*, Z), R=1
    ReplicationCrossReg,         // X*_2 on (X*_1, Z), R=1
    ReplicationRandomIntercept,  // shared-mean measurement model, all rows
    Calibration                  // X** on (X*, Z), R=1
};

std::string to_string(CalibrationSource s);

struct CalibrationOptions {
    // Replication designs: use the simple cross-regression instead of the
    // random-intercept model.
    bool cross_regression = false;
};

// Linear model for E(X | X*, Z). For the random-intercept source, `gamma`
// holds the equivalent single-measure coefficients and the two-measure
// conditional mean uses mu_coef / tau2 / sigma2_u.
struct CalibrationModel {
    CalibrationSource source = CalibrationSource::Validation;
    std::vector<std::string> names;  // "(Intercept)", measure, covariates
    Eigen::VectorXd gamma;
    Eigen::MatrixXd gamma_cov;
    double residual_variance = 0.0;
    std::size_t fit_rows = 0;

    Eigen::VectorXd mu_coef;  // E(X | Z) on (1, Z)
    double tau2 = 0.0;        // var(X | Z)
    double sigma2_u = 0.0;    // error variance (replication sources)
    double delta = 0.0;       // mean of X*_1 - X*_2 over complete pairs

    std::vector<std::string> warnings;
};

CalibrationModel fit_calibration(const ModelFrame& f, const CalibrationOptions& opts = {});
CalibrationModel fit_calibration(const Dataset& ds, const StudyDesign& design,
                                 const OutcomeSpec& outcome, const CalibrationOptions& opts = {});

// Measures available for one record. `measure` is X* (or X*_1), `second` the
// replicate X*_2 where observed, `x` the true exposure where observed.
struct CalibrationRow {
    std::optional<double> x;
    std::optional<double> measure;
    std::optional<double> second;
    Eigen::VectorXd z;
};

// Throws DataError when the row lacks the measure the model needs.
double conditional_mean(const CalibrationModel& cm, const CalibrationRow& row);
Eigen::VectorXd conditional_means(const CalibrationModel& cm, const ModelFrame& f);
CalibrationRow calibration_row(const ModelFrame& f, std::size_t i);

// Outcome model on (1, X*, Z): the uncorrected analysis.
FitResult fit_naive(const ModelFrame& f);
FitResult fit_naive(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome);

enum class SeMethod { Delta, Bootstrap };

struct RcOptions {
    SeMethod se_method = SeMethod::Delta;
    int bootstrap_reps = 200;
    bool bootstrap_percentile = true;  // else normal intervals from the bootstrap SE
    bool stratify_on_r = false;
    double level = 0.95;
    CalibrationOptions calibration;
    unsigned threads = 0;
};

struct RcResult {
    FitResult fit;
    CalibrationModel calibration;
    SeMethod se_method = SeMethod::Delta;
    int bootstrap_failures = 0;
};

RcResult regression_calibration(const Dataset& ds, const StudyDesign& design,
                                const OutcomeSpec& outcome, const RcOptions& opts = {},
                                const RngStream& rng = RngStream(1, 0));

}  // namespace mecor
