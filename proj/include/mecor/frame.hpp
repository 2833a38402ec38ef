#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mecor/core.hpp"

namespace mecor {

// Dense, role-resolved view of a Dataset used by every correction method.
//
// Measures are stored by slot:
//   Validation:  m1 = X*                      (x holds the true X where R=1)
//   Replication: m1 = X*_1, m2 = X*_2
//   Calibration: m1 = X* (systematic), m2 = X** or X**_1, m3 = X**_2
// Missing cells have obs flag 0 and value NaN.
struct ModelFrame {
    DesignKind design = DesignKind::Replication;
    OutcomeKind outcome = OutcomeKind::LinearNormal;
    std::string exposure_name = "x";
    std::string measure_name = "xstar";  // column bound to the m1 slot

    std::vector<std::size_t> rows;  // source row in the Dataset
    Eigen::VectorXd y;              // outcome (LinearNormal/Logistic) or time (Weibull)
    Eigen::VectorXd event;          // Weibull only
    Eigen::MatrixXd z;              // n x q; NaN where missing
    std::vector<std::string> z_names;
    std::vector<std::uint8_t> z_binary;  // per column
    std::vector<int> z_missing_cols;     // columns with at least one missing cell
    std::vector<std::uint8_t> r;

    Eigen::VectorXd x;
    std::vector<std::uint8_t> x_obs;
    Eigen::VectorXd m1, m2, m3;
    std::vector<std::uint8_t> m1_obs, m2_obs, m3_obs;

    std::size_t dropped = 0;  // rows removed as incomplete cases

    std::size_t n() const { return rows.size(); }
    std::size_t q() const { return z_names.size(); }
    bool z_complete(std::size_t i) const;

    // Mean of available error-prone measures of the same type as X*_1
    // (replication: X*_1, X*_2; others: the primary measure only).
    double measure_mean(std::size_t i, int* count = nullptr) const;

    // Design matrix [1, x, z] for the outcome model.
    Eigen::MatrixXd outcome_design(const Eigen::VectorXd& xvals) const;
    std::vector<std::string> outcome_names() const;
};

struct FrameOptions {
    // Keep rows with missing binary covariates (Bayes / SMC-FCS); otherwise
    // such rows are dropped as incomplete cases.
    bool allow_missing_binary_z = false;
    // Keep rows where the always-observed measure is missing.
    bool allow_missing_primary = false;
};

// Throws DataError when required roles are unbound/absent or no rows remain.
ModelFrame build_frame(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome,
                       const FrameOptions& opts = {});

}  // namespace mecor
