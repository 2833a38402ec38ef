#include "mecor/frame.hpp"

#include <cmath>
#include <limits>

#include "mecor/error.hpp"

namespace mecor {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const Column* optional_column(const Dataset& ds, const std::string& name) {
    if (name.empty()) return nullptr;
    return &ds.column(name);
}

}  // namespace

bool ModelFrame::z_complete(std::size_t i) const {
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        if (std::isnan(z(static_cast<Eigen::Index>(i), j))) return false;
    return true;
}

double ModelFrame::measure_mean(std::size_t i, int* count) const {
    double s = 0.0;
    int k = 0;
    if (m1_obs[i]) {
        s += m1[static_cast<Eigen::Index>(i)];
        ++k;
    }
    if (design == DesignKind::Replication && m2_obs[i]) {
        s += m2[static_cast<Eigen::Index>(i)];
        ++k;
    }
    if (count) *count = k;
    return k > 0 ? s / k : kNaN;
}

Eigen::MatrixXd ModelFrame::outcome_design(const Eigen::VectorXd& xvals) const {
    const auto nn = static_cast<Eigen::Index>(n());
    Eigen::MatrixXd D(nn, 2 + z.cols());
    D.col(0).setOnes();
    D.col(1) = xvals;
    if (z.cols() > 0) D.rightCols(z.cols()) = z;
    return D;
}

std::vector<std::string> ModelFrame::outcome_names() const {
    std::vector<std::string> names{"(Intercept)", exposure_name};
    names.insert(names.end(), z_names.begin(), z_names.end());
    return names;
}

ModelFrame build_frame(const Dataset& ds, const StudyDesign& design, const OutcomeSpec& outcome,
                       const FrameOptions& opts) {
    ModelFrame f;
    f.design = design.kind;
    f.outcome = outcome.kind;
    f.exposure_name = outcome.exposure;
    f.z_names = outcome.covariates;
    f.measure_name = design.primary_measure();

    const Column *ycol = nullptr, *tcol = nullptr, *dcol = nullptr;
    if (outcome.kind == OutcomeKind::WeibullSurvival) {
        tcol = &ds.column(outcome.time);
        dcol = &ds.column(outcome.event);
    } else {
        ycol = &ds.column(outcome.y);
    }
    std::vector<const Column*> zcols;
    for (const auto& name : outcome.covariates) {
        zcols.push_back(&ds.column(name));
        f.z_binary.push_back(zcols.back()->type == ColumnType::Binary ? 1 : 0);
    }

    const Column *xcol = nullptr, *c1 = nullptr, *c2 = nullptr, *c3 = nullptr;
    switch (design.kind) {
        case DesignKind::Validation:
            xcol = optional_column(ds, design.x);
            c1 = optional_column(ds, design.xstar);
            if (!xcol || !c1) throw DataError("validation design needs x and xstar bindings");
            break;
        case DesignKind::Replication:
            c1 = optional_column(ds, design.xstar1);
            c2 = optional_column(ds, design.xstar2);
            if (!c1 || !c2) throw DataError("replication design needs xstar1 and xstar2 bindings");
            break;
        case DesignKind::Calibration:
            c1 = optional_column(ds, design.xstar);
            if (!design.xss.empty()) {
                c2 = optional_column(ds, design.xss);
            } else {
                c2 = optional_column(ds, design.xss1);
                c3 = optional_column(ds, design.xss2);
            }
            if (!c1 || !c2) throw DataError("calibration design needs xstar and xss bindings");
            break;
    }

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        bool ok = true;
        if (ycol && ycol->is_missing(i)) ok = false;
        if (tcol && (tcol->is_missing(i) || dcol->is_missing(i))) ok = false;
        for (std::size_t j = 0; j < zcols.size() && ok; ++j) {
            if (!zcols[j]->is_missing(i)) continue;
            if (!(opts.allow_missing_binary_z && f.z_binary[j])) ok = false;
        }
        if (ok && !opts.allow_missing_primary && c1->is_missing(i)) ok = false;
        if (ok) keep.push_back(i);
    }
    if (keep.empty()) throw DataError("no usable rows after removing incomplete cases");
    f.dropped = ds.n() - keep.size();
    f.rows = keep;

    const auto n = static_cast<Eigen::Index>(keep.size());
    const auto q = static_cast<Eigen::Index>(zcols.size());
    f.y.resize(n);
    f.event.resize(outcome.kind == OutcomeKind::WeibullSurvival ? n : 0);
    f.z.resize(n, q);
    f.r.resize(keep.size());
    f.x = Eigen::VectorXd::Constant(n, kNaN);
    f.m1 = Eigen::VectorXd::Constant(n, kNaN);
    f.m2 = Eigen::VectorXd::Constant(n, kNaN);
    f.m3 = Eigen::VectorXd::Constant(n, kNaN);
    f.x_obs.assign(keep.size(), 0);
    f.m1_obs.assign(keep.size(), 0);
    f.m2_obs.assign(keep.size(), 0);
    f.m3_obs.assign(keep.size(), 0);

    auto load = [](const Column* c, std::size_t src, Eigen::VectorXd& v,
                   std::vector<std::uint8_t>& obs, Eigen::Index dst) {
        if (!c || c->is_missing(src)) return;
        v[dst] = c->values[src];
        obs[static_cast<std::size_t>(dst)] = 1;
    };

    for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = keep[static_cast<std::size_t>(k)];
        f.r[static_cast<std::size_t>(k)] = ds.r()[i];
        if (ycol) {
            f.y[k] = ycol->values[i];
        } else {
            f.y[k] = tcol->values[i];
            f.event[k] = dcol->values[i];
        }
        for (Eigen::Index j = 0; j < q; ++j) {
            const Column* c = zcols[static_cast<std::size_t>(j)];
            f.z(k, j) = c->is_missing(i) ? kNaN : c->values[i];
        }
        load(xcol, i, f.x, f.x_obs, k);
        load(c1, i, f.m1, f.m1_obs, k);
        load(c2, i, f.m2, f.m2_obs, k);
        load(c3, i, f.m3, f.m3_obs, k);
    }
    for (Eigen::Index j = 0; j < q; ++j) {
        for (Eigen::Index k = 0; k < n; ++k) {
            if (std::isnan(f.z(k, j))) {
                f.z_missing_cols.push_back(static_cast<int>(j));
                break;
            }
        }
    }
    return f;
}

}  // namespace mecor
