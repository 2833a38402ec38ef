#include "mecor/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mecor/error.hpp"

namespace mecor {

bool Column::any_missing() const {
    return std::any_of(missing.begin(), missing.end(), [](std::uint8_t m) { return m != 0; });
}

Dataset::Dataset(std::vector<std::uint8_t> r) : r_(std::move(r)) {}

bool Dataset::has(const std::string& name) const {
    return std::any_of(columns_.begin(), columns_.end(),
                       [&](const Column& c) { return c.name == name; });
}

const Column& Dataset::column(const std::string& name) const {
    for (const auto& c : columns_)
        if (c.name == name) return c;
    throw DataError("dataset has no column '" + name + "'");
}

Column& Dataset::column(const std::string& name) {
    for (auto& c : columns_)
        if (c.name == name) return c;
    throw DataError("dataset has no column '" + name + "'");
}

void Dataset::add_column(Column col) {
    if (col.values.size() != n() || col.missing.size() != n())
        throw DataError("column '" + col.name + "' has length " +
                        std::to_string(col.values.size()) + ", expected " + std::to_string(n()));
    if (has(col.name)) throw DataError("duplicate column '" + col.name + "'");
    if (col.name == "r") throw DataError("column name 'r' is reserved for the sub-study indicator");
    columns_.push_back(std::move(col));
}

void Dataset::set_column(Column col) {
    if (col.values.size() != n() || col.missing.size() != n())
        throw DataError("column '" + col.name + "' has wrong length");
    for (auto& c : columns_) {
        if (c.name == col.name) {
            c = std::move(col);
            return;
        }
    }
    add_column(std::move(col));
}

Dataset Dataset::take_rows(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.r_.reserve(rows.size());
    for (auto i : rows) out.r_.push_back(r_.at(i));
    out.columns_.reserve(columns_.size());
    for (const auto& c : columns_) {
        Column nc;
        nc.name = c.name;
        nc.type = c.type;
        nc.values.reserve(rows.size());
        nc.missing.reserve(rows.size());
        for (auto i : rows) {
            nc.values.push_back(c.values[i]);
            nc.missing.push_back(c.missing[i]);
        }
        out.columns_.push_back(std::move(nc));
    }
    return out;
}

Column make_column(std::string name, std::vector<double> values, ColumnType type) {
    Column c;
    c.name = std::move(name);
    c.type = type;
    c.missing.assign(values.size(), 0);
    c.values = std::move(values);
    return c;
}

Column make_column_nan_missing(std::string name, const std::vector<double>& values,
                               ColumnType type) {
    Column c;
    c.name = std::move(name);
    c.type = type;
    c.values.resize(values.size());
    c.missing.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const bool miss = std::isnan(values[i]);
        c.missing[i] = miss ? 1 : 0;
        c.values[i] = miss ? 0.0 : values[i];
    }
    return c;
}

// ---------------------------------------------------------------------------

StudyDesign StudyDesign::validation(std::string x, std::string xstar) {
    StudyDesign d;
    d.kind = DesignKind::Validation;
    d.x = std::move(x);
    d.xstar = std::move(xstar);
    return d;
}

StudyDesign StudyDesign::replication(std::string xstar1, std::string xstar2) {
    StudyDesign d;
    d.kind = DesignKind::Replication;
    d.xstar1 = std::move(xstar1);
    d.xstar2 = std::move(xstar2);
    return d;
}

StudyDesign StudyDesign::calibration(std::string xstar, std::string xss) {
    StudyDesign d;
    d.kind = DesignKind::Calibration;
    d.xstar = std::move(xstar);
    d.xss = std::move(xss);
    return d;
}

StudyDesign StudyDesign::calibration2(std::string xstar, std::string xss1, std::string xss2) {
    StudyDesign d;
    d.kind = DesignKind::Calibration;
    d.xstar = std::move(xstar);
    d.xss1 = std::move(xss1);
    d.xss2 = std::move(xss2);
    return d;
}

const std::string& StudyDesign::primary_measure() const {
    return kind == DesignKind::Replication ? xstar1 : xstar;
}

std::vector<std::string> StudyDesign::substudy_columns() const {
    switch (kind) {
        case DesignKind::Validation:
            return {x};
        case DesignKind::Replication:
            return {xstar2};
        case DesignKind::Calibration:
            if (!xss.empty()) return {xss};
            return {xss1, xss2};
    }
    return {};
}

std::vector<std::string> StudyDesign::bound_columns() const {
    std::vector<std::string> cols{primary_measure()};
    for (auto& c : substudy_columns()) cols.push_back(c);
    return cols;
}

int StudyDesign::second_measure_count() const {
    if (kind != DesignKind::Calibration) return 0;
    return xss.empty() ? 2 : 1;
}

OutcomeSpec OutcomeSpec::linear(std::string y, std::vector<std::string> z) {
    OutcomeSpec o;
    o.kind = OutcomeKind::LinearNormal;
    o.y = std::move(y);
    o.covariates = std::move(z);
    return o;
}

OutcomeSpec OutcomeSpec::logistic(std::string y, std::vector<std::string> z) {
    OutcomeSpec o;
    o.kind = OutcomeKind::LogisticBinary;
    o.y = std::move(y);
    o.covariates = std::move(z);
    return o;
}

OutcomeSpec OutcomeSpec::weibull(std::string t, std::string d, std::vector<std::string> z) {
    OutcomeSpec o;
    o.kind = OutcomeKind::WeibullSurvival;
    o.time = std::move(t);
    o.event = std::move(d);
    o.covariates = std::move(z);
    return o;
}

std::vector<std::string> OutcomeSpec::outcome_columns() const {
    if (kind == OutcomeKind::WeibullSurvival) return {time, event};
    return {y};
}

ErrorModelSpec ErrorModelSpec::classical(double sigma2_u) {
    ErrorModelSpec e;
    e.kind = Kind::Classical;
    e.sigma2_u = sigma2_u;
    return e;
}

ErrorModelSpec ErrorModelSpec::systematic(double theta0, double theta1, double sigma2_u) {
    ErrorModelSpec e;
    e.kind = Kind::Systematic;
    e.theta0 = theta0;
    e.theta1 = theta1;
    e.sigma2_u = sigma2_u;
    return e;
}

void ErrorModelSpec::check() const {
    if (!std::isfinite(sigma2_u) || sigma2_u < 0.0)
        throw ConfigError("error_model.sigma2_u must be finite and >= 0");
    if (!std::isfinite(theta0) || !std::isfinite(theta1))
        throw ConfigError("error_model.theta0/theta1 must be finite");
}

void check_selection(const SelectionMechanism& sel) {
    if (const auto* m = std::get_if<Mcar>(&sel)) {
        if (!(m->p >= 0.0 && m->p <= 1.0)) throw ConfigError("selection.p must lie in [0, 1]");
    }
}

std::string to_string(DesignKind k) {
    switch (k) {
        case DesignKind::Validation: return "validation";
        case DesignKind::Replication: return "replication";
        case DesignKind::Calibration: return "calibration";
    }
    return "?";
}

std::string to_string(OutcomeKind k) {
    switch (k) {
        case OutcomeKind::LinearNormal: return "linear";
        case OutcomeKind::LogisticBinary: return "logistic";
        case OutcomeKind::WeibullSurvival: return "weibull";
    }
    return "?";
}

DesignKind parse_design(const std::string& s) {
    if (s == "validation") return DesignKind::Validation;
    if (s == "replication") return DesignKind::Replication;
    if (s == "calibration") return DesignKind::Calibration;
    throw ConfigError("design: unknown value '" + s + "' (validation|replication|calibration)");
}

OutcomeKind parse_outcome(const std::string& s) {
    if (s == "linear") return OutcomeKind::LinearNormal;
    if (s == "logistic") return OutcomeKind::LogisticBinary;
    if (s == "weibull") return OutcomeKind::WeibullSurvival;
    throw ConfigError("outcome.family: unknown value '" + s + "' (linear|logistic|weibull)");
}

// ---------------------------------------------------------------------------

namespace {

bool is_binary_value(double v) { return v == 0.0 || v == 1.0; }

}  // namespace

std::vector<Violation> validate_dataset(const Dataset& ds, const StudyDesign& design,
                                        const OutcomeSpec& outcome,
                                        const ValidationOptions& opts) {
    std::vector<Violation> out;
    const std::size_t n = ds.n();

    for (std::size_t i = 0; i < n; ++i)
        if (ds.r()[i] > 1) out.push_back({i, "r", "sub-study indicator must be 0 or 1"});

    auto require = [&](const std::string& name, const std::string& role) -> const Column* {
        if (name.empty()) {
            out.push_back({std::nullopt, role, "role '" + role + "' is not bound to a column"});
            return nullptr;
        }
        if (!ds.has(name)) {
            out.push_back({std::nullopt, name, "column bound to role '" + role + "' is absent"});
            return nullptr;
        }
        return &ds.column(name);
    };

    // Measurement roles.
    const Column* primary = require(design.primary_measure(),
                                    design.kind == DesignKind::Replication ? "xstar1" : "xstar");
    if (primary && opts.strict) {
        for (std::size_t i = 0; i < n; ++i)
            if (primary->is_missing(i))
                out.push_back({i, primary->name, "always-observed measure is missing"});
    }
    for (const auto& name : design.substudy_columns()) {
        const Column* c = require(name, "substudy measure");
        if (!c) continue;
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.r()[i] == 0 && !c->is_missing(i))
                out.push_back({i, c->name, "sub-study measure observed on an R=0 row"});
            else if (opts.strict && ds.r()[i] == 1 && c->is_missing(i))
                out.push_back({i, c->name, "sub-study measure missing on an R=1 row"});
        }
    }

    // Outcome.
    if (outcome.kind == OutcomeKind::WeibullSurvival) {
        const Column* t = require(outcome.time, "time");
        const Column* d = require(outcome.event, "event");
        if (t) {
            for (std::size_t i = 0; i < n; ++i) {
                if (t->is_missing(i))
                    out.push_back({i, t->name, "survival time is missing"});
                else if (!(t->values[i] > 0.0) || !std::isfinite(t->values[i]))
                    out.push_back({i, t->name, "survival time must be strictly positive"});
            }
        }
        if (d) {
            for (std::size_t i = 0; i < n; ++i) {
                if (d->is_missing(i))
                    out.push_back({i, d->name, "event indicator is missing"});
                else if (!is_binary_value(d->values[i]))
                    out.push_back({i, d->name, "event indicator must be 0 or 1"});
            }
        }
    } else {
        const Column* y = require(outcome.y, "y");
        if (y) {
            for (std::size_t i = 0; i < n; ++i) {
                if (y->is_missing(i))
                    out.push_back({i, y->name, "outcome is missing"});
                else if (outcome.kind == OutcomeKind::LogisticBinary &&
                         !is_binary_value(y->values[i]))
                    out.push_back({i, y->name, "binary outcome must be 0 or 1"});
            }
        }
    }

    for (const auto& z : outcome.covariates) {
        const Column* c = require(z, "covariate");
        if (!c || c->type != ColumnType::Binary) continue;
        for (std::size_t i = 0; i < n; ++i)
            if (!c->is_missing(i) && !is_binary_value(c->values[i]))
                out.push_back({i, c->name, "binary covariate must be 0 or 1"});
    }
    return out;
}

std::string describe(const Violation& v) {
    std::ostringstream os;
    if (v.row) os << "row " << *v.row << ", ";
    os << "column '" << v.column << "': " << v.rule;
    return os.str();
}

}  // namespace mecor
