#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mecor {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

enum class ColumnType { Continuous, Binary, Time };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Continuous;
    std::vector<double> values;
    std::vector<std::uint8_t> missing;  // 1 = missing; value cell is then ignored

    std::size_t size() const { return values.size(); }
    bool is_missing(std::size_t i) const { return missing[i] != 0; }
    bool any_missing() const;
};

// Rectangular data with an explicit per-cell missingness mask and the
// sub-study indicator R. Columns keep insertion order (CSV order).
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<std::uint8_t> r);

    std::size_t n() const { return r_.size(); }
    const std::vector<std::uint8_t>& r() const { return r_; }
    const std::vector<Column>& columns() const { return columns_; }

    bool has(const std::string& name) const;
    const Column& column(const std::string& name) const;
    Column& column(const std::string& name);

    // Throws DataError if the length does not match n() or the name exists.
    void add_column(Column col);
    void set_column(Column col);

    // Case resampling: row i of the result is row rows[i] of this dataset.
    Dataset take_rows(const std::vector<std::size_t>& rows) const;

private:
    std::vector<std::uint8_t> r_;
    std::vector<Column> columns_;
};

Column make_column(std::string name, std::vector<double> values,
                   ColumnType type = ColumnType::Continuous);
// NaN cells become missing.
Column make_column_nan_missing(std::string name, const std::vector<double>& values,
                               ColumnType type = ColumnType::Continuous);

// ---------------------------------------------------------------------------
// Study design, outcome and error models
// ---------------------------------------------------------------------------

enum class DesignKind { Validation, Replication, Calibration };

// Column bindings for the measurement roles. Unused roles stay empty.
//   Validation:  x (observed iff R=1), xstar (always)
//   Replication: xstar1 (always), xstar2 (observed iff R=1)
//   Calibration: xstar (always), xss or (xss1, xss2) (observed iff R=1)
struct StudyDesign {
    DesignKind kind = DesignKind::Replication;
    std::string x;
    std::string xstar;
    std::string xstar1;
    std::string xstar2;
    std::string xss;
    std::string xss1;
    std::string xss2;

    static StudyDesign validation(std::string x = "x", std::string xstar = "xstar");
    static StudyDesign replication(std::string xstar1 = "xstar1", std::string xstar2 = "xstar2");
    static StudyDesign calibration(std::string xstar = "xstar", std::string xss = "xss");
    static StudyDesign calibration2(std::string xstar = "xstar", std::string xss1 = "xss1",
                                    std::string xss2 = "xss2");

    // The always-observed error-prone measure (X* or X*_1).
    const std::string& primary_measure() const;
    // Columns that must be absent on R=0 rows.
    std::vector<std::string> substudy_columns() const;
    std::vector<std::string> bound_columns() const;
    // Number of second-type (X**) measures bound in a calibration design.
    int second_measure_count() const;
};

enum class OutcomeKind { LinearNormal, LogisticBinary, WeibullSurvival };

struct OutcomeSpec {
    OutcomeKind kind = OutcomeKind::LinearNormal;
    std::string y = "y";         // LinearNormal / LogisticBinary
    std::string time = "t";      // WeibullSurvival
    std::string event = "d";     // WeibullSurvival
    std::vector<std::string> covariates;  // Z
    std::string exposure = "x";  // label used for the true exposure X

    static OutcomeSpec linear(std::string y, std::vector<std::string> z = {});
    static OutcomeSpec logistic(std::string y, std::vector<std::string> z = {});
    static OutcomeSpec weibull(std::string t, std::string d, std::vector<std::string> z = {});

    std::vector<std::string> outcome_columns() const;
};

struct ErrorModelSpec {
    enum class Kind { Classical, Systematic };
    Kind kind = Kind::Classical;
    double theta0 = 0.0;
    double theta1 = 1.0;
    double sigma2_u = 0.0;
    bool nondifferential = true;

    static ErrorModelSpec classical(double sigma2_u);
    static ErrorModelSpec systematic(double theta0, double theta1, double sigma2_u);
    // Throws ConfigError when sigma2_u < 0 or not finite.
    void check() const;
};

struct Mcar {
    double p = 1.0;
};
// logit Pr(R=1) = intercept + coef_y*Y + sum coef_z*Z + coef_xstar*X* (+ coef_x*X for MNAR).
// For survival outcomes Y is the event indicator.
struct Mar {
    double intercept = 0.0;
    double coef_y = 0.0;
    std::vector<double> coef_z;
    double coef_xstar = 0.0;
};
struct Mnar {
    Mar observed;
    double coef_x = 0.0;
};
using SelectionMechanism = std::variant<Mcar, Mar, Mnar>;

void check_selection(const SelectionMechanism& sel);

std::string to_string(DesignKind k);
std::string to_string(OutcomeKind k);
DesignKind parse_design(const std::string& s);
OutcomeKind parse_outcome(const std::string& s);

// ---------------------------------------------------------------------------
// Validation against the observation pattern of each design
// ---------------------------------------------------------------------------

struct Violation {
    std::optional<std::size_t> row;  // empty for column-level problems
    std::string column;
    std::string rule;
};

struct ValidationOptions {
    // When false, cells missing where the design expects an observation are
    // treated as accidental missingness (handled by the methods) rather than
    // design violations.
    bool strict = false;
};

std::vector<Violation> validate_dataset(const Dataset& ds, const StudyDesign& design,
                                        const OutcomeSpec& outcome,
                                        const ValidationOptions& opts = {});

std::string describe(const Violation& v);

}  // namespace mecor
