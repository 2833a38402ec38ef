#pragma once

#include <iosfwd>
#include <string>

#include "mecor/core.hpp"

namespace mecor {

// CSV layout: header row of column names, one record per line, comma
// separated, no quoting. An empty field is a missing cell. The sub-study
// indicator lives in a column named `r` and may not be missing. Numbers are
// written in shortest round-trip form so write/read is bit-exact.
//
// Column types are inferred on read: a column whose observed cells are all 0
// or 1 is Binary, everything else Continuous.
Dataset read_csv(std::istream& in);
Dataset read_csv_file(const std::string& path);

void write_csv(std::ostream& out, const Dataset& ds);
void write_csv_file(const std::string& path, const Dataset& ds);

std::string format_double(double v);

}  // namespace mecor
