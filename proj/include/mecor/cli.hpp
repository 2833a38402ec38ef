#pragma once

#include <iosfwd>
#include <string>

namespace mecor::cli {

enum ExitCode : int { Ok = 0, MethodFailure = 1, ConfigFailure = 2 };

// Entry point of the `mecor` executable. Reports go to the output directory,
// tables and messages to `out`, errors to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "0.085 (0.014, 0.157)"
std::string format_cell(double estimate, double lower, double upper, int digits = 3);

}  // namespace mecor::cli
