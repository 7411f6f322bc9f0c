#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace confreg::cli {

enum ExitCode : int { kOk = 0, kValidationError = 2, kNumericalError = 3 };

/// Runs the `confreg` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace confreg::cli
