#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mlmspt::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDivergence = 2, kIo = 3 };

/// Runs one command line (without the program name). Output goes to `out`,
/// diagnostics to `err`; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlmspt::cli
