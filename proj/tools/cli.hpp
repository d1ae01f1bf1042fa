#pragma once

#include <string>
#include <vector>

namespace hiermeta::cli {

enum ExitCode : int {
  kOk = 0,
  kInvalidInput = 2,
  kNumerical = 3,
  kNotConverged = 4,
};

/// Runs the `hiermeta` command line. Diagnostics go to standard error.
int run(const std::vector<std::string>& args);

}  // namespace hiermeta::cli
