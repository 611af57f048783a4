#pragma once

#include <string>
#include <vector>

namespace qnet::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2 };

/// Runs one command line (args exclude the program name). Output goes to stdout/stderr.
int run(const std::vector<std::string>& args);

}  // namespace qnet::cli
