#pragma once

#include <string>
#include <vector>

namespace tela {

// Runs the command line given argv-style arguments (program name excluded).
// Returns the process exit code: 0 success, 1 usage error, 2 configuration
// error, 3 runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace tela
