#pragma once

#include <string>
#include <vector>

namespace geotdm {

// Runs the command-line tool on the given arguments (program name excluded).
// Returns 0 on success, 1 on a usage error, 2 on a runtime failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace geotdm
