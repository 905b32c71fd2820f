#pragma once

#include <string>
#include <vector>

namespace fibag::cli {

// Runs the command line and returns the process exit code. Messages go to
// stderr; nothing is written to stdout except --help/--version text.
int run(const std::vector<std::string>& args);

} // namespace fibag::cli
