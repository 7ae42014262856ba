#pragma once

#include <string>
#include <vector>

namespace dm::cli {

// Entry point behind the `dm` binary. Returns the process exit code:
// 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args);

} // namespace dm::cli
