#pragma once

#include <string>
#include <vector>

namespace spankt {

// Subcommand dispatch over argv[1..]. Exit codes: 0 success, 1 usage error,
// 2 data/validation error, 3 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace spankt
