#pragma once

#include <string>
#include <vector>

namespace bmoe::cli {

// Runs one command line (without argv[0]); returns the process exit code.
// 0 ok, 2 usage/validation, 3 infeasible target, 4 numerical failure.
int run(const std::vector<std::string>& args);

int run(int argc, char** argv);

}  // namespace bmoe::cli
