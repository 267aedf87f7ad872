#pragma once

#include <string>
#include <vector>

namespace sleepnet {

/// Command-line entry point. Returns the process exit code: 0 success,
/// 1 usage or configuration error, 2 data error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace sleepnet
