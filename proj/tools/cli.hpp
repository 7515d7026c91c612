#pragma once

// `prefopt` command-line driver. Exit codes: 0 ok, 1 IO/environment,
// 2 usage, 3 numerical abort.

#include <ostream>
#include <string>
#include <vector>

namespace prefopt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace prefopt::cli
