#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace sysid {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // analysis error, or a false negative in compare
inline constexpr int kExitUsage = 2;

/// Runs the `sysid` command line; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sysid
