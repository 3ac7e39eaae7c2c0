#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sbr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInvalid = 3;  // parse or validation errors
inline constexpr int kExitNumeric = 4;

// Runs one command line. `args` excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sbr::cli
