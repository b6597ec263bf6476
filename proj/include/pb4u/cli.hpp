#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pb4u/error.hpp"

namespace pb4u {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitDivergence = 3;

int exit_code_for(ErrorKind kind);

// Runs the command line `args` (args[0] is the program name) and returns the
// exit code. Diagnostics go to `err`, tables and summaries to `out`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pb4u
