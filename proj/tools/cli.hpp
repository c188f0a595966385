#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nuq::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitQualityGate = 3;

// Runs the command line `args` (args[0] is the program name). JSON goes to
// `out`, diagnostics to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace nuq::cli
