#pragma once

// The irbridge command line as a library so tests can drive it in-process.

#include <ostream>
#include <string>
#include <vector>

namespace irbridge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPipeline = 1;
inline constexpr int kExitUsage = 2;

// Runs one subcommand. Progress goes to `out`, error JSON to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace irbridge::cli
