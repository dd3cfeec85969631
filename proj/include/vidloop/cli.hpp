#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vidloop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBackend = 3;

inline constexpr const char* kApiKeyEnv = "VIDLOOP_API_KEY";

/// Runs the command line `args` (args[0] is the program name) writing
/// primary output to `out` and diagnostics to `err`. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vidloop::cli
