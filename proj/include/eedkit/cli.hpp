#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eedkit {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable holding the default batch worker count.
inline constexpr const char* kWorkersEnv = "EEDKIT_WORKERS";

/// Entry point of the eedtool command line. args[0] is the program name.
/// Results go to files (and `out` for the presets subcommand); progress and
/// errors go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eedkit
