#pragma once

#include <iosfwd>

namespace qmcssa {

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Entry point of the `qmcssa` tool. Subcommands: gen-points, transform, run,
/// analyze, compare, full, model-server.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qmcssa
