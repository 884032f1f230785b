#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace camgauge {

/// Exit codes of the command-line interface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariantFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntimeError = 3;

/// Parses `args` (without the program name) and runs the subcommand:
/// dataset gen | train | eval | correlate | report | sanity.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Worker count from CAMGAUGE_WORKERS, or `fallback` when unset or invalid.
int workers_from_env(int fallback);

}  // namespace camgauge
