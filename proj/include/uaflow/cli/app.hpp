#pragma once

namespace uaflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Entry point for the `uaflow` tool: train, sample, eval and data subcommands.
// Returns the process exit code; errors go to stderr.
int run(int argc, char** argv);

} // namespace uaflow::cli
