#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace causalread::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAnalysis = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Runs one invocation; `args` excludes the program name. Subcommands:
/// score, analyze, simulate, transform, serve, report.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

/// "tool_version=... config_hash=... seed=..." line embedded in every output.
std::string metadata_comment(const std::string& canonical_config, unsigned long long seed);

}  // namespace causalread::cli
