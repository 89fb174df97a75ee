#pragma once

#include <string>
#include <vector>

namespace arena {

/// Exit codes: 0 success, 2 configuration or input errors, 3 aborted runs.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitAbort = 3;

/// Env var naming the default output root when --out is absent.
inline constexpr const char* kOutputRootEnv = "ARENA_OUT";

/// Full command-line entry point: `arena {run|sweep|pretrain|report} ...`.
int run_cli(int argc, char** argv);

/// Same, from pre-split arguments; args[0] is the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace arena
