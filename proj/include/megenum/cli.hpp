#pragma once

#include "megenum/io.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace megenum {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Built-in configuration presets: "desk", "paper", "phantom".
Config preset_config(const std::string& name);

/// Runs the command-line tool; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace megenum
