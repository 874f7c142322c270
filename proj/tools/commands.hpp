#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace aes::cli {

inline constexpr const char* kGeneratorVersion = "aes 1.0.0";

enum ExitCode : int { kOk = 0, kConfigOrData = 2, kNumerical = 3 };

/// Runs one invocation; `args` excludes the program name. Human-readable
/// progress goes to `out`, diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aes::cli
