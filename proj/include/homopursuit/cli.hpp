#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace homopursuit::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kRuntime = 3, kDivergence = 4 };

/// Runs one `homopursuit <command> ...` invocation; args exclude the program
/// name.  Diagnostics go to `err`, progress lines to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace homopursuit::cli
