#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ttalab {

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,   // bad flags, config document or input file
  kExitNumeric = 2,  // non-finite values, degenerate data
  kExitGradcheck = 3,
};

// Entry point behind the `ttalab` binary; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ttalab
