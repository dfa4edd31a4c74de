#pragma once

#include <iosfwd>

namespace xmodal {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

/// Entry point of the `xmodal` executable: gen, train, eval, ablate, embed.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xmodal
